#pragma once

// HTTP client for live expert / generation services (plain HTTP; put a TLS
// terminator in front for https deployments).

#include <string>

#include <httplib.h>

#include "aide/endpoint.hpp"
#include "aide/errors.hpp"

namespace aide {

struct ParsedUrl {
  std::string host;
  int port = 80;
  std::string path = "/";
};

inline ParsedUrl parse_http_url(const std::string& url) {
  ParsedUrl out;
  std::string rest = url;
  const std::string scheme = "http://";
  if (rest.rfind(scheme, 0) != 0)
    throw ValidationError("endpoint.url", "only http:// URLs are supported: " + url);
  rest = rest.substr(scheme.size());
  auto slash = rest.find('/');
  std::string authority = rest.substr(0, slash);
  if (slash != std::string::npos) out.path = rest.substr(slash);
  auto colon = authority.find(':');
  if (colon == std::string::npos) {
    out.host = authority;
  } else {
    out.host = authority.substr(0, colon);
    try {
      out.port = std::stoi(authority.substr(colon + 1));
    } catch (...) {
      throw ValidationError("endpoint.url", "bad port in URL: " + url);
    }
  }
  if (out.host.empty()) throw ValidationError("endpoint.url", "missing host in URL: " + url);
  return out;
}

class HttpEndpoint final : public Endpoint {
 public:
  HttpEndpoint(std::string slot_id, const std::string& url, std::string auth_token = {},
               int timeout_sec = 60)
      : slot_id_(std::move(slot_id)),
        url_(parse_http_url(url)),
        auth_token_(std::move(auth_token)),
        timeout_sec_(timeout_sec) {}

  std::string id() const override { return slot_id_; }

  std::string post(const std::string& body) override {
    // httplib::Client is not thread-safe; one per call keeps concurrent
    // workers independent.
    httplib::Client client(url_.host, url_.port);
    client.set_connection_timeout(timeout_sec_, 0);
    client.set_read_timeout(timeout_sec_, 0);
    httplib::Headers headers;
    if (!auth_token_.empty()) headers.emplace("Authorization", "Bearer " + auth_token_);
    auto res = client.Post(url_.path, headers, body, "application/json");
    if (!res)
      throw EndpointFailure(slot_id_ + ": transport error (" +
                            httplib::to_string(res.error()) + ")");
    if (res->status < 200 || res->status >= 300)
      throw EndpointFailure(slot_id_ + ": HTTP " + std::to_string(res->status) + " " +
                            res->body.substr(0, 200));
    return res->body;
  }

 private:
  std::string slot_id_;
  ParsedUrl url_;
  std::string auth_token_;
  int timeout_sec_;
};

}  // namespace aide
