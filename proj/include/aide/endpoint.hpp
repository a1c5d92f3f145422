#pragma once

// Uniform endpoint protocol: every expert or generation service is a POST of
// a JSON body returning a JSON body. Mocks and HTTP clients implement the
// same surface, so swapping live services in is a config change.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "aide/errors.hpp"
#include "aide/log.hpp"

namespace aide {

class Endpoint {
 public:
  virtual ~Endpoint() = default;
  // Stable identity used in cache keys; must not change across runs.
  virtual std::string id() const = 0;
  // Throws EndpointFailure on any transport or service error.
  virtual std::string post(const std::string& request_body) = 0;
};

using GenerationEndpoint = Endpoint;
using ExpertEndpoint = Endpoint;

struct RetryPolicy {
  int attempts = 3;
  int base_delay_ms = 100;
  int max_delay_ms = 2000;
};

// Exponential backoff between attempts; rethrows the last failure.
inline std::string post_with_retries(Endpoint& endpoint, const std::string& body,
                                     const RetryPolicy& policy) {
  int attempts = policy.attempts < 1 ? 1 : policy.attempts;
  for (int attempt = 1;; ++attempt) {
    try {
      return endpoint.post(body);
    } catch (const EndpointFailure& e) {
      if (attempt >= attempts) throw;
      std::int64_t delay = static_cast<std::int64_t>(policy.base_delay_ms) << (attempt - 1);
      if (delay > policy.max_delay_ms) delay = policy.max_delay_ms;
      if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      log(LogLevel::debug, std::string("retrying ") + endpoint.id() + ": " + e.what());
    }
  }
}

// Counts every post that actually reaches the wrapped endpoint. The
// orchestrator wraps each configured endpoint with one of these so cache
// idempotence is observable.
class CountingEndpoint final : public Endpoint {
 public:
  explicit CountingEndpoint(std::shared_ptr<Endpoint> inner) : inner_(std::move(inner)) {}

  std::string id() const override { return inner_->id(); }

  std::string post(const std::string& body) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_->post(body);
  }

  std::uint64_t calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  std::shared_ptr<Endpoint> inner_;
  std::atomic<std::uint64_t> calls_{0};
};

// Generation wire contract:
//   request  {"messages":[{"role":"user","content":[{"type":"text","text":...},
//                                                   {"type":"image","data":...}]}]}
//   response {"text":"..."}
inline std::string generation_request_body(const std::string& prompt,
                                           const std::optional<std::string>& image) {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", prompt}});
  if (image) content.push_back({{"type", "image"}, {"data", *image}});
  nlohmann::json body{
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::move(content)}}})}};
  return body.dump();
}

inline std::string parse_generation_response(const std::string& response_body) {
  nlohmann::json j = nlohmann::json::parse(response_body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string())
    throw EndpointFailure("malformed generation response: " + response_body.substr(0, 200));
  return j["text"].get<std::string>();
}

}  // namespace aide
