#pragma once

// Content-addressed response cache. Entries are files named by the sha256 of
// (endpoint id, request body); writes go through tmp + rename so concurrent
// readers never observe partial files and concurrent writers of the same key
// settle on last-write-wins with identical content.

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "aide/endpoint.hpp"
#include "aide/errors.hpp"
#include "aide/hash.hpp"

namespace aide {

class ResponseCache {
 public:
  ResponseCache() = default;

  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)), enabled_(true) {
    std::filesystem::create_directories(dir_);
  }

  bool enabled() const { return enabled_; }

  static std::string key_for(std::string_view endpoint_id, std::string_view body) {
    std::string material;
    material.reserve(endpoint_id.size() + body.size() + 1);
    material.append(endpoint_id);
    material.push_back('\n');
    material.append(body);
    return sha256_hex(material);
  }

  std::optional<std::string> get(const std::string& key) const {
    if (!enabled_) return std::nullopt;
    std::ifstream in(entry_path(key), std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }

  void put(const std::string& key, const std::string& value) const {
    if (!enabled_) return;
    const auto path = entry_path(key);
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.parent_path() / (key + ".tmp" + tmp_suffix());
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write cache file: " + tmp.string());
      out.write(value.data(), static_cast<std::streamsize>(value.size()));
      if (!out) throw Error("cache write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::filesystem::path entry_path(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
  }

  static std::string tmp_suffix() {
    static thread_local std::mt19937_64 rng(std::random_device{}());
    return std::to_string(rng());
  }

  std::filesystem::path dir_;
  bool enabled_ = false;
};

// Cache-through call: hit returns the stored response without touching the
// endpoint; miss posts (with retries) and stores the response.
inline std::string cached_post(const ResponseCache& cache, Endpoint& endpoint,
                               const std::string& body, const RetryPolicy& retry) {
  const std::string key = ResponseCache::key_for(endpoint.id(), body);
  if (auto hit = cache.get(key)) return *hit;
  std::string response = post_with_retries(endpoint, body, retry);
  cache.put(key, response);
  return response;
}

}  // namespace aide
