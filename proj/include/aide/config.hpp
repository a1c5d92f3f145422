#pragma once

// Run configuration: strict JSON loading (unknown keys are rejected),
// documented defaults, and a canonical serialization whose sha256 guards
// resume against config edits.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/corpus.hpp"
#include "aide/endpoint.hpp"
#include "aide/errors.hpp"
#include "aide/experts.hpp"
#include "aide/hash.hpp"
#include "aide/integrator.hpp"
#include "aide/selector.hpp"

namespace aide {

// Either a live HTTP service or a section of a mock-script file.
struct EndpointRef {
  std::string url;
  std::string script;

  bool configured() const { return !url.empty() || !script.empty(); }
  bool is_script() const { return !script.empty(); }
};

struct ToolConfig {
  ToolDescriptor descriptor;
  EndpointRef endpoint;
  int max_concurrency = 4;
};

struct Config {
  std::string input;
  std::string output;
  std::string run_dir;

  SelectorKind selector_kind = SelectorKind::heuristic;
  int threshold = 5;
  bool selector_attach_image = true;
  bool synth_attach_image = true;

  Mode mode = Mode::small_step;
  ConflictPolicy conflict_policy = ConflictPolicy::prefer_original;
  FilterConfig filter;

  EndpointRef selector_endpoint;
  EndpointRef synthesizer_endpoint;
  std::string auth_token;
  std::vector<ToolConfig> tools;

  int workers = 8;
  std::string cache_dir;  // empty = <run_dir>/cache
  bool cache_enabled = true;
  RetryPolicy retry;
  int parse_retries = 2;
  bool include_text_only = false;
  DuplicatePolicy duplicate_policy = DuplicatePolicy::fail;
  int checkpoint_interval = 64;

  std::string selector_template_path;
  std::string smallstep_template_path;

  std::filesystem::path run_dir_path() const { return run_dir; }
  std::filesystem::path effective_cache_dir() const {
    return cache_dir.empty() ? run_dir_path() / "cache" : std::filesystem::path(cache_dir);
  }

  nlohmann::json to_json() const;
  std::string hash() const { return sha256_hex(to_json().dump()); }
};

namespace detail {

inline void check_keys(const nlohmann::json& obj,
                       std::initializer_list<std::string_view> allowed,
                       const std::string& scope) {
  if (!obj.is_object())
    throw ValidationError(scope, "must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto a : allowed)
      if (key == a) { known = true; break; }
    if (!known) throw ValidationError(scope.empty() ? key : scope + "." + key, "unknown key");
  }
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback, const std::string& scope) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(scope.empty() ? key : scope + "." + std::string(key), "wrong type");
  }
}

inline std::string require_string(const nlohmann::json& obj, const char* key,
                                  const std::string& scope) {
  if (!obj.contains(key) || !obj.at(key).is_string())
    throw ValidationError(scope.empty() ? key : scope + "." + std::string(key),
                          "required string is missing");
  return obj.at(key).get<std::string>();
}

inline std::string abspath(const std::string& p) {
  if (p.empty()) return p;
  return std::filesystem::absolute(p).lexically_normal().string();
}

inline EndpointRef parse_endpoint_ref(const nlohmann::json& j, const std::string& scope) {
  if (!j.is_object()) throw ValidationError(scope, "endpoint must be an object");
  check_keys(j, {"url", "script"}, scope);
  EndpointRef ref;
  ref.url = get_or<std::string>(j, "url", "", scope);
  ref.script = abspath(get_or<std::string>(j, "script", "", scope));
  if (!ref.url.empty() && !ref.script.empty())
    throw ValidationError(scope, "give either 'url' or 'script', not both");
  return ref;
}

inline nlohmann::json endpoint_ref_to_json(const EndpointRef& ref) {
  nlohmann::json j = nlohmann::json::object();
  if (!ref.url.empty()) j["url"] = ref.url;
  if (!ref.script.empty()) j["script"] = ref.script;
  return j;
}

}  // namespace detail

inline SelectorKind selector_kind_from_name(const std::string& name) {
  if (name == "heuristic") return SelectorKind::heuristic;
  if (name == "model") return SelectorKind::model;
  throw ValidationError("selector.kind", "unknown value '" + name + "'");
}

inline ConflictPolicy conflict_policy_from_name(const std::string& name) {
  if (name == "prefer_original") return ConflictPolicy::prefer_original;
  if (name == "prefer_expert") return ConflictPolicy::prefer_expert;
  if (name == "drop") return ConflictPolicy::drop;
  throw ValidationError("conflict_policy", "unknown value '" + name + "'");
}

inline std::vector<ToolConfig> default_tool_configs() {
  std::vector<ToolConfig> tools;
  const ToolRegistry standard = ToolRegistry::standard();
  for (const auto& d : standard.tools()) tools.push_back({d, {}, 4});
  return tools;
}

inline Config config_from_json(const nlohmann::json& j) {
  using namespace detail;
  if (!j.is_object()) throw ValidationError("", "config must be a JSON object");
  check_keys(j,
             {"input", "output", "run_dir", "selector", "mode", "conflict_policy", "filter",
              "endpoints", "auth_token", "tools", "workers", "cache", "retries",
              "include_text_only", "duplicate_policy", "checkpoint_interval", "prompts"},
             "");

  Config cfg;
  cfg.input = abspath(require_string(j, "input", ""));
  cfg.output = abspath(require_string(j, "output", ""));
  cfg.run_dir = abspath(require_string(j, "run_dir", ""));

  if (j.contains("selector")) {
    const auto& s = j.at("selector");
    check_keys(s, {"kind", "threshold", "attach_image"}, "selector");
    cfg.selector_kind =
        selector_kind_from_name(get_or<std::string>(s, "kind", "heuristic", "selector"));
    cfg.threshold = get_or<int>(s, "threshold", 5, "selector");
    cfg.selector_attach_image = get_or<bool>(s, "attach_image", true, "selector");
  }

  cfg.mode = mode_from_name(get_or<std::string>(j, "mode", "small_step", ""));
  if (cfg.mode == Mode::passthrough)
    throw ValidationError("mode", "passthrough is not a run mode");
  cfg.conflict_policy =
      conflict_policy_from_name(get_or<std::string>(j, "conflict_policy", "prefer_original", ""));

  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    check_keys(f, {"tau_rep", "ngram_n", "min_tokens", "max_tokens"}, "filter");
    cfg.filter.tau_rep = get_or<double>(f, "tau_rep", 0.3, "filter");
    cfg.filter.ngram_n = get_or<int>(f, "ngram_n", 4, "filter");
    cfg.filter.min_tokens = get_or<int>(f, "min_tokens", 10, "filter");
    cfg.filter.max_tokens = get_or<int>(f, "max_tokens", 1024, "filter");
  }

  if (j.contains("endpoints")) {
    const auto& e = j.at("endpoints");
    check_keys(e, {"selector", "synthesizer", "synth_attach_image"}, "endpoints");
    if (e.contains("selector"))
      cfg.selector_endpoint = parse_endpoint_ref(e.at("selector"), "endpoints.selector");
    if (e.contains("synthesizer"))
      cfg.synthesizer_endpoint = parse_endpoint_ref(e.at("synthesizer"), "endpoints.synthesizer");
    cfg.synth_attach_image = get_or<bool>(e, "synth_attach_image", true, "endpoints");
  }
  cfg.auth_token = get_or<std::string>(j, "auth_token", "", "");

  if (j.contains("tools")) {
    if (!j.at("tools").is_array()) throw ValidationError("tools", "must be an array");
    for (const auto& t : j.at("tools")) {
      check_keys(t, {"name", "capability", "output_kind", "requires_image", "endpoint",
                     "max_concurrency"},
                 "tools");
      ToolConfig tc;
      tc.descriptor.name = require_string(t, "name", "tools");
      tc.descriptor.capability = require_string(t, "capability", "tools");
      tc.descriptor.output_kind =
          output_kind_from_name(require_string(t, "output_kind", "tools"));
      tc.descriptor.requires_image = get_or<bool>(t, "requires_image", true, "tools");
      if (t.contains("endpoint"))
        tc.endpoint = parse_endpoint_ref(t.at("endpoint"), "tools.endpoint");
      tc.max_concurrency = get_or<int>(t, "max_concurrency", 4, "tools");
      if (tc.max_concurrency < 1)
        throw ValidationError("tools.max_concurrency", "must be >= 1");
      cfg.tools.push_back(std::move(tc));
    }
  } else {
    cfg.tools = default_tool_configs();
  }

  cfg.workers = get_or<int>(j, "workers", 8, "");
  if (j.contains("cache")) {
    const auto& c = j.at("cache");
    check_keys(c, {"dir", "enabled"}, "cache");
    cfg.cache_dir = abspath(get_or<std::string>(c, "dir", "", "cache"));
    cfg.cache_enabled = get_or<bool>(c, "enabled", true, "cache");
  }
  if (const char* env = std::getenv("AIDE_CACHE_DIR"); env && *env)
    cfg.cache_dir = detail::abspath(env);

  if (j.contains("retries")) {
    const auto& r = j.at("retries");
    check_keys(r, {"attempts", "base_delay_ms", "max_delay_ms", "parse_retries"}, "retries");
    cfg.retry.attempts = get_or<int>(r, "attempts", 3, "retries");
    cfg.retry.base_delay_ms = get_or<int>(r, "base_delay_ms", 100, "retries");
    cfg.retry.max_delay_ms = get_or<int>(r, "max_delay_ms", 2000, "retries");
    cfg.parse_retries = get_or<int>(r, "parse_retries", 2, "retries");
  }

  cfg.include_text_only = get_or<bool>(j, "include_text_only", false, "");
  const auto dup = get_or<std::string>(j, "duplicate_policy", "fail", "");
  if (dup == "fail") cfg.duplicate_policy = DuplicatePolicy::fail;
  else if (dup == "skip") cfg.duplicate_policy = DuplicatePolicy::skip;
  else throw ValidationError("duplicate_policy", "unknown value '" + dup + "'");
  cfg.checkpoint_interval = get_or<int>(j, "checkpoint_interval", 64, "");

  if (j.contains("prompts")) {
    const auto& p = j.at("prompts");
    check_keys(p, {"selector_template", "smallstep_template"}, "prompts");
    cfg.selector_template_path = abspath(get_or<std::string>(p, "selector_template", "", "prompts"));
    cfg.smallstep_template_path =
        abspath(get_or<std::string>(p, "smallstep_template", "", "prompts"));
  }

  // Cross-field validation.
  if (cfg.workers < 1) throw ValidationError("workers", "must be >= 1");
  if (cfg.threshold < 0) throw ValidationError("selector.threshold", "must be >= 0");
  if (cfg.checkpoint_interval < 1) throw ValidationError("checkpoint_interval", "must be >= 1");
  if (cfg.retry.attempts < 1) throw ValidationError("retries.attempts", "must be >= 1");
  if (cfg.parse_retries < 0) throw ValidationError("retries.parse_retries", "must be >= 0");
  if (cfg.filter.tau_rep < 0.0 || cfg.filter.tau_rep > 1.0)
    throw ValidationError("filter.tau_rep", "must lie in [0,1]");
  if (cfg.filter.ngram_n < 1) throw ValidationError("filter.ngram_n", "must be >= 1");
  if (cfg.filter.min_tokens < 0 || cfg.filter.max_tokens < cfg.filter.min_tokens)
    throw ValidationError("filter", "need 0 <= min_tokens <= max_tokens");
  if (cfg.input == cfg.output)
    throw ValidationError("output", "must differ from input");
  for (std::size_t i = 0; i < cfg.tools.size(); ++i)
    for (std::size_t k = i + 1; k < cfg.tools.size(); ++k)
      if (cfg.tools[i].descriptor.name == cfg.tools[k].descriptor.name)
        throw ValidationError("tools", "duplicate tool name '" + cfg.tools[i].descriptor.name + "'");
  return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("", "config is not valid JSON: " + path.string());
  return config_from_json(j);
}

inline nlohmann::json Config::to_json() const {
  nlohmann::json tools_json = nlohmann::json::array();
  for (const auto& t : tools) {
    tools_json.push_back({{"name", t.descriptor.name},
                          {"capability", t.descriptor.capability},
                          {"output_kind", output_kind_name(t.descriptor.output_kind)},
                          {"requires_image", t.descriptor.requires_image},
                          {"endpoint", detail::endpoint_ref_to_json(t.endpoint)},
                          {"max_concurrency", t.max_concurrency}});
  }
  return nlohmann::json{
      {"input", input},
      {"output", output},
      {"run_dir", run_dir},
      {"selector",
       {{"kind", selector_kind_name(selector_kind)},
        {"threshold", threshold},
        {"attach_image", selector_attach_image}}},
      {"mode", mode_name(mode)},
      {"conflict_policy", conflict_policy_name(conflict_policy)},
      {"filter",
       {{"tau_rep", filter.tau_rep},
        {"ngram_n", filter.ngram_n},
        {"min_tokens", filter.min_tokens},
        {"max_tokens", filter.max_tokens}}},
      {"endpoints",
       {{"selector", detail::endpoint_ref_to_json(selector_endpoint)},
        {"synthesizer", detail::endpoint_ref_to_json(synthesizer_endpoint)},
        {"synth_attach_image", synth_attach_image}}},
      {"auth_token", auth_token},
      {"tools", std::move(tools_json)},
      {"workers", workers},
      {"cache", {{"dir", cache_dir}, {"enabled", cache_enabled}}},
      {"retries",
       {{"attempts", retry.attempts},
        {"base_delay_ms", retry.base_delay_ms},
        {"max_delay_ms", retry.max_delay_ms},
        {"parse_retries", parse_retries}}},
      {"include_text_only", include_text_only},
      {"duplicate_policy", duplicate_policy == DuplicatePolicy::fail ? "fail" : "skip"},
      {"checkpoint_interval", checkpoint_interval},
      {"prompts",
       {{"selector_template", selector_template_path},
        {"smallstep_template", smallstep_template_path}}}};
}

// `aide ... --mock <script>` rewires every endpoint slot to the same mock
// script file.
inline void apply_mock_override(Config& cfg, const std::string& script_path) {
  const std::string abs = detail::abspath(script_path);
  cfg.selector_endpoint = EndpointRef{"", abs};
  cfg.synthesizer_endpoint = EndpointRef{"", abs};
  for (auto& t : cfg.tools) t.endpoint = EndpointRef{"", abs};
}

}  // namespace aide
