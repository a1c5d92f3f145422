#pragma once

// Deterministic scripted endpoints. A script is an ordered rule list; the
// first rule whose matcher hits the request body wins. Responses are a pure
// function of (request, per-rule call index), which is what makes full
// pipeline runs reproducible offline.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/endpoint.hpp"
#include "aide/errors.hpp"

namespace aide::mocks {

struct ScriptRule {
  enum class Match { contains, regex, always };
  Match match = Match::always;
  std::string pattern;
  std::shared_ptr<const std::regex> compiled;  // for Match::regex
  std::string response_body;
  bool fail = false;                         // every call fails
  std::optional<std::uint64_t> fail_after;   // calls beyond this count fail
  std::optional<std::uint64_t> fail_first;   // this many leading calls fail
  int latency_ms = 0;

  bool matches(const std::string& body) const {
    switch (match) {
      case Match::always: return true;
      case Match::contains: return body.find(pattern) != std::string::npos;
      case Match::regex: return std::regex_search(body, *compiled);
    }
    return false;
  }
};

struct Script {
  std::vector<ScriptRule> rules;

  static Script from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("rules") || !j["rules"].is_array())
      throw ScriptError("script must be an object with a 'rules' array");
    Script script;
    bool has_default = false;
    for (const auto& r : j["rules"]) {
      if (!r.is_object()) throw ScriptError("script rule must be an object");
      for (const auto& [key, _] : r.items()) {
        if (key != "match" && key != "response" && key != "text" && key != "fail" &&
            key != "fail_after" && key != "fail_first" && key != "latency_ms")
          throw ScriptError("unknown script rule key '" + key + "'");
      }
      ScriptRule rule;
      if (!r.contains("match") || (r["match"].is_string() && r["match"] == "default")) {
        rule.match = ScriptRule::Match::always;
        has_default = true;
      } else if (r["match"].is_object() && r["match"].contains("contains")) {
        rule.match = ScriptRule::Match::contains;
        rule.pattern = r["match"]["contains"].get<std::string>();
      } else if (r["match"].is_object() && r["match"].contains("regex")) {
        rule.match = ScriptRule::Match::regex;
        rule.pattern = r["match"]["regex"].get<std::string>();
        try {
          rule.compiled = std::make_shared<const std::regex>(rule.pattern);
        } catch (const std::regex_error& e) {
          throw ScriptError("bad regex '" + rule.pattern + "': " + e.what());
        }
      } else {
        throw ScriptError("rule 'match' must be \"default\", {\"contains\":...} or {\"regex\":...}");
      }
      if (r.contains("fail")) rule.fail = r["fail"].get<bool>();
      if (r.contains("fail_after")) rule.fail_after = r["fail_after"].get<std::uint64_t>();
      if (r.contains("fail_first")) rule.fail_first = r["fail_first"].get<std::uint64_t>();
      if (r.contains("latency_ms")) rule.latency_ms = r["latency_ms"].get<int>();
      if (r.contains("text")) {
        rule.response_body = nlohmann::json{{"text", r["text"].get<std::string>()}}.dump();
      } else if (r.contains("response")) {
        rule.response_body =
            r["response"].is_string() ? r["response"].get<std::string>() : r["response"].dump();
      } else if (!rule.fail) {
        throw ScriptError("rule needs a 'text' or 'response' unless it always fails");
      }
      script.rules.push_back(std::move(rule));
    }
    if (!has_default) throw ScriptError("script has no default rule");
    return script;
  }
};

class ScriptedEndpoint final : public Endpoint {
 public:
  ScriptedEndpoint(std::string slot_id, Script script)
      : slot_id_(std::move(slot_id)),
        script_(std::move(script)),
        rule_calls_(script_.rules.size()) {
    for (auto& c : rule_calls_) c = std::make_unique<std::atomic<std::uint64_t>>(0);
  }

  std::string id() const override { return slot_id_; }

  std::string post(const std::string& body) override {
    total_calls_.fetch_add(1, std::memory_order_relaxed);
    for (std::size_t i = 0; i < script_.rules.size(); ++i) {
      const ScriptRule& rule = script_.rules[i];
      if (!rule.matches(body)) continue;
      const std::uint64_t nth = rule_calls_[i]->fetch_add(1, std::memory_order_relaxed) + 1;
      if (rule.latency_ms > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(rule.latency_ms));
      if (rule.fail) throw EndpointFailure(slot_id_ + ": scripted failure");
      if (rule.fail_first && nth <= *rule.fail_first)
        throw EndpointFailure(slot_id_ + ": scripted failure (first " +
                              std::to_string(*rule.fail_first) + " calls)");
      if (rule.fail_after && nth > *rule.fail_after)
        throw EndpointFailure(slot_id_ + ": scripted failure (after " +
                              std::to_string(*rule.fail_after) + " calls)");
      return rule.response_body;
    }
    throw ScriptError(slot_id_ + ": no rule matched (default rule missing?)");
  }

  std::uint64_t call_count() const { return total_calls_.load(std::memory_order_relaxed); }

  std::uint64_t calls_for_rule(std::size_t i) const {
    return rule_calls_.at(i)->load(std::memory_order_relaxed);
  }

 private:
  std::string slot_id_;
  Script script_;
  std::atomic<std::uint64_t> total_calls_{0};
  std::vector<std::unique_ptr<std::atomic<std::uint64_t>>> rule_calls_;
};

// A suite file wires every endpoint slot from one JSON document:
//   {"generation": {"rules": [...]},
//    "experts": {"ocr": {"rules": [...]}, "*": {"rules": [...]}}}
struct MockSuite {
  Script generation;
  std::map<std::string, Script> experts;

  static MockSuite load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ScriptError("invalid JSON in mock script: " + path);
    return from_json(j, path);
  }

  static MockSuite from_json(const nlohmann::json& j, const std::string& origin) {
    if (!j.is_object()) throw ScriptError("mock script must be a JSON object: " + origin);
    for (const auto& [key, _] : j.items())
      if (key != "generation" && key != "experts")
        throw ScriptError("unknown mock script key '" + key + "' in " + origin);
    MockSuite suite;
    if (!j.contains("generation"))
      throw ScriptError("mock script missing 'generation' section: " + origin);
    suite.generation = Script::from_json(j["generation"]);
    if (j.contains("experts")) {
      if (!j["experts"].is_object())
        throw ScriptError("'experts' must be an object: " + origin);
      for (const auto& [name, section] : j["experts"].items())
        suite.experts.emplace(name, Script::from_json(section));
    }
    return suite;
  }

  const Script& script_for_tool(const std::string& tool) const {
    auto it = experts.find(tool);
    if (it != experts.end()) return it->second;
    it = experts.find("*");
    if (it != experts.end()) return it->second;
    throw ScriptError("mock script has no expert section for tool '" + tool + "'");
  }
};

}  // namespace aide::mocks
