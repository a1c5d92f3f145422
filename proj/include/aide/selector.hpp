#pragma once

// Selection stage: decide per instance whether enrichment is warranted and
// which expert tools to consult, either by the short-answer token heuristic
// or by asking a model over the generation endpoint.

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/cache.hpp"
#include "aide/corpus.hpp"
#include "aide/endpoint.hpp"
#include "aide/errors.hpp"
#include "aide/experts.hpp"
#include "aide/log.hpp"
#include "aide/text.hpp"

namespace aide {

enum class SelectorKind { heuristic, model };

inline const char* selector_kind_name(SelectorKind k) {
  return k == SelectorKind::heuristic ? "heuristic" : "model";
}

struct SelectionDecision {
  std::string instance_id;
  bool selected = false;
  std::vector<std::string> tools;  // empty whenever selected is false
  std::optional<std::string> rationale;
  SelectorKind selector_kind = SelectorKind::heuristic;
};

inline constexpr std::string_view kDefaultSelectorTemplate =
    R"(You review one training instance and decide whether consulting expert tools would improve its final answer.

Conversation:
{turns}

Available expert tools:
{tools}

Judge whether any tool's output would make the final answer richer or more accurate. Reply with a single JSON object on one line, shaped exactly like this:
{"select": true, "tools": ["<tool name>"], "rationale": "<short justification>"}
Name only tools from the list above. Use "select": false with an empty tool list when no tool would help.
)";

inline std::string render_turns(const Instance& inst) {
  std::string out;
  for (const auto& t : inst.turns) {
    out += t.role == Role::human ? "human: " : "assistant: ";
    out += t.text;
    out += '\n';
  }
  if (!out.empty()) out.pop_back();
  return out;
}

inline std::string render_tool_list(const ToolRegistry& registry) {
  std::string out;
  for (const auto& t : registry.tools()) {
    out += "- " + t.name + ": " + t.capability + "\n";
  }
  if (!out.empty()) out.pop_back();
  return out;
}

inline std::string build_selector_prompt(const Instance& inst, const ToolRegistry& registry,
                                         std::string_view template_text = kDefaultSelectorTemplate) {
  if (registry.empty()) throw EmptyRegistry();
  return render_template(template_text,
                         {{"turns", render_turns(inst)}, {"tools", render_tool_list(registry)}});
}

struct ReplyCore {
  bool selected = false;
  std::vector<std::string> tools;
  std::optional<std::string> rationale;
};

namespace detail {

// Next balanced JSON object in s at or after `from`, tracking strings and
// escapes; returns the parsed object and the index just past it.
inline std::optional<std::pair<nlohmann::json, std::size_t>> next_json_object(
    std::string_view s, std::size_t from) {
  for (std::size_t i = from; i < s.size(); ++i) {
    if (s[i] != '{') continue;
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t j = i; j < s.size(); ++j) {
      char c = s[j];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
      } else if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          nlohmann::json parsed = nlohmann::json::parse(s.substr(i, j - i + 1), nullptr, false);
          if (!parsed.is_discarded()) return std::make_pair(std::move(parsed), j + 1);
          break;  // unparseable span; rescan from the next brace
        }
      }
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Extracts the first balanced JSON object carrying a boolean "select" from a
// possibly chatty reply. Tool names not present in the registry are dropped
// with a warning; a selection left with no usable tools degrades to
// not-selected so the decision invariant holds on every path.
inline ReplyCore parse_selector_reply(std::string_view reply, const ToolRegistry& registry) {
  std::size_t pos = 0;
  while (auto found = detail::next_json_object(reply, pos)) {
    auto& [obj, next] = *found;
    pos = next;
    if (!obj.is_object() || !obj.contains("select") || !obj["select"].is_boolean()) continue;

    ReplyCore core;
    core.selected = obj["select"].get<bool>();
    if (obj.contains("rationale") && obj["rationale"].is_string())
      core.rationale = obj["rationale"].get<std::string>();
    if (obj.contains("tools") && obj["tools"].is_array()) {
      for (const auto& t : obj["tools"]) {
        if (!t.is_string()) continue;
        const auto name = t.get<std::string>();
        if (registry.find(name)) {
          core.tools.push_back(name);
        } else {
          log_warn("selector reply names unknown tool '" + name + "'; dropped");
        }
      }
    }
    if (core.selected && core.tools.empty()) {
      core.selected = false;
      core.rationale = "no-usable-tools";
    }
    if (!core.selected) core.tools.clear();
    return core;
  }
  throw UnparseableReply("no JSON object with a boolean \"select\" in reply");
}

// Short answers get enriched: selected iff the final assistant turn has at
// most `threshold` whitespace tokens. The heuristic cannot match tools to
// content, so it attaches every registered tool compatible with the
// instance's modality.
inline SelectionDecision select_heuristic(const Instance& inst, const ToolRegistry& registry,
                                          std::size_t threshold = 5) {
  SelectionDecision d;
  d.instance_id = inst.id;
  d.selector_kind = SelectorKind::heuristic;
  const Turn* answer = inst.final_answer_turn();
  if (!answer) {
    d.rationale = "no-final-answer";
    return d;
  }
  const std::size_t count = token_count(answer->text);
  d.selected = count <= threshold;
  d.rationale = "token_count=" + std::to_string(count) +
                " threshold=" + std::to_string(threshold);
  if (d.selected) {
    for (const auto& t : registry.tools())
      if (t.applicable_to(inst)) d.tools.push_back(t.name);
  }
  return d;
}

struct SelectOptions {
  std::string template_text{kDefaultSelectorTemplate};
  RetryPolicy retry;
  int parse_retries = 2;  // extra endpoint calls when the reply is unparseable
  const ResponseCache* cache = nullptr;
  bool attach_image = true;
};

inline SelectionDecision select_model(const Instance& inst, const ToolRegistry& registry,
                                      Endpoint& endpoint, const SelectOptions& opts = {}) {
  SelectionDecision d;
  d.instance_id = inst.id;
  d.selector_kind = SelectorKind::model;
  if (!inst.final_answer_turn()) {
    d.rationale = "no-final-answer";
    return d;
  }

  const std::string prompt = build_selector_prompt(inst, registry, opts.template_text);
  const std::string body = generation_request_body(
      prompt, opts.attach_image ? inst.image : std::nullopt);

  const bool use_cache = opts.cache && opts.cache->enabled();
  const std::string cache_key = ResponseCache::key_for(endpoint.id(), body);
  try {
    for (int attempt = 0; attempt <= opts.parse_retries; ++attempt) {
      std::string response;
      if (attempt == 0 && use_cache) {
        response = cached_post(*opts.cache, endpoint, body, opts.retry);
      } else {
        // Retries bypass the cache read (re-asking a cached reply would just
        // reproduce the same parse failure) and overwrite the entry.
        response = post_with_retries(endpoint, body, opts.retry);
        if (use_cache) opts.cache->put(cache_key, response);
      }
      const std::string reply = parse_generation_response(response);
      try {
        ReplyCore core = parse_selector_reply(reply, registry);
        d.selected = core.selected;
        d.tools = std::move(core.tools);
        d.rationale = std::move(core.rationale);
        // A model may name a tool the instance cannot support (e.g. an
        // image tool for a text-only instance); drop and degrade.
        std::vector<std::string> applicable;
        for (const auto& name : d.tools) {
          const ToolDescriptor* t = registry.find(name);
          if (t && t->applicable_to(inst)) applicable.push_back(name);
        }
        if (d.selected && applicable.empty()) {
          d.selected = false;
          d.rationale = "no-usable-tools";
        }
        d.tools = d.selected ? std::move(applicable) : std::vector<std::string>{};
        return d;
      } catch (const UnparseableReply&) {
        if (attempt == opts.parse_retries) break;
      }
    }
    d.selected = false;
    d.tools.clear();
    d.rationale = "unparseable";
  } catch (const EndpointFailure&) {
    d.selected = false;
    d.tools.clear();
    d.rationale = "endpoint-failed";
  }
  return d;
}

}  // namespace aide
