#pragma once

// Integration stage: filter synthesis candidates, rebuild turns under the
// configured retention mode, fall back to originals on rejection. No
// instance is ever dropped; rejected ones pass through with the reason in
// provenance.

#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/corpus.hpp"
#include "aide/errors.hpp"
#include "aide/selector.hpp"
#include "aide/synthesizer.hpp"
#include "aide/text.hpp"

namespace aide {

enum class Mode { small_step, retention, passthrough };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::small_step: return "small_step";
    case Mode::retention: return "retention";
    case Mode::passthrough: return "passthrough";
  }
  return "passthrough";
}

inline Mode mode_from_name(const std::string& name) {
  if (name == "small_step") return Mode::small_step;
  if (name == "retention") return Mode::retention;
  if (name == "passthrough") return Mode::passthrough;
  throw ValidationError("mode", "unknown value '" + name + "'");
}

struct FilterConfig {
  double tau_rep = 0.3;  // max n-gram repetition ratio
  int ngram_n = 4;
  int min_tokens = 10;
  int max_tokens = 1024;
};

struct Verdict {
  bool accepted = true;
  std::string reason;  // empty when accepted

  std::string wire() const { return accepted ? "accept" : "reject:" + reason; }
};

struct Provenance {
  Mode mode = Mode::passthrough;
  std::vector<std::string> tools;
  SelectorKind selector_kind = SelectorKind::heuristic;
  std::optional<std::string> prompt_hash;
  Verdict verdict;
  std::vector<ConflictFlag> conflicts;
};

struct EnrichedInstance {
  Instance instance;  // turns already rebuilt per mode
  Provenance provenance;
};

// 1 - distinct/total over the text's whitespace-token n-grams; 0 when there
// is at most one n-gram.
inline double ngram_repetition_ratio(std::string_view text, std::size_t n) {
  if (n == 0) return 0.0;
  const std::vector<std::string_view> tokens = tokenize(text);
  if (tokens.size() < n) return 0.0;
  const std::size_t total = tokens.size() - n + 1;
  if (total <= 1) return 0.0;
  std::unordered_set<std::string> grams;
  grams.reserve(total * 2);
  for (std::size_t i = 0; i < total; ++i) {
    std::string gram;
    for (std::size_t k = 0; k < n; ++k) {
      if (k) gram.push_back(' ');
      gram.append(tokens[i + k]);
    }
    grams.insert(std::move(gram));
  }
  return 1.0 - static_cast<double>(grams.size()) / static_cast<double>(total);
}

// All four checks; the reported reason follows a fixed priority so verdicts
// are reproducible: no-added-content, repetition, length, answer-missing.
inline Verdict filter_candidate(const std::string& candidate_text,
                                const std::string& original_answer,
                                const FilterConfig& cfg = {}) {
  const std::string norm_candidate = normalize_for_match(candidate_text);
  const std::string norm_answer = normalize_for_match(original_answer);

  if (norm_candidate == norm_answer) return {false, "no-added-content"};
  if (ngram_repetition_ratio(candidate_text, static_cast<std::size_t>(cfg.ngram_n)) > cfg.tau_rep)
    return {false, "repetition"};
  const std::size_t tokens = token_count(candidate_text);
  if (tokens < static_cast<std::size_t>(cfg.min_tokens) ||
      tokens > static_cast<std::size_t>(cfg.max_tokens))
    return {false, "length"};
  if (!norm_answer.empty() && norm_candidate.find(norm_answer) == std::string::npos)
    return {false, "answer-missing"};
  return {true, ""};
}

inline constexpr std::string_view kRetentionElaborationTemplate =
    "Please explain in detail how to arrive at the answer to: {question}";

inline std::string retention_elaboration_request(const std::string& question) {
  return render_template(kRetentionElaborationTemplate, {{"question", question}});
}

// Rebuild turns for an accepted candidate. small_step swaps the final
// assistant turn for the candidate; retention keeps the original turns and
// appends an elaboration exchange.
inline EnrichedInstance assemble(const Instance& inst, const SynthesisCandidate& candidate,
                                 Mode mode, const SelectionDecision& decision) {
  EnrichedInstance out;
  out.instance = inst;
  out.instance.provenance.reset();
  out.provenance.mode = mode;
  out.provenance.tools = decision.tools;
  out.provenance.selector_kind = decision.selector_kind;
  out.provenance.prompt_hash = candidate.prompt_hash;
  out.provenance.verdict = {true, ""};
  out.provenance.conflicts = candidate.conflict_flags;

  if (mode == Mode::small_step) {
    for (std::size_t i = out.instance.turns.size(); i-- > 0;) {
      if (out.instance.turns[i].role == Role::assistant) {
        out.instance.turns[i].text = candidate.text;
        break;
      }
    }
  } else if (mode == Mode::retention) {
    const Turn* question =
        inst.turns.size() >= 2 ? &inst.turns[inst.turns.size() - 2] : nullptr;
    out.instance.turns.push_back(
        {Role::human, retention_elaboration_request(question ? question->text : "")});
    out.instance.turns.push_back({Role::assistant, candidate.text});
  } else {
    throw Error("assemble called with passthrough mode");
  }
  return out;
}

inline EnrichedInstance make_passthrough(const Instance& inst, const SelectionDecision& decision) {
  EnrichedInstance out;
  out.instance = inst;
  out.instance.provenance.reset();
  out.provenance.mode = Mode::passthrough;
  out.provenance.selector_kind = decision.selector_kind;
  out.provenance.verdict = {true, ""};
  return out;
}

// Passthrough with the rejection reason recorded; the degrade-not-fail path
// for every per-instance error and filter rejection.
inline EnrichedInstance fallback(const Instance& inst, const SelectionDecision& decision,
                                 const std::string& reason,
                                 std::vector<ConflictFlag> conflicts = {},
                                 std::optional<std::string> prompt_hash = std::nullopt) {
  EnrichedInstance out;
  out.instance = inst;
  out.instance.provenance.reset();
  out.provenance.mode = Mode::passthrough;
  out.provenance.tools = decision.tools;
  out.provenance.selector_kind = decision.selector_kind;
  out.provenance.prompt_hash = std::move(prompt_hash);
  out.provenance.verdict = {false, reason};
  out.provenance.conflicts = std::move(conflicts);
  return out;
}

inline nlohmann::json provenance_to_json(const Provenance& prov) {
  nlohmann::json conflicts = nlohmann::json::array();
  for (const auto& c : prov.conflicts)
    conflicts.push_back({{"expert", c.expert}, {"description", c.description}});
  nlohmann::json j{{"mode", mode_name(prov.mode)},
                   {"tools", prov.tools},
                   {"selector", selector_kind_name(prov.selector_kind)},
                   {"verdict", prov.verdict.wire()},
                   {"conflicts", std::move(conflicts)}};
  if (prov.prompt_hash) j["prompt_hash"] = *prov.prompt_hash;
  return j;
}

inline nlohmann::json enriched_to_json(const EnrichedInstance& e) {
  nlohmann::json j = instance_to_json(e.instance);
  j["aide"] = provenance_to_json(e.provenance);
  return j;
}

}  // namespace aide
