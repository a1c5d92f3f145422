#pragma once

// Synthesis stage: small-step prompting. The model gets the full instance,
// the known-correct answer, and every expert finding, and is asked for
// exactly one thing: the reasoning that arrives at that answer.

#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/cache.hpp"
#include "aide/corpus.hpp"
#include "aide/endpoint.hpp"
#include "aide/errors.hpp"
#include "aide/experts.hpp"
#include "aide/hash.hpp"
#include "aide/text.hpp"

namespace aide {

struct ConflictFlag {
  std::string expert;
  std::string description;
  std::vector<std::string> expert_tokens;  // normalized; used by prefer_expert
};

struct SynthesisCandidate {
  std::string instance_id;
  std::string text;
  std::string prompt_hash;
  std::vector<ConflictFlag> conflict_flags;
};

inline constexpr std::string_view kDefaultSmallStepTemplate =
    R"(You are given one visual question, its correct answer, and findings from expert tools.

{context}Question: {question}
Correct answer: {answer}

Expert findings:
{findings}

Task: write the detailed reasoning that leads to the correct answer given above, citing the expert findings where they are relevant.
)";

namespace detail {

inline std::string format_bbox(const std::array<double, 4>& bbox) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "[%.2f, %.2f, %.2f, %.2f]", bbox[0], bbox[1], bbox[2], bbox[3]);
  return buf;
}

inline std::string format_confidence(double c) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", c);
  return buf;
}

}  // namespace detail

// Human-readable rendering of expert findings, quantized so prompts are
// byte-stable across runs.
inline std::string render_expert_findings(const std::vector<ExpertOutput>& outputs) {
  if (outputs.empty()) return "(no expert findings)";
  std::string out;
  for (const auto& output : outputs) {
    if (const auto* tr = std::get_if<TextRegions>(&output.payload)) {
      if (tr->regions.empty()) {
        out += "- " + output.tool + ": no text found\n";
        continue;
      }
      for (const auto& r : tr->regions)
        out += "- " + output.tool + ": text \"" + r.text + "\" at bbox " +
               detail::format_bbox(r.bbox) + ", confidence " +
               detail::format_confidence(r.confidence) + "\n";
    } else {
      const auto& go = std::get<GroundedObjects>(output.payload);
      if (go.objects.empty()) {
        out += "- " + output.tool + ": no objects found\n";
        continue;
      }
      for (const auto& o : go.objects)
        out += "- " + output.tool + ": object \"" + o.label + "\" at bbox " +
               detail::format_bbox(o.bbox) + ", confidence " +
               detail::format_confidence(o.confidence) + "\n";
    }
  }
  if (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

// The prompt carries (a) the question, (b) the original answer presented as
// ground truth, (c) every expert finding, (d) one single task. Earlier turns
// of multi-turn instances ride along verbatim as context.
inline std::string build_smallstep_prompt(
    const Instance& inst, const std::vector<ExpertOutput>& expert_outputs,
    std::string_view template_text = kDefaultSmallStepTemplate) {
  const Turn* answer = inst.final_answer_turn();
  const Turn* question = inst.turns.size() >= 2 ? &inst.turns[inst.turns.size() - 2] : nullptr;
  if (!answer || !question)
    throw Error("instance " + inst.id + " has no final (question, answer) pair");

  std::string context;
  if (inst.turns.size() > 2) {
    context += "Context:\n";
    for (std::size_t i = 0; i + 2 < inst.turns.size(); ++i) {
      context += inst.turns[i].role == Role::human ? "human: " : "assistant: ";
      context += inst.turns[i].text;
      context += '\n';
    }
    context += '\n';
  }

  return render_template(template_text, {{"context", context},
                                         {"question", question->text},
                                         {"answer", answer->text},
                                         {"findings", render_expert_findings(expert_outputs)}});
}

// Token-overlap conflict proxy: an expert that found something whose token
// set shares nothing with the answer gets flagged. Subset agreement (answer
// "a red car" vs label "car") is not a conflict.
inline std::vector<ConflictFlag> detect_conflicts(const std::string& original_answer,
                                                  const std::vector<ExpertOutput>& outputs) {
  std::vector<ConflictFlag> flags;
  const std::set<std::string> answer_tokens = normalized_token_set(original_answer);
  if (answer_tokens.empty()) return flags;

  for (const auto& output : outputs) {
    std::set<std::string> expert_tokens;
    if (const auto* tr = std::get_if<TextRegions>(&output.payload)) {
      for (const auto& r : tr->regions)
        for (auto& tok : normalized_token_set(r.text)) expert_tokens.insert(tok);
    } else {
      for (const auto& o : std::get<GroundedObjects>(output.payload).objects)
        for (auto& tok : normalized_token_set(o.label)) expert_tokens.insert(tok);
    }
    if (expert_tokens.empty()) continue;
    bool overlap = false;
    for (const auto& tok : expert_tokens)
      if (answer_tokens.count(tok)) { overlap = true; break; }
    if (overlap) continue;

    ConflictFlag flag;
    flag.expert = output.tool;
    std::string listed;
    std::size_t shown = 0;
    for (const auto& tok : expert_tokens) {
      if (shown++ == 8) { listed += ", ..."; break; }
      if (!listed.empty()) listed += ", ";
      listed += "\"" + tok + "\"";
    }
    flag.description = "tokens {" + listed + "} share nothing with the answer";
    flag.expert_tokens.assign(expert_tokens.begin(), expert_tokens.end());
    flags.push_back(std::move(flag));
  }
  return flags;
}

enum class ConflictPolicy { prefer_original, prefer_expert, drop };

inline const char* conflict_policy_name(ConflictPolicy p) {
  switch (p) {
    case ConflictPolicy::prefer_original: return "prefer_original";
    case ConflictPolicy::prefer_expert: return "prefer_expert";
    case ConflictPolicy::drop: return "drop";
  }
  return "prefer_original";
}

enum class Resolution { accept, fallback };

// prefer_original: accept, flags travel in provenance. prefer_expert: accept
// only if the candidate picked up at least one token from every conflicting
// expert. drop: any conflict falls back to the original.
inline Resolution resolve(const SynthesisCandidate& candidate,
                          const std::vector<ConflictFlag>& conflicts, ConflictPolicy policy) {
  if (conflicts.empty()) return Resolution::accept;
  switch (policy) {
    case ConflictPolicy::prefer_original:
      return Resolution::accept;
    case ConflictPolicy::drop:
      return Resolution::fallback;
    case ConflictPolicy::prefer_expert: {
      const std::set<std::string> candidate_tokens = normalized_token_set(candidate.text);
      for (const auto& flag : conflicts) {
        bool covered = false;
        for (const auto& tok : flag.expert_tokens)
          if (candidate_tokens.count(tok)) { covered = true; break; }
        if (!covered) return Resolution::fallback;
      }
      return Resolution::accept;
    }
  }
  return Resolution::fallback;
}

struct SynthOptions {
  std::string template_text{kDefaultSmallStepTemplate};
  RetryPolicy retry;
  const ResponseCache* cache = nullptr;
  bool attach_image = true;
};

// Throws EndpointFailure when the endpoint fails after retries or returns an
// empty candidate; the orchestrator turns that into a passthrough fallback.
inline SynthesisCandidate synthesize(const Instance& inst,
                                     const std::vector<ExpertOutput>& expert_outputs,
                                     Endpoint& endpoint, const SynthOptions& opts = {}) {
  const std::string prompt = build_smallstep_prompt(inst, expert_outputs, opts.template_text);
  const std::string body =
      generation_request_body(prompt, opts.attach_image ? inst.image : std::nullopt);

  std::string response;
  if (opts.cache && opts.cache->enabled()) {
    response = cached_post(*opts.cache, endpoint, body, opts.retry);
  } else {
    response = post_with_retries(endpoint, body, opts.retry);
  }

  SynthesisCandidate candidate;
  candidate.instance_id = inst.id;
  candidate.text = parse_generation_response(response);
  candidate.prompt_hash = sha256_hex(body);
  if (trim(candidate.text).empty())
    throw EndpointFailure(endpoint.id() + ": empty generation");
  candidate.conflict_flags = detect_conflicts(inst.final_answer_turn()->text, expert_outputs);
  return candidate;
}

}  // namespace aide
