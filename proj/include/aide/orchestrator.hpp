#pragma once

// Pipeline driver: streams the input manifest through select -> experts ->
// synthesize -> resolve -> filter -> assemble with bounded concurrency,
// emits output in input order, checkpoints durable progress, and can resume
// an interrupted run to a byte-identical result.

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/analytics.hpp"
#include "aide/cache.hpp"
#include "aide/config.hpp"
#include "aide/corpus.hpp"
#include "aide/endpoint.hpp"
#include "aide/errors.hpp"
#include "aide/experts.hpp"
#include "aide/http_endpoint.hpp"
#include "aide/integrator.hpp"
#include "aide/mocks.hpp"
#include "aide/run_state.hpp"
#include "aide/selector.hpp"
#include "aide/synthesizer.hpp"
#include "aide/worker_pool.hpp"

namespace aide {

struct RunReport {
  std::uint64_t total = 0;
  std::uint64_t with_image = 0;
  std::uint64_t text_only = 0;
  std::uint64_t selected = 0;
  std::uint64_t synthesized = 0;
  std::uint64_t accepted = 0;
  std::map<std::string, std::uint64_t> rejected_by_reason;
  SourceBreakdown breakdown;
  // Posts that actually reached each endpoint this run. Kept out of
  // report.json: with shared request bodies the count can depend on cache
  // timing, and report files must be worker-count independent.
  std::map<std::string, std::uint64_t> endpoint_calls;

  nlohmann::json to_json() const {
    nlohmann::json j = breakdown_to_json(breakdown);
    j["global"]["with_image"] = with_image;
    j["global"]["text_only"] = text_only;
    j["global"]["synthesized"] = synthesized;
    return j;
  }

  static RunReport from_json(const nlohmann::json& j) {
    RunReport r;
    r.breakdown = breakdown_from_json(j);
    r.total = r.breakdown.global.total;
    r.selected = r.breakdown.global.selected;
    r.accepted = r.breakdown.global.accepted;
    r.rejected_by_reason = r.breakdown.global.rejected_by_reason;
    r.with_image = j.at("global").at("with_image").get<std::uint64_t>();
    r.text_only = j.at("global").at("text_only").get<std::uint64_t>();
    r.synthesized = j.at("global").at("synthesized").get<std::uint64_t>();
    return r;
  }
};

// Test seam: called after each ordered emit with the durable cursor value.
// Throwing aborts the run exactly as an external interrupt would.
struct RunHooks {
  std::function<void(std::uint64_t emitted)> on_emit;
};

inline nlohmann::json decision_to_json(const SelectionDecision& d) {
  nlohmann::json j{{"instance_id", d.instance_id},
                   {"selected", d.selected},
                   {"tools", d.tools},
                   {"selector", selector_kind_name(d.selector_kind)}};
  if (d.rationale) j["rationale"] = *d.rationale;
  return j;
}

inline SelectionDecision decision_from_json(const nlohmann::json& j, const ToolRegistry& registry,
                                            std::size_t line_no) {
  if (!j.is_object()) throw MalformedRecord(line_no, "decision is not a JSON object");
  SelectionDecision d;
  try {
    d.instance_id = j.at("instance_id").get<std::string>();
    d.selected = j.at("selected").get<bool>();
    d.selector_kind = j.at("selector").get<std::string>() == "model" ? SelectorKind::model
                                                                     : SelectorKind::heuristic;
    if (j.contains("rationale")) d.rationale = j.at("rationale").get<std::string>();
    for (const auto& t : j.at("tools")) {
      const auto name = t.get<std::string>();
      if (registry.find(name)) d.tools.push_back(name);
      else log_warn("decisions file names unknown tool '" + name + "'; dropped");
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedRecord(line_no, std::string("bad decision record: ") + e.what());
  }
  if (d.selected && d.tools.empty() && !j.at("tools").empty()) {
    d.selected = false;
    d.rationale = "no-usable-tools";
  }
  if (!d.selected) d.tools.clear();
  return d;
}

namespace detail {

class Semaphore {
 public:
  explicit Semaphore(int count) : count_(count) {}
  void acquire() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return count_ > 0; });
    --count_;
  }
  void release() {
    std::lock_guard lk(mu_);
    ++count_;
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int count_;
};

struct SemaphoreGuard {
  explicit SemaphoreGuard(Semaphore* s) : sem(s) {
    if (sem) sem->acquire();
  }
  ~SemaphoreGuard() {
    if (sem) sem->release();
  }
  Semaphore* sem;
};

// Append-only line sink tracking its durable byte offset. On resume the file
// is truncated back to the last checkpointed offset first, discarding any
// tail an interrupted run may have left.
class Appender {
 public:
  Appender(const std::filesystem::path& path, std::uint64_t resume_offset, bool fresh)
      : path_(path) {
    namespace fs = std::filesystem;
    if (fresh) {
      out_.open(path_, std::ios::binary | std::ios::trunc);
      offset_ = 0;
    } else {
      std::error_code ec;
      const auto size = fs::exists(path_, ec) ? fs::file_size(path_, ec) : 0;
      if (size < resume_offset)
        throw CorruptState(path_.string() + " is shorter than its checkpoint offset");
      if (size > resume_offset) fs::resize_file(path_, resume_offset);
      out_.open(path_, std::ios::binary | std::ios::app);
      offset_ = resume_offset;
    }
    if (!out_) throw Error("cannot open for writing: " + path_.string());
  }

  void write_line(const std::string& line) {
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!out_) throw Error("write failed: " + path_.string());
    offset_ += line.size();
  }

  void flush() {
    out_.flush();
    if (!out_) throw Error("flush failed: " + path_.string());
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t offset_ = 0;
};

struct Aggregator {
  std::uint64_t total = 0, with_image = 0, text_only = 0;
  std::uint64_t selected = 0, synthesized = 0, accepted = 0;
  std::map<std::string, std::uint64_t> rejected_by_reason;
  struct Src {
    std::uint64_t total = 0, selected = 0;
  };
  std::map<std::string, Src> per_source;

  nlohmann::json to_json() const {
    nlohmann::json sources = nlohmann::json::object();
    for (const auto& [name, s] : per_source)
      sources[name] = {{"total", s.total}, {"selected", s.selected}};
    return nlohmann::json{{"total", total},
                          {"with_image", with_image},
                          {"text_only", text_only},
                          {"selected", selected},
                          {"synthesized", synthesized},
                          {"accepted", accepted},
                          {"rejected_by_reason", rejected_by_reason},
                          {"per_source", std::move(sources)}};
  }

  static Aggregator from_json(const nlohmann::json& j) {
    try {
      Aggregator a;
      a.total = j.at("total").get<std::uint64_t>();
      a.with_image = j.at("with_image").get<std::uint64_t>();
      a.text_only = j.at("text_only").get<std::uint64_t>();
      a.selected = j.at("selected").get<std::uint64_t>();
      a.synthesized = j.at("synthesized").get<std::uint64_t>();
      a.accepted = j.at("accepted").get<std::uint64_t>();
      for (const auto& [reason, count] : j.at("rejected_by_reason").items())
        a.rejected_by_reason[reason] = count.get<std::uint64_t>();
      for (const auto& [name, s] : j.at("per_source").items())
        a.per_source[name] = {s.at("total").get<std::uint64_t>(),
                              s.at("selected").get<std::uint64_t>()};
      return a;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptState(std::string("bad aggregate snapshot: ") + e.what());
    }
  }

  RunReport report() const {
    RunReport r;
    r.total = total;
    r.with_image = with_image;
    r.text_only = text_only;
    r.selected = selected;
    r.synthesized = synthesized;
    r.accepted = accepted;
    r.rejected_by_reason = rejected_by_reason;
    for (const auto& [name, s] : per_source) {
      SourceRow row;
      row.total = s.total;
      row.selected = s.selected;
      r.breakdown.per_source[name] = row;
    }
    r.breakdown.global.accepted = accepted;
    r.breakdown.global.rejected_by_reason = rejected_by_reason;
    finalize_breakdown(r.breakdown);
    return r;
  }
};

inline std::string load_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace detail

class PipelineEngine {
 public:
  enum class Command { run, select, synthesize };

  static const char* command_name(Command c) {
    switch (c) {
      case Command::run: return "run";
      case Command::select: return "select";
      case Command::synthesize: return "synthesize";
    }
    return "run";
  }

  static Command command_from_name(const std::string& name) {
    if (name == "run") return Command::run;
    if (name == "select") return Command::select;
    if (name == "synthesize") return Command::synthesize;
    throw CorruptState("unknown command in run state: " + name);
  }

  PipelineEngine(Config cfg, Command cmd) : cfg_(std::move(cfg)), cmd_(cmd) {
    for (const auto& t : cfg_.tools) registry_.register_tool(t.descriptor);

    if (cmd_ != Command::select) {
      if (!cfg_.synthesizer_endpoint.configured())
        throw ValidationError("endpoints.synthesizer", "required for this command");
      synth_endpoint_ = make_endpoint("synthesizer", cfg_.synthesizer_endpoint, nullptr);
      for (const auto& t : cfg_.tools) {
        if (!t.endpoint.configured())
          throw ValidationError("tools.endpoint",
                                "tool '" + t.descriptor.name + "' needs an endpoint");
        tool_endpoints_[t.descriptor.name] =
            make_endpoint("expert:" + t.descriptor.name, t.endpoint, &t.descriptor.name);
        limiters_[t.descriptor.name] = std::make_unique<detail::Semaphore>(t.max_concurrency);
      }
    }
    if (cmd_ != Command::synthesize && cfg_.selector_kind == SelectorKind::model) {
      if (!cfg_.selector_endpoint.configured())
        throw ValidationError("endpoints.selector", "required when selector.kind is model");
      selector_endpoint_ = make_endpoint("selector", cfg_.selector_endpoint, nullptr);
    }

    if (cfg_.cache_enabled) cache_ = ResponseCache(cfg_.effective_cache_dir());
    selector_template_ = cfg_.selector_template_path.empty()
                             ? std::string(kDefaultSelectorTemplate)
                             : detail::load_text_file(cfg_.selector_template_path);
    smallstep_template_ = cfg_.smallstep_template_path.empty()
                              ? std::string(kDefaultSmallStepTemplate)
                              : detail::load_text_file(cfg_.smallstep_template_path);
  }

  // Fresh execution. `decisions_input` feeds the synthesize command;
  // `decisions_output` overrides where the select stage writes.
  RunReport execute(const RunHooks& hooks, std::string decisions_input = "",
                    std::string decisions_output = "") {
    RunState state;
    state.command = command_name(cmd_);
    state.config_hash = cfg_.hash();
    state.decisions_input = std::move(decisions_input);
    state.decisions_output = std::move(decisions_output);
    std::filesystem::create_directories(cfg_.run_dir_path());
    write_text(cfg_.run_dir_path() / "config.json", cfg_.to_json().dump(2) + "\n");
    return run_loop(state, false, hooks);
  }

  RunReport execute_resume(RunState state, const RunHooks& hooks) {
    return run_loop(std::move(state), true, hooks);
  }

  const Config& config() const { return cfg_; }

 private:
  struct WorkItem {
    std::uint64_t serial = 0;
    Instance instance;
    std::optional<SelectionDecision> predecided;
  };

  struct Outcome {
    std::string manifest_line;
    std::string decision_line;
    std::string source;
    bool has_image = false;
    bool selected = false;
    bool synthesized = false;
    Verdict verdict;
  };

  std::shared_ptr<CountingEndpoint> make_endpoint(const std::string& slot,
                                                  const EndpointRef& ref,
                                                  const std::string* tool_name) {
    std::shared_ptr<Endpoint> inner;
    if (ref.is_script()) {
      auto it = suites_.find(ref.script);
      if (it == suites_.end())
        it = suites_.emplace(ref.script, mocks::MockSuite::load(ref.script)).first;
      const mocks::Script& script =
          tool_name ? it->second.script_for_tool(*tool_name) : it->second.generation;
      inner = std::make_shared<mocks::ScriptedEndpoint>(slot, script);
    } else {
      inner = std::make_shared<HttpEndpoint>(slot, ref.url, cfg_.auth_token);
    }
    return std::make_shared<CountingEndpoint>(std::move(inner));
  }

  static void write_text(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw Error("write failed: " + path.string());
  }

  SelectionDecision decide(const Instance& inst) {
    if (!cfg_.include_text_only && !inst.has_image()) {
      SelectionDecision d;
      d.instance_id = inst.id;
      d.selector_kind = cfg_.selector_kind;
      d.rationale = "text-only-excluded";
      return d;
    }
    if (cfg_.selector_kind == SelectorKind::heuristic)
      return select_heuristic(inst, registry_, static_cast<std::size_t>(cfg_.threshold));
    SelectOptions opts;
    opts.template_text = selector_template_;
    opts.retry = cfg_.retry;
    opts.parse_retries = cfg_.parse_retries;
    opts.cache = &cache_;
    opts.attach_image = cfg_.selector_attach_image;
    return select_model(inst, registry_, *selector_endpoint_, opts);
  }

  EnrichedInstance enrich(const Instance& inst, const SelectionDecision& decision,
                          bool& synthesized) {
    // Guard against foreign decisions files selecting an instance that does
    // not end on an answer turn; own selectors never do.
    if (!inst.final_answer_turn()) return fallback(inst, decision, "no-final-answer");

    std::vector<ExpertOutput> outputs;
    for (const auto& name : decision.tools) {
      const ToolDescriptor* tool = registry_.find(name);
      if (!tool) return fallback(inst, decision, "expert-failed");
      try {
        detail::SemaphoreGuard guard(limiters_.at(name).get());
        InvokeOptions opts;
        opts.retry = cfg_.retry;
        opts.cache = &cache_;
        outputs.push_back(invoke_expert(*tool, inst, *tool_endpoints_.at(name), opts));
      } catch (const Error& e) {
        log(LogLevel::debug, "expert " + name + " failed on " + inst.id + ": " + e.what());
        return fallback(inst, decision, "expert-failed");
      }
    }

    SynthesisCandidate candidate;
    try {
      SynthOptions opts;
      opts.template_text = smallstep_template_;
      opts.retry = cfg_.retry;
      opts.cache = &cache_;
      opts.attach_image = cfg_.synth_attach_image;
      candidate = synthesize(inst, outputs, *synth_endpoint_, opts);
    } catch (const Error& e) {
      log(LogLevel::debug, "synthesis failed on " + inst.id + ": " + e.what());
      return fallback(inst, decision, "endpoint-failed");
    }
    synthesized = true;

    if (resolve(candidate, candidate.conflict_flags, cfg_.conflict_policy) == Resolution::fallback)
      return fallback(inst, decision, "conflict", candidate.conflict_flags,
                      candidate.prompt_hash);

    const Verdict verdict =
        filter_candidate(candidate.text, inst.final_answer_turn()->text, cfg_.filter);
    if (!verdict.accepted)
      return fallback(inst, decision, verdict.reason, candidate.conflict_flags,
                      candidate.prompt_hash);

    return assemble(inst, candidate, cfg_.mode, decision);
  }

  Outcome process(WorkItem&& item) {
    const Instance& inst = item.instance;
    Outcome out;
    out.source = inst.source;
    out.has_image = inst.has_image();

    SelectionDecision decision = item.predecided ? std::move(*item.predecided) : decide(inst);
    out.selected = decision.selected;
    out.decision_line = manifest_line(decision_to_json(decision));

    EnrichedInstance enriched;
    if (cmd_ == Command::select) {
      out.verdict = {true, ""};
      return out;
    }
    if (!decision.selected) {
      enriched = make_passthrough(inst, decision);
    } else {
      enriched = enrich(inst, decision, out.synthesized);
    }
    out.verdict = enriched.provenance.verdict;
    out.manifest_line = manifest_line(enriched_to_json(enriched));
    return out;
  }

  RunReport run_loop(RunState state, bool resuming, const RunHooks& hooks) {
    namespace fs = std::filesystem;
    const fs::path run_dir = cfg_.run_dir_path();
    const bool writes_output = cmd_ != Command::select;
    const bool writes_decisions = cmd_ != Command::synthesize;
    const fs::path decisions_path = state.decisions_output.empty()
                                        ? run_dir / "decisions.jsonl"
                                        : fs::path(state.decisions_output);

    const std::uint64_t cursor =
        cmd_ == Command::select ? state.select_cursor : state.synthesize_cursor;
    detail::Aggregator agg = state.aggregate.empty()
                                 ? detail::Aggregator{}
                                 : detail::Aggregator::from_json(state.aggregate);

    std::ifstream in(cfg_.input);
    if (!in) throw MissingFile(cfg_.input);
    ManifestReader reader(in, cfg_.duplicate_policy);

    std::optional<std::ifstream> decisions_in;
    std::size_t decisions_line_no = 0;
    if (cmd_ == Command::synthesize) {
      decisions_in.emplace(state.decisions_input);
      if (!*decisions_in) throw MissingFile(state.decisions_input);
    }
    auto next_decision_json = [&]() -> std::optional<nlohmann::json> {
      std::string line;
      while (std::getline(*decisions_in, line)) {
        ++decisions_line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
          throw MalformedRecord(decisions_line_no, "invalid JSON in decisions file");
        return j;
      }
      return std::nullopt;
    };

    std::optional<detail::Appender> out;
    std::optional<detail::Appender> decisions_out;
    if (writes_output) out.emplace(cfg_.output, state.output_offset, !resuming);
    if (writes_decisions) decisions_out.emplace(decisions_path, state.decisions_offset, !resuming);

    // Re-parse (and discard) the already-durable prefix; the duplicate-id
    // set has to cover it either way.
    for (std::uint64_t i = 0; i < cursor; ++i) {
      if (!reader.next())
        throw CorruptState("input manifest is shorter than the checkpointed cursor");
      if (decisions_in) next_decision_json();
    }

    if (!resuming) state.save(run_dir);

    std::uint64_t emitted = cursor;
    auto checkpoint = [&] {
      if (out) {
        out->flush();
        state.output_offset = out->offset();
      }
      if (decisions_out) {
        decisions_out->flush();
        state.decisions_offset = decisions_out->offset();
      }
      if (cmd_ != Command::synthesize) state.select_cursor = emitted;
      if (cmd_ != Command::select) state.synthesize_cursor = emitted;
      state.aggregate = agg.to_json();
      state.save(run_dir);
    };

    {
      OrderedPool<WorkItem, Outcome> pool(
          static_cast<std::size_t>(cfg_.workers), static_cast<std::size_t>(cfg_.workers),
          [this](WorkItem&& item) { return process(std::move(item)); },
          [&](Outcome&& o) {
            if (out) out->write_line(o.manifest_line);
            if (decisions_out) decisions_out->write_line(o.decision_line);
            agg.total++;
            o.has_image ? agg.with_image++ : agg.text_only++;
            agg.per_source[o.source].total++;
            if (o.selected) {
              agg.selected++;
              agg.per_source[o.source].selected++;
              if (cmd_ != Command::select) {
                if (o.verdict.accepted) agg.accepted++;
                else agg.rejected_by_reason[o.verdict.reason]++;
              }
            }
            if (o.synthesized) agg.synthesized++;
            ++emitted;
            if ((emitted - cursor) % static_cast<std::uint64_t>(cfg_.checkpoint_interval) == 0)
              checkpoint();
            if (hooks.on_emit) hooks.on_emit(emitted);
          });

      std::uint64_t serial = cursor;
      while (auto inst = reader.next()) {
        WorkItem item;
        item.serial = serial++;
        if (decisions_in) {
          auto dj = next_decision_json();
          if (!dj)
            throw ValidationError("decisions", "fewer decisions than manifest instances");
          SelectionDecision d = decision_from_json(*dj, registry_, decisions_line_no);
          if (d.instance_id != inst->id)
            throw ValidationError("decisions",
                                  "instance id mismatch at line " +
                                      std::to_string(decisions_line_no) + ": expected '" +
                                      inst->id + "', got '" + d.instance_id + "'");
          item.predecided = std::move(d);
        }
        item.instance = std::move(*inst);
        pool.submit(std::move(item));
      }
      if (decisions_in && next_decision_json())
        throw ValidationError("decisions", "more decisions than manifest instances");
      pool.close();
    }

    checkpoint();
    RunReport report = agg.report();
    for (const auto& [name, ep] : tool_endpoints_) report.endpoint_calls[name] = ep->calls();
    if (selector_endpoint_) report.endpoint_calls["selector"] = selector_endpoint_->calls();
    if (synth_endpoint_) report.endpoint_calls["synthesizer"] = synth_endpoint_->calls();

    write_text(run_dir / "report.json", report.to_json().dump(2) + "\n");
    write_text(run_dir / "breakdown.csv", emit_report(report.breakdown, ReportFormat::csv));
    state.completed = true;
    state.save(run_dir);
    return report;
  }

  Config cfg_;
  Command cmd_;
  ToolRegistry registry_;
  ResponseCache cache_;
  std::string selector_template_;
  std::string smallstep_template_;
  std::shared_ptr<CountingEndpoint> selector_endpoint_;
  std::shared_ptr<CountingEndpoint> synth_endpoint_;
  std::map<std::string, std::shared_ptr<CountingEndpoint>> tool_endpoints_;
  std::map<std::string, std::unique_ptr<detail::Semaphore>> limiters_;
  std::map<std::string, mocks::MockSuite> suites_;
};

inline RunReport run_pipeline(const Config& cfg, const RunHooks& hooks = {}) {
  PipelineEngine engine(cfg, PipelineEngine::Command::run);
  return engine.execute(hooks);
}

inline RunReport run_select(const Config& cfg, const std::string& decisions_out = "",
                            const RunHooks& hooks = {}) {
  PipelineEngine engine(cfg, PipelineEngine::Command::select);
  return engine.execute(hooks, "", decisions_out);
}

inline RunReport run_synthesize(const Config& cfg, const std::string& decisions_path,
                                const RunHooks& hooks = {}) {
  if (decisions_path.empty())
    throw ValidationError("decisions", "synthesize needs a decisions file");
  PipelineEngine engine(cfg, PipelineEngine::Command::synthesize);
  return engine.execute(hooks, std::filesystem::absolute(decisions_path).string());
}

// Continue an interrupted run from its run directory. Refuses when the
// stored config no longer hashes to what the run started with; reloads the
// final report when the run already completed.
inline RunReport resume(const std::filesystem::path& run_dir, const RunHooks& hooks = {}) {
  RunState state = RunState::load(run_dir);
  Config cfg = load_config(run_dir / "config.json");
  if (cfg.hash() != state.config_hash)
    throw ConfigHashMismatch("config.json in " + run_dir.string() +
                             " does not match the hash this run started with");
  if (state.completed) {
    std::ifstream in(run_dir / "report.json");
    if (!in) throw CorruptState("completed run has no report.json");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw CorruptState("report.json is not valid JSON");
    return RunReport::from_json(j);
  }
  PipelineEngine engine(std::move(cfg), PipelineEngine::command_from_name(state.command));
  return engine.execute_resume(std::move(state), hooks);
}

}  // namespace aide
