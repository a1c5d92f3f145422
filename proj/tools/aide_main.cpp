// aide — dataset-refinement pipeline CLI.
//
// Subcommands: run (full pipeline), select (stage 1 only), synthesize
// (stages 2-4 from a decisions file), resume, report, validate.
// Exit codes: 0 success, 1 fatal I/O or config error, 2 validation failure.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "aide/config.hpp"
#include "aide/corpus.hpp"
#include "aide/errors.hpp"
#include "aide/log.hpp"
#include "aide/orchestrator.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitValidation = 2;

aide::Config load_run_config(const std::string& config_path, const std::string& mock_script) {
  aide::Config cfg = aide::load_config(config_path);
  if (!mock_script.empty()) aide::apply_mock_override(cfg, mock_script);
  return cfg;
}

void print_report_summary(const aide::RunReport& report) {
  std::printf("total=%llu selected=%llu synthesized=%llu accepted=%llu\n",
              static_cast<unsigned long long>(report.total),
              static_cast<unsigned long long>(report.selected),
              static_cast<unsigned long long>(report.synthesized),
              static_cast<unsigned long long>(report.accepted));
  for (const auto& [reason, count] : report.rejected_by_reason)
    std::printf("rejected[%s]=%llu\n", reason.c_str(), static_cast<unsigned long long>(count));
}

int validate_manifest(const std::string& path, bool lenient) {
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "error: cannot open manifest: %s\n", path.c_str());
    return kExitFatal;
  }
  aide::ManifestReader reader(
      in, lenient ? aide::DuplicatePolicy::skip : aide::DuplicatePolicy::fail);
  aide::CorpusStatsBuilder stats;
  try {
    while (auto inst = reader.next()) stats.add(*inst);
  } catch (const aide::Error& e) {
    std::fprintf(stderr, "invalid manifest: %s\n", e.what());
    return kExitValidation;
  }
  const auto& s = stats.stats();
  std::printf("valid: %llu instances (%llu multimodal, %llu text-only, %zu sources)\n",
              static_cast<unsigned long long>(s.total),
              static_cast<unsigned long long>(s.with_image),
              static_cast<unsigned long long>(s.text_only), s.per_source.size());
  return kExitOk;
}

int show_report(const std::string& run_dir, const std::string& format) {
  const auto path = std::filesystem::path(run_dir) /
                    (format == "csv" ? "breakdown.csv" : "report.json");
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "error: no %s in %s (has the run finished a checkpoint?)\n",
                 path.filename().string().c_str(), run_dir.c_str());
    return kExitFatal;
  }
  std::cout << in.rdbuf();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aide: stream a conversation corpus through selection, expert tools, "
               "synthesis, and filtered re-integration"};
  app.require_subcommand(1);

  std::string config_path, mock_script, run_dir, manifest_path;
  std::string decisions_out, decisions_in, format = "json";
  bool lenient = false, verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  auto* cmd_run = app.add_subcommand("run", "run the full pipeline");
  cmd_run->add_option("--config", config_path, "config JSON path")->required();
  cmd_run->add_option("--mock", mock_script, "wire all endpoints to this mock script");

  auto* cmd_select = app.add_subcommand("select", "run the selection stage only");
  cmd_select->add_option("--config", config_path, "config JSON path")->required();
  cmd_select->add_option("--decisions-out", decisions_out, "where to write decisions JSONL");
  cmd_select->add_option("--mock", mock_script, "wire all endpoints to this mock script");

  auto* cmd_synth = app.add_subcommand("synthesize", "run stages 2-4 from a decisions file");
  cmd_synth->add_option("--config", config_path, "config JSON path")->required();
  cmd_synth->add_option("--decisions", decisions_in, "decisions JSONL path")->required();
  cmd_synth->add_option("--mock", mock_script, "wire all endpoints to this mock script");

  auto* cmd_resume = app.add_subcommand("resume", "continue an interrupted run");
  cmd_resume->add_option("--run-dir", run_dir, "run directory")->required();

  auto* cmd_report = app.add_subcommand("report", "print a finished run's report");
  cmd_report->add_option("--run-dir", run_dir, "run directory")->required();
  cmd_report->add_option("--format", format, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}));

  auto* cmd_validate = app.add_subcommand("validate", "validate a manifest");
  cmd_validate->add_option("--manifest", manifest_path, "manifest JSONL path")->required();
  cmd_validate->add_flag("--lenient", lenient, "skip duplicate ids instead of failing");

  CLI11_PARSE(app, argc, argv);
  if (verbose) aide::log_threshold() = aide::LogLevel::debug;

  try {
    if (cmd_validate->parsed()) return validate_manifest(manifest_path, lenient);
    if (cmd_report->parsed()) return show_report(run_dir, format);

    aide::RunReport report;
    if (cmd_run->parsed()) {
      report = aide::run_pipeline(load_run_config(config_path, mock_script));
    } else if (cmd_select->parsed()) {
      report = aide::run_select(load_run_config(config_path, mock_script), decisions_out);
    } else if (cmd_synth->parsed()) {
      report = aide::run_synthesize(load_run_config(config_path, mock_script), decisions_in);
    } else if (cmd_resume->parsed()) {
      report = aide::resume(run_dir);
    }
    print_report_summary(report);
    return kExitOk;
  } catch (const aide::MalformedRecord& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitValidation;
  } catch (const aide::DuplicateId& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitValidation;
  } catch (const aide::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFatal;
  }
}
