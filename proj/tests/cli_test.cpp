#include <catch2/catch_amalgamated.hpp>

#include "aide/corpus.hpp"
#include "test_support.hpp"

using aide_test::read_file;
using aide_test::run_cmd;
using nlohmann::json;

namespace {

const std::string kBin = AIDE_BIN;

struct CliSetup {
  aide_test::TempDir dir;
  std::filesystem::path input, output, run_dir, mock, config;

  CliSetup() {
    input = dir / "input.jsonl";
    output = dir / "enriched.jsonl";
    run_dir = dir / "run";
    mock = aide_test::write_standard_mock(dir / "mock.json");
    config = dir / "config.json";

    std::vector<aide::Instance> fixture;
    for (std::size_t i = 0; i < 12; ++i)
      fixture.push_back(aide_test::fixture_instance(i, i % 2 ? "synthdog" : "coco", i % 3 != 0));
    aide_test::write_manifest_file(input, fixture);

    json cfg = aide_test::minimal_config_json(input, output, run_dir);
    cfg["workers"] = 2;
    cfg["retries"] = json{{"attempts", 2}, {"base_delay_ms", 0}, {"max_delay_ms", 0}};
    aide_test::write_file(config, cfg.dump(2));
  }
};

}  // namespace

TEST_CASE("aide validate: exit 0 on valid, 2 on invalid manifests") {
  CliSetup setup;
  std::string out, err;
  CHECK(run_cmd(kBin + " validate --manifest " + setup.input.string(), &out, &err) == 0);
  CHECK(out.find("valid: 12 instances") != std::string::npos);

  aide_test::write_file(setup.dir / "bad.jsonl", "{broken\n");
  CHECK(run_cmd(kBin + " validate --manifest " + (setup.dir / "bad.jsonl").string(), &out,
                &err) == 2);
  CHECK(err.find("line 1") != std::string::npos);

  // duplicate ids: fail by default, pass under --lenient
  const std::string line =
      R"({"id":"d","source":"s","conversations":[{"from":"human","value":"q"},{"from":"gpt","value":"a"}]})";
  aide_test::write_file(setup.dir / "dup.jsonl", line + "\n" + line + "\n");
  CHECK(run_cmd(kBin + " validate --manifest " + (setup.dir / "dup.jsonl").string()) == 2);
  CHECK(run_cmd(kBin + " validate --manifest " + (setup.dir / "dup.jsonl").string() +
                " --lenient") == 0);
}

TEST_CASE("aide run: full pipeline via the CLI") {
  CliSetup setup;
  std::string out, err;
  int rc = run_cmd(kBin + " run --config " + setup.config.string() + " --mock " +
                       setup.mock.string(),
                   &out, &err);
  INFO(err);
  REQUIRE(rc == 0);
  CHECK(out.find("total=12") != std::string::npos);
  CHECK(std::filesystem::exists(setup.output));
  CHECK(std::filesystem::exists(setup.run_dir / "report.json"));
  CHECK(aide_test::read_lines(setup.output).size() == 12);

  SECTION("aide report prints the stored documents") {
    run_cmd(kBin + " run --config " + setup.config.string() + " --mock " + setup.mock.string());
    std::string report;
    CHECK(run_cmd(kBin + " report --run-dir " + setup.run_dir.string() + " --format json",
                  &report) == 0);
    CHECK(json::parse(report).contains("global"));
    std::string csv;
    CHECK(run_cmd(kBin + " report --run-dir " + setup.run_dir.string() + " --format csv",
                  &csv) == 0);
    CHECK(csv.rfind("source,total,selected,", 0) == 0);
  }

  SECTION("resume of the completed run is a no-op exit 0") {
    run_cmd(kBin + " run --config " + setup.config.string() + " --mock " + setup.mock.string());
    const std::string before = read_file(setup.output);
    CHECK(run_cmd(kBin + " resume --run-dir " + setup.run_dir.string(), &out, &err) == 0);
    CHECK(read_file(setup.output) == before);
  }
}

TEST_CASE("aide select + synthesize staged execution") {
  CliSetup setup;
  const auto decisions = setup.dir / "decisions.jsonl";
  std::string out, err;
  int rc = run_cmd(kBin + " select --config " + setup.config.string() + " --mock " +
                       setup.mock.string() + " --decisions-out " + decisions.string(),
                   &out, &err);
  INFO(err);
  REQUIRE(rc == 0);
  REQUIRE(std::filesystem::exists(decisions));
  CHECK(aide_test::read_lines(decisions).size() == 12);

  // separate run dir for the synthesize stage
  json cfg = json::parse(read_file(setup.config));
  cfg["run_dir"] = (setup.dir / "run-synth").string();
  aide_test::write_file(setup.config, cfg.dump(2));

  rc = run_cmd(kBin + " synthesize --config " + setup.config.string() + " --mock " +
                   setup.mock.string() + " --decisions " + decisions.string(),
               &out, &err);
  INFO(err);
  REQUIRE(rc == 0);
  CHECK(aide_test::read_lines(setup.output).size() == 12);
}

TEST_CASE("CLI error paths map to the documented exit codes") {
  CliSetup setup;
  std::string out, err;

  SECTION("missing config file: exit 1") {
    CHECK(run_cmd(kBin + " run --config /nonexistent/cfg.json", &out, &err) == 1);
    CHECK(err.find("error:") != std::string::npos);
  }
  SECTION("config validation error: exit 1") {
    json bad = json::parse(read_file(setup.config));
    bad["workers"] = 0;
    aide_test::write_file(setup.config, bad.dump());
    CHECK(run_cmd(kBin + " run --config " + setup.config.string() + " --mock " +
                      setup.mock.string(),
                  &out, &err) == 1);
  }
  SECTION("malformed manifest during a run: exit 2") {
    aide_test::write_file(setup.input, "{broken\n");
    CHECK(run_cmd(kBin + " run --config " + setup.config.string() + " --mock " +
                      setup.mock.string(),
                  &out, &err) == 2);
  }
  SECTION("resume without a run dir: exit 1") {
    CHECK(run_cmd(kBin + " resume --run-dir " + (setup.dir / "ghost").string(), &out, &err) ==
          1);
  }
  SECTION("unknown subcommand: nonzero") {
    CHECK(run_cmd(kBin + " frobnicate", &out, &err) != 0);
  }
}
