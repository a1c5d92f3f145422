#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "aide/mocks.hpp"
#include "aide/selector.hpp"
#include "test_support.hpp"

using namespace aide;
using aide_test::make_instance;
using nlohmann::json;

namespace {

mocks::ScriptedEndpoint scripted(const std::string& id, const json& rules) {
  return mocks::ScriptedEndpoint(id, mocks::Script::from_json(json{{"rules", rules}}));
}

// Endpoint returning a fixed sequence of bodies, then repeating the last.
class SequenceEndpoint final : public Endpoint {
 public:
  SequenceEndpoint(std::string id, std::vector<std::string> bodies)
      : id_(std::move(id)), bodies_(std::move(bodies)) {}
  std::string id() const override { return id_; }
  std::string post(const std::string&) override {
    std::size_t i = calls_++;
    return bodies_[i < bodies_.size() ? i : bodies_.size() - 1];
  }
  std::size_t calls() const { return calls_; }

 private:
  std::string id_;
  std::vector<std::string> bodies_;
  std::size_t calls_ = 0;
};

std::string reply_body(const std::string& reply_text) {
  return json{{"text", reply_text}}.dump();
}

}  // namespace

TEST_CASE("select_heuristic applies the token threshold") {
  ToolRegistry registry = ToolRegistry::standard();

  SECTION("one-token answer is selected with all modality-compatible tools") {
    auto inst = make_instance("a", "s", "img/a.png", "What does the sign say?", "Yes.");
    auto d = select_heuristic(inst, registry, 5);
    CHECK(d.selected);
    CHECK(d.tools == std::vector<std::string>{"ocr", "grounding"});
    CHECK(d.selector_kind == SelectorKind::heuristic);
    REQUIRE(d.rationale.has_value());
    CHECK(d.rationale->find("token_count=1") != std::string::npos);
  }
  SECTION("six-token answer is not selected and tools stay empty") {
    auto inst = make_instance("a", "s", "img/a.png", "q", "one two three four five six");
    auto d = select_heuristic(inst, registry, 5);
    CHECK_FALSE(d.selected);
    CHECK(d.tools.empty());
  }
  SECTION("boundary: exactly threshold tokens is selected") {
    auto inst = make_instance("a", "s", "img/a.png", "q", "one two three four five");
    CHECK(select_heuristic(inst, registry, 5).selected);
  }
  SECTION("text-only instance gets no image tools attached") {
    auto inst = make_instance("a", "s", std::nullopt, "q", "Yes");
    auto d = select_heuristic(inst, registry, 5);
    CHECK(d.selected);
    CHECK(d.tools.empty());
  }
  SECTION("instances not ending on an answer are never selected") {
    Instance lone;
    lone.id = "h";
    lone.source = "s";
    lone.turns = {{Role::human, "hello?"}};
    auto d = select_heuristic(lone, registry, 5);
    CHECK_FALSE(d.selected);
    CHECK(d.rationale == "no-final-answer");

    // a trailing human turn means the last answer is mid-conversation;
    // rewriting it would corrupt the exchange, so it passes through
    Instance dangling;
    dangling.id = "d";
    dangling.source = "s";
    dangling.image = "img/d.png";
    dangling.turns = {{Role::human, "a?"}, {Role::assistant, "Yes"}, {Role::human, "b?"}};
    auto d2 = select_heuristic(dangling, registry, 5);
    CHECK_FALSE(d2.selected);
    CHECK(d2.rationale == "no-final-answer");
  }
}

TEST_CASE("heuristic equals an independent brute-force filter on a planted fixture") {
  ToolRegistry registry = ToolRegistry::standard();
  std::mt19937 rng(99);
  std::bernoulli_distribution is_short(0.4);

  std::set<std::string> planted;
  std::vector<Instance> instances;
  for (std::size_t i = 0; i < 1000; ++i) {
    bool short_answer = is_short(rng);
    auto inst = aide_test::fixture_instance(i, "src", short_answer);
    if (short_answer) planted.insert(inst.id);
    instances.push_back(std::move(inst));
  }

  std::set<std::string> picked;
  std::set<std::string> oracle;
  for (const auto& inst : instances) {
    if (select_heuristic(inst, registry, 5).selected) picked.insert(inst.id);
    if (aide_test::oracle_token_count(inst.turns.back().text) <= 5)
      oracle.insert(inst.id);
  }
  CHECK(picked == oracle);
  CHECK(picked == planted);
}

TEST_CASE("heuristic is monotone in the threshold") {
  ToolRegistry registry = ToolRegistry::standard();
  std::mt19937 rng(5);
  std::uniform_int_distribution<std::size_t> thresh(0, 8);
  for (int trial = 0; trial < 200; ++trial) {
    auto inst = aide_test::fixture_instance(static_cast<std::size_t>(trial), "s", trial % 2 == 0);
    std::size_t t1 = thresh(rng), t2 = thresh(rng);
    if (t1 > t2) std::swap(t1, t2);
    bool low = select_heuristic(inst, registry, t1).selected;
    bool high = select_heuristic(inst, registry, t2).selected;
    if (low) CHECK(high);  // raising the threshold never deselects
  }
}

TEST_CASE("build_selector_prompt embeds turns and capabilities verbatim") {
  ToolRegistry registry = ToolRegistry::standard();
  auto inst = make_instance("a", "s", "img/a.png", "What does the sign say?", "STOP");

  const std::string prompt = build_selector_prompt(inst, registry);
  CHECK(prompt.find("What does the sign say?") != std::string::npos);
  CHECK(prompt.find("STOP") != std::string::npos);
  for (const auto& tool : registry.tools()) {
    CHECK(prompt.find(tool.name) != std::string::npos);
    CHECK(prompt.find(tool.capability) != std::string::npos);
  }
  // machine-parseable reply instruction survives templating
  CHECK(prompt.find("\"select\"") != std::string::npos);

  SECTION("byte-identical across calls") {
    CHECK(build_selector_prompt(inst, registry) == prompt);
  }
  SECTION("empty registry refuses") {
    ToolRegistry empty;
    CHECK_THROWS_AS(build_selector_prompt(inst, empty), EmptyRegistry);
  }
}

TEST_CASE("parse_selector_reply extracts the first select object") {
  ToolRegistry registry = ToolRegistry::standard();

  SECTION("plain object") {
    auto core = parse_selector_reply(R"({"select": true, "tools": ["ocr"]})", registry);
    CHECK(core.selected);
    CHECK(core.tools == std::vector<std::string>{"ocr"});
  }
  SECTION("negative decision") {
    auto core = parse_selector_reply(R"({"select": false, "tools": []})", registry);
    CHECK_FALSE(core.selected);
    CHECK(core.tools.empty());
  }
  SECTION("chatty wrapper text and a nested brace in a string") {
    auto core = parse_selector_reply(
        "Sure! Here is my verdict {not json} ->\n"
        R"({"select": true, "tools": ["grounding"], "rationale": "see {bbox} data"})"
        "\nHope that helps.",
        registry);
    CHECK(core.selected);
    CHECK(core.tools == std::vector<std::string>{"grounding"});
    CHECK(core.rationale == "see {bbox} data");
  }
  SECTION("unknown tool is dropped and the decision degrades to not-selected") {
    auto core =
        parse_selector_reply(R"({"select": true, "tools": ["depth_estimator"]})", registry);
    CHECK_FALSE(core.selected);
    CHECK(core.tools.empty());
    CHECK(core.rationale == "no-usable-tools");
  }
  SECTION("mixed known and unknown keeps the known tool") {
    auto core = parse_selector_reply(
        R"({"select": true, "tools": ["depth_estimator", "ocr"]})", registry);
    CHECK(core.selected);
    CHECK(core.tools == std::vector<std::string>{"ocr"});
  }
  SECTION("garbage raises UnparseableReply") {
    CHECK_THROWS_AS(parse_selector_reply("no json here", registry), UnparseableReply);
    CHECK_THROWS_AS(parse_selector_reply("{\"select\": \"yes\"}", registry), UnparseableReply);
    CHECK_THROWS_AS(parse_selector_reply("{broken", registry), UnparseableReply);
  }
}

TEST_CASE("select_model composes prompt, endpoint, and reply parsing") {
  ToolRegistry registry = ToolRegistry::standard();
  auto inst = make_instance("a1", "synthdog", "img/a1.png", "What does the sign say?", "STOP");

  SECTION("scripted always-select-ocr selects every multimodal instance") {
    auto endpoint = scripted("selector", json::array({json{
        {"match", "default"}, {"text", R"({"select": true, "tools": ["ocr"]})"}}}));
    for (int i = 0; i < 5; ++i) {
      auto multimodal = aide_test::fixture_instance(static_cast<std::size_t>(i), "s", true);
      auto d = select_model(multimodal, registry, endpoint);
      CHECK(d.selected);
      CHECK(d.tools == std::vector<std::string>{"ocr"});
      CHECK(d.selector_kind == SelectorKind::model);
    }
  }

  SECTION("endpoint down degrades to not-selected and the run continues") {
    auto endpoint =
        scripted("selector", json::array({json{{"match", "default"}, {"fail", true}}}));
    SelectOptions opts;
    opts.retry = {2, 0, 0};
    auto d = select_model(inst, registry, endpoint, opts);
    CHECK_FALSE(d.selected);
    CHECK(d.tools.empty());
    CHECK(d.rationale == "endpoint-failed");
    CHECK(endpoint.call_count() == 2);  // retry budget spent
  }

  SECTION("unparseable replies burn the parse budget then degrade") {
    SequenceEndpoint endpoint("selector", {reply_body("junk")});
    SelectOptions opts;
    opts.parse_retries = 2;
    auto d = select_model(inst, registry, endpoint, opts);
    CHECK_FALSE(d.selected);
    CHECK(d.rationale == "unparseable");
    CHECK(endpoint.calls() == 3);  // 1 + 2 retries
  }

  SECTION("a retry that parses wins") {
    SequenceEndpoint endpoint(
        "selector", {reply_body("junk"), reply_body(R"({"select": true, "tools": ["ocr"]})")});
    auto d = select_model(inst, registry, endpoint);
    CHECK(d.selected);
    CHECK(d.tools == std::vector<std::string>{"ocr"});
    CHECK(endpoint.calls() == 2);
  }

  SECTION("decisions are cached by prompt: the second call hits no endpoint") {
    aide_test::TempDir dir;
    ResponseCache cache(dir.path / "cache");
    auto endpoint = scripted("selector", json::array({json{
        {"match", "default"}, {"text", R"({"select": true, "tools": ["ocr"]})"}}}));
    SelectOptions opts;
    opts.cache = &cache;
    auto d1 = select_model(inst, registry, endpoint, opts);
    auto d2 = select_model(inst, registry, endpoint, opts);
    CHECK(endpoint.call_count() == 1);
    CHECK(d1.selected == d2.selected);
    CHECK(d1.tools == d2.tools);
  }

  SECTION("model naming only inapplicable tools degrades") {
    auto text_only = make_instance("t", "s", std::nullopt, "q", "a");
    auto endpoint = scripted("selector", json::array({json{
        {"match", "default"}, {"text", R"({"select": true, "tools": ["ocr"]})"}}}));
    auto d = select_model(text_only, registry, endpoint);
    CHECK_FALSE(d.selected);
    CHECK(d.tools.empty());
    CHECK(d.rationale == "no-usable-tools");
  }
}

TEST_CASE("the shipped selector prompt asset matches the embedded default") {
  const std::string asset =
      aide_test::read_file(std::filesystem::path(AIDE_ASSETS_DIR) / "selector_prompt.txt");
  CHECK(asset == std::string(kDefaultSelectorTemplate));
}

TEST_CASE("scripted decisions are a pure function of the corpus") {
  ToolRegistry registry = ToolRegistry::standard();
  auto endpoint_rules = json::array(
      {json{{"match", {{"contains", "i3"}}}, {"text", R"({"select": false, "tools": []})"}},
       json{{"match", "default"},
            {"text", R"({"select": true, "tools": ["ocr", "grounding"]})"}}});

  auto run_once = [&] {
    auto endpoint = scripted("selector", endpoint_rules);
    std::vector<SelectionDecision> out;
    for (std::size_t i = 0; i < 20; ++i)
      out.push_back(
          select_model(aide_test::fixture_instance(i, "s", true), registry, endpoint));
    return out;
  };
  auto a = run_once();
  auto b = run_once();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].selected == b[i].selected);
    CHECK(a[i].tools == b[i].tools);
    CHECK(a[i].rationale == b[i].rationale);
    if (!a[i].selected) CHECK(a[i].tools.empty());
  }
}
