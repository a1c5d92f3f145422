#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "aide/corpus.hpp"
#include "test_support.hpp"

using namespace aide;
using aide_test::oracle_token_count;
using nlohmann::json;

namespace {

std::vector<Instance> parse_all(const std::string& text,
                                DuplicatePolicy policy = DuplicatePolicy::fail) {
  std::istringstream in(text);
  ManifestReader reader(in, policy);
  std::vector<Instance> out;
  while (auto inst = reader.next()) out.push_back(std::move(*inst));
  return out;
}

std::string write_all(const std::vector<Instance>& instances) {
  std::ostringstream out;
  ManifestWriter writer(out);
  for (const auto& inst : instances) writer.write(inst);
  return out.str();
}

// Random valid instances for round-trip property tests.
Instance random_instance(std::mt19937& rng, const std::string& id) {
  static const std::vector<std::string> words = {"what", "sign",  "says", "STOP", "总计",
                                                 "42",   "émile", "a b",  "x"};
  std::uniform_int_distribution<std::size_t> word_pick(0, words.size() - 1);
  std::uniform_int_distribution<int> turn_pairs(1, 3);
  std::uniform_int_distribution<int> text_len(1, 6);
  std::uniform_int_distribution<int> coin(0, 1);

  auto text = [&] {
    std::string t;
    int n = text_len(rng);
    for (int i = 0; i < n; ++i) {
      if (i) t += ' ';
      t += words[word_pick(rng)];
    }
    return t;
  };

  Instance inst;
  inst.id = id;
  inst.source = coin(rng) ? "synthdog" : "coco";
  if (coin(rng)) inst.image = "img/" + id + ".png";
  int pairs = turn_pairs(rng);
  for (int i = 0; i < pairs; ++i) {
    inst.turns.push_back({Role::human, text()});
    inst.turns.push_back({Role::assistant, text()});
  }
  return inst;
}

}  // namespace

TEST_CASE("parse_manifest maps the schema directly") {
  const std::string line =
      R"({"id":"a1","source":"synthdog","image":"img/1.png","conversations":[{"from":"human","value":"What does the text say?"},{"from":"gpt","value":"Hello"}]})"
      "\n";
  auto instances = parse_all(line);
  REQUIRE(instances.size() == 1);
  const Instance& inst = instances[0];
  CHECK(inst.id == "a1");
  CHECK(inst.source == "synthdog");
  REQUIRE(inst.image.has_value());
  CHECK(*inst.image == "img/1.png");
  REQUIRE(inst.turns.size() == 2);
  CHECK(inst.turns[0].role == Role::human);
  CHECK(inst.turns[0].text == "What does the text say?");
  CHECK(inst.turns[1].role == Role::assistant);
  CHECK(inst.turns[1].text == "Hello");
}

TEST_CASE("duplicate ids fail the run by default and skip under lenient policy") {
  const std::string line =
      R"({"id":"a1","source":"s","conversations":[{"from":"human","value":"q"},{"from":"gpt","value":"a"}]})";
  const std::string two = line + "\n" + line + "\n";
  CHECK_THROWS_AS(parse_all(two), DuplicateId);
  auto lenient = parse_all(two, DuplicatePolicy::skip);
  CHECK(lenient.size() == 1);
}

TEST_CASE("schema violations raise MalformedRecord with the line number") {
  SECTION("role alternation broken") {
    const std::string bad =
        R"({"id":"a1","source":"s","conversations":[{"from":"gpt","value":"a"},{"from":"human","value":"q"}]})";
    try {
      parse_all(bad + "\n");
      FAIL("expected MalformedRecord");
    } catch (const MalformedRecord& e) {
      CHECK(e.line == 1);
      CHECK(std::string(e.what()).find("alternation") != std::string::npos);
    }
  }
  SECTION("bad JSON reports the right line past blanks") {
    const std::string good =
        R"({"id":"a1","source":"s","conversations":[{"from":"human","value":"q"}]})";
    try {
      parse_all(good + "\n\n   \nnot json\n");
      FAIL("expected MalformedRecord");
    } catch (const MalformedRecord& e) {
      CHECK(e.line == 4);
    }
  }
  SECTION("empty turn text after trimming") {
    const std::string bad =
        R"({"id":"a1","source":"s","conversations":[{"from":"human","value":"   "}]})";
    CHECK_THROWS_AS(parse_all(bad + "\n"), MalformedRecord);
  }
  SECTION("unknown role") {
    const std::string bad =
        R"({"id":"a1","source":"s","conversations":[{"from":"system","value":"q"}]})";
    CHECK_THROWS_AS(parse_all(bad + "\n"), MalformedRecord);
  }
  SECTION("unknown top-level key") {
    const std::string bad =
        R"({"id":"a1","source":"s","extra":1,"conversations":[{"from":"human","value":"q"}]})";
    CHECK_THROWS_AS(parse_all(bad + "\n"), MalformedRecord);
  }
  SECTION("missing id") {
    const std::string bad = R"({"source":"s","conversations":[{"from":"human","value":"q"}]})";
    CHECK_THROWS_AS(parse_all(bad + "\n"), MalformedRecord);
  }
}

TEST_CASE("write_manifest: order preserved, empty sequence, blank line handling") {
  std::mt19937 rng(7);
  std::vector<Instance> instances = {random_instance(rng, "a"), random_instance(rng, "b"),
                                     random_instance(rng, "c")};
  const std::string text = write_all(instances);
  auto back = parse_all(text);
  REQUIRE(back.size() == 3);
  CHECK(back[0].id == "a");
  CHECK(back[1].id == "b");
  CHECK(back[2].id == "c");

  CHECK(write_all({}).empty());

  auto with_blanks = parse_all("\n" + text + "\n\n");
  CHECK(with_blanks.size() == 3);
}

TEST_CASE("round-trip: parse(write(xs)) == xs over generated manifests") {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Instance> instances;
    std::uniform_int_distribution<int> count(0, 8);
    int n = count(rng);
    for (int i = 0; i < n; ++i)
      instances.push_back(random_instance(rng, "id" + std::to_string(i)));
    auto back = parse_all(write_all(instances));
    REQUIRE(back == instances);
  }
}

TEST_CASE("enriched records keep their aide object through a round trip") {
  std::mt19937 rng(3);
  Instance inst = random_instance(rng, "e1");
  inst.provenance = json{{"mode", "small_step"}, {"verdict", "accept"}};
  auto back = parse_all(write_all({inst}));
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].provenance.has_value());
  CHECK(*back[0].provenance == *inst.provenance);
  CHECK(back[0] == inst);
}

TEST_CASE("serialization failure on non-encodable text") {
  Instance inst = aide_test::make_instance("x", "s", std::nullopt, "q", "a");
  inst.turns[1].text = std::string("\xff\xfe broken", 9);
  std::ostringstream out;
  ManifestWriter writer(out);
  CHECK_THROWS_AS(writer.write(inst), SerializationFailure);
}

TEST_CASE("token_count counts maximal whitespace-separated segments") {
  CHECK(token_count("") == 0);
  CHECK(token_count("Yes") == 1);
  CHECK(token_count("the answer is forty two") == 5);
  CHECK(token_count("   ") == 0);
  CHECK(token_count("a\tb\nc") == 3);
}

TEST_CASE("token_count is whitespace-invariant and matches the oracle") {
  std::mt19937 rng(11);
  static const std::vector<std::string> words = {"stop", "42", "a", "forty-two", "x"};
  std::uniform_int_distribution<std::size_t> word_pick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(0, 12);
  std::uniform_int_distribution<int> pad(1, 3);
  static const std::vector<std::string> pads = {" ", "  ", "\t", "\n", " \t "};
  std::uniform_int_distribution<std::size_t> pad_pick(0, pads.size() - 1);

  for (int trial = 0; trial < 500; ++trial) {
    int n = len(rng);
    std::string plain, padded = pads[pad_pick(rng)];
    for (int i = 0; i < n; ++i) {
      const std::string& w = words[word_pick(rng)];
      if (i) plain += ' ';
      plain += w;
      padded += w;
      for (int p = pad(rng); p-- > 0;) padded += pads[pad_pick(rng)];
    }
    CHECK(token_count(plain) == static_cast<std::size_t>(n));
    CHECK(token_count(padded) == static_cast<std::size_t>(n));
    CHECK(token_count(plain) == oracle_token_count(plain));
  }
}

TEST_CASE("corpus_stats counts modality and sources") {
  std::vector<Instance> instances = {
      aide_test::make_instance("1", "a", "img/1.png", "q", "ans"),
      aide_test::make_instance("2", "a", "img/2.png", "q", "ans"),
      aide_test::make_instance("3", "b", std::nullopt, "q", "ans"),
  };
  CorpusStats stats = corpus_stats(instances);
  CHECK(stats.total == 3);
  CHECK(stats.with_image == 2);
  CHECK(stats.text_only == 1);
  CHECK(stats.with_image + stats.text_only == stats.total);
  CHECK(stats.per_source.at("a") == 2);
  CHECK(stats.per_source.at("b") == 1);
}

TEST_CASE("corpus_stats matches the fixture generator's ledger") {
  // 100 instances over 4 sources with planted counts.
  const std::vector<std::pair<std::string, int>> planted = {
      {"synthdog", 40}, {"coco", 30}, {"llava", 20}, {"arxivqa", 10}};
  std::vector<Instance> instances;
  std::map<std::string, std::uint64_t> ledger;
  int idx = 0;
  for (const auto& [source, count] : planted) {
    for (int i = 0; i < count; ++i) {
      instances.push_back(aide_test::fixture_instance(static_cast<std::size_t>(idx++), source,
                                                      idx % 2 == 0, idx % 3 != 0));
      ++ledger[source];
    }
  }
  CorpusStats stats = corpus_stats(instances);
  CHECK(stats.total == 100);
  CHECK(stats.per_source.size() == 4);
  for (const auto& [source, count] : ledger) CHECK(stats.per_source.at(source) == count);

  std::uint64_t sum = 0;
  for (const auto& [_, c] : stats.per_source) sum += c;
  CHECK(sum == stats.total);
}
