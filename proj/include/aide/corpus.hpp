#pragma once

// Conversation manifests: schema, validation, streaming JSONL parse/write,
// and the whitespace tokenizer the selection heuristic counts with.

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/errors.hpp"
#include "aide/hash.hpp"
#include "aide/log.hpp"
#include "aide/text.hpp"

namespace aide {

enum class Role { human, assistant };

inline const char* role_wire_name(Role r) { return r == Role::human ? "human" : "gpt"; }

struct Turn {
  Role role = Role::human;
  std::string text;
  bool operator==(const Turn&) const = default;
};

struct Instance {
  std::string id;
  std::optional<std::string> image;
  std::string source;
  std::vector<Turn> turns;
  // Raw "aide" provenance object, present when reading back enriched
  // manifests; carried so parse(write(x)) reproduces x field-for-field.
  std::optional<nlohmann::json> provenance;

  bool operator==(const Instance&) const = default;

  bool has_image() const { return image.has_value(); }

  // Enrichment rewrites an instance's final answer, so it only applies to
  // conversations that end on an assistant turn.
  const Turn* final_answer_turn() const {
    if (turns.empty() || turns.back().role != Role::assistant) return nullptr;
    return &turns.back();
  }

};

struct CorpusStats {
  std::uint64_t total = 0;
  std::uint64_t with_image = 0;
  std::uint64_t text_only = 0;
  std::map<std::string, std::uint64_t> per_source;
};

// Count of maximal whitespace-separated segments.
inline std::size_t token_count(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    if (is_space(c)) {
      in_token = false;
    } else if (!in_token) {
      ++n;
      in_token = true;
    }
  }
  return n;
}

// First violated Instance invariant, or nullopt when the record is valid.
inline std::optional<std::string> instance_violation(const Instance& inst) {
  if (inst.id.empty()) return "id is empty";
  if (inst.image && inst.image->empty()) return "image reference is empty";
  if (inst.turns.empty()) return "no turns";
  for (std::size_t i = 0; i < inst.turns.size(); ++i) {
    Role expected = (i % 2 == 0) ? Role::human : Role::assistant;
    if (inst.turns[i].role != expected)
      return "role alternation broken at turn " + std::to_string(i) +
             " (turns must alternate starting with human)";
    if (trim(inst.turns[i].text).empty())
      return "turn " + std::to_string(i) + " text is empty";
  }
  return std::nullopt;
}

namespace detail {

inline void require_keys(const nlohmann::json& obj,
                         std::initializer_list<std::string_view> allowed,
                         std::size_t line_no, const std::string& scope) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (auto a : allowed)
      if (key == a) { known = true; break; }
    if (!known)
      throw MalformedRecord(line_no, "unknown key '" + key + "' in " + scope);
  }
}

}  // namespace detail

inline Instance parse_instance_json(const nlohmann::json& j, std::size_t line_no) {
  if (!j.is_object()) throw MalformedRecord(line_no, "record is not a JSON object");
  detail::require_keys(j, {"id", "source", "image", "conversations", "aide"}, line_no, "record");
  Instance inst;
  if (!j.contains("id") || !j["id"].is_string())
    throw MalformedRecord(line_no, "missing or non-string 'id'");
  inst.id = j["id"].get<std::string>();
  if (!j.contains("source") || !j["source"].is_string())
    throw MalformedRecord(line_no, "missing or non-string 'source'");
  inst.source = j["source"].get<std::string>();
  if (j.contains("image")) {
    if (!j["image"].is_string()) throw MalformedRecord(line_no, "non-string 'image'");
    inst.image = j["image"].get<std::string>();
  }
  if (!j.contains("conversations") || !j["conversations"].is_array())
    throw MalformedRecord(line_no, "missing or non-array 'conversations'");
  for (const auto& t : j["conversations"]) {
    if (!t.is_object()) throw MalformedRecord(line_no, "conversation entry is not an object");
    detail::require_keys(t, {"from", "value"}, line_no, "conversation entry");
    if (!t.contains("from") || !t["from"].is_string())
      throw MalformedRecord(line_no, "missing or non-string 'from'");
    if (!t.contains("value") || !t["value"].is_string())
      throw MalformedRecord(line_no, "missing or non-string 'value'");
    const auto from = t["from"].get<std::string>();
    Turn turn;
    if (from == "human") turn.role = Role::human;
    else if (from == "gpt") turn.role = Role::assistant;
    else throw MalformedRecord(line_no, "unknown role '" + from + "'");
    turn.text = t["value"].get<std::string>();
    inst.turns.push_back(std::move(turn));
  }
  if (j.contains("aide")) {
    if (!j["aide"].is_object()) throw MalformedRecord(line_no, "non-object 'aide'");
    inst.provenance = j["aide"];
  }
  if (auto why = instance_violation(inst)) throw MalformedRecord(line_no, *why);
  return inst;
}

inline nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& t : inst.turns)
    conv.push_back({{"from", role_wire_name(t.role)}, {"value", t.text}});
  nlohmann::json j{{"id", inst.id}, {"source", inst.source}, {"conversations", std::move(conv)}};
  if (inst.image) j["image"] = *inst.image;
  if (inst.provenance) j["aide"] = *inst.provenance;
  return j;
}

enum class DuplicatePolicy { fail, skip };

// Streaming manifest reader: one record per call, memory bounded by the
// largest record plus the duplicate-id digest set.
class ManifestReader {
 public:
  explicit ManifestReader(std::istream& in, DuplicatePolicy policy = DuplicatePolicy::fail)
      : in_(in), policy_(policy) {}

  std::optional<Instance> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (trim(line).empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw MalformedRecord(line_no_, "invalid JSON");
      Instance inst = parse_instance_json(j, line_no_);
      if (!seen_ids_.insert(id_digest(inst.id)).second) {
        if (policy_ == DuplicatePolicy::fail) throw DuplicateId(inst.id);
        log_warn("skipping duplicate instance id '" + inst.id + "' at line " +
                 std::to_string(line_no_));
        continue;
      }
      return inst;
    }
    return std::nullopt;
  }

  std::size_t line_number() const { return line_no_; }

 private:
  std::istream& in_;
  DuplicatePolicy policy_;
  std::size_t line_no_ = 0;
  std::unordered_set<IdDigest, IdDigestHash> seen_ids_;
};

inline std::string manifest_line(const nlohmann::json& j) {
  try {
    return j.dump() + "\n";
  } catch (const nlohmann::json::exception& e) {
    throw SerializationFailure(std::string("cannot serialize record: ") + e.what());
  }
}

class ManifestWriter {
 public:
  explicit ManifestWriter(std::ostream& out) : out_(out) {}

  void write(const Instance& inst) { write_json(instance_to_json(inst)); }

  void write_json(const nlohmann::json& j) {
    const std::string line = manifest_line(j);
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!out_) throw Error("manifest write failed");
  }

 private:
  std::ostream& out_;
};

class CorpusStatsBuilder {
 public:
  void add(const Instance& inst) {
    ++stats_.total;
    if (inst.has_image()) ++stats_.with_image;
    else ++stats_.text_only;
    ++stats_.per_source[inst.source];
  }
  const CorpusStats& stats() const { return stats_; }

 private:
  CorpusStats stats_;
};

inline CorpusStats corpus_stats(const std::vector<Instance>& instances) {
  CorpusStatsBuilder b;
  for (const auto& inst : instances) b.add(inst);
  return b.stats();
}

}  // namespace aide
