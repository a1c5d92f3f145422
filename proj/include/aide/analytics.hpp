#pragma once

// Selection analytics: per-source breakdown of what the selector chose,
// emitted as stable JSON or CSV for external plotting.

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/corpus.hpp"
#include "aide/errors.hpp"
#include "aide/selector.hpp"

namespace aide {

struct SourceRow {
  std::uint64_t total = 0;
  std::uint64_t selected = 0;
  double selected_ratio = 0.0;      // selected / total
  double share_of_selection = 0.0;  // selected / sum(selected)
};

struct GlobalCounters {
  std::uint64_t total = 0;
  std::uint64_t selected = 0;
  std::uint64_t accepted = 0;
  std::map<std::string, std::uint64_t> rejected_by_reason;
};

struct SourceBreakdown {
  std::map<std::string, SourceRow> per_source;
  GlobalCounters global;
};

// id -> source ledger backing the standalone breakdown operation.
class InstanceLedger {
 public:
  void add(const Instance& inst) {
    source_by_id_.emplace(inst.id, inst.source);
    ++totals_[inst.source];
  }

  const std::string* source_of(const std::string& id) const {
    auto it = source_by_id_.find(id);
    return it == source_by_id_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, std::uint64_t>& totals() const { return totals_; }

 private:
  std::unordered_map<std::string, std::string> source_by_id_;
  std::map<std::string, std::uint64_t> totals_;
};

// Fills ratios/shares from raw counts; zero denominators yield zero, never a
// division error.
inline void finalize_breakdown(SourceBreakdown& b) {
  std::uint64_t sum_selected = 0;
  std::uint64_t sum_total = 0;
  for (auto& [_, row] : b.per_source) {
    sum_selected += row.selected;
    sum_total += row.total;
  }
  for (auto& [_, row] : b.per_source) {
    row.selected_ratio = row.total ? static_cast<double>(row.selected) / row.total : 0.0;
    row.share_of_selection =
        sum_selected ? static_cast<double>(row.selected) / sum_selected : 0.0;
  }
  b.global.total = sum_total;
  b.global.selected = sum_selected;
}

inline SourceBreakdown selection_breakdown(const std::vector<SelectionDecision>& decisions,
                                           const InstanceLedger& ledger) {
  SourceBreakdown b;
  for (const auto& [source, total] : ledger.totals()) b.per_source[source].total = total;
  for (const auto& d : decisions) {
    const std::string* source = ledger.source_of(d.instance_id);
    if (!source) throw UnknownInstance(d.instance_id);
    if (d.selected) ++b.per_source[*source].selected;
  }
  finalize_breakdown(b);
  return b;
}

enum class ReportFormat { json, csv };

inline nlohmann::json breakdown_to_json(const SourceBreakdown& b) {
  nlohmann::json per_source = nlohmann::json::object();
  for (const auto& [source, row] : b.per_source) {
    per_source[source] = {{"total", row.total},
                          {"selected", row.selected},
                          {"selected_ratio", row.selected_ratio},
                          {"share_of_selection", row.share_of_selection}};
  }
  return nlohmann::json{{"global",
                         {{"total", b.global.total},
                          {"selected", b.global.selected},
                          {"accepted", b.global.accepted},
                          {"rejected_by_reason", b.global.rejected_by_reason}}},
                        {"per_source", std::move(per_source)}};
}

inline SourceBreakdown breakdown_from_json(const nlohmann::json& j) {
  SourceBreakdown b;
  b.global.total = j.at("global").at("total").get<std::uint64_t>();
  b.global.selected = j.at("global").at("selected").get<std::uint64_t>();
  b.global.accepted = j.at("global").at("accepted").get<std::uint64_t>();
  for (const auto& [reason, count] : j.at("global").at("rejected_by_reason").items())
    b.global.rejected_by_reason[reason] = count.get<std::uint64_t>();
  for (const auto& [source, row] : j.at("per_source").items()) {
    SourceRow r;
    r.total = row.at("total").get<std::uint64_t>();
    r.selected = row.at("selected").get<std::uint64_t>();
    r.selected_ratio = row.at("selected_ratio").get<double>();
    r.share_of_selection = row.at("share_of_selection").get<double>();
    b.per_source[source] = r;
  }
  return b;
}

namespace detail {

inline std::string ratio6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace detail

inline std::string emit_report(const SourceBreakdown& b, ReportFormat format) {
  if (format == ReportFormat::json) return breakdown_to_json(b).dump(2) + "\n";
  std::string csv = "source,total,selected,selected_ratio,share_of_selection\n";
  for (const auto& [source, row] : b.per_source) {
    csv += source + "," + std::to_string(row.total) + "," + std::to_string(row.selected) + "," +
           detail::ratio6(row.selected_ratio) + "," + detail::ratio6(row.share_of_selection) +
           "\n";
  }
  return csv;
}

}  // namespace aide
