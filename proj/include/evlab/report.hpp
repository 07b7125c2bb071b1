#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evlab/environment.hpp"

namespace evlab {

struct RunMetadata {
  std::string detector;
  std::string agent;
  std::string reward_mode;
  std::uint64_t seed = 0;
  std::string config;  // the run configuration as compact JSON

  bool operator==(const RunMetadata&) const = default;
};

struct RankedAction {
  ActionId action{};
  double cumulative_score = 0.0;
  std::uint64_t usage_count = 0;

  bool operator==(const RankedAction&) const = default;
};

/// How often each value of one detail key appeared in evading episodes.
struct DetailTable {
  ActionId action{};
  std::string key;
  std::vector<std::pair<std::string, std::uint64_t>> counts;  // most frequent first, then by value

  bool operator==(const DetailTable&) const = default;
};

struct VulnerabilityReport {
  RunMetadata metadata;
  RunMetrics metrics;
  std::vector<RankedAction> ranking;  // all 16 actions
  std::vector<DetailTable> details;   // sorted by (action, key)
  std::vector<EpisodeTrace> evaded;

  bool operator==(const VulnerabilityReport&) const = default;
};

/// Throws InconsistentInputs unless derive_metrics(traces, metrics.skipped)
/// reproduces `metrics` exactly. Ranking: cumulative score descending, then
/// usage count descending, then action id.
VulnerabilityReport build_report(const std::vector<EpisodeTrace>& traces, const RunMetrics& metrics,
                                 const RunMetadata& metadata);

std::string export_report_json(const VulnerabilityReport& report);
/// Throws FormatError on malformed input.
VulnerabilityReport import_report_json(const std::string& text);
/// Summary blocks followed by one "  step" line per step of each evaded trace.
std::string export_report_text(const VulnerabilityReport& report);

std::string metrics_to_json(const RunMetrics& metrics);
RunMetrics metrics_from_json(const std::string& text);

std::string traces_to_jsonl(const std::vector<EpisodeTrace>& traces);
std::vector<EpisodeTrace> traces_from_jsonl(const std::string& text);

struct ChartRow {
  ActionId action{};
  double cumulative_score = 0.0;
  std::uint64_t usage_count = 0;

  bool operator==(const ChartRow&) const = default;
};

/// 16 rows in action order.
std::vector<ChartRow> export_action_chart_data(const RunMetrics& metrics);
std::string chart_csv(const std::vector<ChartRow>& rows);
/// Standalone SVG with two bar panels: cumulative score and usage count.
std::string chart_svg(const std::vector<ChartRow>& rows, const std::string& title);

}  // namespace evlab
