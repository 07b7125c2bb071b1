#include "evlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"

#include "evlab/error.hpp"

namespace evlab {

using json = nlohmann::json;

namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

// Non-finite doubles have no JSON form; none are expected here but a guard
// keeps the output parseable.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num_from(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

json status_json(const EpisodeStatus& s) {
  return {{"outcome", to_string(s.outcome)},
          {"steps", s.steps},
          {"final_value", num(s.final_value)},
          {"digest_preserved", s.digest_preserved}};
}

EpisodeStatus status_from(const json& j) {
  return {outcome_from_string(j.at("outcome").get<std::string>()), j.at("steps").get<int>(),
          num_from(j.at("final_value")), j.at("digest_preserved").get<bool>()};
}

json detail_json(const ActionDetail& d) {
  json a = json::array();
  for (const auto& [k, v] : d) a.push_back({k, v});
  return a;
}

ActionDetail detail_from(const json& j) {
  ActionDetail d;
  for (const auto& kv : j) d.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
  return d;
}

json step_json(const TraceStep& s) {
  json j = {{"t", s.t},
            {"action", index_of(s.action)},
            {"kind", to_string(s.kind)},
            {"detail", detail_json(s.detail)},
            {"reason", s.reason},
            {"pre", num(s.pre)},
            {"post", num(s.post)},
            {"reward", num(s.reward)},
            {"state_digest", s.state_digest}};
  if (s.state) {
    json a = json::array();
    for (double x : *s.state) a.push_back(num(x));
    j["state"] = a;
  }
  return j;
}

TraceStep step_from(const json& j) {
  TraceStep s;
  s.t = j.at("t").get<int>();
  s.action = action_from_index(j.at("action").get<int>());
  s.kind = step_kind_from_string(j.at("kind").get<std::string>());
  s.detail = detail_from(j.at("detail"));
  s.reason = j.at("reason").get<std::string>();
  s.pre = num_from(j.at("pre"));
  s.post = num_from(j.at("post"));
  s.reward = num_from(j.at("reward"));
  s.state_digest = j.at("state_digest").get<std::string>();
  if (j.contains("state")) {
    std::vector<double> v;
    for (const auto& x : j.at("state")) v.push_back(num_from(x));
    s.state = std::move(v);
  }
  return s;
}

json trace_json(const EpisodeTrace& t) {
  json steps = json::array();
  for (const auto& s : t.steps) steps.push_back(step_json(s));
  return {{"sample_id", t.sample_id}, {"steps", steps}, {"status", status_json(t.status)}};
}

EpisodeTrace trace_from(const json& j) {
  EpisodeTrace t;
  t.sample_id = j.at("sample_id").get<std::string>();
  for (const auto& s : j.at("steps")) t.steps.push_back(step_from(s));
  t.status = status_from(j.at("status"));
  return t;
}

json metrics_json(const RunMetrics& m) {
  json per = json::array();
  for (const auto& a : m.per_action) per.push_back({{"cumulative_score", num(a.cumulative_score)}, {"usage_count", a.usage_count}});
  return {{"episodes", m.episodes},
          {"evaded", m.evaded},
          {"exhausted", m.exhausted},
          {"corrupted", m.corrupted},
          {"skipped", m.skipped},
          {"total_steps", m.total_steps},
          {"evasion_rate", num(m.evasion_rate)},
          {"avg_steps_to_evade", num(m.avg_steps_to_evade)},
          {"per_action", per}};
}

RunMetrics metrics_from(const json& j) {
  RunMetrics m;
  m.episodes = j.at("episodes").get<std::uint64_t>();
  m.evaded = j.at("evaded").get<std::uint64_t>();
  m.exhausted = j.at("exhausted").get<std::uint64_t>();
  m.corrupted = j.at("corrupted").get<std::uint64_t>();
  m.skipped = j.at("skipped").get<std::uint64_t>();
  m.total_steps = j.at("total_steps").get<std::uint64_t>();
  m.evasion_rate = num_from(j.at("evasion_rate"));
  m.avg_steps_to_evade = num_from(j.at("avg_steps_to_evade"));
  const auto& per = j.at("per_action");
  if (per.size() != m.per_action.size()) throw FormatError("per_action must have 16 entries");
  for (std::size_t i = 0; i < m.per_action.size(); ++i) {
    m.per_action[i].cumulative_score = num_from(per[i].at("cumulative_score"));
    m.per_action[i].usage_count = per[i].at("usage_count").get<std::uint64_t>();
  }
  return m;
}

template <typename F>
auto parse_guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(e.what());
  } catch (const std::out_of_range& e) {
    throw FormatError(e.what());
  }
}

}  // namespace

VulnerabilityReport build_report(const std::vector<EpisodeTrace>& traces, const RunMetrics& metrics,
                                 const RunMetadata& metadata) {
  const auto derived = derive_metrics(traces, metrics.skipped);
  if (!(derived == metrics)) throw InconsistentInputs("metrics do not match the traces they summarize");

  VulnerabilityReport r;
  r.metadata = metadata;
  r.metrics = metrics;

  for (int a = 0; a < kNumActions; ++a) {
    const auto& s = metrics.per_action[static_cast<std::size_t>(a)];
    r.ranking.push_back({static_cast<ActionId>(a), s.cumulative_score, s.usage_count});
  }
  std::stable_sort(r.ranking.begin(), r.ranking.end(), [](const RankedAction& x, const RankedAction& y) {
    if (x.cumulative_score != y.cumulative_score) return x.cumulative_score > y.cumulative_score;
    if (x.usage_count != y.usage_count) return x.usage_count > y.usage_count;
    return index_of(x.action) < index_of(y.action);
  });

  std::map<std::pair<int, std::string>, std::map<std::string, std::uint64_t>> freq;
  for (const auto& t : traces) {
    if (t.status.outcome != Outcome::kEvaded) continue;
    r.evaded.push_back(t);
    for (const auto& s : t.steps) {
      if (s.kind != StepKind::kApplied) continue;
      for (const auto& [k, v] : s.detail) ++freq[{index_of(s.action), k}][v];
    }
  }
  for (const auto& [key, counts] : freq) {
    DetailTable table{static_cast<ActionId>(key.first), key.second, {counts.begin(), counts.end()}};
    std::stable_sort(table.counts.begin(), table.counts.end(),
                     [](const auto& x, const auto& y) { return x.second > y.second; });
    r.details.push_back(std::move(table));
  }
  return r;
}

std::string export_report_json(const VulnerabilityReport& r) {
  json ranking = json::array();
  for (const auto& a : r.ranking)
    ranking.push_back({{"action", index_of(a.action)},
                       {"name", std::string(action_name(a.action))},
                       {"cumulative_score", num(a.cumulative_score)},
                       {"usage_count", a.usage_count}});
  json details = json::array();
  for (const auto& d : r.details) {
    json counts = json::array();
    for (const auto& [v, n] : d.counts) counts.push_back({v, n});
    details.push_back({{"action", index_of(d.action)}, {"key", d.key}, {"counts", counts}});
  }
  json evaded = json::array();
  for (const auto& t : r.evaded) evaded.push_back(trace_json(t));
  json j = {{"metadata",
             {{"detector", r.metadata.detector},
              {"agent", r.metadata.agent},
              {"reward_mode", r.metadata.reward_mode},
              {"seed", r.metadata.seed},
              {"config", r.metadata.config}}},
            {"metrics", metrics_json(r.metrics)},
            {"ranking", ranking},
            {"details", details},
            {"evaded", evaded}};
  return j.dump(2) + "\n";
}

VulnerabilityReport import_report_json(const std::string& text) {
  return parse_guarded([&] {
    const auto j = json::parse(text);
    VulnerabilityReport r;
    const auto& m = j.at("metadata");
    r.metadata = {m.at("detector").get<std::string>(), m.at("agent").get<std::string>(),
                  m.at("reward_mode").get<std::string>(), m.at("seed").get<std::uint64_t>(),
                  m.at("config").get<std::string>()};
    r.metrics = metrics_from(j.at("metrics"));
    for (const auto& a : j.at("ranking"))
      r.ranking.push_back({action_from_index(a.at("action").get<int>()), num_from(a.at("cumulative_score")),
                           a.at("usage_count").get<std::uint64_t>()});
    for (const auto& d : j.at("details")) {
      DetailTable t{action_from_index(d.at("action").get<int>()), d.at("key").get<std::string>(), {}};
      for (const auto& c : d.at("counts")) t.counts.emplace_back(c.at(0).get<std::string>(), c.at(1).get<std::uint64_t>());
      r.details.push_back(std::move(t));
    }
    for (const auto& t : j.at("evaded")) r.evaded.push_back(trace_from(t));
    return r;
  });
}

std::string export_report_text(const VulnerabilityReport& r) {
  std::ostringstream o;
  const auto& m = r.metrics;
  o << "vulnerability report\n";
  o << "detector: " << r.metadata.detector << "  agent: " << r.metadata.agent
    << "  reward: " << r.metadata.reward_mode << "  seed: " << r.metadata.seed << "\n";
  o << "episodes: " << m.episodes << "  evaded: " << m.evaded << "  exhausted: " << m.exhausted
    << "  corrupted: " << m.corrupted << "  skipped: " << m.skipped << "\n";
  o << "evasion rate: " << fmt("%.4f", m.evasion_rate) << "  avg steps to evade: " << fmt("%.2f", m.avg_steps_to_evade)
    << "\n\n";

  o << "action ranking (cumulative score, usage)\n";
  for (std::size_t i = 0; i < r.ranking.size(); ++i) {
    const auto& a = r.ranking[i];
    o << fmt("%3.0f. ", static_cast<double>(i + 1)) << fmt("%2.0f ", index_of(a.action)) << action_name(a.action)
      << "  " << fmt("%.6g", a.cumulative_score) << "  " << a.usage_count << "\n";
  }

  if (!r.details.empty()) {
    o << "\nchoices made in evading episodes\n";
    for (const auto& d : r.details) {
      o << "action " << index_of(d.action) << " " << d.key << ":";
      const std::size_t shown = std::min<std::size_t>(d.counts.size(), 5);
      for (std::size_t i = 0; i < shown; ++i) o << " " << d.counts[i].first << " (" << d.counts[i].second << ")";
      if (d.counts.size() > shown) o << " ...";
      o << "\n";
    }
  }

  o << "\nevaded samples: " << r.evaded.size() << "\n";
  for (const auto& t : r.evaded) {
    o << t.sample_id << " evaded in " << t.status.steps << " steps; sequence {";
    for (std::size_t i = 0; i < t.steps.size(); ++i) o << (i ? ", " : "") << index_of(t.steps[i].action);
    o << "}\n";
    for (const auto& s : t.steps) {
      o << "  step " << s.t << " action " << index_of(s.action) << " " << action_name(s.action) << " "
        << to_string(s.kind) << " pre=" << fmt("%.6g", s.pre) << " post=" << fmt("%.6g", s.post)
        << " reward=" << fmt("%.6g", s.reward);
      for (const auto& [k, v] : s.detail) o << " " << k << "=" << v;
      if (!s.reason.empty()) o << " reason=" << s.reason;
      o << "\n";
    }
  }
  return o.str();
}

std::string metrics_to_json(const RunMetrics& m) { return metrics_json(m).dump(2) + "\n"; }

RunMetrics metrics_from_json(const std::string& text) {
  return parse_guarded([&] { return metrics_from(json::parse(text)); });
}

std::string traces_to_jsonl(const std::vector<EpisodeTrace>& traces) {
  std::string out;
  for (const auto& t : traces) out += trace_json(t).dump() + "\n";
  return out;
}

std::vector<EpisodeTrace> traces_from_jsonl(const std::string& text) {
  return parse_guarded([&] {
    std::vector<EpisodeTrace> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.push_back(trace_from(json::parse(line)));
    return out;
  });
}

std::vector<ChartRow> export_action_chart_data(const RunMetrics& m) {
  std::vector<ChartRow> rows;
  for (int a = 0; a < kNumActions; ++a) {
    const auto& s = m.per_action[static_cast<std::size_t>(a)];
    rows.push_back({static_cast<ActionId>(a), s.cumulative_score, s.usage_count});
  }
  return rows;
}

std::string chart_csv(const std::vector<ChartRow>& rows) {
  std::string out = "action,name,cumulative_score,usage_count\n";
  for (const auto& r : rows)
    out += std::to_string(index_of(r.action)) + "," + std::string(action_name(r.action)) + "," +
           fmt("%.17g", r.cumulative_score) + "," + std::to_string(r.usage_count) + "\n";
  return out;
}

std::string chart_svg(const std::vector<ChartRow>& rows, const std::string& title) {
  constexpr double kPanelW = 420, kPanelH = 240, kMargin = 40, kGap = 40;
  const double width = 2 * kPanelW + kGap + 2 * kMargin;
  const double height = kPanelH + 2 * kMargin + 20;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kMargin << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";

  auto panel = [&](double x0, const std::string& label, auto value) {
    double lo = 0.0, hi = 0.0;
    for (const auto& r : rows) {
      lo = std::min(lo, value(r));
      hi = std::max(hi, value(r));
    }
    const double span = hi - lo > 0 ? hi - lo : 1.0;
    const double y_top = kMargin, y_zero = kMargin + kPanelH * (hi / span);
    const double bar = kPanelW / static_cast<double>(std::max<std::size_t>(rows.size(), 1));
    o << "<text x=\"" << x0 << "\" y=\"" << y_top - 6 << "\">" << label << "</text>\n";
    o << "<line x1=\"" << x0 << "\" y1=\"" << y_zero << "\" x2=\"" << x0 + kPanelW << "\" y2=\"" << y_zero
      << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = value(rows[i]);
      const double h = kPanelH * std::abs(v) / span;
      const double x = x0 + bar * static_cast<double>(i) + 2;
      const double y = v >= 0 ? y_zero - h : y_zero;
      o << "<rect x=\"" << fmt("%.2f", x) << "\" y=\"" << fmt("%.2f", y) << "\" width=\"" << fmt("%.2f", bar - 4)
        << "\" height=\"" << fmt("%.2f", h) << "\" fill=\"" << (v >= 0 ? "steelblue" : "indianred") << "\"><title>"
        << index_of(rows[i].action) << " " << action_name(rows[i].action) << ": " << fmt("%.6g", v)
        << "</title></rect>\n";
      o << "<text x=\"" << fmt("%.2f", x + bar / 2 - 4) << "\" y=\"" << kMargin + kPanelH + 14 << "\">"
        << index_of(rows[i].action) << "</text>\n";
    }
  };
  panel(kMargin, "cumulative score", [](const ChartRow& r) { return r.cumulative_score; });
  panel(kMargin + kPanelW + kGap, "usage count", [](const ChartRow& r) { return static_cast<double>(r.usage_count); });
  o << "</svg>\n";
  return o.str();
}

}  // namespace evlab
