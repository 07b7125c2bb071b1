#include "evlab/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "evlab/error.hpp"

namespace evlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Reads known keys into fields and rejects anything else, so typos surface
// as validation errors instead of silently using defaults.
class KeyReader {
 public:
  KeyReader(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + name_ + "." + k + "'");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad value for '" + name_ + "." + key + "'");
    }
  }
  void get(const char* key, std::optional<double>& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      field.reset();
    } else if (j_.at(key).is_number()) {
      field = j_.at(key).get<double>();
    } else {
      throw ConfigError("bad value for '" + name_ + "." + key + "'");
    }
  }
  const json& sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return j_.contains(key) ? j_.at(key) : empty;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto b = read_file(path);
  return {b.begin(), b.end()};
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw Error(what + " not found at " + p.string());
}

std::string sample_file(const std::string& split, const CorpusSample& s) {
  return split + "/" + sample_id(s) + ".sbf";
}

DetectorKind scoring_kind(const std::string& name) {
  const auto k = detector_kind_from_string(name);
  if (k == DetectorKind::kHardLabel) throw ConfigError("detector.kind must be a scoring kind (feature|byte|image)");
  return k;
}

void write_charts(const fs::path& dir, const std::string& stem, const RunMetrics& m, const std::string& title) {
  const auto rows = export_action_chart_data(m);
  write_text(dir / (stem + "-actions.csv"), chart_csv(rows));
  write_text(dir / (stem + "-actions.svg"), chart_svg(rows, title));
}

}  // namespace

void RunConfig::validate() const {
  const auto& c = corpus;
  if (c.train_malicious < 0 || c.test_malicious < 0 || c.donor_benign < 0 || c.detector_malicious < 0 ||
      c.detector_benign < 0)
    throw ConfigError("corpus counts must be >= 0");

  scoring_kind(detector.kind);
  if (detector.hidden == 0 || detector.epochs < 0 || detector.batch_size == 0 || !(detector.learning_rate > 0.0))
    throw ConfigError("detector hyperparameters out of range");
  if (!(detector.holdout_fraction > 0.0 && detector.holdout_fraction < 1.0))
    throw ConfigError("detector.holdout_fraction must lie in (0, 1)");
  if (detector.threshold && !(*detector.threshold > 0.0 && *detector.threshold < 1.0))
    throw ConfigError("detector.threshold must lie in (0, 1)");

  agent_kind_from_string(agent.kind);
  if (agent.episodes < 0) throw ConfigError("agent.episodes must be >= 0");
  if (agent.hidden == 0 || !(agent.learning_rate > 0.0)) throw ConfigError("agent hyperparameters out of range");
  if (agent.gamma && !(*agent.gamma >= 0.0 && *agent.gamma <= 1.0)) throw ConfigError("agent.gamma must lie in [0, 1]");
  if (!(agent.epsilon_min >= 0.0 && agent.epsilon_min <= agent.epsilon_start && agent.epsilon_start <= 1.0))
    throw ConfigError("need 0 <= epsilon_min <= epsilon_start <= 1");
  if (!(agent.epsilon_decay_fraction >= 0.0 && agent.epsilon_decay_fraction <= 1.0))
    throw ConfigError("agent.epsilon_decay_fraction must lie in [0, 1]");
  if (agent.replay_capacity == 0 || agent.batch_size == 0) throw ConfigError("replay capacity and batch must be > 0");
  baseline_from_string(agent.baseline);

  if (env.max_steps < 1) throw ConfigError("env.max_steps must be >= 1");
  if (!std::isfinite(env.terminal_reward)) throw ConfigError("env.terminal_reward must be finite");
  if (env.detector_access != "score" && env.detector_access != "label")
    throw ConfigError("env.detector_access must be score or label");
  const auto mode = reward_mode_from_string(env.reward_mode);
  sign_convention_from_string(env.sign);
  if (env.detector_access == "label" && mode == RewardMode::kScore)
    throw ConfigError("a hard-label environment cannot use the score reward mode");

  for (const auto* p : {&paths.corpus_dir, &paths.donors, &paths.detector, &paths.agent, &paths.reports})
    if (p->empty()) throw ConfigError("paths must be non-empty");
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  KeyReader root(j, "config");
  root.get("seed", c.seed);
  {
    KeyReader s(root.sub("corpus"), "corpus");
    s.get("train_malicious", c.corpus.train_malicious);
    s.get("test_malicious", c.corpus.test_malicious);
    s.get("donor_benign", c.corpus.donor_benign);
    s.get("detector_malicious", c.corpus.detector_malicious);
    s.get("detector_benign", c.corpus.detector_benign);
    s.finish();
  }
  {
    KeyReader s(root.sub("detector"), "detector");
    s.get("kind", c.detector.kind);
    s.get("hidden", c.detector.hidden);
    s.get("epochs", c.detector.epochs);
    s.get("batch_size", c.detector.batch_size);
    s.get("learning_rate", c.detector.learning_rate);
    s.get("holdout_fraction", c.detector.holdout_fraction);
    s.get("threshold", c.detector.threshold);
    s.finish();
  }
  {
    KeyReader s(root.sub("agent"), "agent");
    auto& a = c.agent;
    s.get("kind", a.kind);
    s.get("episodes", a.episodes);
    s.get("hidden", a.hidden);
    s.get("gamma", a.gamma);
    s.get("learning_rate", a.learning_rate);
    s.get("epsilon_start", a.epsilon_start);
    s.get("epsilon_min", a.epsilon_min);
    s.get("epsilon_decay_fraction", a.epsilon_decay_fraction);
    s.get("replay_capacity", a.replay_capacity);
    s.get("batch_size", a.batch_size);
    s.get("learn_start", a.learn_start);
    s.get("sync_interval", a.sync_interval);
    s.get("baseline", a.baseline);
    s.get("greedy_eval", a.greedy_eval);
    s.finish();
  }
  {
    KeyReader s(root.sub("env"), "env");
    s.get("max_steps", c.env.max_steps);
    s.get("terminal_reward", c.env.terminal_reward);
    s.get("detector_access", c.env.detector_access);
    s.get("reward_mode", c.env.reward_mode);
    s.get("sign", c.env.sign);
    s.get("record_states", c.env.record_states);
    s.finish();
  }
  {
    KeyReader s(root.sub("paths"), "paths");
    s.get("corpus_dir", c.paths.corpus_dir);
    s.get("donors", c.paths.donors);
    s.get("detector", c.paths.detector);
    s.get("agent", c.paths.agent);
    s.get("reports", c.paths.reports);
    s.finish();
  }
  root.finish();
  return c;
}

std::string config_to_json(const RunConfig& c) {
  const auto& a = c.agent;
  json j = {
      {"seed", c.seed},
      {"corpus",
       {{"train_malicious", c.corpus.train_malicious},
        {"test_malicious", c.corpus.test_malicious},
        {"donor_benign", c.corpus.donor_benign},
        {"detector_malicious", c.corpus.detector_malicious},
        {"detector_benign", c.corpus.detector_benign}}},
      {"detector",
       {{"kind", c.detector.kind},
        {"hidden", c.detector.hidden},
        {"epochs", c.detector.epochs},
        {"batch_size", c.detector.batch_size},
        {"learning_rate", c.detector.learning_rate},
        {"holdout_fraction", c.detector.holdout_fraction},
        {"threshold", c.detector.threshold ? json(*c.detector.threshold) : json(nullptr)}}},
      {"agent",
       {{"kind", a.kind},
        {"episodes", a.episodes},
        {"hidden", a.hidden},
        {"gamma", a.gamma ? json(*a.gamma) : json(nullptr)},
        {"learning_rate", a.learning_rate},
        {"epsilon_start", a.epsilon_start},
        {"epsilon_min", a.epsilon_min},
        {"epsilon_decay_fraction", a.epsilon_decay_fraction},
        {"replay_capacity", a.replay_capacity},
        {"batch_size", a.batch_size},
        {"learn_start", a.learn_start},
        {"sync_interval", a.sync_interval},
        {"baseline", a.baseline},
        {"greedy_eval", a.greedy_eval}}},
      {"env",
       {{"max_steps", c.env.max_steps},
        {"terminal_reward", c.env.terminal_reward},
        {"detector_access", c.env.detector_access},
        {"reward_mode", c.env.reward_mode},
        {"sign", c.env.sign},
        {"record_states", c.env.record_states}}},
      {"paths",
       {{"corpus_dir", c.paths.corpus_dir},
        {"donors", c.paths.donors},
        {"detector", c.paths.detector},
        {"agent", c.paths.agent},
        {"reports", c.paths.reports}}},
  };
  return j.dump(2) + "\n";
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

Paths resolve_paths(const RunConfig& c, const fs::path& out) {
  auto r = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : out / p; };
  Paths p;
  p.corpus_dir = r(c.paths.corpus_dir);
  p.manifest = p.corpus_dir / "manifest.jsonl";
  p.donors = r(c.paths.donors);
  p.detector = r(c.paths.detector);
  p.agent = r(c.paths.agent);
  p.reports = r(c.paths.reports);
  return p;
}

// ---------------------------------------------------------------- commands

CorpusSummary cmd_gen_corpus(const RunConfig& config, const fs::path& out) {
  config.validate();
  const auto paths = resolve_paths(config, out);
  const std::uint64_t base = mix_seed(config.seed, seed_stream::kCorpus);
  const auto& c = config.corpus;

  struct Split {
    const char* name;
    int malicious;
    int benign;
  };
  const Split splits[] = {{kSplitTrain, c.train_malicious, 0},
                          {kSplitTest, c.test_malicious, 0},
                          {kSplitDonor, 0, c.donor_benign},
                          {kSplitDetector, c.detector_malicious, c.detector_benign}};

  fs::create_directories(paths.corpus_dir);
  std::vector<ManifestEntry> manifest;
  CorpusSummary summary;
  for (std::size_t k = 0; k < std::size(splits); ++k) {
    const auto& s = splits[k];
    const auto samples = generate_corpus(s.malicious, s.benign, mix_seed(base, k));
    for (const auto& sample : samples) {
      const auto rel = sample_file(s.name, sample);
      write_file(paths.corpus_dir / rel, serialize(sample.binary));
      manifest.push_back({rel, sample.label, sample.family_seed, s.name});
    }
    const auto n = samples.size();
    if (k == 0) summary.train = n;
    if (k == 1) summary.test = n;
    if (k == 2) summary.donor = n;
    if (k == 3) summary.detector = n;
  }
  write_manifest(paths.manifest, manifest);
  return summary;
}

DonorDatabase cmd_build_donors(const RunConfig& config, const fs::path& out) {
  config.validate();
  const auto paths = resolve_paths(config, out);
  require_file(paths.manifest, "corpus manifest");
  const auto benign = load_split(paths.manifest, kSplitDonor);
  auto donors = build_donor_database(benign, mix_seed(config.seed, seed_stream::kDonors));
  save_donors(paths.donors, donors);
  return donors;
}

DetectorTrainingResult cmd_train_detector(const RunConfig& config, const fs::path& out) {
  config.validate();
  const auto paths = resolve_paths(config, out);
  require_file(paths.manifest, "corpus manifest");
  const auto samples = load_split(paths.manifest, kSplitDetector);
  const auto kind = scoring_kind(config.detector.kind);
  DetectorTrainingConfig tc;
  tc.hidden = config.detector.hidden;
  tc.epochs = config.detector.epochs;
  tc.batch_size = config.detector.batch_size;
  tc.learning_rate = config.detector.learning_rate;
  tc.holdout_fraction = config.detector.holdout_fraction;
  tc.threshold = config.detector.threshold;
  auto result = train_detector(samples, kind, tc, mix_seed(config.seed, seed_stream::kDetector));
  write_file(paths.detector, detector_checkpoint(result.detector));
  json summary = {{"kind", to_string(kind)},
                  {"threshold", result.detector.threshold()},
                  {"holdout_auc", result.holdout_auc},
                  {"train_count", result.train_count},
                  {"holdout_count", result.holdout_count}};
  auto summary_path = paths.detector;
  summary_path += ".summary.json";
  write_text(summary_path, summary.dump(2) + "\n");
  return result;
}

EvasionEnvironment make_environment(const RunConfig& config, const fs::path& out, std::vector<CorpusSample> samples,
                                    std::uint64_t env_seed) {
  const auto paths = resolve_paths(config, out);
  require_file(paths.donors, "donor database");
  require_file(paths.detector, "detector checkpoint");
  auto donors = std::make_shared<const DonorDatabase>(load_donors(paths.donors));
  auto trained = std::make_shared<const TrainedDetector>(trained_detector_from_checkpoint(read_file(paths.detector)));

  EnvConfig ec;
  if (config.env.detector_access == "label") {
    ec.detector = std::shared_ptr<const LabelingDetector>(std::make_shared<const HardLabelDetector>(trained));
  } else {
    ec.detector = std::shared_ptr<const ScoringDetector>(trained);
  }
  ec.max_steps = config.env.max_steps;
  ec.terminal_reward = config.env.terminal_reward;
  ec.mode = reward_mode_from_string(config.env.reward_mode);
  ec.sign = sign_convention_from_string(config.env.sign);
  ec.seed = env_seed;
  ec.record_states = config.env.record_states;
  return EvasionEnvironment(std::move(ec), std::move(samples), std::move(donors));
}

std::unique_ptr<Agent> make_agent(const RunConfig& config) {
  const auto& a = config.agent;
  const auto seed = mix_seed(config.seed, seed_stream::kAgentInit);
  switch (agent_kind_from_string(a.kind)) {
    case AgentKind::kDqn: {
      DqnConfig dc;
      dc.hidden = a.hidden;
      if (a.gamma) dc.gamma = *a.gamma;
      dc.learning_rate = a.learning_rate;
      dc.replay_capacity = a.replay_capacity;
      dc.batch_size = a.batch_size;
      dc.learn_start = a.learn_start;
      dc.sync_interval = a.sync_interval;
      dc.epsilon_start = a.epsilon_start;
      dc.epsilon_min = a.epsilon_min;
      dc.epsilon_decay_fraction = a.epsilon_decay_fraction;
      return std::make_unique<DqnAgent>(dc, seed);
    }
    case AgentKind::kReinforce: {
      ReinforceConfig rc;
      rc.hidden = a.hidden;
      if (a.gamma) rc.gamma = *a.gamma;
      rc.learning_rate = a.learning_rate;
      rc.baseline = baseline_from_string(a.baseline);
      rc.greedy_eval = a.greedy_eval;
      return std::make_unique<ReinforceAgent>(rc, seed);
    }
    case AgentKind::kRandom: return std::make_unique<RandomAgent>();
  }
  throw ConfigError("unknown agent kind");
}

RunMetadata run_metadata(const RunConfig& config) {
  const std::string det = config.env.detector_access == "label" ? "hard-label(" + config.detector.kind + ")"
                                                                : config.detector.kind;
  return {det, config.agent.kind, config.env.reward_mode, config.seed, json::parse(config_to_json(config)).dump()};
}

std::string summary_table(const RunConfig& config, const RunMetrics& m) {
  const auto meta = run_metadata(config);
  char line[256];
  std::string out = "agent        detector         episodes  evaded  evasion_rate  avg_steps\n";
  std::snprintf(line, sizeof line, "%-12s %-16s %8llu  %6llu  %12.4f  %9.2f\n", meta.agent.c_str(),
                meta.detector.c_str(), static_cast<unsigned long long>(m.episodes),
                static_cast<unsigned long long>(m.evaded), m.evasion_rate, m.avg_steps_to_evade);
  return out + line;
}

RunResult cmd_train_agent(const RunConfig& config, const fs::path& out) {
  config.validate();
  const auto paths = resolve_paths(config, out);
  require_file(paths.manifest, "corpus manifest");
  require_file(paths.donors, "donor database");
  require_file(paths.detector, "detector checkpoint");

  auto env = make_environment(config, out, load_split(paths.manifest, kSplitTrain),
                              mix_seed(config.seed, seed_stream::kTrainEnv));
  auto agent = make_agent(config);
  auto run = run_training(env, *agent, config.agent.episodes, mix_seed(config.seed, seed_stream::kTrainAgent));

  write_file(paths.agent, agent->checkpoint());
  fs::create_directories(paths.reports);
  write_text(paths.reports / "train-metrics.json", metrics_to_json(run.metrics));
  write_text(paths.reports / "train-traces.jsonl", traces_to_jsonl(run.traces));
  write_charts(paths.reports, "train", run.metrics, "training: " + config.agent.kind + " vs " + run_metadata(config).detector);
  return run;
}

EvaluationSummary cmd_evaluate(const RunConfig& config, const fs::path& out) {
  config.validate();
  const auto paths = resolve_paths(config, out);
  require_file(paths.manifest, "corpus manifest");
  require_file(paths.donors, "donor database");
  require_file(paths.detector, "detector checkpoint");
  const bool random = agent_kind_from_string(config.agent.kind) == AgentKind::kRandom;
  if (!random) require_file(paths.agent, "agent checkpoint");

  std::unique_ptr<Agent> agent;
  if (random) {
    agent = std::make_unique<RandomAgent>();
  } else {
    agent = agent_from_checkpoint(read_file(paths.agent));
    if (to_string(agent->kind()) != config.agent.kind)
      throw ConfigError("agent checkpoint holds a " + to_string(agent->kind()) + " agent, config asks for " +
                        config.agent.kind);
  }

  auto env = make_environment(config, out, load_split(paths.manifest, kSplitTest),
                              mix_seed(config.seed, seed_stream::kEvalEnv));
  EvaluationSummary s;
  s.run = run_evaluation(env, *agent, mix_seed(config.seed, seed_stream::kEvalAgent));
  s.report = build_report(s.run.traces, s.run.metrics, run_metadata(config));
  for (const auto& t : s.run.traces)
    if (t.status.outcome == Outcome::kEvaded && !t.status.digest_preserved) ++s.digest_failures;
  s.table = summary_table(config, s.run.metrics);

  fs::create_directories(paths.reports);
  write_text(paths.reports / "eval-metrics.json", metrics_to_json(s.run.metrics));
  write_text(paths.reports / "eval-traces.jsonl", traces_to_jsonl(s.run.traces));
  write_text(paths.reports / "report.json", export_report_json(s.report));
  write_text(paths.reports / "report.txt", export_report_text(s.report));
  write_text(paths.reports / "summary.txt", s.table);
  write_charts(paths.reports, "eval", s.run.metrics, "evaluation: " + config.agent.kind + " vs " + s.report.metadata.detector);

  if (s.digest_failures > 0)
    throw InvariantViolation(std::to_string(s.digest_failures) + " evaded binaries changed behavioral digest");
  return s;
}

VulnerabilityReport cmd_report(const RunConfig& config, const fs::path& out) {
  config.validate();
  const auto paths = resolve_paths(config, out);
  const auto traces_path = paths.reports / "eval-traces.jsonl";
  const auto metrics_path = paths.reports / "eval-metrics.json";
  require_file(traces_path, "evaluation traces");
  require_file(metrics_path, "evaluation metrics");
  const auto traces = traces_from_jsonl(read_text(traces_path));
  const auto metrics = metrics_from_json(read_text(metrics_path));
  auto report = build_report(traces, metrics, run_metadata(config));
  write_text(paths.reports / "report.json", export_report_json(report));
  write_text(paths.reports / "report.txt", export_report_text(report));
  write_charts(paths.reports, "eval", metrics, "evaluation: " + config.agent.kind + " vs " + report.metadata.detector);
  return report;
}

}  // namespace evlab
