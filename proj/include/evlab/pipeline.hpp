#pragma once

// Run configuration and the end-to-end commands behind the CLI. Each command
// validates its configuration and inputs before it writes anything.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "evlab/agents.hpp"
#include "evlab/corpus.hpp"
#include "evlab/detectors.hpp"
#include "evlab/environment.hpp"
#include "evlab/report.hpp"

namespace evlab {

struct CorpusParams {
  int train_malicious = 1000;
  int test_malicious = 500;
  int donor_benign = 5000;
  int detector_malicious = 1500;
  int detector_benign = 1500;
};

struct DetectorParams {
  std::string kind = "feature";  // feature | byte | image
  std::size_t hidden = 32;
  int epochs = 40;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double holdout_fraction = 0.2;
  std::optional<double> threshold;
};

struct AgentParams {
  std::string kind = "reinforce";  // dqn | reinforce | random
  int episodes = 1000;
  std::size_t hidden = 64;
  std::optional<double> gamma;  // unset: the agent's own default
  double learning_rate = 1e-3;
  double epsilon_start = 1.0;
  double epsilon_min = 0.05;
  double epsilon_decay_fraction = 0.5;
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 32;
  std::size_t learn_start = 32;
  std::size_t sync_interval = 100;
  std::string baseline = "running-mean";  // none | rollout-mean | running-mean
  bool greedy_eval = false;
};

struct EnvParams {
  int max_steps = 30;
  double terminal_reward = 10.0;
  std::string detector_access = "score";  // score | label (hard-label environment)
  std::string reward_mode = "score";      // score | hard-label
  std::string sign = "score-decrease";    // score-decrease | score-increase
  bool record_states = false;
};

/// Relative paths resolve against the output directory.
struct PathParams {
  std::string corpus_dir = "corpus";
  std::string donors = "donors.json";
  std::string detector = "detector.bin";
  std::string agent = "agent.bin";
  std::string reports = "reports";
};

struct RunConfig {
  std::uint64_t seed = 1;
  CorpusParams corpus;
  DetectorParams detector;
  AgentParams agent;
  EnvParams env;
  PathParams paths;

  /// Throws ConfigError on any out-of-range or unknown value.
  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

/// Sub-seeds derived from the global seed, one per pipeline stage.
namespace seed_stream {
inline constexpr std::uint64_t kCorpus = 1;
inline constexpr std::uint64_t kDonors = 2;
inline constexpr std::uint64_t kDetector = 3;
inline constexpr std::uint64_t kAgentInit = 4;
inline constexpr std::uint64_t kTrainEnv = 5;
inline constexpr std::uint64_t kTrainAgent = 6;
inline constexpr std::uint64_t kEvalEnv = 7;
inline constexpr std::uint64_t kEvalAgent = 8;
}  // namespace seed_stream

struct Paths {
  std::filesystem::path corpus_dir;
  std::filesystem::path manifest;
  std::filesystem::path donors;
  std::filesystem::path detector;
  std::filesystem::path agent;
  std::filesystem::path reports;
};
Paths resolve_paths(const RunConfig& config, const std::filesystem::path& out);

// Split names used in the manifest.
inline constexpr const char* kSplitTrain = "train";
inline constexpr const char* kSplitTest = "test";
inline constexpr const char* kSplitDonor = "donor";
inline constexpr const char* kSplitDetector = "detector";

struct CorpusSummary {
  std::size_t train = 0, test = 0, donor = 0, detector = 0;
};
CorpusSummary cmd_gen_corpus(const RunConfig& config, const std::filesystem::path& out);

DonorDatabase cmd_build_donors(const RunConfig& config, const std::filesystem::path& out);

/// Writes the checkpoint and detector-summary.json (AUC, counts).
DetectorTrainingResult cmd_train_detector(const RunConfig& config, const std::filesystem::path& out);

/// Builds the environment the config describes over the given samples.
EvasionEnvironment make_environment(const RunConfig& config, const std::filesystem::path& out,
                                    std::vector<CorpusSample> samples, std::uint64_t env_seed);
std::unique_ptr<Agent> make_agent(const RunConfig& config);

/// Writes the agent checkpoint, train-metrics.json, train-traces.jsonl and
/// the train chart files.
RunResult cmd_train_agent(const RunConfig& config, const std::filesystem::path& out);

struct EvaluationSummary {
  RunResult run;
  VulnerabilityReport report;
  std::size_t digest_failures = 0;
  std::string table;  // agent, detector, evasion rate, avg steps
};

/// Writes eval-metrics.json, eval-traces.jsonl, report.json, report.txt,
/// chart files and summary.txt. Throws InvariantViolation after writing when
/// an evaded binary's behavioral digest changed.
EvaluationSummary cmd_evaluate(const RunConfig& config, const std::filesystem::path& out);

/// Rebuilds the report files from saved evaluation traces and metrics.
VulnerabilityReport cmd_report(const RunConfig& config, const std::filesystem::path& out);

RunMetadata run_metadata(const RunConfig& config);
std::string summary_table(const RunConfig& config, const RunMetrics& metrics);

}  // namespace evlab
