#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evlab/actions.hpp"
#include "evlab/agents.hpp"
#include "evlab/corpus.hpp"
#include "evlab/detectors.hpp"
#include "evlab/rng.hpp"
#include "evlab/sbf.hpp"

namespace evlab {

enum class RewardMode : std::uint8_t { kScore = 0, kHardLabel = 1 };
/// kScoreDecrease rewards p_{t-1} - p_t; kScoreIncrease rewards p_t - p_{t-1}.
enum class SignConvention : std::uint8_t { kScoreDecrease = 0, kScoreIncrease = 1 };

std::string to_string(RewardMode mode);
RewardMode reward_mode_from_string(const std::string& s);
std::string to_string(SignConvention sign);
SignConvention sign_convention_from_string(const std::string& s);

struct EnvConfig {
  DetectorRef detector;
  int max_steps = 30;
  double terminal_reward = 10.0;
  RewardMode mode = RewardMode::kScore;
  SignConvention sign = SignConvention::kScoreDecrease;
  std::uint64_t seed = 0;
  ActionConfig actions;
  /// Keep full feature vectors in traces, not just their digests.
  bool record_states = false;

  /// Throws ConfigError: T < 1, non-finite R, missing detector, or score
  /// mode over a detector that only exposes labels.
  void validate() const;
};

/// Score-mode reward for one step.
double score_reward(double previous, double current, double threshold, double terminal_reward, SignConvention sign);
/// Hard-label reward: R when the detector says benign, else 0.
double hard_label_reward(int label, double terminal_reward);

enum class Outcome : std::uint8_t { kEvaded = 0, kExhausted = 1, kCorrupted = 2 };
std::string to_string(Outcome outcome);
Outcome outcome_from_string(const std::string& s);

struct EpisodeStatus {
  Outcome outcome = Outcome::kExhausted;
  int steps = 0;
  double final_value = 0.0;  // score in score mode, label in hard-label mode
  /// Behavioral digest of the final binary equals the one taken at reset.
  bool digest_preserved = true;

  bool operator==(const EpisodeStatus&) const = default;
};

enum class StepKind : std::uint8_t { kApplied = 0, kRejected = 1, kCorrupted = 2 };
std::string to_string(StepKind kind);
StepKind step_kind_from_string(const std::string& s);

struct TraceStep {
  int t = 0;
  ActionId action{};
  StepKind kind = StepKind::kApplied;
  ActionDetail detail;
  std::string reason;  // rejection or corruption cause
  double pre = 0.0;
  double post = 0.0;
  double reward = 0.0;
  std::string state_digest;  // hex SHA-256 of the post-step feature vector
  std::optional<std::vector<double>> state;

  bool operator==(const TraceStep&) const = default;
};

struct EpisodeTrace {
  std::string sample_id;
  std::vector<TraceStep> steps;
  EpisodeStatus status;

  bool operator==(const EpisodeTrace&) const = default;
};

struct StepResult {
  std::vector<double> state;
  double reward = 0.0;
  bool terminal = false;
  TraceStep record;
  std::optional<EpisodeStatus> status;  // set when terminal
};

/// Episode engine as seen by the harnesses.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::size_t sample_count() const = 0;
  virtual std::string sample_id(std::size_t index) const = 0;
  /// Throws NotInitiallyDetected when the sample already evades.
  virtual std::vector<double> reset(std::size_t index) = 0;
  /// Throws EpisodeFinished after a terminal step or before any reset.
  virtual StepResult step(ActionId action) = 0;
};

std::string state_digest(std::span<const double> state);

class EvasionEnvironment final : public Environment {
 public:
  EvasionEnvironment(EnvConfig config, std::vector<CorpusSample> samples, std::shared_ptr<const DonorDatabase> donors);

  std::size_t sample_count() const override { return samples_.size(); }
  std::string sample_id(std::size_t index) const override;
  std::vector<double> reset(std::size_t index) override;
  /// Throws PreconditionViolation for benign samples.
  std::vector<double> reset(const CorpusSample& sample);
  StepResult step(ActionId action) override;

  const EnvConfig& config() const { return config_; }
  double threshold() const;
  /// Score (score mode) or label (hard-label mode) of a binary.
  double observe(const SbfBinary& binary) const;
  bool evades(double value) const;
  const SbfBinary& current() const { return current_; }
  bool active() const { return active_; }

 private:
  double observe(const SbfBinary& binary, std::span<const std::uint8_t> serialized) const;

  EnvConfig config_;
  std::vector<CorpusSample> samples_;
  std::shared_ptr<const DonorDatabase> donors_;
  Rng rng_;
  std::uint64_t resets_ = 0;

  SbfBinary current_;
  Digest original_digest_{};
  std::vector<double> state_;
  double value_ = 0.0;
  int t_ = 0;
  bool active_ = false;
};

struct ActionStats {
  double cumulative_score = 0.0;
  std::uint64_t usage_count = 0;
  bool operator==(const ActionStats&) const = default;
};

struct RunMetrics {
  std::uint64_t episodes = 0;
  std::uint64_t evaded = 0;
  std::uint64_t exhausted = 0;
  std::uint64_t corrupted = 0;
  std::uint64_t skipped = 0;  // initially undetected, excluded from the rate
  std::uint64_t total_steps = 0;
  double evasion_rate = 0.0;
  double avg_steps_to_evade = 0.0;
  std::array<ActionStats, kNumActions> per_action{};

  bool operator==(const RunMetrics&) const = default;
};

/// Pure function of the traces; accumulation runs in trace order.
RunMetrics derive_metrics(const std::vector<EpisodeTrace>& traces, std::uint64_t skipped);

struct RunResult {
  RunMetrics metrics;
  std::vector<EpisodeTrace> traces;
  std::vector<std::string> skipped_ids;
};

/// Cycles through the samples for `episodes` episodes, skipping (once each)
/// those that start undetected. Every step is offered to Agent::observe and
/// every finished episode to Agent::end_episode.
RunResult run_training(Environment& env, Agent& agent, int episodes, std::uint64_t seed);

/// One frozen-policy episode per sample (Agent::act only).
RunResult run_evaluation(Environment& env, const Agent& agent, std::uint64_t seed);

}  // namespace evlab
