#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evlab/actions.hpp"
#include "evlab/nn.hpp"
#include "evlab/rng.hpp"

namespace evlab {

struct Transition {
  std::vector<double> state;
  ActionId action{};
  double reward = 0.0;
  std::vector<double> next_state;
  bool terminal = false;
};

struct RolloutStep {
  std::vector<double> state;
  ActionId action{};
  double reward = 0.0;
};
using EpisodeRollout = std::vector<RolloutStep>;

struct ActionChoice {
  ActionId action{};
  std::optional<double> log_prob;  // set by stochastic policies
};

enum class AgentKind : std::uint8_t { kDqn = 0, kReinforce = 1, kRandom = 2 };
std::string to_string(AgentKind kind);
AgentKind agent_kind_from_string(const std::string& s);

/// Common surface the episode harness drives. select/observe/end_episode are
/// the learning path; act is the frozen, side-effect-free policy.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual AgentKind kind() const = 0;

  virtual void begin_training(int /*total_episodes*/) {}
  virtual ActionChoice select(std::span<const double> state, Rng& rng) = 0;
  virtual void observe(const Transition& /*transition*/, Rng& /*rng*/) {}
  virtual void end_episode(const EpisodeRollout& /*rollout*/) {}

  virtual ActionChoice act(std::span<const double> state, Rng& rng) const = 0;

  virtual std::vector<std::uint8_t> checkpoint() const = 0;
};

/// Greedy index with ties resolved to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

// ---------------------------------------------------------------- DQN

struct DqnConfig {
  std::size_t state_dim = 256;
  std::size_t hidden = 64;
  std::size_t num_actions = kNumActions;
  double gamma = 0.7;  // longer horizons let greedy no-op loops dominate
  double learning_rate = 1e-3;
  bool use_adam = true;
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 32;
  std::size_t learn_start = 32;
  /// Target network refresh period in updates; 0 bootstraps from the online net.
  std::size_t sync_interval = 100;
  double epsilon_start = 1.0;
  double epsilon_min = 0.05;
  /// Fraction of the training episodes over which epsilon decays linearly.
  double epsilon_decay_fraction = 0.5;
};

/// Fixed-capacity FIFO of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  /// Uniform draw with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

class DqnAgent final : public Agent {
 public:
  DqnAgent(const DqnConfig& config, std::uint64_t seed);
  DqnAgent(const DqnConfig& config, MlpNetwork q_net);

  AgentKind kind() const override { return AgentKind::kDqn; }
  void begin_training(int total_episodes) override;
  ActionChoice select(std::span<const double> state, Rng& rng) override;
  void observe(const Transition& transition, Rng& rng) override;
  void end_episode(const EpisodeRollout& rollout) override;
  ActionChoice act(std::span<const double> state, Rng& rng) const override;
  std::vector<std::uint8_t> checkpoint() const override;

  /// One optimizer step on 0.5 * mean (Q(s,a) - y)^2 with
  /// y = r + gamma * max_a' Q_target(s', a') (y = r when terminal).
  /// Returns the batch loss before the step.
  double update(std::span<const Transition* const> batch);
  double update(const std::vector<Transition>& batch);

  std::vector<double> q_values(std::span<const double> state) const;
  std::vector<double> targets(std::span<const Transition* const> batch) const;

  double epsilon() const { return epsilon_; }
  void set_epsilon(double e) { epsilon_ = e; }
  const DqnConfig& config() const { return config_; }
  const MlpNetwork& q_net() const { return q_net_; }
  MlpNetwork& q_net() { return q_net_; }
  const MlpNetwork& target_net() const { return target_net_; }
  void sync_target() { target_net_ = q_net_; }
  const ReplayBuffer& replay() const { return replay_; }
  std::uint64_t episodes_seen() const { return episodes_; }
  std::uint64_t updates() const { return updates_; }

  static DqnAgent from_checkpoint(std::span<const std::uint8_t> data);

 private:
  void refresh_epsilon();

  DqnConfig config_;
  MlpNetwork q_net_;
  MlpNetwork target_net_;
  Optimizer optimizer_;
  ReplayBuffer replay_;
  double epsilon_;
  int decay_episodes_ = 0;
  std::uint64_t episodes_ = 0;
  std::uint64_t updates_ = 0;
  Gradients grads_;
  ForwardCache cache_;
};

// ---------------------------------------------------------------- REINFORCE

/// kRolloutMean subtracts the mean of the episode's own returns; kRunningMean
/// subtracts an exponential moving average of returns over past episodes.
enum class Baseline : std::uint8_t { kNone = 0, kRolloutMean = 1, kRunningMean = 2 };
std::string to_string(Baseline baseline);
Baseline baseline_from_string(const std::string& s);

struct ReinforceConfig {
  std::size_t state_dim = 256;
  std::size_t hidden = 64;
  std::size_t num_actions = kNumActions;
  double gamma = 0.9;
  double learning_rate = 1e-3;
  bool use_adam = true;
  Baseline baseline = Baseline::kRunningMean;
  /// EMA rate of the running baseline.
  double baseline_rate = 0.05;
  /// Frozen policy: sample from pi (default) or take its argmax.
  bool greedy_eval = false;
};

class ReinforceAgent final : public Agent {
 public:
  ReinforceAgent(const ReinforceConfig& config, std::uint64_t seed);
  ReinforceAgent(const ReinforceConfig& config, MlpNetwork policy);

  AgentKind kind() const override { return AgentKind::kReinforce; }
  ActionChoice select(std::span<const double> state, Rng& rng) override;
  void end_episode(const EpisodeRollout& rollout) override;
  ActionChoice act(std::span<const double> state, Rng& rng) const override;
  std::vector<std::uint8_t> checkpoint() const override;

  /// One ascent step on sum_t log pi(a_t|s_t) * (G_t - baseline). No step is
  /// taken when every advantage is zero.
  void update(const EpisodeRollout& rollout);

  /// Gradient of the surrogate objective sum_t log pi(a_t|s_t) * A_t with
  /// respect to the policy parameters (ascent direction).
  Gradients surrogate_gradient(const EpisodeRollout& rollout) const;
  double surrogate_objective(const EpisodeRollout& rollout) const;
  std::vector<double> advantages(const EpisodeRollout& rollout) const;

  std::vector<double> probabilities(std::span<const double> state) const;
  const ReinforceConfig& config() const { return config_; }
  const MlpNetwork& policy() const { return policy_; }
  MlpNetwork& policy() { return policy_; }
  std::uint64_t episodes_seen() const { return episodes_; }
  double running_baseline() const { return running_baseline_; }

  static ReinforceAgent from_checkpoint(std::span<const std::uint8_t> data);

 private:
  ActionChoice sample(std::span<const double> state, Rng& rng) const;

  ReinforceConfig config_;
  MlpNetwork policy_;
  Optimizer optimizer_;
  std::uint64_t episodes_ = 0;
  double running_baseline_ = 0.0;
};

/// G_t = sum_{k>=t} gamma^(k-t) r_k.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

// ---------------------------------------------------------------- Random

ActionId random_select(Rng& rng);

class RandomAgent final : public Agent {
 public:
  AgentKind kind() const override { return AgentKind::kRandom; }
  ActionChoice select(std::span<const double> /*state*/, Rng& rng) override { return {random_select(rng), {}}; }
  ActionChoice act(std::span<const double> /*state*/, Rng& rng) const override { return {random_select(rng), {}}; }
  std::vector<std::uint8_t> checkpoint() const override;
};

// Checkpoint: "SBAG", u32 version, u8 kind, f64 epsilon, f64 gamma,
// u64 episode counter, then the kind's networks (DQN: q, target;
// REINFORCE: u8 baseline, u8 greedy_eval, f64 baseline rate, f64 running
// baseline, policy).
std::unique_ptr<Agent> agent_from_checkpoint(std::span<const std::uint8_t> data);

}  // namespace evlab
