#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "evlab/agents.hpp"
#include "evlab/error.hpp"

using namespace evlab;

namespace {

// Pearson statistic against a uniform distribution.
double chi_square_uniform(const std::vector<int>& counts) {
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double e = n / static_cast<double>(counts.size());
  double x2 = 0;
  for (int c : counts) x2 += (c - e) * (c - e) / e;
  return x2;
}

// 0.999 quantile of chi-square with 15 degrees of freedom.
constexpr double kChi2_15_999 = 37.697;

std::vector<double> state_of(Rng& rng, std::size_t n = 256) {
  std::vector<double> s(n);
  for (auto& x : s) x = rng.uniform();
  return s;
}

void zero(MlpNetwork& net) {
  for (auto& l : net.layers) {
    for (auto& w : l.weights.span()) w = 0;
    for (auto& b : l.bias.span()) b = 0;
  }
}

std::vector<double*> parameters(MlpNetwork& net) {
  std::vector<double*> out;
  for (auto& l : net.layers) {
    for (auto& w : l.weights.span()) out.push_back(&w);
    for (auto& b : l.bias.span()) out.push_back(&b);
  }
  return out;
}

std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (std::size_t i = 0; i < g.weights.size(); ++i) {
    out.insert(out.end(), g.weights[i].data().begin(), g.weights[i].data().end());
    out.insert(out.end(), g.biases[i].data().begin(), g.biases[i].data().end());
  }
  return out;
}

}  // namespace

TEST(Agents, ArgmaxBreaksTiesLow) {
  EXPECT_EQ(argmax_lowest(std::vector<double>{1, 3, 3, 2}), 1u);
  EXPECT_EQ(argmax_lowest(std::vector<double>(16, 0.0)), 0u);
}

TEST(Agents, NamesRoundTrip) {
  for (auto k : {AgentKind::kDqn, AgentKind::kReinforce, AgentKind::kRandom})
    EXPECT_EQ(agent_kind_from_string(to_string(k)), k);
  for (auto b : {Baseline::kNone, Baseline::kRolloutMean, Baseline::kRunningMean})
    EXPECT_EQ(baseline_from_string(to_string(b)), b);
  EXPECT_THROW(agent_kind_from_string("ppo"), ConfigError);
}

TEST(Replay, KeepsTheNewestCapacityItems) {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) buf.push(Transition{{}, ActionId::kPadOverlay, static_cast<double>(i), {}, false});
  ASSERT_EQ(buf.size(), 3u);
  std::vector<double> rewards;
  for (std::size_t i = 0; i < buf.size(); ++i) rewards.push_back(buf[i].reward);
  std::sort(rewards.begin(), rewards.end());
  EXPECT_EQ(rewards, (std::vector<double>{2, 3, 4}));
  Rng rng(1);
  for (const auto* t : buf.sample(50, rng)) EXPECT_GE(t->reward, 2.0);
  EXPECT_THROW(ReplayBuffer(0), ConfigError);
}

TEST(Dqn, FullExplorationIsUniform) {
  DqnAgent agent(DqnConfig{}, 3);
  agent.set_epsilon(1.0);
  Rng rng(5);
  const auto s = state_of(rng);
  std::vector<int> counts(16, 0);
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(index_of(agent.select(s, rng).action))];
  EXPECT_LT(chi_square_uniform(counts), kChi2_15_999);
}

TEST(Dqn, GreedyOnZeroNetPicksActionZero) {
  DqnAgent agent(DqnConfig{}, 3);
  zero(agent.q_net());
  agent.set_epsilon(0.0);
  Rng rng(5);
  EXPECT_EQ(agent.select(state_of(rng), rng).action, ActionId::kModifyMachineType);
  EXPECT_EQ(agent.act(state_of(rng), rng).action, ActionId::kModifyMachineType);

  agent.q_net().layers.back().bias[5] = 1.0;
  EXPECT_EQ(agent.select(state_of(rng), rng).action, ActionId::kAddSectionStrings);
}

// One parameter acting as a table entry: SGD with lr alpha on 0.5 (Q - y)^2
// is exactly Q <- (1 - alpha) Q + alpha y.
TEST(Dqn, TabularUpdateReproducesHandValue) {
  Rng rng(1);
  auto net = MlpNetwork::create({1, 1}, Activation::kIdentity, Head::kLinear, rng);
  net.layers[0].weights[0] = 0.0;
  net.layers[0].bias[0] = 2.0;
  DqnConfig cfg;
  cfg.state_dim = 1;
  cfg.num_actions = 1;
  cfg.gamma = 0.9;
  cfg.use_adam = false;
  cfg.learning_rate = 0.5;
  DqnAgent agent(cfg, std::move(net));
  const std::vector<Transition> batch = {{{0.0}, ActionId{}, 1.0, {0.0}, false}};
  EXPECT_NEAR(agent.targets(std::vector<const Transition*>{&batch[0]})[0], 2.8, 1e-12);
  agent.update(batch);
  EXPECT_NEAR(agent.q_values(std::vector<double>{0.0})[0], 2.4, 1e-9);
}

TEST(Dqn, ZeroDiscountTerminalTargetsAreRewards) {
  DqnConfig cfg;
  cfg.gamma = 0.0;
  DqnAgent agent(cfg, 9);
  Rng rng(2);
  std::vector<Transition> batch;
  for (int i = 0; i < 8; ++i)
    batch.push_back({state_of(rng), action_from_index(i), rng.uniform(-3, 3), state_of(rng), true});
  std::vector<const Transition*> ptrs;
  for (const auto& t : batch) ptrs.push_back(&t);
  const auto y = agent.targets(ptrs);
  for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(y[i], batch[i].reward);
}

TEST(Dqn, TargetUsesFrozenNetUntilSync) {
  DqnConfig cfg;
  cfg.sync_interval = 3;
  DqnAgent agent(cfg, 4);
  Rng rng(3);
  std::vector<Transition> batch = {{state_of(rng), ActionId::kPadOverlay, 1.0, state_of(rng), false}};
  const auto frozen = agent.target_net();
  agent.update(batch);
  agent.update(batch);
  EXPECT_EQ(agent.target_net(), frozen);
  EXPECT_NE(agent.q_net(), frozen);
  agent.update(batch);
  EXPECT_EQ(agent.target_net(), agent.q_net());
  EXPECT_EQ(agent.updates(), 3u);
}

TEST(Dqn, RepeatedUpdatesShrinkTdError) {
  DqnConfig cfg;
  cfg.sync_interval = 0;
  cfg.gamma = 0.5;
  DqnAgent agent(cfg, 6);
  Rng rng(4);
  std::vector<Transition> batch;
  for (int i = 0; i < 16; ++i)
    batch.push_back({state_of(rng), action_from_index(i), rng.uniform(0, 1), state_of(rng), i % 4 == 0});
  std::vector<double> losses;
  for (int i = 0; i < 100; ++i) losses.push_back(agent.update(batch));
  // Compare consecutive 10-step means.
  for (int w = 1; w < 10; ++w) {
    const double prev = std::accumulate(losses.begin() + (w - 1) * 10, losses.begin() + w * 10, 0.0);
    const double cur = std::accumulate(losses.begin() + w * 10, losses.begin() + (w + 1) * 10, 0.0);
    EXPECT_LT(cur, prev) << "window " << w;
  }
  EXPECT_LT(losses.back(), 0.1 * losses.front());
}

TEST(Dqn, EpsilonDecaysLinearlyOverConfiguredFraction) {
  DqnAgent agent(DqnConfig{}, 1);
  agent.begin_training(100);
  EXPECT_EQ(agent.epsilon(), 1.0);
  for (int i = 0; i < 25; ++i) agent.end_episode({});
  EXPECT_NEAR(agent.epsilon(), 1.0 - 0.95 * 0.5, 1e-12);
  for (int i = 0; i < 25; ++i) agent.end_episode({});
  EXPECT_NEAR(agent.epsilon(), 0.05, 1e-12);
  for (int i = 0; i < 50; ++i) agent.end_episode({});
  EXPECT_NEAR(agent.epsilon(), 0.05, 1e-12);
}

// Each context has one rewarded action; with gamma = 0 the Q-values are plain
// reward regressions.
TEST(Dqn, ContextualBanditConverges) {
  DqnConfig cfg;
  cfg.gamma = 0.0;
  cfg.state_dim = 8;
  cfg.hidden = 16;
  cfg.learning_rate = 5e-3;
  DqnAgent agent(cfg, 11);
  Rng rng(12);
  std::vector<std::vector<double>> contexts;
  for (int i = 0; i < 4; ++i) contexts.push_back(state_of(rng, 8));
  auto best = [](std::size_t ctx) { return action_from_index(static_cast<int>(3 * ctx + 1)); };
  agent.begin_training(2000);
  for (int ep = 0; ep < 2000; ++ep) {
    const auto c = static_cast<std::size_t>(ep % 4);
    const auto a = agent.select(contexts[c], rng).action;
    agent.observe({contexts[c], a, a == best(c) ? 1.0 : 0.0, contexts[c], true}, rng);
    agent.end_episode({});
  }
  int right = 0;
  for (int i = 0; i < 400; ++i) {
    const auto c = static_cast<std::size_t>(i % 4);
    right += agent.act(contexts[c], rng).action == best(c) ? 1 : 0;
  }
  EXPECT_GE(right, 380);
}

TEST(Dqn, CheckpointRoundTrip) {
  DqnAgent agent(DqnConfig{}, 21);
  agent.begin_training(10);
  agent.end_episode({});
  const auto bytes = agent.checkpoint();
  const auto loaded = DqnAgent::from_checkpoint(bytes);
  EXPECT_EQ(loaded.q_net(), agent.q_net());
  EXPECT_EQ(loaded.target_net(), agent.target_net());
  EXPECT_EQ(loaded.epsilon(), agent.epsilon());
  EXPECT_EQ(loaded.checkpoint(), bytes);
  EXPECT_EQ(agent_from_checkpoint(bytes)->kind(), AgentKind::kDqn);
  EXPECT_THROW(ReinforceAgent::from_checkpoint(bytes), FormatError);
}

TEST(Reinforce, ZeroPolicyIsUniformWithExactLogProb) {
  ReinforceAgent agent(ReinforceConfig{}, 3);
  zero(agent.policy());
  Rng rng(4);
  const auto s = state_of(rng);
  for (double p : agent.probabilities(s)) EXPECT_DOUBLE_EQ(p, 1.0 / 16);
  const auto c = agent.select(s, rng);
  ASSERT_TRUE(c.log_prob.has_value());
  EXPECT_NEAR(*c.log_prob, std::log(1.0 / 16), 1e-12);
  EXPECT_NEAR(*c.log_prob, -2.7726, 1e-4);
}

TEST(Reinforce, LogProbMatchesSoftmaxEntry) {
  ReinforceAgent agent(ReinforceConfig{}, 5);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const auto s = state_of(rng);
    const auto p = agent.probabilities(s);
    const auto c = agent.select(s, rng);
    EXPECT_NEAR(std::exp(*c.log_prob), p[static_cast<std::size_t>(index_of(c.action))], 1e-9);
  }
}

TEST(Reinforce, SampledFrequenciesMatchPolicy) {
  ReinforceAgent agent(ReinforceConfig{}, 7);
  // Skew the policy so the test is not trivially uniform.
  auto& bias = agent.policy().layers.back().bias;
  for (std::size_t i = 0; i < 16; ++i) bias[i] = 0.2 * static_cast<double>(i % 5);
  Rng rng(8);
  const auto s = state_of(rng);
  const auto p = agent.probabilities(s);
  const int n = 10000;
  std::vector<int> counts(16, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(index_of(agent.select(s, rng).action))];
  for (std::size_t a = 0; a < 16; ++a) {
    const double sigma = std::sqrt(n * p[a] * (1 - p[a]));
    EXPECT_LE(std::abs(counts[a] - n * p[a]), 3 * sigma) << "action " << a;
  }
}

TEST(Reinforce, DiscountedReturns) {
  EXPECT_EQ(discounted_returns(std::vector<double>{0, 0, 10}, 1.0), (std::vector<double>{10, 10, 10}));
  const auto g = discounted_returns(std::vector<double>{1, 0, 2}, 0.5);
  EXPECT_DOUBLE_EQ(g[2], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 1.0);
  EXPECT_DOUBLE_EQ(g[0], 1.5);
  EXPECT_TRUE(discounted_returns({}, 0.9).empty());
}

TEST(Reinforce, ZeroRewardsLeaveParametersUnchanged) {
  for (auto baseline : {Baseline::kNone, Baseline::kRolloutMean, Baseline::kRunningMean}) {
    ReinforceConfig cfg;
    cfg.baseline = baseline;
    ReinforceAgent agent(cfg, 9);
    const auto before = agent.policy();
    Rng rng(1);
    EpisodeRollout rollout;
    for (int t = 0; t < 5; ++t) rollout.push_back({state_of(rng), action_from_index(t), 0.0});
    agent.end_episode(rollout);
    EXPECT_EQ(agent.policy(), before);
  }
}

TEST(Reinforce, BaselinesShiftReturns) {
  Rng rng(1);
  EpisodeRollout rollout;
  for (double r : {0.0, 0.0, 10.0}) rollout.push_back({state_of(rng), ActionId::kPadOverlay, r});
  ReinforceConfig cfg;
  cfg.gamma = 1.0;
  cfg.baseline = Baseline::kNone;
  EXPECT_EQ(ReinforceAgent(cfg, 1).advantages(rollout), (std::vector<double>{10, 10, 10}));
  cfg.baseline = Baseline::kRolloutMean;
  EXPECT_EQ(ReinforceAgent(cfg, 1).advantages(rollout), (std::vector<double>{0, 0, 0}));
  cfg.baseline = Baseline::kRunningMean;
  cfg.baseline_rate = 0.5;
  ReinforceAgent running(cfg, 1);
  EXPECT_EQ(running.advantages(rollout), (std::vector<double>{10, 10, 10}));
  running.end_episode(rollout);
  EXPECT_DOUBLE_EQ(running.running_baseline(), 5.0);
  EXPECT_EQ(running.advantages(rollout), (std::vector<double>{5, 5, 5}));
}

// Central differences of sum_t log pi(a_t|s_t) * A_t, advantages held fixed.
TEST(Reinforce, SurrogateGradientMatchesFiniteDifferences) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    ReinforceConfig cfg;
    cfg.state_dim = 6;
    cfg.hidden = 5;
    cfg.gamma = 0.9;
    cfg.baseline = Baseline::kNone;
    ReinforceAgent agent(cfg, 100 + static_cast<std::uint64_t>(trial));
    for (auto& b : agent.policy().layers[0].bias.span()) b = rng.uniform(-0.5, 0.5);
    EpisodeRollout rollout;
    for (int t = 0; t < 4; ++t)
      rollout.push_back({state_of(rng, 6), action_from_index(static_cast<int>(rng.below(16))), rng.uniform(-1, 2)});

    const auto analytic = flatten(agent.surrogate_gradient(rollout));
    auto params = parameters(agent.policy());
    ASSERT_EQ(params.size(), analytic.size());
    const double h = 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = *params[i];
      *params[i] = saved + h;
      const double up = agent.surrogate_objective(rollout);
      *params[i] = saved - h;
      const double down = agent.surrogate_objective(rollout);
      *params[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
      if (scale < 1e-7) {
        EXPECT_NEAR(analytic[i], numeric, 1e-8);
      } else {
        EXPECT_LE(std::abs(analytic[i] - numeric) / scale, 1e-3) << "trial " << trial << " param " << i;
      }
    }
  }
}

// Two actions, one state: A pays 1, B pays 0. A one-step episode has a
// zero rollout-mean advantage, so the literal estimator is used here.
TEST(Reinforce, BanditConverges) {
  for (auto baseline : {Baseline::kNone, Baseline::kRunningMean}) {
    ReinforceConfig cfg;
    cfg.state_dim = 4;
    cfg.hidden = 8;
    cfg.num_actions = 2;
    cfg.learning_rate = 1e-2;
    cfg.baseline = baseline;
    ReinforceAgent agent(cfg, 13);
    Rng rng(14);
    const std::vector<double> s = {0.3, 0.6, 0.1, 0.9};
    for (int ep = 0; ep < 500; ++ep) {
      const auto a = agent.select(s, rng).action;
      agent.end_episode({{s, a, a == ActionId{0} ? 1.0 : 0.0}});
    }
    EXPECT_GT(agent.probabilities(s)[0], 0.9) << to_string(baseline);
  }
}

TEST(Reinforce, GreedyEvalTakesArgmax) {
  ReinforceConfig cfg;
  cfg.greedy_eval = true;
  ReinforceAgent agent(cfg, 15);
  zero(agent.policy());
  agent.policy().layers.back().bias[9] = 0.5;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(agent.act(state_of(rng), rng).action, ActionId::kRenameSection);
}

TEST(Reinforce, CheckpointRoundTrip) {
  ReinforceAgent agent(ReinforceConfig{}, 16);
  Rng rng(2);
  agent.end_episode({{state_of(rng), ActionId::kAddImports, 3.0}});
  const auto bytes = agent.checkpoint();
  const auto loaded = ReinforceAgent::from_checkpoint(bytes);
  EXPECT_EQ(loaded.policy(), agent.policy());
  EXPECT_EQ(loaded.running_baseline(), agent.running_baseline());
  EXPECT_EQ(loaded.checkpoint(), bytes);
  EXPECT_EQ(agent_from_checkpoint(bytes)->kind(), AgentKind::kReinforce);
}

TEST(Reinforce, ConfigValidation) {
  ReinforceConfig cfg;
  cfg.baseline_rate = 0.0;
  EXPECT_THROW(ReinforceAgent(cfg, 1), ConfigError);
  cfg = {};
  cfg.gamma = 1.5;
  EXPECT_THROW(ReinforceAgent(cfg, 1), ConfigError);
  DqnConfig d;
  d.epsilon_min = 0.5;
  d.epsilon_start = 0.1;
  EXPECT_THROW(DqnAgent(d, 1), ConfigError);
}

TEST(RandomAgentTest, UniformAndDeterministic) {
  RandomAgent agent;
  Rng rng(17);
  std::vector<int> counts(16, 0);
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(index_of(agent.act({}, rng).action))];
  EXPECT_LT(chi_square_uniform(counts), kChi2_15_999);

  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(random_select(a), random_select(b));
  EXPECT_EQ(agent_from_checkpoint(agent.checkpoint())->kind(), AgentKind::kRandom);
}
