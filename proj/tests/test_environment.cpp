#include <gtest/gtest.h>

#include <numeric>

#include "evlab/environment.hpp"
#include "evlab/features.hpp"
#include "evlab/error.hpp"
#include "support.hpp"

using namespace evlab;
using testkit::TimestampRig;

namespace {

// Donors whose only timestamp is 0, so action 12 always lands on the rig's
// low-score branch.
std::shared_ptr<const DonorDatabase> zero_timestamp_donors() {
  auto d = *testkit::small_donors();
  d.timestamps = {0};
  return std::make_shared<const DonorDatabase>(std::move(d));
}

std::vector<CorpusSample> malicious(int n, std::uint64_t seed) {
  auto corpus = generate_corpus(n, 0, seed);
  for (auto& s : corpus) {
    if (s.binary.timestamp == 0) s.binary.timestamp = 1;
  }
  return corpus;
}

EnvConfig config_for(std::shared_ptr<const ScoringDetector> det, RewardMode mode = RewardMode::kScore) {
  EnvConfig cfg;
  cfg.detector = std::move(det);
  cfg.mode = mode;
  cfg.seed = 99;
  return cfg;
}

EvasionEnvironment rig_env(double threshold, RewardMode mode = RewardMode::kScore, int samples = 4) {
  return EvasionEnvironment(config_for(std::make_shared<TimestampRig>(threshold), mode), malicious(samples, 301),
                            zero_timestamp_donors());
}

}  // namespace

TEST(Reward, ScoreRuleExamples) {
  EXPECT_NEAR(score_reward(0.95, 0.90, 0.8336, 10, SignConvention::kScoreDecrease), 0.05, 1e-12);
  EXPECT_NEAR(score_reward(0.95, 0.90, 0.8336, 10, SignConvention::kScoreIncrease), -0.05, 1e-12);
  EXPECT_EQ(score_reward(0.95, 0.5, 0.8336, 10, SignConvention::kScoreDecrease), 10.0);
  EXPECT_EQ(score_reward(0.95, 0.5, 0.8336, 10, SignConvention::kScoreIncrease), 10.0);
  // The threshold itself still counts as detected.
  EXPECT_NEAR(score_reward(0.9, 0.8336, 0.8336, 10, SignConvention::kScoreDecrease), 0.9 - 0.8336, 1e-12);
  EXPECT_EQ(hard_label_reward(0, 10), 10.0);
  EXPECT_EQ(hard_label_reward(1, 10), 0.0);
}

TEST(Reward, NamesRoundTrip) {
  for (auto m : {RewardMode::kScore, RewardMode::kHardLabel}) EXPECT_EQ(reward_mode_from_string(to_string(m)), m);
  for (auto s : {SignConvention::kScoreDecrease, SignConvention::kScoreIncrease})
    EXPECT_EQ(sign_convention_from_string(to_string(s)), s);
  for (auto o : {Outcome::kEvaded, Outcome::kExhausted, Outcome::kCorrupted})
    EXPECT_EQ(outcome_from_string(to_string(o)), o);
  for (auto k : {StepKind::kApplied, StepKind::kRejected, StepKind::kCorrupted})
    EXPECT_EQ(step_kind_from_string(to_string(k)), k);
  EXPECT_THROW(reward_mode_from_string("soft"), ConfigError);
}

TEST(Environment, StepBeforeResetThrows) {
  auto env = rig_env(0.8336);
  EXPECT_THROW(env.step(ActionId::kPadOverlay), EpisodeFinished);
}

TEST(Environment, ResetReturnsFeaturesOfTheSample) {
  auto env = rig_env(0.8336);
  const auto samples = malicious(4, 301);
  const auto s = env.reset(2);
  const auto fv = extract_features(samples[2].binary);
  EXPECT_EQ(s, std::vector<double>(fv.values.begin(), fv.values.end()));
  EXPECT_EQ(env.current(), samples[2].binary);
  EXPECT_TRUE(env.active());
  EXPECT_EQ(env.sample_id(2), sample_id(samples[2]));
}

TEST(Environment, ScoreDropBelowThresholdPaysTerminalReward) {
  auto env = rig_env(0.8336);
  env.reset(0);
  const auto r = env.step(ActionId::kModifyTimestamp);
  EXPECT_EQ(r.reward, 10.0);
  EXPECT_TRUE(r.terminal);
  ASSERT_TRUE(r.status.has_value());
  EXPECT_EQ(r.status->outcome, Outcome::kEvaded);
  EXPECT_EQ(r.status->steps, 1);
  EXPECT_EQ(r.status->final_value, 0.5);
  EXPECT_TRUE(r.status->digest_preserved);
  EXPECT_EQ(r.record.pre, 0.95);
  EXPECT_EQ(r.record.post, 0.5);
  EXPECT_FALSE(env.active());
  EXPECT_THROW(env.step(ActionId::kPadOverlay), EpisodeFinished);
}

TEST(Environment, ScoreDropAboveThresholdPaysTheDifference) {
  auto env = rig_env(0.4);
  env.reset(0);
  auto r = env.step(ActionId::kModifyTimestamp);
  EXPECT_NEAR(r.reward, 0.45, 1e-12);
  EXPECT_FALSE(r.terminal);

  EnvConfig cfg = config_for(std::make_shared<TimestampRig>(0.4));
  cfg.sign = SignConvention::kScoreIncrease;
  EvasionEnvironment literal(cfg, malicious(1, 301), zero_timestamp_donors());
  literal.reset(0);
  EXPECT_NEAR(literal.step(ActionId::kModifyTimestamp).reward, -0.45, 1e-12);
}

TEST(Environment, HardLabelRewardsOnlyBenignLabel) {
  auto env = rig_env(0.8336, RewardMode::kHardLabel);
  env.reset(0);
  auto r = env.step(ActionId::kPadOverlay);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(r.record.post, 1.0);
  EXPECT_FALSE(r.terminal);
  r = env.step(ActionId::kModifyTimestamp);
  EXPECT_EQ(r.reward, 10.0);
  EXPECT_EQ(r.record.post, 0.0);
  EXPECT_EQ(r.status->outcome, Outcome::kEvaded);
  EXPECT_EQ(r.status->steps, 2);
}

TEST(Environment, HardLabelDetectorOnlySupportsHardLabelMode) {
  Rng rng(1);
  auto net = MlpNetwork::create({kFeatureDim, 1}, Activation::kIdentity, Head::kSigmoid, rng);
  auto inner = std::make_shared<const TrainedDetector>(
      DetectorKind::kFeatureScorer, std::move(net), 0.8336,
      InputScaler{std::vector<double>(kFeatureDim, 0.0), std::vector<double>(kFeatureDim, 1.0)});
  EnvConfig cfg;
  cfg.detector = std::shared_ptr<const LabelingDetector>(std::make_shared<HardLabelDetector>(inner));
  cfg.mode = RewardMode::kScore;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.mode = RewardMode::kHardLabel;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Environment, UnpackOnUnpackedPayloadCorrupts) {
  auto env = rig_env(0.8336);
  env.reset(0);
  const auto r = env.step(ActionId::kUpxUnpack);
  EXPECT_EQ(r.record.kind, StepKind::kCorrupted);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_TRUE(r.terminal);
  EXPECT_EQ(r.status->outcome, Outcome::kCorrupted);
  EXPECT_FALSE(r.status->digest_preserved);
  EXPECT_FALSE(r.record.reason.empty());
}

TEST(Environment, RejectedActionKeepsStateAndScores) {
  auto env = rig_env(0.8336);
  env.reset(0);
  const auto packed = env.step(ActionId::kUpxPack);
  ASSERT_EQ(packed.record.kind, StepKind::kApplied);
  const auto before = env.current();
  const auto r = env.step(ActionId::kUpxPack);
  EXPECT_EQ(r.record.kind, StepKind::kRejected);
  EXPECT_EQ(r.record.reason, "already_packed");
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(r.state, packed.state);
  EXPECT_EQ(r.record.state_digest, packed.record.state_digest);
  EXPECT_EQ(env.current(), before);
}

TEST(Environment, EpisodeEndsExhaustedAfterMaxSteps) {
  EnvConfig cfg = config_for(std::make_shared<TimestampRig>());
  cfg.max_steps = 7;
  cfg.record_states = true;
  EvasionEnvironment env(cfg, malicious(1, 302), zero_timestamp_donors());
  env.reset(0);
  StepResult r;
  for (int t = 0; t < 7; ++t) {
    r = env.step(ActionId::kPadOverlay);
    EXPECT_EQ(r.record.t, t);
    EXPECT_EQ(r.terminal, t == 6);
    ASSERT_TRUE(r.record.state.has_value());
    EXPECT_EQ(r.record.state_digest, state_digest(*r.record.state));
  }
  EXPECT_EQ(r.status->outcome, Outcome::kExhausted);
  EXPECT_EQ(r.status->steps, 7);
  EXPECT_TRUE(r.status->digest_preserved);
}

TEST(Environment, ResetPreconditions) {
  auto env = rig_env(0.8336);
  auto benign = generate_corpus(0, 1, 303)[0];
  EXPECT_THROW(env.reset(benign), PreconditionViolation);

  auto evading = malicious(1, 304)[0];
  evading.binary.timestamp = 0;
  EXPECT_THROW(env.reset(evading), NotInitiallyDetected);
  EXPECT_FALSE(env.active());
}

TEST(Environment, ConfigValidation) {
  EnvConfig cfg = config_for(std::make_shared<TimestampRig>());
  cfg.max_steps = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = config_for(std::make_shared<TimestampRig>());
  cfg.terminal_reward = std::numeric_limits<double>::infinity();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = config_for(nullptr);
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(EvasionEnvironment(config_for(std::make_shared<TimestampRig>()), malicious(1, 1), nullptr),
               ConfigError);
}

TEST(Metrics, IdentitiesHoldOnRandomRuns) {
  auto env = rig_env(0.8336, RewardMode::kScore, 12);
  RandomAgent agent;
  const auto run = run_training(env, agent, 40, 7);
  const auto& m = run.metrics;
  EXPECT_EQ(m.episodes, 40u);
  EXPECT_EQ(m.evaded + m.exhausted + m.corrupted, m.episodes);
  std::uint64_t usage = 0;
  double score = 0, rewards = 0, evade_steps = 0;
  for (const auto& a : m.per_action) {
    usage += a.usage_count;
    score += a.cumulative_score;
  }
  for (const auto& tr : run.traces) {
    EXPECT_EQ(tr.status.steps, static_cast<int>(tr.steps.size()));
    for (const auto& s : tr.steps) rewards += s.reward;
    if (tr.status.outcome == Outcome::kEvaded) evade_steps += tr.status.steps;
  }
  EXPECT_EQ(usage, m.total_steps);
  EXPECT_NEAR(score, rewards, 1e-9);
  EXPECT_DOUBLE_EQ(m.evasion_rate, static_cast<double>(m.evaded) / 40.0);
  if (m.evaded > 0) {
    EXPECT_DOUBLE_EQ(m.avg_steps_to_evade, evade_steps / static_cast<double>(m.evaded));
  }
  EXPECT_EQ(derive_metrics(run.traces, m.skipped), m);
  EXPECT_GT(m.evasion_rate, 0.0);
}

TEST(Metrics, EmptyRun) {
  const auto m = derive_metrics({}, 0);
  EXPECT_EQ(m.episodes, 0u);
  EXPECT_EQ(m.evasion_rate, 0.0);
  EXPECT_EQ(m.avg_steps_to_evade, 0.0);
  auto env = rig_env(0.8336);
  RandomAgent agent;
  EXPECT_EQ(run_training(env, agent, 0, 1).metrics, m);
}

TEST(Harness, SkipsInitiallyUndetectedSamplesOnce) {
  auto samples = malicious(3, 305);
  samples[1].binary.timestamp = 0;
  EvasionEnvironment env(config_for(std::make_shared<TimestampRig>()), samples, zero_timestamp_donors());
  RandomAgent agent;
  const auto train = run_training(env, agent, 10, 3);
  EXPECT_EQ(train.metrics.episodes, 10u);
  EXPECT_EQ(train.skipped_ids, std::vector<std::string>{sample_id(samples[1])});
  EXPECT_EQ(train.metrics.skipped, 1u);
  for (const auto& tr : train.traces) EXPECT_NE(tr.sample_id, sample_id(samples[1]));

  const auto eval = run_evaluation(env, agent, 3);
  EXPECT_EQ(eval.metrics.episodes, 2u);
  EXPECT_EQ(eval.metrics.skipped, 1u);
}

TEST(Harness, AllUndetectedStopsTraining) {
  auto samples = malicious(2, 306);
  for (auto& s : samples) s.binary.timestamp = 0;
  EvasionEnvironment env(config_for(std::make_shared<TimestampRig>()), samples, zero_timestamp_donors());
  RandomAgent agent;
  const auto run = run_training(env, agent, 10, 1);
  EXPECT_EQ(run.metrics.episodes, 0u);
  EXPECT_EQ(run.metrics.skipped, 2u);
}

TEST(Harness, RunsAreDeterministic) {
  auto once = [] {
    auto env = rig_env(0.8336, RewardMode::kScore, 6);
    DqnAgent agent(DqnConfig{}, 5);
    auto train = run_training(env, agent, 12, 8);
    auto eval = run_evaluation(env, agent, 9);
    return std::make_pair(train.traces, eval.traces);
  };
  EXPECT_EQ(once(), once());
}

TEST(Harness, TrainingFeedsEveryStepToTheAgent) {
  class Counting final : public Agent {
   public:
    AgentKind kind() const override { return AgentKind::kRandom; }
    ActionChoice select(std::span<const double> s, Rng& rng) override { return act(s, rng); }
    ActionChoice act(std::span<const double>, Rng&) const override { return {ActionId::kPadOverlay, std::nullopt}; }
    void observe(const Transition& t, Rng&) override {
      ++observed;
      terminals += t.terminal ? 1 : 0;
    }
    void end_episode(const EpisodeRollout& r) override {
      ++episodes;
      rollout_steps += static_cast<int>(r.size());
    }
    std::vector<std::uint8_t> checkpoint() const override { return {}; }
    int observed = 0, terminals = 0, episodes = 0, rollout_steps = 0;
  };
  EnvConfig cfg = config_for(std::make_shared<TimestampRig>());
  cfg.max_steps = 5;
  EvasionEnvironment env(cfg, malicious(3, 307), zero_timestamp_donors());
  Counting agent;
  const auto run = run_training(env, agent, 6, 2);
  EXPECT_EQ(agent.observed, 30);
  EXPECT_EQ(agent.terminals, 6);
  EXPECT_EQ(agent.episodes, 6);
  EXPECT_EQ(agent.rollout_steps, 30);
  EXPECT_EQ(run.metrics.total_steps, 30u);
}

namespace {

/// Score jumps around with the serialized length; threshold sits low so
/// most steps are non-terminal.
class LengthRig final : public ScoringDetector {
 public:
  double score(const SbfBinary& b) const override {
    return 0.6 + 0.4 * static_cast<double>(serialize(b).size() % 101) / 101.0;
  }
  double threshold() const override { return 0.62; }
  std::string name() const override { return "length-rig"; }
};

}  // namespace

TEST(EnvironmentProperties, RewardsAndEvadedEpisodes) {
  auto det = std::make_shared<LengthRig>();
  EnvConfig cfg = config_for(det);
  cfg.max_steps = 15;
  auto samples = generate_corpus(20, 0, 308);
  std::vector<CorpusSample> detected;
  for (auto& s : samples) {
    if (det->score(s.binary) >= det->threshold()) detected.push_back(s);
  }
  ASSERT_GE(detected.size(), 10u);
  EvasionEnvironment env(cfg, detected, testkit::small_donors());
  RandomAgent agent;
  Rng rng(4);
  int evaded = 0;
  for (std::size_t i = 0; i < env.sample_count(); ++i) {
    for (int rep = 0; rep < 5; ++rep) {
      env.reset(i);
      const auto original = behavioral_digest(detected[i].binary);
      for (;;) {
        const auto r = env.step(agent.act({}, rng).action);
        const bool hit_threshold = r.record.kind != StepKind::kCorrupted && r.record.post < det->threshold();
        if (hit_threshold) {
          EXPECT_EQ(r.reward, cfg.terminal_reward);
        } else {
          EXPECT_GE(r.reward, -1.0);
          EXPECT_LE(r.reward, 1.0);
          EXPECT_EQ(r.reward > 0, r.record.post < r.record.pre);
        }
        if (!r.terminal) continue;
        if (r.status->outcome == Outcome::kEvaded) {
          ++evaded;
          EXPECT_EQ(det->label(env.current()), 0);
          EXPECT_EQ(behavioral_digest(env.current()), original);
          EXPECT_TRUE(r.status->digest_preserved);
        }
        break;
      }
    }
  }
  EXPECT_GT(evaded, 0);
}
