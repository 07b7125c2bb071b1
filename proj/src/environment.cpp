#include "evlab/environment.hpp"

#include <cmath>

#include "evlab/error.hpp"
#include "evlab/features.hpp"

namespace evlab {

namespace {

const ScoringDetector* scorer_of(const DetectorRef& d) {
  const auto* p = std::get_if<std::shared_ptr<const ScoringDetector>>(&d);
  return p ? p->get() : nullptr;
}

const LabelingDetector* labeler_of(const DetectorRef& d) {
  const auto* p = std::get_if<std::shared_ptr<const LabelingDetector>>(&d);
  return p ? p->get() : nullptr;
}

std::vector<double> features_of(const SbfBinary& b, std::span<const std::uint8_t> serialized) {
  const auto fv = extract_features(b, serialized);
  return {fv.values.begin(), fv.values.end()};
}

}  // namespace

std::string to_string(RewardMode mode) { return mode == RewardMode::kScore ? "score" : "hard-label"; }

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "score") return RewardMode::kScore;
  if (s == "hard-label") return RewardMode::kHardLabel;
  throw ConfigError("unknown reward mode '" + s + "'");
}

std::string to_string(SignConvention sign) {
  return sign == SignConvention::kScoreDecrease ? "score-decrease" : "score-increase";
}

SignConvention sign_convention_from_string(const std::string& s) {
  if (s == "score-decrease") return SignConvention::kScoreDecrease;
  if (s == "score-increase") return SignConvention::kScoreIncrease;
  throw ConfigError("unknown sign convention '" + s + "'");
}

std::string to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kEvaded: return "evaded";
    case Outcome::kExhausted: return "exhausted";
    case Outcome::kCorrupted: return "corrupted";
  }
  return "?";
}

Outcome outcome_from_string(const std::string& s) {
  if (s == "evaded") return Outcome::kEvaded;
  if (s == "exhausted") return Outcome::kExhausted;
  if (s == "corrupted") return Outcome::kCorrupted;
  throw FormatError("unknown outcome '" + s + "'");
}

std::string to_string(StepKind kind) {
  switch (kind) {
    case StepKind::kApplied: return "applied";
    case StepKind::kRejected: return "rejected";
    case StepKind::kCorrupted: return "corrupted";
  }
  return "?";
}

StepKind step_kind_from_string(const std::string& s) {
  if (s == "applied") return StepKind::kApplied;
  if (s == "rejected") return StepKind::kRejected;
  if (s == "corrupted") return StepKind::kCorrupted;
  throw FormatError("unknown step kind '" + s + "'");
}

void EnvConfig::validate() const {
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (!std::isfinite(terminal_reward)) throw ConfigError("terminal reward must be finite");
  const auto* s = scorer_of(detector);
  const auto* l = labeler_of(detector);
  if (s == nullptr && l == nullptr) throw ConfigError("environment needs a detector");
  if (l != nullptr && mode == RewardMode::kScore)
    throw ConfigError("a hard-label detector only supports the hard-label reward mode");
  if (actions.pad_min < 0 || actions.pad_max < actions.pad_min || actions.strings_min < 1 ||
      actions.strings_max < actions.strings_min)
    throw ConfigError("invalid action ranges");
}

double score_reward(double previous, double current, double threshold, double terminal_reward, SignConvention sign) {
  if (current < threshold) return terminal_reward;
  return sign == SignConvention::kScoreDecrease ? previous - current : current - previous;
}

double hard_label_reward(int label, double terminal_reward) { return label == 0 ? terminal_reward : 0.0; }

std::string state_digest(std::span<const double> state) {
  ByteWriter w;
  for (double x : state) w.f64(x);
  const auto bytes = w.take();
  const auto d = sha256(bytes);
  return to_hex(d);
}

// ---------------------------------------------------------------- environment

EvasionEnvironment::EvasionEnvironment(EnvConfig config, std::vector<CorpusSample> samples,
                                       std::shared_ptr<const DonorDatabase> donors)
    : config_(std::move(config)), samples_(std::move(samples)), donors_(std::move(donors)), rng_(config_.seed) {
  config_.validate();
  if (!donors_) throw ConfigError("environment needs a donor database");
}

std::string EvasionEnvironment::sample_id(std::size_t index) const { return evlab::sample_id(samples_.at(index)); }

double EvasionEnvironment::threshold() const {
  if (const auto* s = scorer_of(config_.detector)) return s->threshold();
  return 0.5;
}

double EvasionEnvironment::observe(const SbfBinary& binary) const {
  const auto bytes = serialize(binary);
  return observe(binary, bytes);
}

double EvasionEnvironment::observe(const SbfBinary& binary, std::span<const std::uint8_t> serialized) const {
  if (const auto* s = scorer_of(config_.detector)) {
    const double p = s->score_serialized(binary, serialized);
    if (config_.mode == RewardMode::kScore) return p;
    return p >= s->threshold() ? 1.0 : 0.0;
  }
  return static_cast<double>(labeler_of(config_.detector)->label_serialized(binary, serialized));
}

bool EvasionEnvironment::evades(double value) const {
  if (config_.mode == RewardMode::kScore) return value < threshold();
  return value == 0.0;
}

std::vector<double> EvasionEnvironment::reset(std::size_t index) { return reset(samples_.at(index)); }

std::vector<double> EvasionEnvironment::reset(const CorpusSample& sample) {
  if (sample.label != Label::kMalicious) throw PreconditionViolation("only malicious samples start episodes");
  active_ = false;
  const auto bytes = serialize(sample.binary);
  const double value = observe(sample.binary, bytes);
  if (evades(value)) throw NotInitiallyDetected(evlab::sample_id(sample));

  rng_ = Rng(mix_seed(config_.seed, resets_++));
  current_ = sample.binary;
  original_digest_ = behavioral_digest(current_);
  state_ = features_of(current_, bytes);
  value_ = value;
  t_ = 0;
  active_ = true;
  return state_;
}

StepResult EvasionEnvironment::step(ActionId action) {
  if (!active_) throw EpisodeFinished();
  auto outcome = apply_action(current_, action, *donors_, rng_, config_.actions);

  StepResult out;
  TraceStep& rec = out.record;
  rec.t = t_++;
  rec.action = action;
  rec.detail = std::move(outcome.detail);
  rec.pre = value_;

  if (auto* c = std::get_if<Corrupted>(&outcome.result)) {
    rec.kind = StepKind::kCorrupted;
    rec.reason = c->reason;
    rec.post = value_;
    rec.reward = 0.0;
    out.terminal = true;
    out.status = EpisodeStatus{Outcome::kCorrupted, t_, value_, false};
  } else {
    double reward = 0.0;
    if (auto* a = std::get_if<Applied>(&outcome.result)) {
      rec.kind = StepKind::kApplied;
      current_ = std::move(a->binary);
      const auto bytes = serialize(current_);
      state_ = features_of(current_, bytes);
      value_ = observe(current_, bytes);
    } else {
      rec.kind = StepKind::kRejected;
      rec.reason = std::get<Rejected>(outcome.result).reason;
    }
    if (config_.mode == RewardMode::kScore) {
      reward = score_reward(rec.pre, value_, threshold(), config_.terminal_reward, config_.sign);
    } else {
      reward = hard_label_reward(static_cast<int>(value_), config_.terminal_reward);
    }
    rec.post = value_;
    rec.reward = reward;
    const bool evaded = evades(value_);
    if (evaded || t_ >= config_.max_steps) {
      out.terminal = true;
      EpisodeStatus status{evaded ? Outcome::kEvaded : Outcome::kExhausted, t_, value_, true};
      try {
        status.digest_preserved = behavioral_digest(current_) == original_digest_;
      } catch (const CorruptPayload&) {
        status.digest_preserved = false;
      }
      out.status = status;
    }
  }

  rec.state_digest = state_digest(state_);
  if (config_.record_states) rec.state = state_;
  out.state = state_;
  out.reward = rec.reward;
  if (out.terminal) active_ = false;
  return out;
}

// ---------------------------------------------------------------- metrics

RunMetrics derive_metrics(const std::vector<EpisodeTrace>& traces, std::uint64_t skipped) {
  RunMetrics m;
  m.skipped = skipped;
  std::uint64_t evade_steps = 0;
  for (const auto& tr : traces) {
    ++m.episodes;
    switch (tr.status.outcome) {
      case Outcome::kEvaded:
        ++m.evaded;
        evade_steps += static_cast<std::uint64_t>(tr.status.steps);
        break;
      case Outcome::kExhausted: ++m.exhausted; break;
      case Outcome::kCorrupted: ++m.corrupted; break;
    }
    for (const auto& s : tr.steps) {
      ++m.total_steps;
      auto& a = m.per_action[static_cast<std::size_t>(index_of(s.action))];
      a.cumulative_score += s.reward;
      ++a.usage_count;
    }
  }
  if (m.episodes > 0) m.evasion_rate = static_cast<double>(m.evaded) / static_cast<double>(m.episodes);
  if (m.evaded > 0) m.avg_steps_to_evade = static_cast<double>(evade_steps) / static_cast<double>(m.evaded);
  return m;
}

namespace {

template <typename Choose, typename OnStep>
EpisodeTrace play(Environment& env, std::size_t index, std::vector<double> state, Choose choose, OnStep on_step,
                  EpisodeRollout* rollout) {
  EpisodeTrace trace;
  trace.sample_id = env.sample_id(index);
  for (;;) {
    const ActionId a = choose(state);
    auto r = env.step(a);
    on_step(state, a, r);
    if (rollout) rollout->push_back({std::move(state), a, r.reward});
    trace.steps.push_back(std::move(r.record));
    state = std::move(r.state);
    if (r.terminal) {
      trace.status = *r.status;
      break;
    }
  }
  return trace;
}

}  // namespace

RunResult run_training(Environment& env, Agent& agent, int episodes, std::uint64_t seed) {
  RunResult out;
  const std::size_t n = env.sample_count();
  if (episodes <= 0 || n == 0) {
    out.metrics = derive_metrics(out.traces, 0);
    return out;
  }
  Rng rng(seed);
  agent.begin_training(episodes);
  std::vector<bool> undetected(n, false);
  std::size_t undetected_count = 0;
  std::size_t cursor = 0;
  int done = 0;
  while (done < episodes && undetected_count < n) {
    const std::size_t i = cursor++ % n;
    if (undetected[i]) continue;
    std::vector<double> state;
    try {
      state = env.reset(i);
    } catch (const NotInitiallyDetected&) {
      undetected[i] = true;
      ++undetected_count;
      out.skipped_ids.push_back(env.sample_id(i));
      continue;
    }
    EpisodeRollout rollout;
    auto trace = play(
        env, i, std::move(state), [&](const std::vector<double>& s) { return agent.select(s, rng).action; },
        [&](const std::vector<double>& s, ActionId a, const StepResult& r) {
          agent.observe(Transition{s, a, r.reward, r.state, r.terminal}, rng);
        },
        &rollout);
    agent.end_episode(rollout);
    out.traces.push_back(std::move(trace));
    ++done;
  }
  out.metrics = derive_metrics(out.traces, out.skipped_ids.size());
  return out;
}

RunResult run_evaluation(Environment& env, const Agent& agent, std::uint64_t seed) {
  RunResult out;
  Rng rng(seed);
  for (std::size_t i = 0; i < env.sample_count(); ++i) {
    std::vector<double> state;
    try {
      state = env.reset(i);
    } catch (const NotInitiallyDetected&) {
      out.skipped_ids.push_back(env.sample_id(i));
      continue;
    }
    out.traces.push_back(play(
        env, i, std::move(state), [&](const std::vector<double>& s) { return agent.act(s, rng).action; },
        [](const std::vector<double>&, ActionId, const StepResult&) {}, nullptr));
  }
  out.metrics = derive_metrics(out.traces, out.skipped_ids.size());
  return out;
}

}  // namespace evlab
