#include "evlab/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evlab/byte_io.hpp"
#include "evlab/error.hpp"

namespace evlab {

namespace {

constexpr std::uint32_t kAgentVersion = 1;

Optimizer make_optimizer(bool adam, double lr) { return adam ? Optimizer::adam(lr) : Optimizer::sgd(lr); }

void write_header(ByteWriter& w, AgentKind kind, double epsilon, double gamma, std::uint64_t episodes) {
  w.raw("SBAG");
  w.u32(kAgentVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.f64(epsilon);
  w.f64(gamma);
  w.u64(episodes);
}

struct Header {
  AgentKind kind;
  double epsilon;
  double gamma;
  std::uint64_t episodes;
};

Header read_header(ByteReader& r) {
  if (r.str(4) != "SBAG") throw FormatError("bad agent magic");
  if (r.u32() != kAgentVersion) throw FormatError("unsupported agent version");
  const auto kind = r.u8();
  if (kind > 2) throw FormatError("bad agent kind");
  Header h{static_cast<AgentKind>(kind), r.f64(), r.f64(), r.u64()};
  return h;
}

double log_softmax_at(std::span<const double> logits, std::size_t a) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - m);
  return logits[a] - m - std::log(total);
}

}  // namespace

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kDqn: return "dqn";
    case AgentKind::kReinforce: return "reinforce";
    case AgentKind::kRandom: return "random";
  }
  return "?";
}

AgentKind agent_kind_from_string(const std::string& s) {
  if (s == "dqn") return AgentKind::kDqn;
  if (s == "reinforce") return AgentKind::kReinforce;
  if (s == "random") return AgentKind::kRandom;
  throw ConfigError("unknown agent kind '" + s + "'");
}

std::string to_string(Baseline baseline) {
  switch (baseline) {
    case Baseline::kNone: return "none";
    case Baseline::kRolloutMean: return "rollout-mean";
    case Baseline::kRunningMean: return "running-mean";
  }
  return "?";
}

Baseline baseline_from_string(const std::string& s) {
  if (s == "none") return Baseline::kNone;
  if (s == "rollout-mean") return Baseline::kRolloutMean;
  if (s == "running-mean") return Baseline::kRunningMean;
  throw ConfigError("unknown baseline '" + s + "'");
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// ---------------------------------------------------------------- replay

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be > 0");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[rng.below(items_.size())]);
  return out;
}

// ---------------------------------------------------------------- DQN

DqnAgent::DqnAgent(const DqnConfig& config, std::uint64_t seed)
    : DqnAgent(config, [&] {
        Rng rng(seed);
        return MlpNetwork::create({config.state_dim, config.hidden, config.num_actions}, Activation::kRelu,
                                  Head::kLinear, rng);
      }()) {}

DqnAgent::DqnAgent(const DqnConfig& config, MlpNetwork q_net)
    : config_(config),
      q_net_(std::move(q_net)),
      target_net_(q_net_),
      optimizer_(make_optimizer(config.use_adam, config.learning_rate)),
      replay_(config.replay_capacity),
      epsilon_(config.epsilon_start),
      grads_(Gradients::zeros_like(q_net_)) {
  q_net_.check_shapes();
  if (q_net_.output_dim() != config.num_actions || config.num_actions > static_cast<std::size_t>(kNumActions))
    throw ConfigError("Q-network output must match the action count (at most 16)");
  if (config.gamma < 0.0 || config.gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
  if (config.epsilon_min > config.epsilon_start) throw ConfigError("epsilon_min must not exceed epsilon_start");
}

void DqnAgent::begin_training(int total_episodes) {
  decay_episodes_ = static_cast<int>(std::ceil(config_.epsilon_decay_fraction * total_episodes));
  episodes_ = 0;
  refresh_epsilon();
}

void DqnAgent::refresh_epsilon() {
  if (decay_episodes_ <= 0) {
    epsilon_ = config_.epsilon_min;
    return;
  }
  const double frac = std::min(1.0, static_cast<double>(episodes_) / decay_episodes_);
  epsilon_ = config_.epsilon_start - (config_.epsilon_start - config_.epsilon_min) * frac;
}

std::vector<double> DqnAgent::q_values(std::span<const double> state) const { return forward(q_net_, state); }

ActionChoice DqnAgent::select(std::span<const double> state, Rng& rng) {
  if (rng.uniform() < epsilon_) return {static_cast<ActionId>(rng.below(config_.num_actions)), {}};
  return {static_cast<ActionId>(argmax_lowest(q_values(state))), {}};
}

ActionChoice DqnAgent::act(std::span<const double> state, Rng& /*rng*/) const {
  return {static_cast<ActionId>(argmax_lowest(q_values(state))), {}};
}

std::vector<double> DqnAgent::targets(std::span<const Transition* const> batch) const {
  const MlpNetwork& bootstrap = config_.sync_interval > 0 ? target_net_ : q_net_;
  std::vector<double> y;
  y.reserve(batch.size());
  for (const auto* t : batch) {
    double target = t->reward;
    if (!t->terminal && config_.gamma > 0.0) {
      const auto next = forward(bootstrap, std::span<const double>(t->next_state));
      target += config_.gamma * *std::max_element(next.begin(), next.end());
    }
    y.push_back(target);
  }
  return y;
}

double DqnAgent::update(std::span<const Transition* const> batch) {
  if (batch.empty()) throw std::invalid_argument("empty DQN batch");
  const auto y = targets(batch);
  grads_.set_zero();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> g(config_.num_actions, 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto* t = batch[k];
    forward_cached(q_net_, t->state, cache_);
    const auto a = static_cast<std::size_t>(index_of(t->action));
    const double err = cache_.output[a] - y[k];
    loss += 0.5 * err * err * inv_n;
    std::fill(g.begin(), g.end(), 0.0);
    g[a] = err * inv_n;
    backward_logits(q_net_, cache_, g, grads_);
  }
  optimizer_.step(q_net_, grads_);
  ++updates_;
  if (config_.sync_interval > 0 && updates_ % config_.sync_interval == 0) sync_target();
  return loss;
}

double DqnAgent::update(const std::vector<Transition>& batch) {
  std::vector<const Transition*> ptrs;
  for (const auto& t : batch) ptrs.push_back(&t);
  return update(std::span<const Transition* const>(ptrs));
}

void DqnAgent::observe(const Transition& transition, Rng& rng) {
  replay_.push(transition);
  if (replay_.size() < std::max<std::size_t>(config_.learn_start, 1)) return;
  const auto batch = replay_.sample(config_.batch_size, rng);
  update(std::span<const Transition* const>(batch));
}

void DqnAgent::end_episode(const EpisodeRollout& /*rollout*/) {
  ++episodes_;
  refresh_epsilon();
}

std::vector<std::uint8_t> DqnAgent::checkpoint() const {
  ByteWriter w;
  write_header(w, AgentKind::kDqn, epsilon_, config_.gamma, episodes_);
  write_network(w, q_net_);
  write_network(w, target_net_);
  return w.take();
}

DqnAgent DqnAgent::from_checkpoint(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  const auto h = read_header(r);
  if (h.kind != AgentKind::kDqn) throw FormatError("not a DQN checkpoint");
  auto q = read_network(r);
  auto target = read_network(r);
  DqnConfig cfg;
  cfg.state_dim = q.input_dim();
  cfg.hidden = q.layers.size() > 1 ? q.layers.front().out() : 0;
  cfg.num_actions = q.output_dim();
  cfg.gamma = h.gamma;
  DqnAgent agent(cfg, std::move(q));
  agent.target_net_ = std::move(target);
  agent.epsilon_ = h.epsilon;
  agent.episodes_ = h.episodes;
  return agent;
}

// ---------------------------------------------------------------- REINFORCE

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

ReinforceAgent::ReinforceAgent(const ReinforceConfig& config, std::uint64_t seed)
    : ReinforceAgent(config, [&] {
        Rng rng(seed);
        return MlpNetwork::create({config.state_dim, config.hidden, config.num_actions}, Activation::kRelu,
                                  Head::kSoftmax, rng);
      }()) {}

ReinforceAgent::ReinforceAgent(const ReinforceConfig& config, MlpNetwork policy)
    : config_(config), policy_(std::move(policy)), optimizer_(make_optimizer(config.use_adam, config.learning_rate)) {
  policy_.check_shapes();
  if (policy_.head != Head::kSoftmax) throw ConfigError("policy network needs a softmax head");
  if (!(config.baseline_rate > 0.0 && config.baseline_rate <= 1.0)) throw ConfigError("baseline_rate must lie in (0, 1]");
  if (policy_.output_dim() != config.num_actions || config.num_actions > static_cast<std::size_t>(kNumActions))
    throw ConfigError("policy output must match the action count (at most 16)");
  if (config.gamma < 0.0 || config.gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
}

std::vector<double> ReinforceAgent::probabilities(std::span<const double> state) const {
  return forward(policy_, state);
}

ActionChoice ReinforceAgent::sample(std::span<const double> state, Rng& rng) const {
  ForwardCache cache;
  forward_cached(policy_, state, cache);
  const auto& p = cache.output;
  const double u = rng.uniform();
  double cdf = 0.0;
  std::size_t a = p.size() - 1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cdf += p[i];
    if (u < cdf) {
      a = i;
      break;
    }
  }
  return {static_cast<ActionId>(a), log_softmax_at(cache.logits, a)};
}

ActionChoice ReinforceAgent::select(std::span<const double> state, Rng& rng) { return sample(state, rng); }

ActionChoice ReinforceAgent::act(std::span<const double> state, Rng& rng) const {
  if (!config_.greedy_eval) return sample(state, rng);
  ForwardCache cache;
  forward_cached(policy_, state, cache);
  const auto a = argmax_lowest(cache.output);
  return {static_cast<ActionId>(a), log_softmax_at(cache.logits, a)};
}

std::vector<double> ReinforceAgent::advantages(const EpisodeRollout& rollout) const {
  std::vector<double> rewards;
  for (const auto& s : rollout) rewards.push_back(s.reward);
  auto g = discounted_returns(rewards, config_.gamma);
  if (config_.baseline == Baseline::kRolloutMean && !g.empty()) {
    double mean = 0.0;
    for (double x : g) mean += x;
    mean /= static_cast<double>(g.size());
    for (auto& x : g) x -= mean;
  } else if (config_.baseline == Baseline::kRunningMean) {
    for (auto& x : g) x -= running_baseline_;
  }
  return g;
}

double ReinforceAgent::surrogate_objective(const EpisodeRollout& rollout) const {
  const auto adv = advantages(rollout);
  double j = 0.0;
  ForwardCache cache;
  for (std::size_t t = 0; t < rollout.size(); ++t) {
    forward_cached(policy_, rollout[t].state, cache);
    j += log_softmax_at(cache.logits, static_cast<std::size_t>(index_of(rollout[t].action))) * adv[t];
  }
  return j;
}

Gradients ReinforceAgent::surrogate_gradient(const EpisodeRollout& rollout) const {
  const auto adv = advantages(rollout);
  auto grads = Gradients::zeros_like(policy_);
  ForwardCache cache;
  std::vector<double> g(config_.num_actions);
  for (std::size_t t = 0; t < rollout.size(); ++t) {
    if (adv[t] == 0.0) continue;
    forward_cached(policy_, rollout[t].state, cache);
    const auto a = static_cast<std::size_t>(index_of(rollout[t].action));
    // d log softmax_a / d logits = e_a - pi
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = adv[t] * ((i == a ? 1.0 : 0.0) - cache.output[i]);
    backward_logits(policy_, cache, g, grads);
  }
  return grads;
}

void ReinforceAgent::update(const EpisodeRollout& rollout) {
  if (rollout.empty()) return;
  const auto adv = advantages(rollout);
  if (std::all_of(adv.begin(), adv.end(), [](double a) { return a == 0.0; })) return;
  auto grads = surrogate_gradient(rollout);
  grads.scale(-1.0);  // the optimizer descends
  optimizer_.step(policy_, grads);
}

void ReinforceAgent::end_episode(const EpisodeRollout& rollout) {
  update(rollout);
  ++episodes_;
  if (config_.baseline == Baseline::kRunningMean && !rollout.empty()) {
    std::vector<double> rewards;
    for (const auto& s : rollout) rewards.push_back(s.reward);
    const auto g = discounted_returns(rewards, config_.gamma);
    double mean = 0.0;
    for (double x : g) mean += x;
    mean /= static_cast<double>(g.size());
    running_baseline_ += config_.baseline_rate * (mean - running_baseline_);
  }
}

std::vector<std::uint8_t> ReinforceAgent::checkpoint() const {
  ByteWriter w;
  write_header(w, AgentKind::kReinforce, 0.0, config_.gamma, episodes_);
  w.u8(static_cast<std::uint8_t>(config_.baseline));
  w.u8(config_.greedy_eval ? 1 : 0);
  w.f64(config_.baseline_rate);
  w.f64(running_baseline_);
  write_network(w, policy_);
  return w.take();
}

ReinforceAgent ReinforceAgent::from_checkpoint(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  const auto h = read_header(r);
  if (h.kind != AgentKind::kReinforce) throw FormatError("not a REINFORCE checkpoint");
  ReinforceConfig cfg;
  const auto baseline = r.u8();
  if (baseline > 2) throw FormatError("bad baseline kind");
  cfg.baseline = static_cast<Baseline>(baseline);
  cfg.greedy_eval = r.u8() != 0;
  cfg.baseline_rate = r.f64();
  const double running = r.f64();
  auto policy = read_network(r);
  cfg.state_dim = policy.input_dim();
  cfg.hidden = policy.layers.size() > 1 ? policy.layers.front().out() : 0;
  cfg.num_actions = policy.output_dim();
  cfg.gamma = h.gamma;
  ReinforceAgent agent(cfg, std::move(policy));
  agent.episodes_ = h.episodes;
  agent.running_baseline_ = running;
  return agent;
}

// ---------------------------------------------------------------- random

ActionId random_select(Rng& rng) { return static_cast<ActionId>(rng.below(kNumActions)); }

std::vector<std::uint8_t> RandomAgent::checkpoint() const {
  ByteWriter w;
  write_header(w, AgentKind::kRandom, 1.0, 0.0, 0);
  return w.take();
}

std::unique_ptr<Agent> agent_from_checkpoint(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  switch (read_header(r).kind) {
    case AgentKind::kDqn: return std::make_unique<DqnAgent>(DqnAgent::from_checkpoint(data));
    case AgentKind::kReinforce: return std::make_unique<ReinforceAgent>(ReinforceAgent::from_checkpoint(data));
    case AgentKind::kRandom: return std::make_unique<RandomAgent>();
  }
  throw FormatError("bad agent kind");
}

}  // namespace evlab
