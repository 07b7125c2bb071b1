#include "evlab/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "evlab/byte_io.hpp"
#include "evlab/error.hpp"
#include "evlab/features.hpp"
#include "evlab/rng.hpp"

namespace evlab {

namespace {

constexpr std::uint32_t kDetectorVersion = 1;

void write_scoring(ByteWriter& w, const TrainedDetector& d) {
  w.raw("SBDT");
  w.u32(kDetectorVersion);
  w.u8(static_cast<std::uint8_t>(d.kind()));
  w.f64(d.threshold());
  const auto& s = d.scaler();
  w.u32(static_cast<std::uint32_t>(s.mean.size()));
  for (double x : s.mean) w.f64(x);
  for (double x : s.inv_std) w.f64(x);
  write_network(w, d.model());
}

// Reads magic/version/kind; returns the kind.
DetectorKind read_prefix(ByteReader& r) {
  if (r.str(4) != "SBDT") throw FormatError("bad detector magic");
  if (r.u32() != kDetectorVersion) throw FormatError("unsupported detector version");
  const auto kind = r.u8();
  if (kind > 3) throw FormatError("bad detector kind");
  return static_cast<DetectorKind>(kind);
}

TrainedDetector read_scoring_body(ByteReader& r, DetectorKind kind) {
  if (kind == DetectorKind::kHardLabel) throw FormatError("expected a scoring detector");
  const double threshold = r.f64();
  const std::size_t dim = r.u32();
  if (dim != detector_input_dim(kind)) throw FormatError("detector input dim does not match its kind");
  InputScaler s;
  s.mean.resize(dim);
  s.inv_std.resize(dim);
  for (auto& x : s.mean) x = r.f64();
  for (auto& x : s.inv_std) x = r.f64();
  auto net = read_network(r);
  if (net.input_dim() != dim || net.output_dim() != 1 || net.head != Head::kSigmoid)
    throw FormatError("detector network has the wrong shape");
  return {kind, std::move(net), threshold, std::move(s)};
}

}  // namespace

std::string to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::kFeatureScorer: return "feature";
    case DetectorKind::kByteScorer: return "byte";
    case DetectorKind::kImageScorer: return "image";
    case DetectorKind::kHardLabel: return "hard-label";
  }
  return "?";
}

DetectorKind detector_kind_from_string(const std::string& s) {
  if (s == "feature") return DetectorKind::kFeatureScorer;
  if (s == "byte") return DetectorKind::kByteScorer;
  if (s == "image") return DetectorKind::kImageScorer;
  if (s == "hard-label") return DetectorKind::kHardLabel;
  throw ConfigError("unknown detector kind '" + s + "'");
}

double default_threshold(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::kFeatureScorer: return 0.8336;
    case DetectorKind::kByteScorer:
    case DetectorKind::kImageScorer: return 0.50;
    case DetectorKind::kHardLabel: break;
  }
  throw std::invalid_argument("hard-label detectors have no score threshold of their own");
}

std::size_t detector_input_dim(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::kFeatureScorer: return kFeatureDim;
    case DetectorKind::kByteScorer: return 256;
    case DetectorKind::kImageScorer: return kImageSide * kImageSide;
    case DetectorKind::kHardLabel: break;
  }
  throw std::invalid_argument("hard-label detectors take no model input");
}

std::vector<double> detector_input(const SbfBinary& b, DetectorKind kind) {
  return detector_input(b, serialize(b), kind);
}

std::vector<double> detector_input(const SbfBinary& b, std::span<const std::uint8_t> bytes, DetectorKind kind) {
  switch (kind) {
    case DetectorKind::kFeatureScorer: {
      const auto fv = extract_features(b, bytes);
      return {fv.values.begin(), fv.values.end()};
    }
    case DetectorKind::kByteScorer: {
      std::vector<double> h(256, 0.0);
      const auto window = bytes.first(std::min(bytes.size(), kByteScorerWindow));
      for (auto byte : window) h[byte] += 1.0;
      if (!window.empty())
        for (auto& x : h) x /= static_cast<double>(window.size());
      return h;
    }
    case DetectorKind::kImageScorer: {
      std::vector<double> img(kImageSide * kImageSide, 0.0);
      for (std::size_t i = 0; i + 1 < bytes.size(); ++i)
        img[(bytes[i] % kImageSide) * kImageSide + bytes[i + 1] % kImageSide] += 1.0;
      const double peak = *std::max_element(img.begin(), img.end());
      if (peak > 0)
        for (auto& x : img) x /= peak;
      return img;
    }
    case DetectorKind::kHardLabel: break;
  }
  throw std::invalid_argument("detector_input is undefined for hard-label detectors");
}

TrainedDetector::TrainedDetector(DetectorKind kind, MlpNetwork model, double threshold, InputScaler scaler)
    : kind_(kind), model_(std::move(model)), threshold_(threshold), scaler_(std::move(scaler)) {
  if (kind == DetectorKind::kHardLabel) throw std::invalid_argument("a trained detector must be a scoring kind");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  const auto dim = detector_input_dim(kind);
  if (model_.input_dim() != dim || scaler_.mean.size() != dim || scaler_.inv_std.size() != dim)
    throw ShapeMismatch("detector model/scaler does not match input dimension");
}

double TrainedDetector::score_input(std::span<const double> input) const {
  std::vector<double> x(input.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (input[i] - scaler_.mean[i]) * scaler_.inv_std[i];
  return forward(model_, std::span<const double>(x))[0];
}

double TrainedDetector::score(const SbfBinary& binary) const { return score_input(detector_input(binary, kind_)); }

double TrainedDetector::score_serialized(const SbfBinary& binary, std::span<const std::uint8_t> serialized) const {
  return score_input(detector_input(binary, serialized, kind_));
}

TrainedDetector TrainedDetector::with_threshold(double threshold) const {
  return {kind_, model_, threshold, scaler_};
}

bool TrainedDetector::operator==(const TrainedDetector& o) const {
  return kind_ == o.kind_ && model_ == o.model_ && threshold_ == o.threshold_ && scaler_ == o.scaler_;
}

HardLabelDetector::HardLabelDetector(std::shared_ptr<const TrainedDetector> inner) : inner_(std::move(inner)) {
  if (!inner_) throw std::invalid_argument("hard-label wrapper needs a detector");
}

int HardLabelDetector::label(const SbfBinary& binary) const { return inner_->label(binary); }

int HardLabelDetector::label_serialized(const SbfBinary& binary, std::span<const std::uint8_t> serialized) const {
  return inner_->score_serialized(binary, serialized) >= inner_->threshold() ? 1 : 0;
}

std::string HardLabelDetector::name() const { return "hard-label(" + inner_->name() + ")"; }

DetectorKind HardLabelDetector::inner_kind() const { return inner_->kind(); }

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Average ranks over ties.
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw DegenerateCorpus("AUC needs both labels");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

DetectorTrainingResult train_detector(const std::vector<CorpusSample>& corpus, DetectorKind kind,
                                      const DetectorTrainingConfig& cfg, std::uint64_t seed) {
  if (kind == DetectorKind::kHardLabel) throw std::invalid_argument("train the inner scoring detector instead");
  std::vector<std::size_t> mal, ben;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    (corpus[i].label == Label::kMalicious ? mal : ben).push_back(i);
  if (mal.empty() || ben.empty()) throw DegenerateCorpus("corpus must contain both labels");

  Rng rng(seed);
  auto shuffle = [&](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };
  shuffle(mal);
  shuffle(ben);
  std::vector<std::size_t> train, holdout;
  for (auto* group : {&mal, &ben}) {
    auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(group->size())));
    if (cfg.holdout_fraction > 0 && n_hold == 0 && group->size() > 1) n_hold = 1;
    holdout.insert(holdout.end(), group->begin(), group->begin() + static_cast<std::ptrdiff_t>(n_hold));
    train.insert(train.end(), group->begin() + static_cast<std::ptrdiff_t>(n_hold), group->end());
  }
  std::sort(train.begin(), train.end());
  std::sort(holdout.begin(), holdout.end());

  const std::size_t dim = detector_input_dim(kind);
  std::vector<std::vector<double>> inputs(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) inputs[i] = detector_input(corpus[i].binary, kind);

  InputScaler scaler{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (auto i : train)
    for (std::size_t k = 0; k < dim; ++k) scaler.mean[k] += inputs[i][k];
  for (auto& m : scaler.mean) m /= static_cast<double>(train.size());
  for (auto i : train)
    for (std::size_t k = 0; k < dim; ++k) {
      const double d = inputs[i][k] - scaler.mean[k];
      scaler.inv_std[k] += d * d;
    }
  for (auto& s : scaler.inv_std) s = 1.0 / std::sqrt(s / static_cast<double>(train.size()) + 1e-6);
  for (auto& x : inputs)
    for (std::size_t k = 0; k < dim; ++k) x[k] = (x[k] - scaler.mean[k]) * scaler.inv_std[k];

  auto net = MlpNetwork::create({dim, cfg.hidden, 1}, Activation::kRelu, Head::kSigmoid, rng);
  auto opt = Optimizer::adam(cfg.learning_rate);
  auto grads = Gradients::zeros_like(net);
  ForwardCache cache;
  std::vector<std::size_t> order = train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      grads.set_zero();
      for (std::size_t k = start; k < end; ++k) {
        const auto i = order[k];
        forward_cached(net, inputs[i], cache);
        const double y = corpus[i].label == Label::kMalicious ? 1.0 : 0.0;
        const double g = cache.output[0] - y;  // d(cross-entropy)/d(logit)
        backward_logits(net, cache, std::span<const double>(&g, 1), grads);
      }
      grads.scale(1.0 / static_cast<double>(end - start));
      opt.step(net, grads);
    }
  }

  TrainedDetector detector(kind, std::move(net), cfg.threshold.value_or(default_threshold(kind)), std::move(scaler));
  DetectorTrainingResult result{std::move(detector), 0.0, train.size(), holdout.size()};
  if (!holdout.empty()) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (auto i : holdout) {
      scores.push_back(forward(result.detector.model(), std::span<const double>(inputs[i]))[0]);
      labels.push_back(corpus[i].label == Label::kMalicious ? 1 : 0);
    }
    result.holdout_auc = roc_auc(scores, labels);
  }
  return result;
}

std::vector<std::uint8_t> detector_checkpoint(const TrainedDetector& d) {
  ByteWriter w;
  write_scoring(w, d);
  return w.take();
}

std::vector<std::uint8_t> detector_checkpoint(const HardLabelDetector& d) {
  ByteWriter w;
  w.raw("SBDT");
  w.u32(kDetectorVersion);
  w.u8(static_cast<std::uint8_t>(DetectorKind::kHardLabel));
  write_scoring(w, *d.inner_);
  return w.take();
}

TrainedDetector trained_detector_from_checkpoint(std::span<const std::uint8_t> data) {
  try {
    ByteReader r(data);
    auto d = read_scoring_body(r, read_prefix(r));
    if (r.remaining() != 0) throw FormatError("trailing bytes in detector checkpoint");
    return d;
  } catch (const ShapeMismatch& e) {
    throw FormatError(e.what());
  }
}

DetectorRef detector_from_checkpoint(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  const auto kind = read_prefix(r);
  if (kind != DetectorKind::kHardLabel) {
    return std::make_shared<const TrainedDetector>(trained_detector_from_checkpoint(data));
  }
  auto inner = trained_detector_from_checkpoint(r.rest());
  return std::make_shared<const HardLabelDetector>(std::make_shared<const TrainedDetector>(std::move(inner)));
}

}  // namespace evlab
