#include "evlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "evlab/error.hpp"

namespace evlab {

namespace {

constexpr std::uint32_t kNetworkVersion = 1;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void affine(const DenseLayer& layer, std::span<const double> in, std::vector<double>& out) {
  const std::size_t n_out = layer.out(), n_in = layer.in();
  out.resize(n_out);
  const double* w = layer.weights.span().data();
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = layer.bias[o];
    const double* row = w + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

void apply_head(Head head, std::span<const double> logits, std::vector<double>& out) {
  switch (head) {
    case Head::kLinear:
      out.assign(logits.begin(), logits.end());
      return;
    case Head::kSigmoid:
      out.resize(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i) out[i] = sigmoid(logits[i]);
      return;
    case Head::kSoftmax:
      out = softmax(logits);
      return;
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) throw ShapeMismatch("tensor data length does not match shape");
}

Tensor Tensor::vector(std::vector<double> data) {
  const auto n = data.size();
  return Tensor({n}, std::move(data));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

MlpNetwork MlpNetwork::create(std::initializer_list<std::size_t> dims, Activation hidden, Head head, Rng& rng) {
  return create(std::span<const std::size_t>(dims.begin(), dims.size()), hidden, head, rng);
}

MlpNetwork MlpNetwork::create(std::span<const std::size_t> dims, Activation hidden, Head head, Rng& rng) {
  if (dims.size() < 2) throw ShapeMismatch("network needs at least input and output dims");
  MlpNetwork net;
  net.head = head;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto fan_in = dims[l], fan_out = dims[l + 1];
    DenseLayer layer{Tensor({fan_out, fan_in}), Tensor({fan_out}),
                     l + 2 == dims.size() ? Activation::kIdentity : hidden};
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& w : layer.weights.span()) w = rng.uniform(-a, a);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

std::size_t MlpNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

bool MlpNetwork::all_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const DenseLayer& l) { return l.weights.all_finite() && l.bias.all_finite(); });
}

void MlpNetwork::check_shapes() const {
  if (layers.empty()) throw ShapeMismatch("network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weights.rank() != 2 || layer.bias.rank() != 1 || layer.bias.size() != layer.out())
      throw ShapeMismatch("layer " + std::to_string(l) + " has inconsistent weight/bias shapes");
    if (l > 0 && layers[l - 1].out() != layer.in())
      throw ShapeMismatch("layer " + std::to_string(l) + " input does not match previous output");
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - m);
  for (auto& p : out) p /= total;
  return out;
}

void forward_cached(const MlpNetwork& net, std::span<const double> input, ForwardCache& cache) {
  if (net.layers.empty()) throw ShapeMismatch("network has no layers");
  if (input.size() != net.input_dim())
    throw ShapeMismatch("input has " + std::to_string(input.size()) + " values, network expects " +
                        std::to_string(net.input_dim()));
  cache.inputs.resize(net.layers.size());
  cache.inputs[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    auto& dst = l + 1 < net.layers.size() ? cache.inputs[l + 1] : cache.logits;
    affine(layer, cache.inputs[l], dst);
    if (layer.activation == Activation::kRelu)
      for (auto& v : dst) v = std::max(v, 0.0);
  }
  apply_head(net.head, cache.logits, cache.output);
}

std::vector<double> forward(const MlpNetwork& net, std::span<const double> input) {
  ForwardCache cache;
  forward_cached(net, input, cache);
  return std::move(cache.output);
}

Tensor forward(const MlpNetwork& net, const Tensor& input) {
  if (input.rank() == 1) return Tensor::vector(forward(net, input.span()));
  if (input.rank() != 2) throw ShapeMismatch("forward expects a rank-1 or rank-2 tensor");
  const std::size_t n = input.dim(0), in = input.dim(1), out = net.output_dim();
  Tensor result({n, out});
  ForwardCache cache;
  for (std::size_t r = 0; r < n; ++r) {
    forward_cached(net, input.span().subspan(r * in, in), cache);
    std::copy(cache.output.begin(), cache.output.end(), result.span().begin() + static_cast<std::ptrdiff_t>(r * out));
  }
  return result;
}

Gradients Gradients::zeros_like(const MlpNetwork& net) {
  Gradients g;
  for (const auto& l : net.layers) {
    g.weights.emplace_back(l.weights.shape());
    g.biases.emplace_back(l.bias.shape());
  }
  return g;
}

void Gradients::scale(double factor) {
  for (auto& t : weights)
    for (auto& v : t.span()) v *= factor;
  for (auto& t : biases)
    for (auto& v : t.span()) v *= factor;
}

void Gradients::add(const Gradients& other) {
  if (other.weights.size() != weights.size()) throw ShapeMismatch("gradient layer counts differ");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].shape() != other.weights[l].shape() || biases[l].shape() != other.biases[l].shape())
      throw ShapeMismatch("gradient shapes differ");
    for (std::size_t i = 0; i < weights[l].size(); ++i) weights[l][i] += other.weights[l][i];
    for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += other.biases[l][i];
  }
}

void Gradients::set_zero() {
  for (auto& t : weights) std::fill(t.span().begin(), t.span().end(), 0.0);
  for (auto& t : biases) std::fill(t.span().begin(), t.span().end(), 0.0);
}

void backward_logits(const MlpNetwork& net, const ForwardCache& cache, std::span<const double> logit_grad,
                     Gradients& grads) {
  if (logit_grad.size() != net.output_dim() || cache.logits.size() != net.output_dim())
    throw ShapeMismatch("output gradient does not match network output");
  if (grads.weights.size() != net.layers.size()) throw ShapeMismatch("gradient buffer does not match network");

  std::vector<double> delta(logit_grad.begin(), logit_grad.end());
  std::vector<double> prev;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    const auto& in = cache.inputs[l];
    const std::size_t n_out = layer.out(), n_in = layer.in();
    auto gw = grads.weights[l].span();
    auto gb = grads.biases[l].span();
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      double* row = gw.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) row[i] += d * in[i];
    }
    if (l == 0) break;
    prev.assign(n_in, 0.0);
    const double* w = layer.weights.span().data();
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) prev[i] += d * row[i];
    }
    // The input of layer l is the post-activation output of layer l-1.
    if (net.layers[l - 1].activation == Activation::kRelu)
      for (std::size_t i = 0; i < n_in; ++i)
        if (in[i] <= 0.0) prev[i] = 0.0;
    delta.swap(prev);
  }
}

void backward(const MlpNetwork& net, const ForwardCache& cache, std::span<const double> output_grad,
              Gradients& grads) {
  const auto& y = cache.output;
  if (output_grad.size() != y.size()) throw ShapeMismatch("output gradient does not match network output");
  std::vector<double> dz(y.size());
  switch (net.head) {
    case Head::kLinear:
      dz.assign(output_grad.begin(), output_grad.end());
      break;
    case Head::kSigmoid:
      for (std::size_t i = 0; i < y.size(); ++i) dz[i] = output_grad[i] * y[i] * (1.0 - y[i]);
      break;
    case Head::kSoftmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += output_grad[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) dz[i] = y[i] * (output_grad[i] - dot);
      break;
    }
  }
  backward_logits(net, cache, dz, grads);
}

Gradients backward(const MlpNetwork& net, const ForwardCache& cache, std::span<const double> output_grad) {
  auto g = Gradients::zeros_like(net);
  backward(net, cache, output_grad, g);
  return g;
}

Optimizer::Optimizer(Kind kind, double lr, double b1, double b2, double eps)
    : kind_(kind), lr_(lr), beta1_(b1), beta2_(b2), epsilon_(eps) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
}

Optimizer Optimizer::sgd(double learning_rate) { return {Kind::kSgd, learning_rate, 0, 0, 0}; }

Optimizer Optimizer::adam(double learning_rate, double beta1, double beta2, double epsilon) {
  return {Kind::kAdam, learning_rate, beta1, beta2, epsilon};
}

void Optimizer::step(MlpNetwork& net, const Gradients& grads) {
  if (grads.weights.size() != net.layers.size()) throw ShapeMismatch("gradient layer count does not match network");
  std::vector<std::pair<std::span<double>, std::span<const double>>> blocks;
  std::size_t total = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    if (grads.weights[l].shape() != layer.weights.shape() || grads.biases[l].shape() != layer.bias.shape())
      throw ShapeMismatch("gradient shape does not match parameters");
    blocks.emplace_back(layer.weights.span(), grads.weights[l].span());
    blocks.emplace_back(layer.bias.span(), grads.biases[l].span());
    total += layer.weights.size() + layer.bias.size();
  }

  if (kind_ == Kind::kAdam && m_.size() != total) {
    m_.assign(total, 0.0);
    v_.assign(total, 0.0);
    t_ = 0;
  }
  const bool adam = kind_ == Kind::kAdam;
  const std::uint64_t t = t_ + 1;
  const double c1 = adam ? 1.0 - std::pow(beta1_, static_cast<double>(t)) : 1.0;
  const double c2 = adam ? 1.0 - std::pow(beta2_, static_cast<double>(t)) : 1.0;

  // scratch = [new params | new m | new v], committed only if all finite.
  scratch_.resize(adam ? 3 * total : total);
  std::size_t k = 0;
  for (const auto& [param, grad] : blocks) {
    for (std::size_t i = 0; i < param.size(); ++i, ++k) {
      const double g = grad[i];
      if (adam) {
        const double m = beta1_ * m_[k] + (1.0 - beta1_) * g;
        const double v = beta2_ * v_[k] + (1.0 - beta2_) * g * g;
        scratch_[total + k] = m;
        scratch_[2 * total + k] = v;
        scratch_[k] = param[i] - lr_ * (m / c1) / (std::sqrt(v / c2) + epsilon_);
      } else {
        scratch_[k] = param[i] - lr_ * g;
      }
    }
  }
  if (!std::all_of(scratch_.begin(), scratch_.end(), [](double x) { return std::isfinite(x); }))
    throw NonFiniteUpdate("optimizer step would produce non-finite values");

  k = 0;
  for (auto& [param, grad] : blocks)
    for (std::size_t i = 0; i < param.size(); ++i, ++k) param[i] = scratch_[k];
  if (adam) {
    std::copy(scratch_.begin() + static_cast<std::ptrdiff_t>(total), scratch_.begin() + static_cast<std::ptrdiff_t>(2 * total), m_.begin());
    std::copy(scratch_.begin() + static_cast<std::ptrdiff_t>(2 * total), scratch_.end(), v_.begin());
  }
  t_ = t;
}

void write_network(ByteWriter& w, const MlpNetwork& net) {
  net.check_shapes();
  w.raw("SBNN");
  w.u32(kNetworkVersion);
  w.u8(static_cast<std::uint8_t>(net.head));
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    w.u32(static_cast<std::uint32_t>(l.out()));
    w.u32(static_cast<std::uint32_t>(l.in()));
    w.u8(static_cast<std::uint8_t>(l.activation));
    for (double v : l.weights.span()) w.f64(v);
    for (double v : l.bias.span()) w.f64(v);
  }
}

MlpNetwork read_network(ByteReader& r) {
  if (r.str(4) != "SBNN") throw FormatError("bad network magic");
  if (r.u32() != kNetworkVersion) throw FormatError("unsupported network version");
  MlpNetwork net;
  const auto head = r.u8();
  if (head > 2) throw FormatError("bad head kind");
  net.head = static_cast<Head>(head);
  const auto n_layers = r.u32();
  if (n_layers == 0 || n_layers > 64) throw FormatError("bad layer count");
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::size_t out = r.u32(), in = r.u32();
    const auto act = r.u8();
    if (act > 1) throw FormatError("bad activation kind");
    if (out * in > r.remaining() / 8) throw FormatError("truncated network");
    DenseLayer layer{Tensor({out, in}), Tensor({out}), static_cast<Activation>(act)};
    for (auto& v : layer.weights.span()) v = r.f64();
    for (auto& v : layer.bias.span()) v = r.f64();
    net.layers.push_back(std::move(layer));
  }
  try {
    net.check_shapes();
  } catch (const ShapeMismatch& e) {
    throw FormatError(e.what());
  }
  return net;
}

}  // namespace evlab
