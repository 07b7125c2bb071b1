#pragma once

// Small dense networks with exact backpropagation. Everything differentiable
// in the project (detectors, Q-networks, policies) goes through here.

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "evlab/byte_io.hpp"
#include "evlab/rng.hpp"

namespace evlab {

/// Row-major dense array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  /// Throws ShapeMismatch unless product(shape) == data.size().
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor vector(std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1 };
enum class Head : std::uint8_t { kLinear = 0, kSigmoid = 1, kSoftmax = 2 };

struct DenseLayer {
  Tensor weights;  // {out, in}
  Tensor bias;     // {out}
  Activation activation = Activation::kIdentity;

  std::size_t in() const { return weights.dim(1); }
  std::size_t out() const { return weights.dim(0); }
  bool operator==(const DenseLayer&) const = default;
};

struct MlpNetwork {
  std::vector<DenseLayer> layers;
  Head head = Head::kLinear;

  /// dims = {input, hidden..., output}. Hidden layers use `hidden`, the last
  /// layer is affine and feeds the head. Weights are uniform(-a, a) with
  /// a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
  static MlpNetwork create(std::initializer_list<std::size_t> dims, Activation hidden, Head head, Rng& rng);
  static MlpNetwork create(std::span<const std::size_t> dims, Activation hidden, Head head, Rng& rng);

  std::size_t input_dim() const { return layers.front().in(); }
  std::size_t output_dim() const { return layers.back().out(); }
  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Throws ShapeMismatch if adjacent layer dims disagree.
  void check_shapes() const;

  bool operator==(const MlpNetwork&) const = default;
};

/// Activations recorded by a forward pass, needed by backward.
struct ForwardCache {
  std::vector<std::vector<double>> inputs;  // inputs[i] is the input to layer i
  std::vector<double> logits;               // last layer output before the head
  std::vector<double> output;               // after the head
};

/// rank-1 input {in} -> {out}; rank-2 batch {n, in} -> {n, out}.
Tensor forward(const MlpNetwork& net, const Tensor& input);
std::vector<double> forward(const MlpNetwork& net, std::span<const double> input);
void forward_cached(const MlpNetwork& net, std::span<const double> input, ForwardCache& cache);

struct Gradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static Gradients zeros_like(const MlpNetwork& net);
  void scale(double factor);
  void add(const Gradients& other);
  void set_zero();
  bool operator==(const Gradients&) const = default;
};

/// Accumulates d(loss)/d(params) into `grads`, given d(loss)/d(output) where
/// output is the post-head value. Throws ShapeMismatch.
void backward(const MlpNetwork& net, const ForwardCache& cache, std::span<const double> output_grad, Gradients& grads);
Gradients backward(const MlpNetwork& net, const ForwardCache& cache, std::span<const double> output_grad);

/// Same, but the gradient is given with respect to the pre-head logits.
void backward_logits(const MlpNetwork& net, const ForwardCache& cache, std::span<const double> logit_grad,
                     Gradients& grads);

double sigmoid(double x);
std::vector<double> softmax(std::span<const double> logits);

class Optimizer {
 public:
  enum class Kind : std::uint8_t { kSgd = 0, kAdam = 1 };

  static Optimizer sgd(double learning_rate);
  static Optimizer adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  Kind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return t_; }

  /// Descent step: params -= update(grads). Throws NonFiniteUpdate (leaving
  /// the network untouched) if any updated value would be non-finite.
  void step(MlpNetwork& net, const Gradients& grads);

 private:
  Optimizer(Kind kind, double lr, double b1, double b2, double eps);

  Kind kind_;
  double lr_;
  double beta1_;
  double beta2_;
  double epsilon_;
  std::uint64_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
  std::vector<double> scratch_;
};

inline void step(Optimizer& optimizer, MlpNetwork& net, const Gradients& grads) { optimizer.step(net, grads); }

// Deterministic checkpoint layout: "SBNN", u32 version, u8 head, u32 layer
// count, then per layer u32 out, u32 in, u8 activation, out*in f64 weights,
// out f64 biases. All little-endian.
void write_network(ByteWriter& w, const MlpNetwork& net);
MlpNetwork read_network(ByteReader& r);

}  // namespace evlab
