#pragma once

// Reverse-mode differentiation over batched arrays.
//
// A Tape records every primitive as a node holding its value, a forward
// closure that recomputes the value from the input nodes, and a backward
// closure that pushes the node's gradient into its inputs. Nodes are
// appended in evaluation order, so the tape is already topologically sorted.

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mgnet/tensor.hpp"

namespace mgnet::ad {

/// Batch of n samples, each c x h x w, stored [n][c][h][w].
struct Array {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<Real> data;

  Array() = default;
  Array(int n, int c, int h, int w, Real fill = Real(0));

  /// Rank-1..4 parameter dims mapped onto (n, c, h, w): {k} -> (1, k, 1, 1),
  /// {r, s} -> (1, 1, r, s), {a, b, s} -> (1, a, b, s), {o, i, p, q} as is.
  static Array from_dims(const std::vector<int>& dims, std::span<const Real> values);
  static Array from_tensor(const Tensor& t);
  static Array from_tensors(std::span<const Tensor> batch);
  static Array scalar(Real v) { return Array(1, 1, 1, 1, v); }

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  bool same_shape(const Array& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::span<Real> sample(int i) { return std::span<Real>(data).subspan(i * sample_size(), sample_size()); }
  std::span<const Real> sample(int i) const {
    return std::span<const Real>(data).subspan(i * sample_size(), sample_size());
  }
  Tensor to_tensor(int i) const;
  std::string shape_string() const;
};

class Tape;

/// Handle to a tape node. A default-constructed Var is "absent" and is used
/// for optional inputs such as a missing bias.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Array& value() const;
  const Array& grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct Node {
  const char* op = "";
  Array value;
  Array grad;
  std::vector<int> inputs;
  std::function<void(Node&)> forward;   // recompute value from inputs
  std::function<void(Node&)> backward;  // accumulate into inputs' grads
  bool needs_grad = false;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  /// Registers a trainable leaf. Names must be unique within a tape.
  Var parameter(const std::string& name, Array value);
  const std::map<std::string, int>& parameters() const { return params_; }

  /// Gradients of a scalar node with respect to every registered parameter.
  /// Parameters the loss does not depend on receive zero arrays.
  std::map<std::string, Array> backward(const Var& loss);

  /// Recomputes every non-leaf node from the current leaf values.
  void replay();
  /// Replaces a leaf value (same shape); call replay() afterwards.
  void set_value(const Var& leaf, Array value);

  std::size_t size() const { return nodes_.size(); }
  Node& node(int id) { return nodes_.at(id); }
  const Node& node(int id) const { return nodes_.at(id); }

  /// Appends an op node. `forward` is run once immediately.
  Var record(const char* op, std::vector<int> inputs, std::function<void(Node&)> forward,
             std::function<void(Node&)> backward);

  /// Smallest nonzero |input| over all relu nodes (infinity if there are
  /// none). Exact zeros come from relu outputs fed into another relu and
  /// stay zero under small perturbations, so they are not kinks.
  Real relu_margin() const;

 private:
  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
};

// ---- primitives -----------------------------------------------------------

/// Multichannel convolution. `weight` is (out, in, 2k+1, 2k+1); `bias`
/// (1, out, 1, 1) or absent.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, PaddingMode padding);
/// One (1, 1, 2k+1, 2k+1) kernel applied to every channel; bias is a
/// (1, 1, 1, 1) scalar or absent.
Var conv2d_channelwise(const Var& x, const Var& weight, const Var& bias, int stride,
                       PaddingMode padding);
/// Adjoint of the zero-padded stride-s conv2d, mapping out -> in channels
/// onto an out_h x out_w grid.
Var conv2d_transpose(const Var& x, const Var& weight, int stride, int out_h, int out_w);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, Real factor);
/// s * x with a learnable one-element s.
Var scalar_mul(const Var& s, const Var& x);
/// sum_j w_j x_j with a learnable k-element weight vector.
Var weighted_sum(const Var& weights, const std::vector<Var>& terms);
/// omega * a + (1 - omega) * b with a learnable one-element omega.
Var weighted_pair(const Var& omega, const Var& a, const Var& b);
/// Normalized exponential over all entries of a vector node.
Var softmax_vector(const Var& logits);

struct BatchMoments {
  std::vector<Real> mean;
  std::vector<Real> var;  // biased batch variance
};

enum class NormMode { Training, Inference };

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics and, if `moments` is given, reports them there; inference
/// mode uses the supplied running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, NormMode mode,
               std::span<const Real> running_mean, std::span<const Real> running_var,
               Real eps, BatchMoments* moments);

Var max_pool(const Var& x, int k, int stride);
/// (n, c, h, w) -> (n, c, 1, 1).
Var global_avg_pool(const Var& x);
/// Affine head on flattened samples: weight (1, 1, out, features), bias
/// (1, out, 1, 1). Output is (n, out, 1, 1).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);
/// Mean of squared entries.
Var mean_square(const Var& x);
/// Sum of all entries times fixed coefficients of the same shape.
Var dot_const(const Var& x, const Array& coefficients);

/// Central-difference check of backward() for every registered parameter.
/// Errors are norm-wise per parameter: |g - g_fd| / max(|g|, |g_fd|, tiny).
struct GradCheckReport {
  std::map<std::string, Real> relative_error;
  Real worst = 0;
  std::string worst_parameter;
  Real relu_margin = 0;  // as Tape::relu_margin() at the unperturbed point
};
GradCheckReport gradient_check(Tape& tape, const Var& loss, Real step = Real(1e-5));

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);

}  // namespace mgnet::ad
