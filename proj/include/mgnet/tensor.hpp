#pragma once

#include <span>
#include <vector>

#include "mgnet/types.hpp"

namespace mgnet {

/// Dense height x width x channels array. Storage is channel-planar: each
/// channel is a contiguous row-major height x width plane.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int height, int width, int channels, Real fill = Real(0));
  Tensor(int height, int width, int channels, std::vector<Real> values);

  /// Single-channel tensor from nested rows (row = vertical index).
  static Tensor from_rows(const std::vector<std::vector<Real>>& rows);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }

  /// Element at row i, column j of channel c (all 0-based).
  Real& operator()(int i, int j, int c) { return values_[index(i, j, c)]; }
  Real operator()(int i, int j, int c) const { return values_[index(i, j, c)]; }

  std::span<Real> plane(int c);
  std::span<const Real> plane(int c) const;
  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }

  bool same_shape(const Tensor& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(Real scale);

  bool all_finite() const;

 private:
  std::size_t index(int i, int j, int c) const {
    return (static_cast<std::size_t>(c) * height_ + i) * width_ + j;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<Real> values_;
};

Tensor operator+(Tensor lhs, const Tensor& rhs);
Tensor operator-(Tensor lhs, const Tensor& rhs);
Tensor operator*(Real scale, Tensor t);
Tensor operator-(Tensor t);

/// Largest |a - b| over all entries; shapes must match.
Real max_abs_diff(const Tensor& a, const Tensor& b);
Real max_abs(const Tensor& t);
Real l2_norm(const Tensor& t);

enum class PaddingMode { Zero, Periodic, Reflected };

/// Multichannel (2k+1)x(2k+1) convolution kernel with per-output bias.
///
/// Kernels are center-anchored: tap (p, q) with p, q in [-k, k] multiplies
/// the input sample at (i + p, j + q). p is the vertical (row) offset and q
/// the horizontal (column) offset. Memory order is
/// [out][in][p + k][q + k], so one output/input pair is a contiguous
/// (2k+1)x(2k+1) row-major plane.
struct ConvKernel {
  int k = 0;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<Real> weights;
  std::vector<Real> bias;

  ConvKernel() = default;
  ConvKernel(int half_width, int in, int out);

  /// Single-channel kernel from a (2k+1)x(2k+1) matrix of rows.
  static ConvKernel from_matrix(const std::vector<std::vector<Real>>& rows);
  /// Identity map on `channels` channels with half-width k (center taps 1).
  static ConvKernel identity(int channels, int half_width = 1);

  int window() const { return 2 * k + 1; }
  std::size_t taps() const {
    return static_cast<std::size_t>(window()) * static_cast<std::size_t>(window());
  }

  Real& operator()(int out, int in, int p, int q) {
    return weights[offset(out, in, p, q)];
  }
  Real operator()(int out, int in, int p, int q) const {
    return weights[offset(out, in, p, q)];
  }

  /// Plane of taps for one (out, in) pair.
  std::span<Real> plane(int out, int in);
  std::span<const Real> plane(int out, int in) const;

  ConvKernel negated() const;
  void validate() const;

 private:
  std::size_t offset(int out, int in, int p, int q) const {
    return ((static_cast<std::size_t>(out) * in_channels + in) * window() + (p + k)) *
               window() +
           (q + k);
  }
};

/// Output extent of a stride-s convolution over n samples: ceil(n / s).
constexpr int strided_extent(int n, int stride) { return (n + stride - 1) / stride; }

/// Resolves a possibly out-of-range sample index under a padding mode.
/// Returns -1 when the sample is a zero-padding sample.
int resolve_index(int index, int extent, PaddingMode padding);

/// [theta(f)]_t = sum_i K_{i,t} *_s [f]_i + b_t, with output sampled at
/// rows s*i and columns s*j (0-based).
Tensor conv2d(const Tensor& input, const ConvKernel& kernel, int stride = 1,
              PaddingMode padding = PaddingMode::Zero);

/// Applies one single-channel kernel to every channel independently
/// (group convolution with groups == channels and a shared kernel).
Tensor conv2d_channelwise(const Tensor& input, const ConvKernel& kernel, int stride = 1,
                          PaddingMode padding = PaddingMode::Zero);

/// Adjoint of the zero-padded stride-s conv2d with `kernel`, mapping a
/// kernel.out_channels tensor back to a kernel.in_channels tensor of the
/// given spatial size. The kernel bias is not used.
Tensor conv2d_transpose(const Tensor& input, const ConvKernel& kernel, int stride,
                        int out_height, int out_width);

Tensor relu(const Tensor& input);

/// Windowed maximum over (2k+1)x(2k+1) neighborhoods with zero padding.
Tensor max_pool(const Tensor& input, int k, int stride);

/// Spatial mean of each channel, returned as a 1x1xC tensor.
Tensor global_average(const Tensor& input);

/// Max-shifted normalized exponential.
std::vector<Real> softmax(std::span<const Real> logits);

/// Probabilities are clamped at this value before taking logarithms.
inline constexpr Real kProbabilityFloor = Real(1e-12);

/// sum_i -y_i log p_i with p clamped at kProbabilityFloor.
Real cross_entropy(std::span<const Real> prediction, std::span<const Real> label);

/// Lowest index among tied maxima.
int argmax(std::span<const Real> values);

}  // namespace mgnet
