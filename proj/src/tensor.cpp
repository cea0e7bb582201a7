#include "mgnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mgnet/kernels.hpp"

namespace mgnet {

Tensor::Tensor(int height, int width, int channels, Real fill)
    : height_(height), width_(width), channels_(channels) {
  require(height > 0 && width > 0 && channels > 0,
          "Tensor: extents must be positive, got " + std::to_string(height) + "x" +
              std::to_string(width) + "x" + std::to_string(channels));
  values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Tensor::Tensor(int height, int width, int channels, std::vector<Real> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  require(height > 0 && width > 0 && channels > 0, "Tensor: extents must be positive");
  require(values_.size() == static_cast<std::size_t>(height) * width * channels,
          "Tensor: value count does not match height*width*channels");
}

Tensor Tensor::from_rows(const std::vector<std::vector<Real>>& rows) {
  require(!rows.empty() && !rows.front().empty(), "Tensor::from_rows: empty input");
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.front().size());
  Tensor t(h, w, 1);
  for (int i = 0; i < h; ++i) {
    require(static_cast<int>(rows[i].size()) == w, "Tensor::from_rows: ragged rows");
    for (int j = 0; j < w; ++j) t(i, j, 0) = rows[i][j];
  }
  return t;
}

std::span<Real> Tensor::plane(int c) {
  return std::span<Real>(values_).subspan(static_cast<std::size_t>(c) * plane_size(), plane_size());
}

std::span<const Real> Tensor::plane(int c) const {
  return std::span<const Real>(values_).subspan(static_cast<std::size_t>(c) * plane_size(),
                                                plane_size());
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require(same_shape(other), "Tensor +=: shape mismatch");
  for (std::size_t n = 0; n < values_.size(); ++n) values_[n] += other.values_[n];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require(same_shape(other), "Tensor -=: shape mismatch");
  for (std::size_t n = 0; n < values_.size(); ++n) values_[n] -= other.values_[n];
  return *this;
}

Tensor& Tensor::operator*=(Real scale) {
  for (Real& v : values_) v *= scale;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](Real v) { return std::isfinite(v); });
}

Tensor operator+(Tensor lhs, const Tensor& rhs) { return lhs += rhs; }
Tensor operator-(Tensor lhs, const Tensor& rhs) { return lhs -= rhs; }
Tensor operator*(Real scale, Tensor t) { return t *= scale; }
Tensor operator-(Tensor t) {
  for (Real& v : t.values()) v = -v;
  return t;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  Real worst = 0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t n = 0; n < av.size(); ++n) worst = std::max(worst, std::abs(av[n] - bv[n]));
  return worst;
}

Real max_abs(const Tensor& t) {
  Real worst = 0;
  for (Real v : t.values()) worst = std::max(worst, std::abs(v));
  return worst;
}

Real l2_norm(const Tensor& t) {
  Real acc = 0;
  for (Real v : t.values()) acc += v * v;
  return std::sqrt(acc);
}

ConvKernel::ConvKernel(int half_width, int in, int out)
    : k(half_width), in_channels(in), out_channels(out) {
  require(half_width >= 0, "ConvKernel: negative half-width");
  require(in > 0 && out > 0, "ConvKernel: channel counts must be positive");
  weights.assign(static_cast<std::size_t>(window()) * window() * in * out, Real(0));
  bias.assign(static_cast<std::size_t>(out), Real(0));
}

ConvKernel ConvKernel::from_matrix(const std::vector<std::vector<Real>>& rows) {
  const int w = static_cast<int>(rows.size());
  require(w % 2 == 1, "ConvKernel::from_matrix: window must be odd");
  ConvKernel kernel((w - 1) / 2, 1, 1);
  for (int r = 0; r < w; ++r) {
    require(static_cast<int>(rows[r].size()) == w, "ConvKernel::from_matrix: not square");
    for (int c = 0; c < w; ++c) kernel.weights[static_cast<std::size_t>(r) * w + c] = rows[r][c];
  }
  return kernel;
}

ConvKernel ConvKernel::identity(int channels, int half_width) {
  ConvKernel kernel(half_width, channels, channels);
  for (int c = 0; c < channels; ++c) kernel(c, c, 0, 0) = 1;
  return kernel;
}

std::span<Real> ConvKernel::plane(int out, int in) {
  return std::span<Real>(weights).subspan(offset(out, in, -k, -k), taps());
}

std::span<const Real> ConvKernel::plane(int out, int in) const {
  return std::span<const Real>(weights).subspan(offset(out, in, -k, -k), taps());
}

ConvKernel ConvKernel::negated() const {
  ConvKernel copy = *this;
  for (Real& v : copy.weights) v = -v;
  for (Real& v : copy.bias) v = -v;
  return copy;
}

void ConvKernel::validate() const {
  require(k >= 0 && in_channels > 0 && out_channels > 0, "ConvKernel: invalid geometry");
  require(weights.size() == taps() * in_channels * out_channels,
          "ConvKernel: weight count does not match (2k+1)^2*out*in");
  require(bias.empty() || bias.size() == static_cast<std::size_t>(out_channels),
          "ConvKernel: bias count does not match out_channels");
}

int resolve_index(int index, int extent, PaddingMode padding) {
  if (index >= 0 && index < extent) return index;
  switch (padding) {
    case PaddingMode::Zero:
      return -1;
    case PaddingMode::Periodic:
      return ((index % extent) + extent) % extent;
    case PaddingMode::Reflected: {
      if (extent == 1) return 0;
      // Mirror about the edge samples without repeating them.
      const int period = 2 * (extent - 1);
      int r = ((index % period) + period) % period;
      return r < extent ? r : period - r;
    }
  }
  return -1;
}

namespace {

kernels::ConvGeometry geometry_for(const Tensor& input, const ConvKernel& kernel, int stride,
                                   PaddingMode padding) {
  return kernels::ConvGeometry{kernel.in_channels, kernel.out_channels, input.height(),
                               input.width(),      kernel.k,            stride,
                               padding};
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvKernel& kernel, int stride, PaddingMode padding) {
  require(!input.empty(), "conv2d: empty input");
  require(stride >= 1, "conv2d: stride must be >= 1");
  kernel.validate();
  require(input.channels() == kernel.in_channels,
          "conv2d: input has " + std::to_string(input.channels()) +
              " channels, kernel expects " + std::to_string(kernel.in_channels));
  const auto g = geometry_for(input, kernel, stride, padding);
  Tensor out(g.out_height(), g.out_width(), kernel.out_channels);
  kernels::conv2d_forward(g, input.values(), kernel.weights, kernel.bias, out.values());
  return out;
}

Tensor conv2d_channelwise(const Tensor& input, const ConvKernel& kernel, int stride,
                          PaddingMode padding) {
  require(!input.empty(), "conv2d_channelwise: empty input");
  require(stride >= 1, "conv2d_channelwise: stride must be >= 1");
  kernel.validate();
  require(kernel.in_channels == 1 && kernel.out_channels == 1,
          "conv2d_channelwise: kernel must be single-channel");
  kernels::ConvGeometry g{1, 1, input.height(), input.width(), kernel.k, stride, padding};
  Tensor out(g.out_height(), g.out_width(), input.channels());
  for (int c = 0; c < input.channels(); ++c) {
    kernels::conv2d_forward(g, input.plane(c), kernel.weights, kernel.bias, out.plane(c));
  }
  return out;
}

Tensor conv2d_transpose(const Tensor& input, const ConvKernel& kernel, int stride,
                        int out_height, int out_width) {
  require(!input.empty(), "conv2d_transpose: empty input");
  kernel.validate();
  require(input.channels() == kernel.out_channels,
          "conv2d_transpose: input channels must equal kernel.out_channels");
  kernels::ConvGeometry g{kernel.in_channels, kernel.out_channels, out_height, out_width,
                          kernel.k,           stride,              PaddingMode::Zero};
  require(g.out_height() == input.height() && g.out_width() == input.width(),
          "conv2d_transpose: target size inconsistent with input and stride");
  Tensor out(out_height, out_width, kernel.in_channels);
  kernels::conv2d_backward_input(g, input.values(), kernel.weights, out.values());
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (Real& v : out.values()) v = v > Real(0) ? v : Real(0);
  return out;
}

Tensor max_pool(const Tensor& input, int k, int stride) {
  require(!input.empty(), "max_pool: empty input");
  require(stride >= 1 && k >= 0, "max_pool: invalid window or stride");
  Tensor out(strided_extent(input.height(), stride), strided_extent(input.width(), stride),
             input.channels());
  std::vector<int> where(out.size());
  kernels::max_pool_forward(input.channels(), input.height(), input.width(), k, stride,
                            input.values(), out.values(), where);
  return out;
}

Tensor global_average(const Tensor& input) {
  require(!input.empty(), "global_average: empty input");
  Tensor out(1, 1, input.channels());
  for (int c = 0; c < input.channels(); ++c) {
    Real acc = 0;
    for (Real v : input.plane(c)) acc += v;
    out(0, 0, c) = acc / static_cast<Real>(input.plane_size());
  }
  return out;
}

std::vector<Real> softmax(std::span<const Real> logits) {
  require(!logits.empty(), "softmax: empty logits");
  const Real shift = *std::max_element(logits.begin(), logits.end());
  std::vector<Real> out(logits.size());
  Real total = 0;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    out[n] = std::exp(logits[n] - shift);
    total += out[n];
  }
  for (Real& v : out) v /= total;
  return out;
}

Real cross_entropy(std::span<const Real> prediction, std::span<const Real> label) {
  require(prediction.size() == label.size(), "cross_entropy: length mismatch");
  Real loss = 0;
  for (std::size_t n = 0; n < prediction.size(); ++n) {
    if (label[n] == Real(0)) continue;
    loss -= label[n] * std::log(std::max(prediction[n], kProbabilityFloor));
  }
  return loss;
}

int argmax(std::span<const Real> values) {
  require(!values.empty(), "argmax: empty input");
  int best = 0;
  for (std::size_t n = 1; n < values.size(); ++n) {
    if (values[n] > values[best]) best = static_cast<int>(n);
  }
  return best;
}

}  // namespace mgnet
