#pragma once

// Raw-span convolution kernels shared by the tensor API and the gradient
// engine. The parallel versions split work across output (forward, weight
// gradient) or input (input gradient) channels, so every output element is
// accumulated by one thread in a fixed order and results do not depend on
// the thread count. conv2d_reference is the serial brute-force loop kept for
// tests and benchmarks.

#include <span>

#include "mgnet/tensor.hpp"

namespace mgnet::kernels {

struct ConvGeometry {
  int in_channels;
  int out_channels;
  int height;  // input extent
  int width;
  int k;       // kernel half-width
  int stride;
  PaddingMode padding;

  int out_height() const { return strided_extent(height, stride); }
  int out_width() const { return strided_extent(width, stride); }
  int padded_height() const { return height + 2 * k; }
  int padded_width() const { return width + 2 * k; }
  int window() const { return 2 * k + 1; }
};

/// out = conv(in) + bias. `bias` may be empty (treated as zero).
void conv2d_forward(const ConvGeometry& g, std::span<const Real> in,
                    std::span<const Real> weights, std::span<const Real> bias,
                    std::span<Real> out);

/// grad_in += conv^T(grad_out). Out-of-range taps are folded back onto the
/// samples the padding mode read them from.
void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> grad_out,
                           std::span<const Real> weights, std::span<Real> grad_in);

/// grad_weights += d/dW, grad_bias += d/db (grad_bias may be empty).
void conv2d_backward_params(const ConvGeometry& g, std::span<const Real> in,
                            std::span<const Real> grad_out, std::span<Real> grad_weights,
                            std::span<Real> grad_bias);

/// Serial quadruple loop over (out channel, position, in channel, tap) with
/// per-sample index resolution. Same summation order as conv2d_forward.
void conv2d_reference(const ConvGeometry& g, std::span<const Real> in,
                      std::span<const Real> weights, std::span<const Real> bias,
                      std::span<Real> out);

/// Max pooling over (2k+1)^2 windows with zero padding. `argmax` receives the
/// flat input index chosen for each output (-1 for a padding sample).
void max_pool_forward(int channels, int height, int width, int k, int stride,
                      std::span<const Real> in, std::span<Real> out, std::span<int> argmax);

}  // namespace mgnet::kernels
