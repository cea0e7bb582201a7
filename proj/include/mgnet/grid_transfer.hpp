#pragma once

#include <utility>
#include <vector>

#include "mgnet/tensor.hpp"

namespace mgnet {

/// Grid sizes (m_l, n_l) for l = 1..J, finest first.
class GridHierarchy {
 public:
  /// Odd-size chain m_l = 2^(s-l+1) + 1 starting from m_1 = 2^s + 1.
  static GridHierarchy multigrid(int height, int width, int levels);
  /// Ceil-halving chain m_{l+1} = ceil(m_l / 2) used by strided networks.
  static GridHierarchy strided(int height, int width, int levels);

  int levels() const { return static_cast<int>(sizes_.size()); }
  std::pair<int, int> size(int level) const { return sizes_.at(level); }
  const std::vector<std::pair<int, int>>& sizes() const { return sizes_; }

  /// True when n = 2^s + 1 for some s >= 0 (n >= 2).
  static bool is_odd_chain_extent(int n);

 private:
  explicit GridHierarchy(std::vector<std::pair<int, int>> sizes) : sizes_(std::move(sizes)) {}
  std::vector<std::pair<int, int>> sizes_;
};

enum class ProlongationMode { Bilinear, Linear };

/// Nodal interpolation of piecewise (bi)linear functions from an
/// M x N grid to the (2M-1) x (2N-1) grid, channel by channel.
Tensor prolongate(const Tensor& coarse, ProlongationMode mode);

/// 3x3 restriction kernel K_R (transpose of prolongation as a stride-2 conv).
ConvKernel restriction_kernel(ProlongationMode mode);

/// K_R *_2 f with zero padding, channel by channel.
Tensor restrict_kr(const Tensor& fine, ProlongationMode mode);

enum class PoolKind { Average3x3, Max };

/// Average3x3 is the stride-s conv with the all-(1/9) kernel; Max is the
/// (2k+1)x(2k+1) windowed maximum. Both use zero padding.
Tensor pool(const Tensor& input, PoolKind kind, int stride, int max_half_width = 1);

ConvKernel average_kernel();

enum class PiVariant { Pi0, Pi1, Pi2 };

/// Feature transfer u^{l+1,0} = Pi u^l to the next (stride-2) grid.
///  Pi0: zero tensor of the coarse shape (kernel ignored, may be empty).
///  Pi1: full stride-2 convolution c_u -> c_u.
///  Pi2: one single-channel kernel applied to every channel at stride 2.
Tensor interpolate_pi(const Tensor& u, PiVariant variant, const ConvKernel& kernel);

/// Number of trainable weights of a Pi kernel with half-width k on c_u channels.
std::size_t pi_weight_count(PiVariant variant, int channels, int k);

}  // namespace mgnet
