#include "mgnet/grid_transfer.hpp"

#include <string>

namespace mgnet {

bool GridHierarchy::is_odd_chain_extent(int n) {
  if (n < 2) return false;
  const int m = n - 1;
  return (m & (m - 1)) == 0;
}

GridHierarchy GridHierarchy::multigrid(int height, int width, int levels) {
  require(levels >= 1, "GridHierarchy: need at least one level");
  require(is_odd_chain_extent(height) && is_odd_chain_extent(width),
          "GridHierarchy: multigrid sizes must be 2^s+1, got " + std::to_string(height) + "x" +
              std::to_string(width));
  std::vector<std::pair<int, int>> sizes;
  int m = height;
  int n = width;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      require(m > 2 && n > 2, "GridHierarchy: too many levels for the odd-size chain");
      m = (m - 1) / 2 + 1;
      n = (n - 1) / 2 + 1;
    }
    sizes.emplace_back(m, n);
  }
  return GridHierarchy(std::move(sizes));
}

GridHierarchy GridHierarchy::strided(int height, int width, int levels) {
  require(levels >= 1, "GridHierarchy: need at least one level");
  require(height > 0 && width > 0, "GridHierarchy: extents must be positive");
  std::vector<std::pair<int, int>> sizes;
  int m = height;
  int n = width;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      require(m > 1 || n > 1, "GridHierarchy: too many levels for the grid");
      m = strided_extent(m, 2);
      n = strided_extent(n, 2);
    }
    sizes.emplace_back(m, n);
  }
  return GridHierarchy(std::move(sizes));
}

Tensor prolongate(const Tensor& coarse, ProlongationMode mode) {
  require(!coarse.empty(), "prolongate: empty input");
  const int mc = coarse.height();
  const int nc = coarse.width();
  const int mf = 2 * mc - 1;
  const int nf = 2 * nc - 1;
  Tensor fine(mf, nf, coarse.channels());
  for (int c = 0; c < coarse.channels(); ++c) {
    // Coincident nodes, then edge midpoints, then cell centers (0-based
    // fine index 2i is the coarse node i).
    for (int i = 0; i < mc; ++i) {
      for (int j = 0; j < nc; ++j) fine(2 * i, 2 * j, c) = coarse(i, j, c);
    }
    for (int i = 0; i < mc; ++i) {
      for (int j = 0; j + 1 < nc; ++j) {
        fine(2 * i, 2 * j + 1, c) = Real(0.5) * (coarse(i, j, c) + coarse(i, j + 1, c));
      }
    }
    for (int i = 0; i + 1 < mc; ++i) {
      for (int j = 0; j < nc; ++j) {
        fine(2 * i + 1, 2 * j, c) = Real(0.5) * (coarse(i, j, c) + coarse(i + 1, j, c));
      }
    }
    for (int i = 0; i + 1 < mc; ++i) {
      for (int j = 0; j + 1 < nc; ++j) {
        if (mode == ProlongationMode::Bilinear) {
          fine(2 * i + 1, 2 * j + 1, c) =
              Real(0.25) * (coarse(i, j, c) + coarse(i + 1, j, c) + coarse(i, j + 1, c) +
                            coarse(i + 1, j + 1, c));
        } else {
          fine(2 * i + 1, 2 * j + 1, c) = Real(0.5) * (coarse(i + 1, j, c) + coarse(i, j + 1, c));
        }
      }
    }
  }
  return fine;
}

ConvKernel restriction_kernel(ProlongationMode mode) {
  if (mode == ProlongationMode::Bilinear) {
    return ConvKernel::from_matrix({{0.25, 0.5, 0.25}, {0.5, 1.0, 0.5}, {0.25, 0.5, 0.25}});
  }
  return ConvKernel::from_matrix({{0.0, 0.5, 0.5}, {0.5, 1.0, 0.5}, {0.5, 0.5, 0.0}});
}

Tensor restrict_kr(const Tensor& fine, ProlongationMode mode) {
  return conv2d_channelwise(fine, restriction_kernel(mode), 2, PaddingMode::Zero);
}

ConvKernel average_kernel() {
  const Real w = Real(1) / Real(9);
  return ConvKernel::from_matrix({{w, w, w}, {w, w, w}, {w, w, w}});
}

Tensor pool(const Tensor& input, PoolKind kind, int stride, int max_half_width) {
  require(stride >= 1, "pool: stride must be >= 1");
  if (kind == PoolKind::Average3x3) {
    return conv2d_channelwise(input, average_kernel(), stride, PaddingMode::Zero);
  }
  return max_pool(input, max_half_width, stride);
}

Tensor interpolate_pi(const Tensor& u, PiVariant variant, const ConvKernel& kernel) {
  require(!u.empty(), "interpolate_pi: empty input");
  switch (variant) {
    case PiVariant::Pi0:
      return Tensor(strided_extent(u.height(), 2), strided_extent(u.width(), 2), u.channels());
    case PiVariant::Pi1:
      require(kernel.in_channels == u.channels() && kernel.out_channels == u.channels(),
              "interpolate_pi: Pi1 kernel must map c_u -> c_u channels");
      return conv2d(u, kernel, 2, PaddingMode::Zero);
    case PiVariant::Pi2:
      require(kernel.in_channels == 1 && kernel.out_channels == 1,
              "interpolate_pi: Pi2 kernel must be single-channel");
      return conv2d_channelwise(u, kernel, 2, PaddingMode::Zero);
  }
  return {};
}

std::size_t pi_weight_count(PiVariant variant, int channels, int k) {
  const std::size_t taps = static_cast<std::size_t>(2 * k + 1) * (2 * k + 1);
  switch (variant) {
    case PiVariant::Pi0:
      return 0;
    case PiVariant::Pi1:
      return taps * channels * channels;
    case PiVariant::Pi2:
      return taps;
  }
  return 0;
}

}  // namespace mgnet
