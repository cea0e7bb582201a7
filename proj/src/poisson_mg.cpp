#include "mgnet/poisson_mg.hpp"

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace mgnet::poisson {

ConvKernel laplace_kernel() {
  return ConvKernel::from_matrix({{0, -1, 0}, {-1, 4, -1}, {0, -1, 0}});
}

void SmootherSpec::validate() const {
  require(omega > Real(0) && omega < Real(2),
          "SmootherSpec: omega must lie in (0, 2), got " + std::to_string(omega));
}

ConvKernel two_step_jacobi_kernel(Real omega) {
  const Real center = omega * (Real(2) - omega) / Real(4);
  const Real cross = omega * omega / Real(16);
  return ConvKernel::from_matrix({{0, cross, 0}, {cross, center, cross}, {0, cross, 0}});
}

StencilOperator StencilOperator::from_kernel(int level, int height, int width,
                                             ConvKernel kernel) {
  require(kernel.k == 1 && kernel.in_channels == 1 && kernel.out_channels == 1,
          "StencilOperator: kernel must be a single-channel 3x3 kernel");
  StencilOperator op(level, height, width);
  op.kernel_ = std::move(kernel);
  return op;
}

StencilOperator StencilOperator::from_stencils(int level, int height, int width,
                                               std::vector<Real> stencils) {
  require(stencils.size() == static_cast<std::size_t>(height) * width * 9,
          "StencilOperator: need nine coefficients per node");
  StencilOperator op(level, height, width);
  op.stencils_ = std::move(stencils);
  return op;
}

Real StencilOperator::coefficient(int i, int j, int p, int q) const {
  if (i + p < 0 || i + p >= height_ || j + q < 0 || j + q >= width_) return 0;
  if (kernel_) return (*kernel_)(0, 0, p, q);
  return stencils_[(static_cast<std::size_t>(i) * width_ + j) * 9 + (p + 1) * 3 + (q + 1)];
}

Tensor StencilOperator::diagonal() const {
  Tensor d(height_, width_, 1);
  for (int i = 0; i < height_; ++i) {
    for (int j = 0; j < width_; ++j) d(i, j, 0) = coefficient(i, j, 0, 0);
  }
  return d;
}

Tensor StencilOperator::apply(const Tensor& u) const {
  require(u.channels() == 1 && u.height() == height_ && u.width() == width_,
          "apply_poisson: tensor is " + std::to_string(u.height()) + "x" +
              std::to_string(u.width()) + "x" + std::to_string(u.channels()) + ", level " +
              std::to_string(level_) + " expects " + std::to_string(height_) + "x" +
              std::to_string(width_) + "x1");
  if (kernel_) return conv2d(u, *kernel_, 1, PaddingMode::Zero);
  Tensor out(height_, width_, 1);
  for (int i = 0; i < height_; ++i) {
    for (int j = 0; j < width_; ++j) {
      Real acc = 0;
      for (int p = -1; p <= 1; ++p) {
        for (int q = -1; q <= 1; ++q) {
          const Real a = coefficient(i, j, p, q);
          if (a != Real(0)) acc += a * u(i + p, j + q, 0);
        }
      }
      out(i, j, 0) = acc;
    }
  }
  return out;
}

DenseMatrix StencilOperator::dense() const {
  const int n = height_ * width_;
  DenseMatrix a = DenseMatrix::Zero(n, n);
  for (int i = 0; i < height_; ++i) {
    for (int j = 0; j < width_; ++j) {
      for (int p = -1; p <= 1; ++p) {
        for (int q = -1; q <= 1; ++q) {
          const Real c = coefficient(i, j, p, q);
          if (c != Real(0)) a(i * width_ + j, (i + p) * width_ + (j + q)) = c;
        }
      }
    }
  }
  return a;
}

Real prolongation_weight(ProlongationMode mode, int di, int dj) {
  if (di < -1 || di > 1 || dj < -1 || dj > 1) return 0;
  if (di == 0 && dj == 0) return 1;
  if (di == 0 || dj == 0) return Real(0.5);
  if (mode == ProlongationMode::Bilinear) return Real(0.25);
  // Linear elements split each cell along the anti-diagonal.
  return (di == -dj) ? Real(0.5) : Real(0);
}

PoissonMultigrid::PoissonMultigrid(int height, int width, int levels, SmootherSpec smoother,
                                   ProlongationMode mode)
    : grids_(GridHierarchy::multigrid(height, width, levels)), smoother_(smoother), mode_(mode) {
  smoother_.validate();
  ops_.push_back(StencilOperator::from_kernel(0, height, width, laplace_kernel()));
  for (int l = 0; l + 1 < levels; ++l) ops_.push_back(galerkin_coarsen(l));
}

void PoissonMultigrid::check_level(int level) const {
  require(level >= 0 && level < levels(),
          "PoissonMultigrid: level " + std::to_string(level) + " out of range");
}

const StencilOperator& PoissonMultigrid::op(int level) const {
  check_level(level);
  return ops_[level];
}

StencilOperator PoissonMultigrid::galerkin_coarsen(int level) const {
  check_level(level);
  require(level + 1 < levels(), "galerkin_coarsen: level " + std::to_string(level) +
                                    " is the coarsest level");
  const StencilOperator& fine = ops_.at(level);
  const auto [mf, nf] = grids_.size(level);
  const auto [mc, nc] = grids_.size(level + 1);
  std::vector<Real> stencils(static_cast<std::size_t>(mc) * nc * 9, Real(0));

  // Column (I, J) of R A P: prolongate the unit vector (support within one
  // fine cell of (2I, 2J)), apply A (one more cell), restrict onto coarse
  // neighbors. Local window covers fine offsets [-3, 3].
  constexpr int R = 3;
  constexpr int W = 2 * R + 1;
  for (int ci = 0; ci < mc; ++ci) {
    for (int cj = 0; cj < nc; ++cj) {
      std::array<Real, W * W> pe{};
      std::array<Real, W * W> ape{};
      const int fi0 = 2 * ci;
      const int fj0 = 2 * cj;
      auto inside = [&](int y, int x) { return y >= 0 && y < mf && x >= 0 && x < nf; };
      for (int a = -1; a <= 1; ++a) {
        for (int b = -1; b <= 1; ++b) {
          if (inside(fi0 + a, fj0 + b)) pe[(a + R) * W + (b + R)] = prolongation_weight(mode_, a, b);
        }
      }
      for (int a = -2; a <= 2; ++a) {
        for (int b = -2; b <= 2; ++b) {
          const int y = fi0 + a;
          const int x = fj0 + b;
          if (!inside(y, x)) continue;
          Real acc = 0;
          for (int p = -1; p <= 1; ++p) {
            for (int q = -1; q <= 1; ++q) {
              const int ya = a + p;
              const int xb = b + q;
              if (ya < -R || ya > R || xb < -R || xb > R) continue;
              const Real v = pe[(ya + R) * W + (xb + R)];
              if (v != Real(0)) acc += fine.coefficient(y, x, p, q) * v;
            }
          }
          ape[(a + R) * W + (b + R)] = acc;
        }
      }
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          const int ri = ci + di;
          const int rj = cj + dj;
          if (ri < 0 || ri >= mc || rj < 0 || rj >= nc) continue;
          Real acc = 0;
          for (int a = -1; a <= 1; ++a) {
            for (int b = -1; b <= 1; ++b) {
              const int y = 2 * di + a;
              const int x = 2 * dj + b;
              if (!inside(fi0 + y, fj0 + x)) continue;
              const Real w = prolongation_weight(mode_, a, b);
              if (w != Real(0)) acc += w * ape[(y + R) * W + (x + R)];
            }
          }
          // Row (ri, rj) couples to column (ci, cj) at offset (-di, -dj).
          stencils[(static_cast<std::size_t>(ri) * nc + rj) * 9 + (1 - di) * 3 + (1 - dj)] = acc;
        }
      }
    }
  }
  return StencilOperator::from_stencils(level + 1, mc, nc, std::move(stencils));
}

Tensor PoissonMultigrid::apply(const Tensor& u, int level) const { return op(level).apply(u); }

Tensor PoissonMultigrid::smooth(const Tensor& residual, int level) const {
  const StencilOperator& a = op(level);
  require(residual.channels() == 1 && residual.height() == a.height() &&
              residual.width() == a.width(),
          "jacobi_smooth: residual does not match level " + std::to_string(level));
  auto one_step = [&](const Tensor& r) {
    Tensor out = r;
    if (level == 0) {
      // K_{S0} = omega / 4 on the five-point operator.
      out *= smoother_.omega / Real(4);
      return out;
    }
    const Tensor d = a.diagonal();
    for (std::size_t n = 0; n < out.size(); ++n) out.values()[n] *= smoother_.omega / d.values()[n];
    return out;
  };
  if (smoother_.steps == SmootherSteps::One) return one_step(residual);
  if (level == 0) return conv2d(residual, two_step_jacobi_kernel(smoother_.omega), 1, PaddingMode::Zero);
  const Tensor s0 = one_step(residual);
  return s0 + one_step(residual - a.apply(s0));
}

void PoissonMultigrid::check_schedule(const Tensor& f, std::span<const int> nu) const {
  require(static_cast<int>(nu.size()) == levels(),
          "multigrid: nu has " + std::to_string(nu.size()) + " entries, expected " +
              std::to_string(levels()));
  for (int n : nu) require(n >= 0, "multigrid: smoothing counts must be non-negative");
  const auto [m, n] = grids_.size(0);
  require(f.channels() == 1 && f.height() == m && f.width() == n,
          "multigrid: right-hand side does not match the finest grid");
}

Mg0Trace PoissonMultigrid::mg0(const Tensor& f, std::span<const int> nu) const {
  check_schedule(f, nu);
  Mg0Trace trace;
  trace.f.push_back(f);
  for (int l = 0; l < levels(); ++l) {
    const Tensor& fl = trace.f[l];
    std::vector<Tensor> iterates;
    iterates.emplace_back(fl.height(), fl.width(), 1);
    for (int i = 1; i <= nu[l]; ++i) {
      const Tensor& prev = iterates.back();
      iterates.push_back(prev + smooth(fl - apply(prev, l), l));
    }
    trace.u.push_back(std::move(iterates));
    if (l + 1 < levels()) {
      trace.f.push_back(restrict_residual(fl - apply(trace.u[l].back(), l)));
    }
  }
  return trace;
}

Tensor PoissonMultigrid::backslash(const Tensor& f, std::span<const int> nu) const {
  Mg0Trace trace = mg0(f, nu);
  std::vector<Tensor> u;
  for (auto& level : trace.u) u.push_back(level.back());
  for (int l = levels() - 2; l >= 0; --l) u[l] += prolong(u[l + 1]);
  return u[0];
}

SolveResult PoissonMultigrid::solve(const Tensor& f, std::span<const int> nu, int cycles) const {
  check_schedule(f, nu);
  require(cycles >= 0, "solve: cycle count must be non-negative");
  SolveResult result;
  result.solution = Tensor(f.height(), f.width(), 1);
  Tensor residual = f;
  result.residual_norms.push_back(l2_norm(residual));
  for (int c = 0; c < cycles; ++c) {
    result.solution += backslash(residual, nu);
    residual = f - apply(result.solution, 0);
    result.residual_norms.push_back(l2_norm(residual));
    result.cycles = c + 1;
  }
  return result;
}

DenseMatrix assemble_dense_laplacian(int height, int width) {
  const int n = height * width;
  DenseMatrix a = DenseMatrix::Zero(n, n);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const int row = i * width + j;
      a(row, row) = 4;
      if (i > 0) a(row, row - width) = -1;
      if (i + 1 < height) a(row, row + width) = -1;
      if (j > 0) a(row, row - 1) = -1;
      if (j + 1 < width) a(row, row + 1) = -1;
    }
  }
  return a;
}

Tensor direct_solve(const Tensor& f) {
  require(f.channels() == 1, "direct_solve: single-channel right-hand side expected");
  const int h = f.height();
  const int w = f.width();
  const int n = h * w;
  std::vector<Eigen::Triplet<Real>> entries;
  entries.reserve(static_cast<std::size_t>(n) * 5);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const int row = i * w + j;
      entries.emplace_back(row, row, Real(4));
      if (i > 0) entries.emplace_back(row, row - w, Real(-1));
      if (i + 1 < h) entries.emplace_back(row, row + w, Real(-1));
      if (j > 0) entries.emplace_back(row, row - 1, Real(-1));
      if (j + 1 < w) entries.emplace_back(row, row + 1, Real(-1));
    }
  }
  Eigen::SparseMatrix<Real> a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<Real>> solver(a);
  if (solver.info() != Eigen::Success) throw std::runtime_error("direct_solve: factorization failed");
  Eigen::Matrix<Real, Eigen::Dynamic, 1> rhs(n);
  for (int k = 0; k < n; ++k) rhs[k] = f.values()[k];
  const Eigen::Matrix<Real, Eigen::Dynamic, 1> x = solver.solve(rhs);
  Tensor u(h, w, 1);
  for (int k = 0; k < n; ++k) u.values()[k] = x[k];
  return u;
}

}  // namespace mgnet::poisson
