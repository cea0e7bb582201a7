#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mgnet/grid_transfer.hpp"
#include "mgnet/tensor.hpp"

namespace mgnet::poisson {

using DenseMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

/// K_A = [[0,-1,0],[-1,4,-1],[0,-1,0]]; with zero padding, K_A * u is the
/// five-point operator (Au)_{ij} = 4u_{ij} - u_{i+1,j} - u_{i-1,j} - u_{i,j+1} - u_{i,j-1}.
ConvKernel laplace_kernel();

enum class SmootherSteps { One, Two };

/// Damped Jacobi. One applies S_0 = omega D^{-1}; Two fuses two sweeps
/// from a zero initial guess, S_1 f = S_0 f + S_0 (f - A S_0 f).
struct SmootherSpec {
  Real omega = Real(0.8);
  SmootherSteps steps = SmootherSteps::One;
  void validate() const;
};

/// K_{S1}: center omega(2-omega)/4, cross entries omega^2/16, corners 0.
ConvKernel two_step_jacobi_kernel(Real omega);

/// A level operator with a 3x3 footprint. The finest level is the
/// translation-invariant K_A convolution; Galerkin levels carry one 3x3
/// stencil per node because R A P is not a zero-padded convolution near
/// the boundary.
class StencilOperator {
 public:
  static StencilOperator from_kernel(int level, int height, int width, ConvKernel kernel);
  static StencilOperator from_stencils(int level, int height, int width,
                                       std::vector<Real> stencils);

  int level() const { return level_; }
  int height() const { return height_; }
  int width() const { return width_; }
  /// Present when the operator is a zero-padded convolution.
  const std::optional<ConvKernel>& kernel() const { return kernel_; }

  /// Coefficient coupling node (i, j) to node (i + p, j + q), p, q in [-1, 1].
  /// Zero for neighbors outside the grid.
  Real coefficient(int i, int j, int p, int q) const;
  Tensor diagonal() const;

  Tensor apply(const Tensor& u) const;

  /// Dense (m*n) x (m*n) matrix, node (i, j) at index i*n + j.
  DenseMatrix dense() const;

 private:
  StencilOperator(int level, int height, int width) : level_(level), height_(height), width_(width) {}

  int level_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::optional<ConvKernel> kernel_;
  std::vector<Real> stencils_;  // [node][(p+1)*3 + (q+1)]
};

/// Weight of coarse node (I, J) in fine node (2I + di, 2J + dj).
Real prolongation_weight(ProlongationMode mode, int di, int dj);

struct Mg0Trace {
  std::vector<std::vector<Tensor>> u;  // u[l][i], i = 0..nu_l
  std::vector<Tensor> f;               // f^l

  const Tensor& final_iterate(int level) const { return u.at(level).back(); }
};

struct SolveResult {
  Tensor solution;
  std::vector<Real> residual_norms;  // entry 0 is ||f - A u_0||
  int cycles = 0;
};

/// Geometric multigrid hierarchy for the zero-padded five-point problem.
/// Levels are 0-based: level 0 is the finest grid.
class PoissonMultigrid {
 public:
  PoissonMultigrid(int height, int width, int levels, SmootherSpec smoother = {},
                   ProlongationMode mode = ProlongationMode::Bilinear);

  int levels() const { return grids_.levels(); }
  const GridHierarchy& grids() const { return grids_; }
  const SmootherSpec& smoother() const { return smoother_; }
  ProlongationMode prolongation_mode() const { return mode_; }

  /// A^l. Coarse operators are the cached Galerkin products.
  const StencilOperator& op(int level) const;
  /// A^{l+1} = R A^l P, built from op(level).
  StencilOperator galerkin_coarsen(int level) const;

  Tensor apply(const Tensor& u, int level) const;
  /// S^l applied to a residual.
  Tensor smooth(const Tensor& residual, int level) const;
  Tensor restrict_residual(const Tensor& r) const { return restrict_kr(r, mode_); }
  Tensor prolong(const Tensor& coarse) const { return prolongate(coarse, mode_); }

  /// Fine-to-coarse nested smoothing with zero initial guesses.
  Mg0Trace mg0(const Tensor& f, std::span<const int> nu) const;
  /// mg0 followed by coarse-to-fine corrections; returns u^{1,nu_1}.
  Tensor backslash(const Tensor& f, std::span<const int> nu) const;
  /// Stationary iteration u <- u + backslash(f - A u) from u = 0.
  SolveResult solve(const Tensor& f, std::span<const int> nu, int cycles) const;

 private:
  void check_level(int level) const;
  void check_schedule(const Tensor& f, std::span<const int> nu) const;

  GridHierarchy grids_;
  SmootherSpec smoother_;
  ProlongationMode mode_;
  std::vector<StencilOperator> ops_;
};

/// Sparse five-point matrix assembled directly from the difference formula.
DenseMatrix assemble_dense_laplacian(int height, int width);
/// Direct solve of the zero-padded five-point system via sparse Cholesky.
Tensor direct_solve(const Tensor& f);

}  // namespace mgnet::poisson
