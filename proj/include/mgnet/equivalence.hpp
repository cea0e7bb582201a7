#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgnet/tensor.hpp"

namespace mgnet::equivalence {

enum class TheoremId { MgNetMg0, DualIResNet, ResNetSigma, CnnEmbedding };

std::string theorem_name(TheoremId id);  // "mg0", "dual", "sigma", "embed"
TheoremId parse_theorem(const std::string& name);

inline constexpr Real kTolerance = Real(1e-9);

struct EquivalenceReport {
  TheoremId theorem = TheoremId::MgNetMg0;
  Real max_abs_discrepancy = 0;
  int instances_tested = 0;
  std::uint64_t seed = 0;

  bool passed(Real tolerance = kTolerance) const { return max_abs_discrepancy < tolerance; }
};

/// Linear MgNet (A = Galerkin Poisson operators, B = damped Jacobi, R = K_R)
/// against the fine-to-coarse multigrid sweep, once per Pi variant (zero,
/// random full, random channel-wise). Reports the largest of
/// |ftilde^l - (f^l + A^l utilde^{l,0})| and |u^{l,i} - (utilde^{l,i} - utilde^{l,0})|.
EquivalenceReport verify_mgnet_mg0(int size, int levels, const std::vector<int>& nu, Real omega,
                                   std::uint64_t seed);

/// MgNet with linear A = xi^l and B = relu o eta o relu (random weights and
/// biases, no batch norm) against the data-space recursion
/// f^{l,i} = f^{l,i-1} - xi^l(relu(eta^{l,i}(relu(f^{l,i-1})))), started from
/// f^{l,0} = f^l - xi^l(u^{l,0}). Every iterate is compared with f^l - xi^l(u^{l,i}).
EquivalenceReport verify_dual_iresnet(int levels, int nu, int channels, int size, std::uint64_t seed);

/// ResNet chain against the sigma-ResNet chain on ftilde^i = f^{i-1} + xi(relu(eta(f^{i-1}))).
/// Reports max |relu(ftilde^i) - f^i| over all blocks.
EquivalenceReport verify_resnet_sigma_transform(int block_count, int channels, std::uint64_t seed);

/// Fixed 2c -> c kernel with delta_k([X, Y]) = -([X]_k - [Y]_k), so that
/// delta o relu o [id, -id] = -id.
ConvKernel delta_hat(int channels, int half_width);
/// eta = [id, -id] o (chi - id) as one c -> 2c convolution.
ConvKernel embedding_eta(const ConvKernel& chi);

/// Random chi chains in both orders (chi o relu and relu o chi) against their
/// Mg-ResNet rewrites with xi = delta_hat, plus the kernel identity on random
/// tensors.
EquivalenceReport verify_cnn_embedding(int layers, int channels, int size, std::uint64_t seed);

/// The four verifiers at their default sizes.
std::vector<EquivalenceReport> verify_all(std::uint64_t seed);
EquivalenceReport verify_default(TheoremId id, std::uint64_t seed);

}  // namespace mgnet::equivalence
