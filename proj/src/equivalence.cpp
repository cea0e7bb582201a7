#include "mgnet/equivalence.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mgnet/classic_models.hpp"
#include "mgnet/mgnet_model.hpp"
#include "mgnet/mgnet_sweep.hpp"
#include "mgnet/poisson_mg.hpp"

namespace mgnet::equivalence {

namespace {

Tensor random_field(int h, int w, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> dist(-1, 1);
  Tensor t(h, w, c);
  for (Real& v : t.values()) v = dist(rng);
  return t;
}

// Entries uniform in +-1/sqrt(fan_in) keep deep chains at unit scale.
ConvKernel random_conv(int k, int in, int out, std::mt19937_64& rng) {
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(in * (2 * k + 1) * (2 * k + 1)));
  std::uniform_real_distribution<Real> dist(-bound, bound);
  ConvKernel kernel(k, in, out);
  for (Real& v : kernel.weights) v = dist(rng);
  for (Real& v : kernel.bias) v = dist(rng);
  return kernel;
}

Tensor conv(const Tensor& x, const ConvKernel& k) { return conv2d(x, k, 1, PaddingMode::Zero); }

void track(Real& worst, const Tensor& a, const Tensor& b) { worst = std::max(worst, max_abs_diff(a, b)); }

}  // namespace

std::string theorem_name(TheoremId id) {
  switch (id) {
    case TheoremId::MgNetMg0:
      return "mg0";
    case TheoremId::DualIResNet:
      return "dual";
    case TheoremId::ResNetSigma:
      return "sigma";
    case TheoremId::CnnEmbedding:
      return "embed";
  }
  return "unknown";
}

TheoremId parse_theorem(const std::string& name) {
  for (TheoremId id : {TheoremId::MgNetMg0, TheoremId::DualIResNet, TheoremId::ResNetSigma,
                       TheoremId::CnnEmbedding}) {
    if (theorem_name(id) == name) return id;
  }
  throw ContractViolation("unknown theorem: " + name);
}

EquivalenceReport verify_mgnet_mg0(int size, int levels, const std::vector<int>& nu, Real omega,
                                   std::uint64_t seed) {
  const poisson::PoissonMultigrid mg(size, size, levels, poisson::SmootherSpec{omega});
  std::mt19937_64 rng(seed);
  const Tensor f = random_field(size, size, 1, rng);
  const poisson::Mg0Trace reference = mg.mg0(f, nu);

  EquivalenceReport report{TheoremId::MgNetMg0, 0, 0, seed};
  for (PiVariant pi : {PiVariant::Pi0, PiVariant::Pi1, PiVariant::Pi2}) {
    std::vector<ConvKernel> pis;
    for (int l = 0; l + 1 < levels; ++l) pis.push_back(random_conv(1, 1, 1, rng));
    LevelOps<Tensor> ops;
    ops.initial_feature = [](const Tensor& f1) { return Tensor(f1.height(), f1.width(), 1); };
    ops.data_feature = [&](int l, const Tensor& u) { return mg.apply(u, l); };
    ops.extract = [&](int l, int, const Tensor& r) { return mg.smooth(r, l); };
    ops.restrict_data = [&](int, const Tensor& r) { return mg.restrict_residual(r); };
    ops.interpolate = [&](int l, const Tensor& u) { return interpolate_pi(u, pi, pis[l]); };
    const MgNetTrace<Tensor> net = run_mgnet(f, std::span<const int>(nu), SmoothingVariant::SingleStep, ops);

    Real worst = 0;
    for (int l = 0; l < levels; ++l) {
      const Tensor& u0 = net.u[l][0];
      track(worst, net.f[l], reference.f[l] + mg.apply(u0, l));
      for (int i = 0; i <= nu[l]; ++i) track(worst, reference.u[l][i], net.u[l][i] - u0);
    }
    report.max_abs_discrepancy = std::max(report.max_abs_discrepancy, worst);
    ++report.instances_tested;
  }
  return report;
}

EquivalenceReport verify_dual_iresnet(int levels, int nu, int channels, int size, std::uint64_t seed) {
  MgNetConfig cfg;
  cfg.levels = levels;
  cfg.nu.assign(levels, nu);
  cfg.input_channels = channels;
  cfg.c_u = channels;
  cfg.c_f = channels;
  cfg.classes = 2;
  cfg.extractor = ExtractorStrategy::Variable;
  cfg.batchnorm = false;
  cfg.conv_bias = true;
  cfg.pi = PiVariant::Pi1;
  ParameterStore store = init_mgnet(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Real bound = 1 / std::sqrt(Real(channels * 9));
  std::uniform_real_distribution<Real> dist(-bound, bound);
  for (auto& e : store.entries()) {
    for (Real& v : e.values) v = dist(rng);
  }
  const Tensor f = random_field(size, size, channels, rng);
  const MgNetResult net = mgnet_forward(f, cfg, store);

  EquivalenceReport report{TheoremId::DualIResNet, 0, 0, seed};
  for (int l = 0; l < levels; ++l) {
    const ConvKernel xi = store.kernel(conv_name(l, "A"));
    const ConvKernel minus_xi = xi.negated();
    const Tensor& fl = net.trace.f[l];
    Tensor data = fl - conv(net.trace.u[l][0], xi);
    for (int i = 1; i <= nu; ++i) {
      const ConvKernel eta = store.kernel(conv_name(l, "step" + std::to_string(i) + ".eta"));
      data = classic::iresnet_block(data, minus_xi, eta);
      track(report.max_abs_discrepancy, data, fl - conv(net.trace.u[l][i], xi));
      ++report.instances_tested;
    }
  }
  return report;
}

EquivalenceReport verify_resnet_sigma_transform(int block_count, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ConvKernel> xis;
  std::vector<ConvKernel> etas;
  for (int i = 0; i < block_count; ++i) {
    xis.push_back(random_conv(1, channels, channels, rng));
    etas.push_back(random_conv(1, channels, channels, rng));
  }
  const Tensor f0 = random_field(8, 8, channels, rng);

  std::vector<Tensor> resnet{f0};
  for (int i = 0; i < block_count; ++i) resnet.push_back(classic::resnet_block(resnet.back(), xis[i], etas[i]));

  // The sign of the residual branch is carried by xi' = -xi.
  EquivalenceReport report{TheoremId::ResNetSigma, 0, 0, seed};
  Tensor tilde;
  for (int i = 0; i < block_count; ++i) {
    const ConvKernel minus_xi = xis[i].negated();
    if (i == 0) {
      tilde = f0 - conv(relu(conv(f0, etas[0])), minus_xi);
    } else {
      tilde = classic::sigma_resnet_step(tilde, minus_xi, etas[i]);
    }
    track(report.max_abs_discrepancy, relu(tilde), resnet[i + 1]);
    const Tensor from_definition = resnet[i] - conv(relu(conv(resnet[i], etas[i])), minus_xi);
    track(report.max_abs_discrepancy, tilde, from_definition);
    ++report.instances_tested;
  }
  return report;
}

ConvKernel delta_hat(int channels, int half_width) {
  ConvKernel kernel(half_width, 2 * channels, channels);
  for (int c = 0; c < channels; ++c) {
    kernel(c, c, 0, 0) = -1;
    kernel(c, channels + c, 0, 0) = 1;
  }
  return kernel;
}

ConvKernel embedding_eta(const ConvKernel& chi) {
  require(chi.in_channels == chi.out_channels, "embedding_eta: chi must map c -> c channels");
  const int c = chi.in_channels;
  ConvKernel eta(chi.k, c, 2 * c);
  for (int o = 0; o < c; ++o) {
    for (int in = 0; in < c; ++in) {
      for (int p = -chi.k; p <= chi.k; ++p) {
        for (int q = -chi.k; q <= chi.k; ++q) {
          const Real w = chi(o, in, p, q) - (o == in && p == 0 && q == 0 ? 1 : 0);
          eta(o, in, p, q) = w;
          eta(c + o, in, p, q) = -w;
        }
      }
    }
    eta.bias[o] = chi.bias[o];
    eta.bias[c + o] = -chi.bias[o];
  }
  return eta;
}

EquivalenceReport verify_cnn_embedding(int layers, int channels, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ConvKernel xi = delta_hat(channels, 1);
  EquivalenceReport report{TheoremId::CnnEmbedding, 0, 0, seed};

  ConvKernel split(1, channels, 2 * channels);
  for (int c = 0; c < channels; ++c) {
    split(c, c, 0, 0) = 1;
    split(channels + c, c, 0, 0) = -1;
  }
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor x = random_field(size, size, channels, rng);
    track(report.max_abs_discrepancy, conv(relu(conv(x, split)), xi), -x);
    ++report.instances_tested;
  }

  std::vector<ConvKernel> chis;
  for (int i = 0; i < layers; ++i) chis.push_back(random_conv(1, channels, channels, rng));
  const Tensor f0 = random_field(size, size, channels, rng);
  for (classic::ActivationOrder order : {classic::ActivationOrder::PreAct, classic::ActivationOrder::PostAct}) {
    Tensor plain = f0;
    Tensor embedded = f0;
    for (const ConvKernel& chi : chis) {
      const ConvKernel eta = embedding_eta(chi);
      plain = classic::classic_cnn_step(plain, chi, order);
      if (order == classic::ActivationOrder::PreAct) {
        embedded = classic::mg_resnet_step(embedded, xi, eta);
      } else {
        embedded = relu(embedded - conv(relu(conv(embedded, eta)), xi));
      }
      track(report.max_abs_discrepancy, plain, embedded);
      ++report.instances_tested;
    }
  }
  return report;
}

EquivalenceReport verify_default(TheoremId id, std::uint64_t seed) {
  switch (id) {
    case TheoremId::MgNetMg0:
      return verify_mgnet_mg0(17, 3, {2, 2, 2}, Real(0.8), seed);
    case TheoremId::DualIResNet:
      return verify_dual_iresnet(3, 3, 8, 8, seed);
    case TheoremId::ResNetSigma:
      return verify_resnet_sigma_transform(4, 8, seed);
    case TheoremId::CnnEmbedding:
      return verify_cnn_embedding(2, 3, 6, seed);
  }
  throw ContractViolation("verify_default: unknown theorem");
}

std::vector<EquivalenceReport> verify_all(std::uint64_t seed) {
  std::vector<EquivalenceReport> reports;
  for (TheoremId id : {TheoremId::MgNetMg0, TheoremId::DualIResNet, TheoremId::ResNetSigma,
                       TheoremId::CnnEmbedding}) {
    reports.push_back(verify_default(id, seed));
  }
  return reports;
}

}  // namespace mgnet::equivalence
