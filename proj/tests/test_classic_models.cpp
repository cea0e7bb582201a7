#include <random>

#include "doctest.h"
#include "mgnet/classic_models.hpp"
#include "mgnet/model.hpp"
#include "oracles.hpp"

using namespace mgnet;
using namespace mgnet::classic;
using oracle::brute_add;
using oracle::brute_relu;

namespace {

Tensor bconv(const Tensor& x, const ConvKernel& k) { return oracle::brute_conv(x, k, 1, PaddingMode::Zero); }

ConvKernel zero_kernel(int in, int out) { return ConvKernel(1, in, out); }

struct Instance {
  Tensor f;
  ConvKernel xi;
  ConvKernel eta;
};

Instance random_instance(std::mt19937_64& rng, int channels = 4, int hidden = 5) {
  return {oracle::random_tensor(6, 7, channels, rng), oracle::random_kernel(1, hidden, channels, rng),
          oracle::random_kernel(1, channels, hidden, rng)};
}

}  // namespace

TEST_CASE("ResNet block") {
  std::mt19937_64 rng(1);
  const Instance in = random_instance(rng);
  CHECK(max_abs_diff(resnet_block(in.f, zero_kernel(5, 4), in.eta), brute_relu(in.f)) == 0);
  CHECK(max_abs(resnet_block(Tensor(5, 5, 4), oracle::random_kernel(1, 5, 4, rng, false),
                             oracle::random_kernel(1, 4, 5, rng, false))) == 0);
  const Tensor expect = brute_relu(brute_add(in.f, bconv(brute_relu(bconv(in.f, in.eta)), in.xi)));
  CHECK(max_abs_diff(resnet_block(in.f, in.xi, in.eta), expect) < 1e-12);
  CHECK_THROWS_AS(resnet_block(in.f, in.eta, in.xi), ContractViolation);
}

TEST_CASE("iResNet block") {
  std::mt19937_64 rng(2);
  const Instance in = random_instance(rng);
  CHECK(max_abs_diff(iresnet_block(in.f, zero_kernel(5, 4), in.eta), in.f) == 0);
  const Tensor negative = -brute_relu(in.f);
  CHECK(max_abs_diff(iresnet_block(negative, zero_kernel(5, 4), in.eta), negative) == 0);
  const Tensor expect = brute_add(in.f, bconv(brute_relu(bconv(brute_relu(in.f), in.eta)), in.xi));
  CHECK(max_abs_diff(iresnet_block(in.f, in.xi, in.eta), expect) < 1e-12);
}

TEST_CASE("sigma-ResNet and Mg-ResNet steps") {
  std::mt19937_64 rng(3);
  const Instance in = random_instance(rng);
  CHECK(max_abs_diff(sigma_resnet_step(in.f, zero_kernel(5, 4), in.eta), brute_relu(in.f)) == 0);
  const Tensor nonneg = brute_relu(in.f);
  CHECK(max_abs_diff(sigma_resnet_step(nonneg, zero_kernel(5, 4), in.eta), nonneg) == 0);
  const Tensor s = brute_relu(in.f);
  const Tensor expect = brute_add(s, bconv(brute_relu(bconv(s, in.eta)), in.xi), -1);
  CHECK(max_abs_diff(sigma_resnet_step(in.f, in.xi, in.eta), expect) < 1e-12);
  CHECK(max_abs_diff(mg_resnet_step(in.f, in.xi, in.eta), expect) < 1e-12);
  CHECK(max_abs_diff(mg_resnet_step(in.f, zero_kernel(5, 4), in.eta), brute_relu(in.f)) == 0);

  // One xi drives every step of a level.
  std::vector<ConvKernel> etas;
  for (int i = 0; i < 3; ++i) etas.push_back(oracle::random_kernel(1, 4, 5, rng));
  Tensor x = in.f;
  for (const ConvKernel& eta : etas) {
    const Tensor r = brute_relu(x);
    x = brute_add(r, bconv(brute_relu(bconv(r, eta)), in.xi), -1);
  }
  CHECK(max_abs_diff(mg_resnet_level(in.f, in.xi, etas), x) < 1e-11);
}

TEST_CASE("iResNet and sigma-ResNet agree on non-negative inputs with xi = 0 and differ on negatives") {
  std::mt19937_64 rng(4);
  const Instance in = random_instance(rng);
  const Tensor nonneg = brute_relu(in.f);
  CHECK(max_abs_diff(iresnet_block(nonneg, zero_kernel(5, 4), in.eta),
                     sigma_resnet_step(nonneg, zero_kernel(5, 4), in.eta)) == 0);
  const Tensor diff = brute_add(iresnet_block(in.f, zero_kernel(5, 4), in.eta),
                                sigma_resnet_step(in.f, zero_kernel(5, 4), in.eta), -1);
  // Difference is exactly f - sigma(f) = min(f, 0).
  for (std::size_t k = 0; k < diff.size(); ++k) {
    const Real v = in.f.values()[k];
    CHECK(diff.values()[k] == (v < 0 ? v : 0));
  }
}

TEST_CASE("DenseNet step") {
  std::mt19937_64 rng(5);
  const int g = kDenseGrowthRate;
  const Tensor f0 = oracle::random_tensor(5, 6, 3, rng);
  const Tensor f1 = oracle::random_tensor(5, 6, g, rng);
  const ConvKernel t0 = oracle::random_kernel(1, 3, g, rng);
  const ConvKernel t1 = oracle::random_kernel(1, g, g, rng);
  const std::vector<Tensor> one{f0};
  const std::vector<ConvKernel> k0{t0};
  CHECK(max_abs_diff(densenet_step(one, k0), brute_relu(bconv(f0, t0))) < 1e-12);
  const std::vector<Tensor> two{f0, f1};
  const std::vector<ConvKernel> k01{t0, t1};
  CHECK(max_abs_diff(densenet_step(two, k01), brute_relu(brute_add(bconv(f0, t0), bconv(f1, t1)))) < 1e-12);
  const std::vector<ConvKernel> zeros{ConvKernel(1, 3, g), ConvKernel(1, g, g)};
  CHECK(max_abs(densenet_step(two, zeros)) == 0);
  CHECK_THROWS_AS(densenet_step(two, k0), ContractViolation);
}

TEST_CASE("classic CNN step") {
  std::mt19937_64 rng(6);
  const Tensor nonneg = oracle::random_tensor(5, 5, 3, rng, 0, 1);
  ConvKernel id = ConvKernel::identity(3, 1);
  CHECK(max_abs_diff(classic_cnn_step(nonneg, id, ActivationOrder::PostAct), nonneg) == 0);

  ConvKernel zero(1, 3, 2);
  zero.bias = {-0.5, 0.75};
  const Tensor z = classic_cnn_step(nonneg, zero, ActivationOrder::PostAct);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      CHECK(z(i, j, 0) == 0);
      CHECK(z(i, j, 1) == 0.75);
    }
  }

  const Tensor f = oracle::random_tensor(5, 6, 3, rng);
  const ConvKernel chi = oracle::random_kernel(1, 3, 3, rng);
  CHECK(max_abs_diff(classic_cnn_step(f, chi, ActivationOrder::PostAct), brute_relu(bconv(f, chi))) < 1e-12);
  CHECK(max_abs_diff(classic_cnn_step(f, chi, ActivationOrder::PreAct), bconv(brute_relu(f), chi)) < 1e-12);
}

TEST_CASE("ResNet-18/34 parameter counts") {
  // Independent tally of the basic-block layout.
  auto tally = [](std::vector<int> blocks, int classes) {
    const std::size_t widths[] = {64, 128, 256, 512};
    std::size_t n = 3 * 64 * 9 + 2 * 64;
    std::size_t in = 64;
    for (int s = 0; s < 4; ++s) {
      const std::size_t out = widths[s];
      for (int b = 0; b < blocks[s]; ++b) {
        n += in * out * 9 + out * out * 9 + 4 * out;
        if (in != out) n += in * out;
        in = out;
      }
    }
    return n + 512 * classes + classes;
  };
  const std::size_t r18 = count_params(resnet_preset("resnet18", 10));
  const std::size_t r34 = count_params(resnet_preset("resnet34", 10));
  CHECK(r18 == tally({2, 2, 2, 2}, 10));
  CHECK(r34 == tally({3, 4, 6, 3}, 10));
  CHECK(std::abs(static_cast<double>(r18) - 11.2e6) / 11.2e6 < 0.02);
  CHECK(std::abs(static_cast<double>(r34) - 21.3e6) / 21.3e6 < 0.02);
  CHECK(count_params(model_preset("resnet18", 100)) == tally({2, 2, 2, 2}, 100));
  CHECK_THROWS_AS(resnet_preset("resnet50", 10), ContractViolation);
}

TEST_CASE("ResNet graph with batch statistics passes a gradient check") {
  ResNetConfig cfg;
  cfg.blocks = {1, 1, 1, 1};
  cfg.widths = {4, 6, 8, 10};
  cfg.classes = 3;
  const ParameterStore store = init_resnet(cfg, 1);
  std::mt19937_64 rng(7);
  std::vector<Tensor> batch{oracle::random_tensor(8, 8, 3, rng), oracle::random_tensor(8, 8, 3, rng)};
  ad::Tape tape;
  const ResNetGraph g = build_resnet_graph(tape, ad::Array::from_tensors(batch), cfg, store,
                                           ad::NormMode::Training, ParamBinding::Trainable);
  CHECK(g.logits.value().n == 2);
  CHECK(g.logits.value().c == 3);
  CHECK(g.batch_norms->contains("stage2.block1.bn1"));
  const ad::Var loss = ad::softmax_cross_entropy(g.logits, {0, 2});
  CHECK(ad::gradient_check(tape, loss).worst < 1e-4);
}
