#include <cmath>
#include <random>

#include "doctest.h"
#include "mgnet/autodiff.hpp"
#include "oracles.hpp"

using namespace mgnet;
using namespace mgnet::ad;

namespace {

Array random_array(int n, int c, int h, int w, std::mt19937_64& rng, Real lo = -1, Real hi = 1) {
  std::uniform_real_distribution<Real> dist(lo, hi);
  Array a(n, c, h, w);
  for (Real& v : a.data) v = dist(rng);
  return a;
}

// Linear probe so every output entry contributes with its own weight.
Var probe(const Var& y, std::mt19937_64& rng) {
  const Array& v = y.value();
  return dot_const(y, random_array(v.n, v.c, v.h, v.w, rng));
}

Real check(Tape& tape, const Var& loss) { return gradient_check(tape, loss).worst; }

}  // namespace

TEST_CASE("conv2d gradients for every padding and stride") {
  std::mt19937_64 rng(1);
  for (PaddingMode mode : {PaddingMode::Zero, PaddingMode::Periodic, PaddingMode::Reflected}) {
    for (int stride : {1, 2, 3}) {
      Tape tape;
      Var x = tape.parameter("x", random_array(2, 2, 6, 5, rng));
      Var w = tape.parameter("w", random_array(3, 2, 3, 3, rng));
      Var b = tape.parameter("b", random_array(1, 3, 1, 1, rng));
      Var y = conv2d(x, w, b, stride, mode);
      CHECK(check(tape, probe(y, rng)) < 1e-8);
    }
  }
}

TEST_CASE("conv2d matches the plain tensor path") {
  std::mt19937_64 rng(2);
  const Tensor f = oracle::random_tensor(7, 6, 3, rng);
  const ConvKernel k = oracle::random_kernel(1, 3, 4, rng);
  Tape tape;
  Var x = tape.constant(Array::from_tensor(f));
  Var w = tape.constant(Array::from_dims({4, 3, 3, 3}, k.weights));
  Var b = tape.constant(Array::from_dims({4}, k.bias));
  const Var y = conv2d(x, w, b, 2, PaddingMode::Reflected);
  CHECK(max_abs_diff(y.value().to_tensor(0), conv2d(f, k, 2, PaddingMode::Reflected)) == 0);
}

TEST_CASE("mean square of a conv output: kernel gradient matches central differences") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Tape tape;
    Var x = tape.constant(random_array(1, 2, 6, 6, rng));
    Var w = tape.parameter("w", random_array(2, 2, 3, 3, rng));
    Var loss = mean_square(conv2d(x, w, Var(), 1, PaddingMode::Zero));
    CHECK(check(tape, loss) < 1e-6);
  }
}

TEST_CASE("channelwise and transposed convolutions") {
  std::mt19937_64 rng(4);
  {
    Tape tape;
    Var x = tape.parameter("x", random_array(2, 3, 7, 6, rng));
    Var w = tape.parameter("w", random_array(1, 1, 3, 3, rng));
    Var b = tape.parameter("b", random_array(1, 1, 1, 1, rng));
    CHECK(check(tape, probe(conv2d_channelwise(x, w, b, 2, PaddingMode::Zero), rng)) < 1e-8);
  }
  {
    Tape tape;
    Var x = tape.parameter("x", random_array(2, 3, 4, 3, rng));
    Var w = tape.parameter("w", random_array(3, 2, 3, 3, rng));
    const Var y = conv2d_transpose(x, w, 2, 7, 6);
    CHECK(y.value().c == 2);
    CHECK(y.value().h == 7);
    CHECK(check(tape, probe(y, rng)) < 1e-8);
  }
}

TEST_CASE("relu subgradient") {
  Tape tape;
  Var x = tape.parameter("x", Array::from_dims({3}, std::vector<Real>{-1, 0, 2}));
  Var loss = dot_const(relu(x), Array(1, 3, 1, 1, 1.0));
  const auto g = tape.backward(loss).at("x");
  CHECK(g.data[0] == 0);
  CHECK(g.data[1] == 0);
  CHECK(g.data[2] == 1);
}

TEST_CASE("elementwise, scalar and mixing ops") {
  std::mt19937_64 rng(5);
  Tape tape;
  Var a = tape.parameter("a", random_array(2, 2, 3, 3, rng));
  Var b = tape.parameter("b", random_array(2, 2, 3, 3, rng));
  Var c = tape.parameter("c", random_array(2, 2, 3, 3, rng));
  Var s = tape.parameter("s", Array::scalar(0.7));
  Var omega = tape.parameter("omega", Array::scalar(0.3));
  Var logits = tape.parameter("logits", random_array(1, 3, 1, 1, rng));
  Var mix = weighted_sum(softmax_vector(logits), {a, b, c});
  Var y = scale(a - b, 1.5) + scalar_mul(s, relu(mix)) + weighted_pair(omega, b, c);
  CHECK(check(tape, probe(y, rng)) < 1e-8);
}

TEST_CASE("pooling and the affine head") {
  std::mt19937_64 rng(6);
  Tape tape;
  Var x = tape.parameter("x", random_array(3, 2, 5, 6, rng));
  Var w = tape.parameter("w", random_array(1, 1, 4, 2, rng));
  Var b = tape.parameter("b", random_array(1, 4, 1, 1, rng));
  Var pooled = global_avg_pool(max_pool(x, 1, 2));
  Var y = linear(pooled, w, b);
  CHECK(y.value().n == 3);
  CHECK(y.value().c == 4);
  CHECK(check(tape, probe(y, rng)) < 1e-8);
}

TEST_CASE("linear head alone is checked to near machine precision") {
  std::mt19937_64 rng(7);
  Tape tape;
  Var x = tape.constant(random_array(4, 5, 1, 1, rng));
  Var w = tape.parameter("w", random_array(1, 1, 3, 5, rng));
  Var b = tape.parameter("b", random_array(1, 3, 1, 1, rng));
  Var loss = probe(linear(x, w, b), rng);
  CHECK(check(tape, loss) < 1e-9);
}

TEST_CASE("batch norm gradients in both modes") {
  std::mt19937_64 rng(8);
  for (NormMode mode : {NormMode::Training, NormMode::Inference}) {
    Tape tape;
    Var x = tape.parameter("x", random_array(4, 3, 3, 3, rng));
    Var g = tape.parameter("gamma", random_array(1, 3, 1, 1, rng, 0.5, 1.5));
    Var b = tape.parameter("beta", random_array(1, 3, 1, 1, rng));
    const std::vector<Real> rm{0.1, -0.2, 0.3};
    const std::vector<Real> rv{1.5, 0.7, 2.0};
    BatchMoments moments;
    Var y = batch_norm(x, g, b, mode, rm, rv, 1e-5, &moments);
    CHECK(check(tape, probe(y, rng)) < 1e-6);
    if (mode == NormMode::Training) {
      REQUIRE(moments.mean.size() == 3);
      const Array& out = y.value();
      for (int c = 0; c < 3; ++c) {
        Real mean = 0;
        for (int i = 0; i < 4; ++i) {
          for (int k = 0; k < 9; ++k) mean += out.data[(i * 3 + c) * 9 + k];
        }
        CHECK(std::abs(mean / 36 - b.value().data[c]) < 1e-12);
      }
    }
  }
}

TEST_CASE("softmax cross entropy: value and closed-form gradient") {
  const int kappa = 5;
  Tape tape;
  Var z = tape.parameter("z", Array(1, kappa, 1, 1, 0.0));
  Var loss = softmax_cross_entropy(z, {0});
  CHECK(loss.value().data[0] == doctest::Approx(std::log(5.0)));
  const auto g = tape.backward(loss).at("z");
  CHECK(g.data[0] == doctest::Approx(1.0 / kappa - 1));
  for (int k = 1; k < kappa; ++k) CHECK(g.data[k] == doctest::Approx(1.0 / kappa));

  std::mt19937_64 rng(9);
  Tape t2;
  Var z2 = t2.parameter("z", random_array(3, 4, 1, 1, rng, -3, 3));
  CHECK(check(t2, softmax_cross_entropy(z2, {1, 3, 0})) < 1e-8);
  CHECK_THROWS_AS(softmax_cross_entropy(z2, {4, 0, 0}), ContractViolation);
}

TEST_CASE("disconnected parameters get zero gradients") {
  Tape tape;
  Var a = tape.parameter("a", Array::scalar(2));
  tape.parameter("unused", Array(1, 2, 1, 1, 1.0));
  Var loss = mean_square(a);
  const auto grads = tape.backward(loss);
  CHECK(grads.at("a").data[0] == doctest::Approx(4));
  CHECK(grads.at("unused").data[0] == 0);
  CHECK(grads.at("unused").data[1] == 0);
}

TEST_CASE("tape replay reproduces recorded values bitwise") {
  std::mt19937_64 rng(10);
  Tape tape;
  Var x = tape.constant(random_array(2, 2, 5, 5, rng));
  Var w = tape.parameter("w", random_array(2, 2, 3, 3, rng));
  Var g = tape.parameter("g", Array(1, 2, 1, 1, 1.0));
  Var b = tape.parameter("b", Array(1, 2, 1, 1, 0.0));
  Var y = relu(batch_norm(conv2d(x, w, Var(), 1, PaddingMode::Zero), g, b, NormMode::Training, {},
                          {}, 1e-5, nullptr));
  Var loss = mean_square(y);
  const Array before = y.value();
  const Real loss_before = loss.value().data[0];
  tape.replay();
  CHECK(y.value().data == before.data);
  CHECK(loss.value().data[0] == loss_before);

  Array w2 = w.value();
  w2.data[0] += 0.5;
  tape.set_value(w, w2);
  tape.replay();
  CHECK(loss.value().data[0] != loss_before);
}

TEST_CASE("shape errors are contract violations") {
  Tape tape;
  Var x = tape.constant(Array(1, 2, 4, 4));
  Var w = tape.constant(Array(3, 3, 3, 3));
  CHECK_THROWS_AS(conv2d(x, w, Var(), 1, PaddingMode::Zero), ContractViolation);
  Var y = tape.constant(Array(1, 2, 4, 3));
  CHECK_THROWS_AS(add(x, y), ContractViolation);
  CHECK_THROWS_AS(tape.backward(x), ContractViolation);
}
