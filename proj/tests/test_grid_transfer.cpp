#include <random>

#include "doctest.h"
#include "mgnet/grid_transfer.hpp"
#include "oracles.hpp"

using namespace mgnet;

namespace {

// Columns of the library restriction, assembled by restricting unit vectors.
oracle::Dense restriction_matrix(int mf, int nf, ProlongationMode mode) {
  const int mc = (mf + 1) / 2;
  const int nc = (nf + 1) / 2;
  oracle::Dense r(mc * nc, mf * nf);
  for (int col = 0; col < mf * nf; ++col) {
    Tensor e(mf, nf, 1);
    e.values()[col] = 1;
    const Tensor out = restrict_kr(e, mode);
    for (int row = 0; row < mc * nc; ++row) r(row, col) = out.values()[row];
  }
  return r;
}

}  // namespace

TEST_CASE("grid hierarchies") {
  const GridHierarchy mg = GridHierarchy::multigrid(17, 33, 3);
  CHECK(mg.size(0) == std::pair{17, 33});
  CHECK(mg.size(1) == std::pair{9, 17});
  CHECK(mg.size(2) == std::pair{5, 9});
  CHECK_THROWS_AS(GridHierarchy::multigrid(16, 17, 2), ContractViolation);
  CHECK_THROWS_AS(GridHierarchy::multigrid(5, 5, 4), ContractViolation);
  CHECK_NOTHROW(GridHierarchy::multigrid(5, 5, 3));

  const GridHierarchy cnn = GridHierarchy::strided(32, 32, 5);
  const int expected[] = {32, 16, 8, 4, 2};
  for (int l = 0; l < 5; ++l) CHECK(cnn.size(l).first == expected[l]);
}

TEST_CASE("prolongation of constants and of the 2x2 example") {
  for (ProlongationMode mode : {ProlongationMode::Bilinear, ProlongationMode::Linear}) {
    const Tensor fine = prolongate(Tensor(3, 4, 2, 2.5), mode);
    CHECK(fine.height() == 5);
    CHECK(fine.width() == 7);
    for (Real v : fine.values()) CHECK(v == 2.5);
  }
  const Tensor coarse = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor bl = prolongate(coarse, ProlongationMode::Bilinear);
  const Tensor expected = Tensor::from_rows({{1, 1.5, 2}, {2, 2.5, 3}, {3, 3.5, 4}});
  CHECK(max_abs_diff(bl, expected) == 0);
  const Tensor li = prolongate(coarse, ProlongationMode::Linear);
  CHECK(max_abs_diff(li, expected) == 0);
  CHECK(li(1, 1, 0) == 2.5);

  // A case where the two center rules differ.
  const Tensor skew = Tensor::from_rows({{0, 2}, {6, 0}});
  CHECK(prolongate(skew, ProlongationMode::Bilinear)(1, 1, 0) == 2);
  CHECK(prolongate(skew, ProlongationMode::Linear)(1, 1, 0) == 4);
}

TEST_CASE("prolongation reproduces (bi)linear functions exactly") {
  for (ProlongationMode mode : {ProlongationMode::Bilinear, ProlongationMode::Linear}) {
    Tensor coarse(4, 5, 1);
    auto g = [&](Real x, Real y) {
      return mode == ProlongationMode::Bilinear ? 1 + 2 * x - y + 0.5 * x * y : 3 - x + 4 * y;
    };
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 5; ++j) coarse(i, j, 0) = g(2 * i, 2 * j);
    }
    const Tensor fine = prolongate(coarse, mode);
    for (int i = 0; i < fine.height(); ++i) {
      for (int j = 0; j < fine.width(); ++j) CHECK(fine(i, j, 0) == doctest::Approx(g(i, j)));
    }
  }
}

TEST_CASE("restriction kernels are the published matrices") {
  const ConvKernel bl = restriction_kernel(ProlongationMode::Bilinear);
  const Real want_bl[3][3] = {{0.25, 0.5, 0.25}, {0.5, 1, 0.5}, {0.25, 0.5, 0.25}};
  const ConvKernel li = restriction_kernel(ProlongationMode::Linear);
  const Real want_li[3][3] = {{0, 0.5, 0.5}, {0.5, 1, 0.5}, {0.5, 0.5, 0}};
  for (int p = -1; p <= 1; ++p) {
    for (int q = -1; q <= 1; ++q) {
      CHECK(bl(0, 0, p, q) == want_bl[p + 1][q + 1]);
      CHECK(li(0, 0, p, q) == want_li[p + 1][q + 1]);
    }
  }
}

TEST_CASE("restriction equals the transpose of prolongation up to 9x9") {
  for (ProlongationMode mode : {ProlongationMode::Bilinear, ProlongationMode::Linear}) {
    for (int mc = 2; mc <= 5; ++mc) {
      for (int nc = 2; nc <= 5; ++nc) {
        const oracle::Dense p =
            oracle::prolongation_matrix(mc, nc, mode == ProlongationMode::Bilinear);
        const oracle::Dense r = restriction_matrix(2 * mc - 1, 2 * nc - 1, mode);
        const oracle::Dense pt = oracle::transpose(p);
        CHECK(oracle::max_diff(r.a, pt.a) == 0);
      }
    }
  }
}

TEST_CASE("library prolongation matches the oracle matrix") {
  std::mt19937_64 rng(1);
  for (ProlongationMode mode : {ProlongationMode::Bilinear, ProlongationMode::Linear}) {
    const Tensor coarse = oracle::random_tensor(5, 3, 1, rng);
    const auto want = oracle::matvec(
        oracle::prolongation_matrix(5, 3, mode == ProlongationMode::Bilinear), oracle::flatten(coarse));
    CHECK(oracle::max_diff(oracle::flatten(prolongate(coarse, mode)), want) < 1e-15);
  }
}

TEST_CASE("prolongation equals the transposed stride-2 convolution with K_R") {
  std::mt19937_64 rng(2);
  for (ProlongationMode mode : {ProlongationMode::Bilinear, ProlongationMode::Linear}) {
    const Tensor coarse = oracle::random_tensor(5, 4, 1, rng);
    const Tensor via_conv = conv2d_transpose(coarse, restriction_kernel(mode), 2, 9, 7);
    CHECK(max_abs_diff(via_conv, prolongate(coarse, mode)) < 1e-15);
  }
}

TEST_CASE("restriction of a delta is K_R around the coarse node") {
  Tensor delta(9, 9, 1);
  delta(4, 4, 0) = 1;
  const Tensor out = restrict_kr(delta, ProlongationMode::Bilinear);
  CHECK(out.height() == 5);
  CHECK(out(2, 2, 0) == 1);
  Real total = 0;
  for (Real v : out.values()) total += v;
  CHECK(total == 1);
  // Odd fine node: weights spread onto the neighbouring coarse nodes.
  Tensor odd(9, 9, 1);
  odd(3, 5, 0) = 1;
  const Tensor o = restrict_kr(odd, ProlongationMode::Bilinear);
  CHECK(o(1, 2, 0) == 0.25);
  CHECK(o(2, 3, 0) == 0.25);
  CHECK(o(1, 3, 0) == 0.25);
  CHECK(o(2, 2, 0) == 0.25);
}

TEST_CASE("pooling") {
  const ConvKernel avg = average_kernel();
  for (Real v : avg.weights) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-15));

  for (int k : {0, 1, 2}) {
    for (int s : {1, 2, 3}) {
      const Tensor out = pool(Tensor(5, 6, 2, 1.5), PoolKind::Max, s, k);
      for (Real v : out.values()) CHECK(v == 1.5);
    }
  }

  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor(7, 7, 1, rng);
  const Tensor px = pool(x, PoolKind::Average3x3, 1);
  const Tensor shifted = pool(3.0 * x + Tensor(7, 7, 1, 2.0), PoolKind::Average3x3, 1);
  for (int i = 1; i < 6; ++i) {
    for (int j = 1; j < 6; ++j) CHECK(shifted(i, j, 0) == doctest::Approx(3 * px(i, j, 0) + 2));
  }
}

TEST_CASE("Pi variants") {
  std::mt19937_64 rng(4);
  const Tensor u = oracle::random_tensor(8, 6, 3, rng);
  const Tensor z = interpolate_pi(u, PiVariant::Pi0, ConvKernel());
  CHECK(z.height() == 4);
  CHECK(z.width() == 3);
  CHECK(z.channels() == 3);
  CHECK(max_abs(z) == 0);

  const Tensor sub = interpolate_pi(u, PiVariant::Pi2, ConvKernel::identity(1, 0));
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(sub(i, j, c) == u(2 * i, 2 * j, c));
    }
  }

  CHECK(pi_weight_count(PiVariant::Pi2, 256, 1) == 9);
  CHECK(pi_weight_count(PiVariant::Pi1, 256, 1) == 9 * 256 * 256);
  CHECK(pi_weight_count(PiVariant::Pi0, 256, 1) == 0);

  CHECK_THROWS_AS(interpolate_pi(u, PiVariant::Pi1, ConvKernel::identity(2)), ContractViolation);
  CHECK_THROWS_AS(interpolate_pi(u, PiVariant::Pi2, ConvKernel::identity(3)), ContractViolation);
}
