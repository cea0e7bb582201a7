#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "mgnet/mgnet_model.hpp"
#include "oracles.hpp"

using namespace mgnet;

namespace {

MgNetConfig small_config() {
  MgNetConfig cfg;
  cfg.levels = 3;
  cfg.nu = {2, 1, 2};
  cfg.input_channels = 2;
  cfg.c_u = 3;
  cfg.c_f = 4;
  cfg.classes = 5;
  cfg.batchnorm = false;
  cfg.conv_bias = true;
  return cfg;
}

void randomize(ParameterStore& store, std::mt19937_64& rng, Real scale = 0.5) {
  std::uniform_real_distribution<Real> dist(-scale, scale);
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    for (Real& v : e.values) v = dist(rng);
  }
}

void zero_all(ParameterStore& store) {
  for (auto& e : store.entries()) {
    if (e.trainable) std::fill(e.values.begin(), e.values.end(), Real(0));
  }
}

// Copies every entry whose name exists in both stores.
void copy_shared(const ParameterStore& from, ParameterStore& to) {
  for (auto& e : to.entries()) {
    if (from.contains(e.name)) e.values = from.at(e.name).values;
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a.values()[k] != b.values()[k]) return false;
  }
  return true;
}

bool same_trace(const MgNetTrace<Tensor>& a, const MgNetTrace<Tensor>& b) {
  if (a.u.size() != b.u.size()) return false;
  for (std::size_t l = 0; l < a.u.size(); ++l) {
    if (a.u[l].size() != b.u[l].size()) return false;
    for (std::size_t i = 0; i < a.u[l].size(); ++i) {
      if (!bitwise_equal(a.u[l][i], b.u[l][i])) return false;
    }
    if (!bitwise_equal(a.f[l], b.f[l])) return false;
  }
  return true;
}

Tensor conv_of(const ParameterStore& store, const std::string& prefix, const Tensor& x, int stride) {
  return oracle::brute_conv(x, store.kernel(prefix), stride, PaddingMode::Zero);
}

std::size_t names_containing(const std::vector<ParamSpec>& specs, const std::string& piece) {
  std::size_t n = 0;
  for (const auto& s : specs) n += s.name.find(piece) != std::string::npos ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("zero weights give zero features and a pure downsampling chain") {
  std::mt19937_64 rng(1);
  MgNetConfig cfg = small_config();
  ParameterStore store = init_mgnet(cfg, 3);
  zero_all(store);
  // Keep theta0 and R random so f^l is non-trivial.
  std::uniform_real_distribution<Real> dist(-1, 1);
  for (const std::string name : {"fin.theta.weight", "level1.R.weight", "level2.R.weight"}) {
    for (Real& v : store.at(name).values) v = dist(rng);
  }
  const Tensor f = oracle::random_tensor(9, 7, 2, rng);
  const MgNetResult out = mgnet_forward(f, cfg, store);
  for (const auto& level : out.trace.u) {
    for (const Tensor& u : level) CHECK(max_abs(u) == 0);
  }
  for (int l = 0; l + 1 < cfg.levels; ++l) {
    const Tensor expect = conv_of(store, conv_name(l, "R"), out.trace.f[l], 2);
    CHECK(max_abs_diff(out.trace.f[l + 1], expect) < 1e-14);
  }
}

TEST_CASE("CIFAR-sized shape walk for five levels") {
  MgNetConfig cfg;
  cfg.levels = 5;
  cfg.nu = {1, 1, 1, 1, 1};
  cfg.c_u = 2;
  cfg.c_f = 2;
  const ParameterStore store = init_mgnet(cfg, 1);
  std::mt19937_64 rng(2);
  const MgNetResult out = mgnet_forward(oracle::random_tensor(32, 32, 3, rng, 0, 1), cfg, store);
  const int expect[] = {32, 16, 8, 4, 2};
  for (int l = 0; l < 5; ++l) {
    CHECK(out.trace.f[l].height() == expect[l]);
    CHECK(out.trace.f[l].width() == expect[l]);
    CHECK(out.trace.u[l].back().height() == expect[l]);
  }
}

TEST_CASE("nu_J = 0 pools the last level into the head") {
  MgNetConfig cfg = small_config();
  cfg.nu = {1, 1, 0};
  ParameterStore store = init_mgnet(cfg, 4);
  std::mt19937_64 rng(3);
  randomize(store, rng);
  const MgNetResult out = mgnet_forward(oracle::random_tensor(8, 8, 2, rng), cfg, store);
  const Tensor& u1 = out.trace.u[1].back();
  CHECK(out.u_final.height() == 1);
  CHECK(max_abs_diff(out.u_final, global_average(u1)) < 1e-15);
  CHECK(out.trace.f[2].empty());
  CHECK_FALSE(store.contains("level2.R.weight"));
  CHECK_FALSE(store.contains("level3.A.weight"));
}

TEST_CASE("trace recomputation: Pi enters only through the two transfer formulas") {
  for (PiVariant pi : {PiVariant::Pi0, PiVariant::Pi1, PiVariant::Pi2}) {
    MgNetConfig cfg = small_config();
    cfg.pi = pi;
    ParameterStore store = init_mgnet(cfg, 5);
    std::mt19937_64 rng(6);
    randomize(store, rng);
    const Tensor f = oracle::random_tensor(7, 9, 2, rng);
    const MgNetResult out = mgnet_forward(f, cfg, store);
    for (int l = 0; l + 1 < cfg.levels; ++l) {
      const Tensor& u = out.trace.u[l].back();
      Tensor next_u;
      if (pi == PiVariant::Pi0) {
        next_u = Tensor((u.height() + 1) / 2, (u.width() + 1) / 2, cfg.c_u);
      } else if (pi == PiVariant::Pi1) {
        next_u = conv_of(store, conv_name(l, "Pi"), u, 2);
      } else {
        next_u = oracle::brute_channelwise(u, store.kernel(conv_name(l, "Pi")), 2);
      }
      CHECK(max_abs_diff(out.trace.u[l + 1][0], next_u) < 1e-13);
      const Tensor residual =
          oracle::brute_add(out.trace.f[l], conv_of(store, conv_name(l, "A"), u, 1), -1);
      const Tensor next_f = oracle::brute_add(conv_of(store, conv_name(l, "R"), residual, 2),
                                              conv_of(store, conv_name(l + 1, "A"), next_u, 1));
      CHECK(max_abs_diff(out.trace.f[l + 1], next_f) < 1e-12);
    }
  }
}

TEST_CASE("single-step smoothing matches the residual-correction formula") {
  MgNetConfig cfg = small_config();
  cfg.extractor = ExtractorStrategy::Variable;
  ParameterStore store = init_mgnet(cfg, 7);
  std::mt19937_64 rng(8);
  randomize(store, rng);
  const MgNetResult out = mgnet_forward(oracle::random_tensor(6, 6, 2, rng), cfg, store);
  for (int l = 0; l < cfg.levels; ++l) {
    for (int i = 1; i <= cfg.nu[l]; ++i) {
      const Tensor& prev = out.trace.u[l][i - 1];
      const Tensor r = oracle::brute_add(out.trace.f[l], conv_of(store, conv_name(l, "A"), prev, 1), -1);
      const std::string eta = conv_name(l, "step" + std::to_string(i) + ".eta");
      const Tensor b = oracle::brute_relu(conv_of(store, eta, oracle::brute_relu(r), 1));
      CHECK(max_abs_diff(out.trace.u[l][i], oracle::brute_add(prev, b)) < 1e-12);
    }
  }
}

TEST_CASE("degenerate multi-step and Chebyshev weights reproduce single-step bitwise") {
  for (ExtractorStrategy strategy :
       {ExtractorStrategy::Constant, ExtractorStrategy::Scaled, ExtractorStrategy::Variable}) {
    for (bool bn : {false, true}) {
      MgNetConfig base = small_config();
      base.nu = {3, 2, 3};
      base.extractor = strategy;
      base.batchnorm = bn;
      ParameterStore single = init_mgnet(base, 9);
      std::mt19937_64 rng(10);
      randomize(single, rng);
      const Tensor f = oracle::random_tensor(8, 7, 2, rng);
      const MgNetResult ref = mgnet_forward(f, base, single);

      MgNetConfig multi_cfg = base;
      multi_cfg.smoothing = SmoothingVariant::MultiStep;
      ParameterStore multi = init_mgnet(multi_cfg, 0);
      copy_shared(single, multi);
      for (int l = 0; l < base.levels; ++l) {
        for (int i = 1; i <= base.nu[l]; ++i) {
          auto& alpha = multi.at(conv_name(l, "step" + std::to_string(i) + ".alpha")).values;
          std::fill(alpha.begin(), alpha.end(), -std::numeric_limits<Real>::infinity());
          alpha.back() = 0;
        }
      }
      CHECK(same_trace(mgnet_forward(f, multi_cfg, multi).trace, ref.trace));

      MgNetConfig cheb_cfg = base;
      cheb_cfg.smoothing = SmoothingVariant::ChebyshevSemi;
      ParameterStore cheb = init_mgnet(cheb_cfg, 0);
      copy_shared(single, cheb);
      CHECK(same_trace(mgnet_forward(f, cheb_cfg, cheb).trace, ref.trace));
    }
  }
}

TEST_CASE("multi-step residual recursion with linear maps") {
  MgNetConfig cfg = small_config();
  cfg.nu = {4, 3, 2};
  cfg.smoothing = SmoothingVariant::MultiStep;
  cfg.extractor_form = ExtractorForm::Linear;
  cfg.extractor = ExtractorStrategy::Variable;
  cfg.conv_bias = false;
  ParameterStore store = init_mgnet(cfg, 11);
  std::mt19937_64 rng(12);
  randomize(store, rng, 0.3);
  const MgNetResult out = mgnet_forward(oracle::random_tensor(8, 8, 2, rng), cfg, store);
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string a = conv_name(l, "A");
    std::vector<Tensor> r;
    for (const Tensor& u : out.trace.u[l]) r.push_back(oracle::brute_add(out.trace.f[l], conv_of(store, a, u, 1), -1));
    for (int i = 1; i <= cfg.nu[l]; ++i) {
      const std::string step = conv_name(l, "step" + std::to_string(i));
      const std::vector<Real> alpha = softmax(store.at(step + ".alpha").values);
      Tensor expect(r[0].height(), r[0].width(), r[0].channels());
      for (int j = 0; j < i; ++j) {
        const Tensor abr = conv_of(store, a, conv_of(store, step + ".eta", r[j], 1), 1);
        expect = oracle::brute_add(expect, alpha[j] * oracle::brute_add(r[j], abr, -1));
      }
      CHECK(max_abs_diff(r[i], expect) < 1e-12);
    }
  }
}

TEST_CASE("multi-step weights off the simplex are rejected") {
  MgNetConfig cfg = small_config();
  cfg.smoothing = SmoothingVariant::MultiStep;
  ParameterStore store = init_mgnet(cfg, 13);
  store.at("level1.step2.alpha").values[0] = std::numeric_limits<Real>::quiet_NaN();
  std::mt19937_64 rng(14);
  CHECK_THROWS_AS(mgnet_forward(oracle::random_tensor(5, 5, 2, rng), cfg, store), ContractViolation);
}

TEST_CASE("V-cycle: degenerate cases and a hand-unrolled two-level reference") {
  MgNetConfig cfg = small_config();
  cfg.levels = 2;
  cfg.nu = {1, 1};
  cfg.v_cycle = true;
  cfg.nu_up = {1, 0};
  std::mt19937_64 rng(15);
  const Tensor f = oracle::random_tensor(7, 6, 2, rng);

  ParameterStore store = init_mgnet(cfg, 16);
  randomize(store, rng);
  const Tensor v = v_mgnet_forward(f, cfg, store);

  const Tensor f1 = oracle::brute_relu(conv_of(store, "fin.theta", f, 1));
  auto b = [&](const std::string& eta, const Tensor& r) {
    return oracle::brute_relu(conv_of(store, eta, oracle::brute_relu(r), 1));
  };
  auto residual = [&](int l, const Tensor& fl, const Tensor& u) {
    return oracle::brute_add(fl, conv_of(store, conv_name(l, "A"), u, 1), -1);
  };
  const Tensor u10(7, 6, cfg.c_u);
  const Tensor u11 = oracle::brute_add(u10, b("level1.eta", residual(0, f1, u10)));
  const Tensor u20 = conv_of(store, "level1.Pi", u11, 2);
  const Tensor f2 = oracle::brute_add(conv_of(store, "level1.R", residual(0, f1, u11), 2),
                                      conv_of(store, "level2.A", u20, 1));
  const Tensor u21 = oracle::brute_add(u20, b("level2.eta", residual(1, f2, u20)));
  ConvKernel p = store.kernel("level1.P");
  Tensor up = oracle::brute_add(u11, oracle::brute_conv_transpose(oracle::brute_add(u21, u20, -1), p, 2, 7, 6));
  up = oracle::brute_add(up, b("level1.up1.eta", residual(0, f1, up)));
  CHECK(max_abs_diff(v, up) < 1e-12);

  cfg.nu_up = {0, 0};
  ParameterStore quiet = init_mgnet(cfg, 17);
  randomize(quiet, rng);
  std::fill(quiet.at("level1.P.weight").values.begin(), quiet.at("level1.P.weight").values.end(), Real(0));
  CHECK(bitwise_equal(v_mgnet_forward(f, cfg, quiet), mgnet_forward(f, cfg, quiet).trace.u[0].back()));

  zero_all(quiet);
  CHECK(max_abs(v_mgnet_forward(f, cfg, quiet)) == 0);
}

TEST_CASE("classify returns a distribution; ties go to the lowest index") {
  MgNetConfig cfg = small_config();
  ParameterStore store = init_mgnet(cfg, 18);
  std::mt19937_64 rng(19);
  randomize(store, rng, 2);
  const std::vector<Real> p = classify(oracle::random_tensor(3, 3, cfg.c_u, rng), cfg, store);
  Real total = 0;
  for (Real v : p) {
    CHECK(v >= 0);
    CHECK(v <= 1);
    total += v;
  }
  CHECK(std::abs(total - 1) < 1e-14);

  std::fill(store.at("head.bias").values.begin(), store.at("head.bias").values.end(), Real(0));
  const std::vector<Real> uniform = classify(Tensor(2, 2, cfg.c_u), cfg, store);
  for (Real v : uniform) CHECK(v == doctest::Approx(1.0 / cfg.classes));
  CHECK(argmax(uniform) == 0);
}

TEST_CASE("f_in variants") {
  MgNetConfig cfg = small_config();
  cfg.input_channels = 4;
  cfg.c_f = 4;
  ParameterStore store = init_mgnet(cfg, 20);
  const ConvKernel id = ConvKernel::identity(4, 1);
  store.at("fin.theta.weight").values = id.weights;
  std::fill(store.at("fin.theta.bias").values.begin(), store.at("fin.theta.bias").values.end(), Real(0));
  std::mt19937_64 rng(21);
  const Tensor pos = oracle::random_tensor(5, 6, 4, rng, 0, 1);
  CHECK(max_abs_diff(f_in(pos, cfg, store), pos) == 0);
  const Tensor mixed = oracle::random_tensor(5, 6, 4, rng);
  CHECK(max_abs_diff(f_in(mixed, cfg, store), oracle::brute_relu(mixed)) == 0);
  cfg.f_in = FinVariant::ConvReluMaxpool;
  const Tensor pooled = f_in(mixed, cfg, store);
  CHECK(pooled.height() == 3);
  CHECK(pooled.width() == 3);
}

TEST_CASE("f_in is positively homogeneous without bias or batch norm") {
  MgNetConfig cfg = small_config();
  cfg.conv_bias = false;
  ParameterStore store = init_mgnet(cfg, 22);
  std::mt19937_64 rng(23);
  const Tensor f = oracle::random_tensor(6, 5, 2, rng);
  for (Real lambda : {0.5, 3.0, 17.25}) {
    const Tensor lhs = f_in(lambda * f, cfg, store);
    const Tensor rhs = lambda * f_in(f, cfg, store);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-13 * lambda * (1 + max_abs(rhs)));
  }
}

TEST_CASE("parameter counts") {
  MgNetConfig head_only;
  head_only.c_u = 256;
  head_only.classes = 10;
  std::size_t head = 0;
  for (const auto& s : mgnet_layout(head_only)) {
    if (s.name.rfind("head.", 0) == 0) head += element_count(s.dims);
  }
  CHECK(head == 2570);

  // Independent tally for J = 5, nu = (2,2,2,2,0), shared A, variable eta,
  // R and Pi on the three strided transitions, batch norm around every eta.
  auto tally = [](std::size_t cu, std::size_t cf, int pi) {
    const std::size_t conv_a = cf * cu * 9;
    const std::size_t conv_eta = cu * cf * 9;
    const std::size_t conv_r = cf * cf * 9;
    const std::size_t conv_pi = pi == 1 ? cu * cu * 9 : (pi == 2 ? 9 : 0);
    const std::size_t fin = 3 * cf * 9 + 2 * cf;
    const std::size_t steps = 8;
    return fin + conv_a + steps * (conv_eta + 2 * cf + 2 * cu) + 3 * (conv_r + conv_pi) + cu * 10 + 10;
  };
  const std::size_t p1 = count_params(mgnet_preset("mgnet-256-256-pi1", 10));
  CHECK(p1 == tally(256, 256, 1));
  CHECK(p1 == 8865546);
  CHECK(std::abs(static_cast<double>(p1) - 8.9e6) / 8.9e6 < 0.05);
  const std::size_t wide1 = count_params(mgnet_preset("mgnet-256-512-pi1", 10));
  const std::size_t wide2 = count_params(mgnet_preset("mgnet-256-512-pi2", 10));
  CHECK(wide1 == tally(256, 512, 1));
  CHECK(wide2 == tally(256, 512, 2));
  CHECK(p1 < wide1);
  CHECK(wide2 < wide1);
  CHECK(count_params(mgnet_preset("mgnet-256-256-pi0", 10)) < p1);
  CHECK_THROWS_AS(mgnet_preset("mgnet-256", 10), ContractViolation);
}

TEST_CASE("constant extractors share one eta and one A per level") {
  MgNetConfig cfg = small_config();
  cfg.nu = {3, 4, 2};
  const auto specs = mgnet_layout(cfg);
  for (int l = 0; l < 3; ++l) {
    CHECK(names_containing(specs, conv_name(l, "eta.weight")) == 1);
    CHECK(names_containing(specs, conv_name(l, "A.weight")) == 1);
  }
  cfg.extractor = ExtractorStrategy::Variable;
  CHECK(names_containing(mgnet_layout(cfg), ".eta.weight") == 9);
  cfg.shared_data_feature = true;
  CHECK(names_containing(mgnet_layout(cfg), "A.weight") == 1);
}

TEST_CASE("errors name the offending level or field") {
  MgNetConfig cfg = small_config();
  ParameterStore store = init_mgnet(cfg, 24);
  std::mt19937_64 rng(25);
  CHECK_THROWS_AS(mgnet_forward(oracle::random_tensor(5, 5, 3, rng), cfg, store), ContractViolation);

  ParameterStore wrong = store;
  wrong.at("level2.R.weight").dims = {2, 8, 3, 3};
  try {
    mgnet_forward(oracle::random_tensor(5, 5, 2, rng), cfg, wrong);
    FAIL("expected a contract violation");
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("level2") != std::string::npos);
  }

  MgNetConfig bad = cfg;
  bad.nu = {1, 1};
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = cfg;
  bad.extractor_form = ExtractorForm::Linear;
  bad.batchnorm = true;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = cfg;
  bad.v_cycle = true;
  bad.nu_up = {0, 0, 0};
  bad.nu = {1, 1, 0};
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("training-mode graph updates running statistics") {
  MgNetConfig cfg = small_config();
  cfg.batchnorm = true;
  ParameterStore store = init_mgnet(cfg, 26);
  std::mt19937_64 rng(27);
  std::vector<Tensor> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(oracle::random_tensor(6, 6, 2, rng));
  ad::Tape tape;
  const MgNetGraph graph = build_mgnet_graph(tape, ad::Array::from_tensors(batch), cfg, store,
                                             ad::NormMode::Training, ParamBinding::Trainable);
  const auto& record = graph.batch_norms->at("fin.bn");
  CHECK(record.count == 3 * 36);
  const std::vector<Real> before = store.at("fin.bn.running_var").values;
  update_running_stats(store, *graph.batch_norms, 0.1);
  const auto& mean = store.at("fin.bn.running_mean").values;
  const auto& var = store.at("fin.bn.running_var").values;
  for (int c = 0; c < cfg.c_f; ++c) {
    CHECK(mean[c] == doctest::Approx(0.1 * record.moments.mean[c]));
    CHECK(var[c] == doctest::Approx(0.9 * before[c] + 0.1 * record.moments.var[c] * 108.0 / 107.0));
  }
  CHECK(tape.parameters().contains("fin.theta.weight"));
  CHECK_FALSE(tape.parameters().contains("fin.bn.running_mean"));
}
