#include "mgnet/mgnet_model.hpp"

#include <cmath>
#include <regex>

namespace mgnet {

namespace {

std::string level_tag(int level) { return "level" + std::to_string(level + 1); }

std::string join(const std::string& a, const std::string& b) { return a + "." + b; }

std::string step_tag(int level, int i) { return join(level_tag(level), "step" + std::to_string(i)); }

std::string up_tag(int level, int i) { return join(level_tag(level), "up" + std::to_string(i)); }

std::string a_prefix(const MgNetConfig& cfg, int level) {
  return cfg.shared_data_feature ? std::string("A") : join(level_tag(level), "A");
}

std::string eta_prefix(const MgNetConfig& cfg, int level, int i) {
  return cfg.extractor == ExtractorStrategy::Variable ? join(step_tag(level, i), "eta")
                                                      : join(level_tag(level), "eta");
}

bool level_has_data(const MgNetConfig& cfg, int level) {
  return !(cfg.head_pooling() && level == cfg.levels - 1);
}

bool transition_is_pooling(const MgNetConfig& cfg, int level) {
  return cfg.head_pooling() && level == cfg.levels - 2;
}

class LayoutBuilder {
 public:
  explicit LayoutBuilder(const MgNetConfig& cfg) : cfg_(cfg), window_(2 * cfg.kernel_half_width + 1) {}

  void conv(const std::string& prefix, int out, int in, bool bias) {
    specs_.push_back({prefix + ".weight", {out, in, window_, window_}, true, InitKind::He, in * window_ * window_});
    if (bias) specs_.push_back({prefix + ".bias", {out}, true, InitKind::Zero, 1});
  }

  void bn(const std::string& prefix, int channels) {
    if (!cfg_.batchnorm) return;
    specs_.push_back({prefix + ".gamma", {channels}, true, InitKind::One, 1});
    specs_.push_back({prefix + ".beta", {channels}, true, InitKind::Zero, 1});
    specs_.push_back({prefix + ".running_mean", {channels}, false, InitKind::Zero, 1});
    specs_.push_back({prefix + ".running_var", {channels}, false, InitKind::One, 1});
  }

  void scalar(const std::string& name, std::vector<int> dims, InitKind init) {
    specs_.push_back({name, std::move(dims), true, init, 1});
  }

  void extractor(const std::string& eta, const std::string& step, bool new_eta) {
    if (new_eta) conv(eta, cfg_.c_u, cfg_.c_f, cfg_.conv_bias);
    if (cfg_.extractor_form == ExtractorForm::ReluSandwich) {
      bn(join(step, "bn1"), cfg_.c_f);
      bn(join(step, "bn2"), cfg_.c_u);
    }
  }

  std::vector<ParamSpec> build() {
    const MgNetConfig& c = cfg_;
    conv("fin.theta", c.c_f, c.input_channels, c.conv_bias);
    bn("fin.bn", c.c_f);
    for (int l = 0; l < c.levels; ++l) {
      if (level_has_data(c, l) && (!c.shared_data_feature || l == 0)) {
        conv(a_prefix(c, l), c.c_f, c.c_u, false);
      }
      for (int i = 1; i <= c.nu[l]; ++i) {
        const bool new_eta = c.extractor == ExtractorStrategy::Variable || i == 1;
        extractor(eta_prefix(c, l, i), step_tag(l, i), new_eta);
        if (c.extractor == ExtractorStrategy::Scaled) {
          scalar(join(step_tag(l, i), "scale"), {1}, InitKind::One);
        }
        if (c.smoothing == SmoothingVariant::MultiStep) {
          scalar(join(step_tag(l, i), "alpha"), {i}, InitKind::Zero);
        }
        if (c.smoothing == SmoothingVariant::ChebyshevSemi && i >= 2) {
          scalar(join(step_tag(l, i), "omega"), {1}, InitKind::One);
        }
      }
      if (l + 1 < c.levels && !transition_is_pooling(c, l)) {
        conv(join(level_tag(l), "R"), c.c_f, c.c_f, c.conv_bias);
        if (c.pi == PiVariant::Pi1) conv(join(level_tag(l), "Pi"), c.c_u, c.c_u, c.conv_bias);
        if (c.pi == PiVariant::Pi2) conv(join(level_tag(l), "Pi"), 1, 1, c.conv_bias);
      }
    }
    if (c.v_cycle) {
      for (int l = 0; l + 1 < c.levels; ++l) {
        specs_.push_back({join(level_tag(l), "P.weight"),
                          {c.c_u, c.c_u, window_, window_},
                          true,
                          InitKind::He,
                          c.c_u * window_ * window_});
        for (int i = 1; i <= c.nu_up[l]; ++i) {
          extractor(join(up_tag(l, i), "eta"), up_tag(l, i), true);
        }
      }
    }
    specs_.push_back({"head.weight", {c.classes, c.c_u}, true, InitKind::Small, c.c_u});
    specs_.push_back({"head.bias", {c.classes}, true, InitKind::Zero, 1});
    return std::move(specs_);
  }

 private:
  const MgNetConfig& cfg_;
  int window_;
  std::vector<ParamSpec> specs_;
};

ad::Array zeros_like_grid(const ad::Array& like, int channels, int stride) {
  return ad::Array(like.n, channels, strided_extent(like.h, stride), strided_extent(like.w, stride));
}

class GraphBuilder {
 public:
  GraphBuilder(ad::Tape& tape, const MgNetConfig& cfg, const ParameterStore& store, ad::NormMode mode,
               ParamBinding binding)
      : tape_(tape), cfg_(cfg), store_(store), binder_(tape, store, mode, binding, cfg.bn_eps) {}

  std::shared_ptr<BatchNormRecords> records() const { return binder_.records(); }

  ad::Var param(const std::string& name) { return binder_.param(name); }

  ad::Var conv(const ad::Var& x, const std::string& prefix, int stride) {
    return binder_.conv(x, prefix, stride);
  }

  ad::Var bn(const ad::Var& x, const std::string& prefix) {
    return cfg_.batchnorm ? binder_.bn(x, prefix) : x;
  }

  ad::Var f_in(const ad::Var& f) {
    ad::Var x = ad::relu(bn(conv(f, "fin.theta", 1), "fin.bn"));
    if (cfg_.f_in == FinVariant::ConvReluMaxpool) x = ad::max_pool(x, 1, 2);
    return x;
  }

  ad::Var extract(const ad::Var& r, const std::string& eta, const std::string& step) {
    if (cfg_.extractor_form == ExtractorForm::Linear) {
      return scaled(conv(r, eta, 1), step);
    }
    ad::Var x = ad::relu(bn(r, join(step, "bn1")));
    ad::Var y = scaled(conv(x, eta, 1), step);
    return ad::relu(bn(y, join(step, "bn2")));
  }

  ad::Var scaled(const ad::Var& y, const std::string& step) {
    if (cfg_.extractor != ExtractorStrategy::Scaled || !store_.contains(join(step, "scale"))) return y;
    return ad::scalar_mul(param(join(step, "scale")), y);
  }

  ad::Var interpolate(int l, const ad::Var& u) {
    if (transition_is_pooling(cfg_, l)) return ad::global_avg_pool(u);
    switch (cfg_.pi) {
      case PiVariant::Pi0:
        return tape_.constant(zeros_like_grid(u.value(), cfg_.c_u, 2));
      case PiVariant::Pi1:
        return conv(u, join(level_tag(l), "Pi"), 2);
      case PiVariant::Pi2: {
        const std::string prefix = join(level_tag(l), "Pi");
        return ad::conv2d_channelwise(u, param(prefix + ".weight"), binder_.optional(prefix + ".bias"), 2,
                                      PaddingMode::Zero);
      }
    }
    throw ContractViolation("interpolate: unknown Pi variant");
  }

  ad::Var combine(int l, int i, const std::vector<ad::Var>& terms) {
    if (cfg_.smoothing == SmoothingVariant::MultiStep) {
      ad::Var weights = ad::softmax_vector(param(join(step_tag(l, i), "alpha")));
      Real total = 0;
      bool valid = true;
      for (Real w : weights.value().data) {
        valid = valid && std::isfinite(w) && w >= 0;
        total += w;
      }
      require(valid && std::abs(total - 1) < Real(1e-9),
              "multi-step weights are not on the simplex at step " + std::to_string(i));
      return ad::weighted_sum(weights, terms);
    }
    return ad::weighted_pair(param(join(step_tag(l, i), "omega")), terms[0], terms[1]);
  }

  LevelOps<ad::Var> level_ops() {
    LevelOps<ad::Var> ops;
    ops.initial_feature = [this](const ad::Var& f1) {
      return tape_.constant(zeros_like_grid(f1.value(), cfg_.c_u, 1));
    };
    ops.data_feature = [this](int l, const ad::Var& u) { return conv(u, a_prefix(cfg_, l), 1); };
    ops.extract = [this](int l, int i, const ad::Var& r) {
      return extract(r, eta_prefix(cfg_, l, i), step_tag(l, i));
    };
    ops.restrict_data = [this](int l, const ad::Var& r) { return conv(r, join(level_tag(l), "R"), 2); };
    ops.interpolate = [this](int l, const ad::Var& u) { return interpolate(l, u); };
    ops.combine = [this](int l, int i, const std::vector<ad::Var>& terms) { return combine(l, i, terms); };
    ops.coarsest_data = !cfg_.head_pooling();
    return ops;
  }

  UpOps<ad::Var> up_ops(const GridHierarchy& grids) {
    UpOps<ad::Var> up;
    up.prolong = [this, grids](int l, const ad::Var& coarse) {
      const auto [h, w] = grids.size(l);
      return ad::conv2d_transpose(coarse, param(join(level_tag(l), "P.weight")), 2, h, w);
    };
    up.extract_up = [this](int l, int i, const ad::Var& r) {
      return extract(r, join(up_tag(l, i), "eta"), up_tag(l, i));
    };
    return up;
  }

  ad::Var head(const ad::Var& u) {
    return ad::linear(ad::global_avg_pool(u), param("head.weight"), param("head.bias"));
  }

 private:
  ad::Tape& tape_;
  const MgNetConfig& cfg_;
  const ParameterStore& store_;
  TapeBinder binder_;
};

void check_input(const ad::Array& input, const MgNetConfig& cfg) {
  require(input.c == cfg.input_channels, "mgnet: input has " + std::to_string(input.c) +
                                             " channels, config expects " +
                                             std::to_string(cfg.input_channels));
  require(input.n >= 1 && input.h >= 1 && input.w >= 1, "mgnet: empty input");
}

Tensor to_tensor(const ad::Var& v) { return v.valid() ? v.value().to_tensor(0) : Tensor(); }

MgNetTrace<Tensor> to_tensor_trace(const MgNetTrace<ad::Var>& trace) {
  MgNetTrace<Tensor> out;
  for (const auto& level : trace.u) {
    out.u.emplace_back();
    for (const ad::Var& v : level) out.u.back().push_back(to_tensor(v));
  }
  for (const ad::Var& f : trace.f) out.f.push_back(to_tensor(f));
  return out;
}

}  // namespace

void MgNetConfig::validate() const {
  require(levels >= 1, "MgNetConfig: levels must be >= 1");
  require(static_cast<int>(nu.size()) == levels, "MgNetConfig: nu needs one entry per level");
  for (int n : nu) require(n >= 0, "MgNetConfig: nu entries must be >= 0");
  require(c_u >= 1 && c_f >= 1, "MgNetConfig: channel counts must be >= 1");
  require(input_channels >= 1, "MgNetConfig: input_channels must be >= 1");
  require(classes >= 1, "MgNetConfig: classes must be >= 1");
  require(kernel_half_width >= 0, "MgNetConfig: kernel_half_width must be >= 0");
  require(!(levels == 1 && nu[0] == 0), "MgNetConfig: a single level needs nu_1 >= 1");
  require(!(extractor_form == ExtractorForm::Linear && batchnorm),
          "MgNetConfig: linear extractors are used without batch norm");
  require(bn_eps > 0, "MgNetConfig: bn_eps must be positive");
  require(bn_momentum >= 0 && bn_momentum <= 1, "MgNetConfig: bn_momentum must lie in [0, 1]");
  if (v_cycle) {
    require(static_cast<int>(nu_up.size()) == levels, "MgNetConfig: nu_up needs one entry per level");
    for (int n : nu_up) require(n >= 0, "MgNetConfig: nu_up entries must be >= 0");
    require(!head_pooling(), "MgNetConfig: the V-cycle needs f^J, so nu_J must be > 0");
  }
}

MgNetConfig mgnet_preset(const std::string& name, int classes) {
  static const std::regex pattern(R"(mgnet-(\d+)-(\d+)-pi([012]))");
  std::smatch m;
  require(std::regex_match(name, m, pattern), "unknown MgNet preset: " + name);
  MgNetConfig cfg;
  cfg.levels = 5;
  cfg.nu = {2, 2, 2, 2, 0};
  cfg.input_channels = 3;
  cfg.c_u = std::stoi(m[1]);
  cfg.c_f = std::stoi(m[2]);
  cfg.classes = classes;
  cfg.extractor = ExtractorStrategy::Variable;
  cfg.pi = static_cast<PiVariant>(std::stoi(m[3]));
  cfg.batchnorm = true;
  cfg.shared_data_feature = true;
  cfg.conv_bias = false;
  cfg.validate();
  return cfg;
}

std::string conv_name(int level, const std::string& what) { return join(level_tag(level), what); }

std::vector<ParamSpec> mgnet_layout(const MgNetConfig& cfg) {
  cfg.validate();
  return LayoutBuilder(cfg).build();
}

std::size_t count_params(const MgNetConfig& cfg) { return count_trainable(mgnet_layout(cfg)); }

ParameterStore init_mgnet(const MgNetConfig& cfg, std::uint64_t seed) {
  return ParameterStore::from_specs(mgnet_layout(cfg), seed);
}

MgNetGraph build_mgnet_graph(ad::Tape& tape, const ad::Array& input, const MgNetConfig& cfg,
                             const ParameterStore& store, ad::NormMode mode, ParamBinding binding) {
  check_input(input, cfg);
  check_store(store, mgnet_layout(cfg));
  GraphBuilder builder(tape, cfg, store, mode, binding);
  MgNetGraph graph;
  graph.batch_norms = builder.records();
  graph.input = tape.constant(input);
  graph.f1 = builder.f_in(graph.input);
  graph.trace = run_mgnet(graph.f1, std::span<const int>(cfg.nu), cfg.smoothing, builder.level_ops());
  graph.u_final = graph.trace.final_feature();
  graph.logits = builder.head(graph.u_final);
  return graph;
}

MgNetResult mgnet_forward(const Tensor& f, const MgNetConfig& cfg, const ParameterStore& store) {
  ad::Tape tape;
  MgNetGraph graph = build_mgnet_graph(tape, ad::Array::from_tensor(f), cfg, store,
                                       ad::NormMode::Inference, ParamBinding::Constant);
  MgNetResult result;
  result.f1 = to_tensor(graph.f1);
  result.trace = to_tensor_trace(graph.trace);
  result.u_final = to_tensor(graph.u_final);
  result.logits = graph.logits.value().data;
  return result;
}

Tensor v_mgnet_forward(const Tensor& f, const MgNetConfig& cfg, const ParameterStore& store) {
  require(cfg.v_cycle, "v_mgnet_forward: config has no V-cycle parameters");
  const ad::Array input = ad::Array::from_tensor(f);
  check_input(input, cfg);
  check_store(store, mgnet_layout(cfg));
  ad::Tape tape;
  GraphBuilder builder(tape, cfg, store, ad::NormMode::Inference, ParamBinding::Constant);
  ad::Var f1 = builder.f_in(tape.constant(input));
  const GridHierarchy grids = GridHierarchy::strided(f1.value().h, f1.value().w, cfg.levels);
  ad::Var u = run_v_mgnet(f1, std::span<const int>(cfg.nu), std::span<const int>(cfg.nu_up), cfg.smoothing,
                          builder.level_ops(), builder.up_ops(grids));
  return u.value().to_tensor(0);
}

Tensor f_in(const Tensor& f, const MgNetConfig& cfg, const ParameterStore& store) {
  const ad::Array input = ad::Array::from_tensor(f);
  check_input(input, cfg);
  ad::Tape tape;
  GraphBuilder builder(tape, cfg, store, ad::NormMode::Inference, ParamBinding::Constant);
  return builder.f_in(tape.constant(input)).value().to_tensor(0);
}

std::vector<Real> classify(const Tensor& u_final, const MgNetConfig& cfg, const ParameterStore& store) {
  require(u_final.channels() == cfg.c_u, "classify: feature has " + std::to_string(u_final.channels()) +
                                             " channels, expected " + std::to_string(cfg.c_u));
  ad::Tape tape;
  GraphBuilder builder(tape, cfg, store, ad::NormMode::Inference, ParamBinding::Constant);
  return softmax(builder.head(tape.constant(ad::Array::from_tensor(u_final))).value().data);
}

int predict(const Tensor& f, const MgNetConfig& cfg, const ParameterStore& store) {
  return argmax(mgnet_forward(f, cfg, store).logits);
}

}  // namespace mgnet
