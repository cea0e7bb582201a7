#include "mgnet/classic_models.hpp"

namespace mgnet::classic {

namespace {

Tensor conv(const Tensor& x, const ConvKernel& k) { return conv2d(x, k, 1, PaddingMode::Zero); }

void check_square(const ConvKernel& xi, const ConvKernel& eta, int channels, const char* where) {
  require(eta.in_channels == channels, std::string(where) + ": eta expects " +
                                           std::to_string(eta.in_channels) + " channels, input has " +
                                           std::to_string(channels));
  require(xi.in_channels == eta.out_channels, std::string(where) + ": xi does not accept eta's output");
  require(xi.out_channels == channels, std::string(where) + ": xi must map back to the input channels");
}

std::string stage_block(int s, int b) {
  return "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
}

}  // namespace

Tensor resnet_block(const Tensor& f, const ConvKernel& xi, const ConvKernel& eta) {
  check_square(xi, eta, f.channels(), "resnet_block");
  return relu(f + conv(relu(conv(f, eta)), xi));
}

Tensor iresnet_block(const Tensor& f, const ConvKernel& xi, const ConvKernel& eta) {
  check_square(xi, eta, f.channels(), "iresnet_block");
  return f + conv(relu(conv(relu(f), eta)), xi);
}

Tensor sigma_resnet_step(const Tensor& f, const ConvKernel& xi, const ConvKernel& eta) {
  check_square(xi, eta, f.channels(), "sigma_resnet_step");
  const Tensor s = relu(f);
  return s - conv(relu(conv(s, eta)), xi);
}

Tensor mg_resnet_step(const Tensor& f, const ConvKernel& xi_level, const ConvKernel& eta_i) {
  return sigma_resnet_step(f, xi_level, eta_i);
}

Tensor mg_resnet_level(const Tensor& f, const ConvKernel& xi_level, std::span<const ConvKernel> etas) {
  Tensor x = f;
  for (const ConvKernel& eta : etas) x = mg_resnet_step(x, xi_level, eta);
  return x;
}

Tensor densenet_step(std::span<const Tensor> history, std::span<const ConvKernel> theta) {
  require(!history.empty(), "densenet_step: empty history");
  require(history.size() == theta.size(), "densenet_step: need one kernel part per history entry");
  Tensor sum;
  for (std::size_t j = 0; j < history.size(); ++j) {
    require(theta[j].in_channels == history[j].channels(),
            "densenet_step: kernel part " + std::to_string(j) + " does not match its history entry");
    require(theta[j].out_channels == theta[0].out_channels,
            "densenet_step: kernel parts disagree on the growth rate");
    Tensor term = conv(history[j], theta[j]);
    if (j == 0) {
      sum = std::move(term);
    } else {
      require(term.same_shape(sum), "densenet_step: history entries differ in spatial size");
      sum += term;
    }
  }
  return relu(sum);
}

Tensor classic_cnn_step(const Tensor& f, const ConvKernel& chi, ActivationOrder order) {
  require(chi.in_channels == f.channels(), "classic_cnn_step: chi does not match the input channels");
  return order == ActivationOrder::PostAct ? relu(conv(f, chi)) : conv(relu(f), chi);
}

void ResNetConfig::validate() const {
  require(!blocks.empty() && blocks.size() == widths.size(), "ResNetConfig: blocks and widths must pair up");
  for (int b : blocks) require(b >= 1, "ResNetConfig: every stage needs a block");
  for (int w : widths) require(w >= 1, "ResNetConfig: widths must be >= 1");
  require(input_channels >= 1 && classes >= 1, "ResNetConfig: invalid channel or class count");
}

ResNetConfig resnet_preset(const std::string& name, int classes) {
  ResNetConfig cfg;
  if (name == "resnet18") {
    cfg.blocks = {2, 2, 2, 2};
  } else if (name == "resnet34") {
    cfg.blocks = {3, 4, 6, 3};
  } else {
    throw ContractViolation("unknown ResNet preset: " + name);
  }
  cfg.classes = classes;
  return cfg;
}

std::vector<ParamSpec> resnet_layout(const ResNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  auto conv_spec = [&](const std::string& name, int out, int in, int window) {
    specs.push_back({name + ".weight", {out, in, window, window}, true, InitKind::He, in * window * window});
  };
  auto bn_spec = [&](const std::string& name, int channels) {
    specs.push_back({name + ".gamma", {channels}, true, InitKind::One, 1});
    specs.push_back({name + ".beta", {channels}, true, InitKind::Zero, 1});
    specs.push_back({name + ".running_mean", {channels}, false, InitKind::Zero, 1});
    specs.push_back({name + ".running_var", {channels}, false, InitKind::One, 1});
  };
  conv_spec("stem.conv", cfg.widths[0], cfg.input_channels, 3);
  bn_spec("stem.bn", cfg.widths[0]);
  int in = cfg.widths[0];
  for (std::size_t s = 0; s < cfg.blocks.size(); ++s) {
    const int out = cfg.widths[s];
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      const std::string tag = stage_block(static_cast<int>(s), b);
      conv_spec(tag + ".conv1", out, in, 3);
      bn_spec(tag + ".bn1", out);
      conv_spec(tag + ".conv2", out, out, 3);
      bn_spec(tag + ".bn2", out);
      if (in != out) conv_spec(tag + ".shortcut", out, in, 1);
      in = out;
    }
  }
  specs.push_back({"head.weight", {cfg.classes, in}, true, InitKind::Small, in});
  specs.push_back({"head.bias", {cfg.classes}, true, InitKind::Zero, 1});
  return specs;
}

std::size_t count_params(const ResNetConfig& cfg) { return count_trainable(resnet_layout(cfg)); }

ParameterStore init_resnet(const ResNetConfig& cfg, std::uint64_t seed) {
  return ParameterStore::from_specs(resnet_layout(cfg), seed);
}

ResNetGraph build_resnet_graph(ad::Tape& tape, const ad::Array& input, const ResNetConfig& cfg,
                               const ParameterStore& store, ad::NormMode mode, ParamBinding binding) {
  require(input.c == cfg.input_channels, "resnet: input has " + std::to_string(input.c) +
                                             " channels, config expects " +
                                             std::to_string(cfg.input_channels));
  check_store(store, resnet_layout(cfg));
  TapeBinder bind(tape, store, mode, binding, cfg.bn_eps);
  ResNetGraph graph;
  graph.input = tape.constant(input);
  ad::Var x = ad::relu(bind.bn(bind.conv(graph.input, "stem.conv", 1), "stem.bn"));
  int in = cfg.widths[0];
  for (std::size_t s = 0; s < cfg.blocks.size(); ++s) {
    const int out = cfg.widths[s];
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      const std::string tag = stage_block(static_cast<int>(s), b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      ad::Var branch = ad::relu(bind.bn(bind.conv(x, tag + ".conv1", stride), tag + ".bn1"));
      branch = bind.bn(bind.conv(branch, tag + ".conv2", 1), tag + ".bn2");
      ad::Var skip = in != out ? bind.conv(x, tag + ".shortcut", stride)
                               : (stride == 1 ? x : ad::max_pool(x, 0, stride));
      x = ad::relu(skip + branch);
      in = out;
    }
  }
  graph.logits = ad::linear(ad::global_avg_pool(x), bind.param("head.weight"), bind.param("head.bias"));
  graph.batch_norms = bind.records();
  return graph;
}

}  // namespace mgnet::classic
