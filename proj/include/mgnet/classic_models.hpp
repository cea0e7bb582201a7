#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mgnet/autodiff.hpp"
#include "mgnet/parameters.hpp"
#include "mgnet/tensor.hpp"

namespace mgnet::classic {

enum class BlockKind { ClassicPost, ClassicPre, ResNet, IResNet, SigmaResNet, MgResNet, Dense };
enum class ActivationOrder { PostAct, PreAct };

// Single-grid iterations. All convolutions are stride 1 with zero padding;
// kernel biases are applied when present.

/// sigma(f + xi(sigma(eta(f)))).
Tensor resnet_block(const Tensor& f, const ConvKernel& xi, const ConvKernel& eta);
/// f + xi(sigma(eta(sigma(f)))).
Tensor iresnet_block(const Tensor& f, const ConvKernel& xi, const ConvKernel& eta);
/// sigma(f) - xi(sigma(eta(sigma(f)))).
Tensor sigma_resnet_step(const Tensor& f, const ConvKernel& xi, const ConvKernel& eta);
/// sigma-ResNet step whose xi is the level's shared kernel.
Tensor mg_resnet_step(const Tensor& f, const ConvKernel& xi_level, const ConvKernel& eta_i);
/// nu = etas.size() Mg-ResNet steps sharing one xi.
Tensor mg_resnet_level(const Tensor& f, const ConvKernel& xi_level, std::span<const ConvKernel> etas);
/// sigma(sum_j theta_j * f_j) over the whole history.
Tensor densenet_step(std::span<const Tensor> history, std::span<const ConvKernel> theta);
/// PostAct: sigma(chi(f)); PreAct: chi(sigma(f)).
Tensor classic_cnn_step(const Tensor& f, const ConvKernel& chi, ActivationOrder order);

inline constexpr int kDenseGrowthRate = 12;

/// Standard basic-block ResNet for 32x32 inputs: a 3x3 stem, four stages of
/// widths (64, 128, 256, 512) and the given block counts, stride-2 first
/// blocks with a 1x1 convolution on the skip path, average pooling and a
/// linear head. Convolutions are bias-free; batch norm follows every
/// convolution except the skip-path one.
struct ResNetConfig {
  std::vector<int> blocks{2, 2, 2, 2};
  std::vector<int> widths{64, 128, 256, 512};
  int input_channels = 3;
  int classes = 10;
  Real bn_eps = Real(1e-5);
  Real bn_momentum = Real(0.1);

  void validate() const;
};

/// "resnet18" or "resnet34".
ResNetConfig resnet_preset(const std::string& name, int classes);

std::vector<ParamSpec> resnet_layout(const ResNetConfig& cfg);
std::size_t count_params(const ResNetConfig& cfg);
ParameterStore init_resnet(const ResNetConfig& cfg, std::uint64_t seed);

struct ResNetGraph {
  ad::Var input;
  ad::Var logits;
  std::shared_ptr<BatchNormRecords> batch_norms;
};

ResNetGraph build_resnet_graph(ad::Tape& tape, const ad::Array& input, const ResNetConfig& cfg,
                               const ParameterStore& store, ad::NormMode mode, ParamBinding binding);

}  // namespace mgnet::classic
