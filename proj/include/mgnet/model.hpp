#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgnet/classic_models.hpp"
#include "mgnet/mgnet_model.hpp"

namespace mgnet {

/// Any trainable network of the toolkit.
struct ModelConfig {
  enum class Kind { MgNet, ResNet };
  Kind kind = Kind::MgNet;
  MgNetConfig mgnet;
  classic::ResNetConfig resnet;

  int classes() const;
  int input_channels() const;
  Real bn_momentum() const;
  void validate() const;
};

/// "resnet18", "resnet34" or an MgNet preset name.
ModelConfig model_preset(const std::string& name, int classes);

std::vector<ParamSpec> model_layout(const ModelConfig& model);
std::size_t count_params(const ModelConfig& model);
ParameterStore init_model(const ModelConfig& model, std::uint64_t seed);

struct ModelGraph {
  ad::Var logits;
  std::shared_ptr<BatchNormRecords> batch_norms;
};

ModelGraph build_model_graph(ad::Tape& tape, const ad::Array& input, const ModelConfig& model,
                             const ParameterStore& store, ad::NormMode mode, ParamBinding binding);

}  // namespace mgnet
