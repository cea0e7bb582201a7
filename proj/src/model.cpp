#include "mgnet/model.hpp"

namespace mgnet {

int ModelConfig::classes() const { return kind == Kind::MgNet ? mgnet.classes : resnet.classes; }

int ModelConfig::input_channels() const {
  return kind == Kind::MgNet ? mgnet.input_channels : resnet.input_channels;
}

Real ModelConfig::bn_momentum() const {
  return kind == Kind::MgNet ? mgnet.bn_momentum : resnet.bn_momentum;
}

void ModelConfig::validate() const {
  if (kind == Kind::MgNet) {
    mgnet.validate();
  } else {
    resnet.validate();
  }
}

ModelConfig model_preset(const std::string& name, int classes) {
  ModelConfig model;
  if (name.rfind("resnet", 0) == 0) {
    model.kind = ModelConfig::Kind::ResNet;
    model.resnet = classic::resnet_preset(name, classes);
  } else {
    model.kind = ModelConfig::Kind::MgNet;
    model.mgnet = mgnet_preset(name, classes);
  }
  return model;
}

std::vector<ParamSpec> model_layout(const ModelConfig& model) {
  return model.kind == ModelConfig::Kind::MgNet ? mgnet_layout(model.mgnet)
                                                : classic::resnet_layout(model.resnet);
}

std::size_t count_params(const ModelConfig& model) { return count_trainable(model_layout(model)); }

ParameterStore init_model(const ModelConfig& model, std::uint64_t seed) {
  return ParameterStore::from_specs(model_layout(model), seed);
}

ModelGraph build_model_graph(ad::Tape& tape, const ad::Array& input, const ModelConfig& model,
                             const ParameterStore& store, ad::NormMode mode, ParamBinding binding) {
  if (model.kind == ModelConfig::Kind::MgNet) {
    MgNetGraph g = build_mgnet_graph(tape, input, model.mgnet, store, mode, binding);
    return {g.logits, g.batch_norms};
  }
  classic::ResNetGraph g = classic::build_resnet_graph(tape, input, model.resnet, store, mode, binding);
  return {g.logits, g.batch_norms};
}

}  // namespace mgnet
