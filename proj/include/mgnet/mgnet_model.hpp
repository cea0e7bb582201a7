#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mgnet/autodiff.hpp"
#include "mgnet/grid_transfer.hpp"
#include "mgnet/mgnet_sweep.hpp"
#include "mgnet/parameters.hpp"
#include "mgnet/tensor.hpp"

namespace mgnet {

enum class ExtractorStrategy { Constant, Scaled, Variable };
/// ReluSandwich: B = relu o eta o relu (with batch norm before each relu
/// when enabled). Linear: B = eta.
enum class ExtractorForm { ReluSandwich, Linear };
enum class FinVariant { ConvRelu, ConvReluMaxpool };

struct MgNetConfig {
  int levels = 3;
  std::vector<int> nu{2, 2, 2};
  int input_channels = 3;
  int c_u = 16;
  int c_f = 16;
  int classes = 10;
  int kernel_half_width = 1;
  SmoothingVariant smoothing = SmoothingVariant::SingleStep;
  ExtractorStrategy extractor = ExtractorStrategy::Constant;
  ExtractorForm extractor_form = ExtractorForm::ReluSandwich;
  PiVariant pi = PiVariant::Pi1;
  FinVariant f_in = FinVariant::ConvRelu;
  bool batchnorm = true;
  /// One A shared by all levels instead of one A^l per level.
  bool shared_data_feature = false;
  /// Biases on theta0, eta, R, Pi. A is always bias-free.
  bool conv_bias = false;
  /// Adds prolongations and up-smoothers for the V-cycle variant.
  bool v_cycle = false;
  std::vector<int> nu_up;
  Real bn_eps = Real(1e-5);
  Real bn_momentum = Real(0.1);

  void validate() const;
  /// nu_J = 0: the last transition is spatial average pooling into the head.
  bool head_pooling() const { return levels >= 2 && nu.back() == 0; }
};

/// Benchmark configurations "mgnet-<c_u>-<c_f>-pi<0|1|2>" (J = 5,
/// nu = (2,2,2,2,0), shared A, variable extractors, no conv bias).
MgNetConfig mgnet_preset(const std::string& name, int classes);

/// Parameter layout in a fixed order. Shared by initialization, counting,
/// checkpoints and the optimizer.
std::vector<ParamSpec> mgnet_layout(const MgNetConfig& cfg);
std::size_t count_params(const MgNetConfig& cfg);
ParameterStore init_mgnet(const MgNetConfig& cfg, std::uint64_t seed);

std::string conv_name(int level, const std::string& what);

/// Forward graph of a batch on a tape.
struct MgNetGraph {
  ad::Var input;
  ad::Var f1;
  MgNetTrace<ad::Var> trace;
  ad::Var u_final;
  ad::Var logits;
  /// Batch statistics per batch-norm prefix, refreshed on every replay.
  std::shared_ptr<BatchNormRecords> batch_norms;
};

MgNetGraph build_mgnet_graph(ad::Tape& tape, const ad::Array& input, const MgNetConfig& cfg,
                             const ParameterStore& store, ad::NormMode mode, ParamBinding binding);

struct MgNetResult {
  Tensor f1;
  MgNetTrace<Tensor> trace;
  Tensor u_final;
  std::vector<Real> logits;
};

/// Single-sample evaluation (batch norm with running statistics).
MgNetResult mgnet_forward(const Tensor& f, const MgNetConfig& cfg, const ParameterStore& store);
/// V-cycle output u^1 on the finest level.
Tensor v_mgnet_forward(const Tensor& f, const MgNetConfig& cfg, const ParameterStore& store);
Tensor f_in(const Tensor& f, const MgNetConfig& cfg, const ParameterStore& store);
/// Spatial average, affine head, softmax.
std::vector<Real> classify(const Tensor& u_final, const MgNetConfig& cfg, const ParameterStore& store);
/// Highest probability; ties resolve to the lowest index.
int predict(const Tensor& f, const MgNetConfig& cfg, const ParameterStore& store);

}  // namespace mgnet
