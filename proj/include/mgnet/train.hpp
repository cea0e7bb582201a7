#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mgnet/data_io.hpp"
#include "mgnet/model.hpp"
#include "mgnet/parameters.hpp"

namespace mgnet {

/// Staircase: initial / decay_factor^floor(epoch / decay_period).
struct LearningRateSchedule {
  Real initial = Real(0.1);
  Real decay_factor = Real(10);
  int decay_period = 30;

  Real at(int epoch) const;
};

struct TrainConfig {
  LearningRateSchedule learning_rate;
  Real momentum = Real(0.9);
  int batch_size = 128;
  int epochs = 120;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Velocity buffers v_t, one per trainable store entry, created as zeros on
/// first use.
struct MomentumState {
  std::map<std::string, std::vector<Real>> velocity;
  std::uint64_t step = 0;
};

/// v <- alpha v - lr g; w <- w + v, elementwise.
void momentum_update(std::span<Real> w, std::span<const Real> g, std::span<Real> v, Real lr, Real alpha);

/// One optimizer step over every trainable entry that has a gradient, with
/// the learning rate of `epoch`. Non-trainable entries are never touched.
void sgd_momentum_step(ParameterStore& params, const std::map<std::string, ad::Array>& grads,
                       MomentumState& state, int epoch, const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  Real learning_rate = 0;
  Real loss = 0;      // mean cross-entropy over the epoch's mini-batches
  Real accuracy = 0;  // training accuracy of those same forward passes
};

struct TrainState {
  ParameterStore params;
  MomentumState momentum;
  int epochs_done = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&, const TrainState&)>;

/// Runs cfg.epochs further epochs from `state`. Each epoch shuffles with a
/// generator seeded by (cfg.seed, epoch index), walks the permutation in
/// consecutive mini-batches (the last one may be short), takes one momentum
/// step per batch and folds the batch statistics into the running averages.
std::vector<EpochMetrics> train(const ModelConfig& model, const TrainConfig& cfg,
                                std::span<const LabeledImage> data, TrainState& state,
                                const EpochCallback& on_epoch = {});
/// Fresh parameters from init_model(model, cfg.seed).
std::vector<EpochMetrics> train(const ModelConfig& model, const TrainConfig& cfg,
                                std::span<const LabeledImage> data);

struct EvalMetrics {
  Real loss = 0;
  Real accuracy = 0;
  std::size_t count = 0;
};

/// Inference mode (running batch-norm statistics).
EvalMetrics evaluate(const ModelConfig& model, const ParameterStore& params, std::span<const LabeledImage> data,
                     int batch_size = 64);

struct FiniteDiffReport {
  std::map<std::string, Real> relative_error;
  Real worst = 0;
  std::string worst_parameter;
  Real relu_margin = 0;
  int input_perturbations = 0;
  bool passed = false;
};

/// Central differences against backward() for every trainable entry, on one
/// batch in training mode. If some relu input lies within `min_margin` of
/// its kink the batch images are nudged by small seeded noise and the graph
/// rebuilt (up to 20 times).
FiniteDiffReport finite_diff_check(const ModelConfig& model, const ParameterStore& params,
                                   std::span<const LabeledImage> batch, Real tolerance,
                                   Real step = Real(1e-5), Real min_margin = Real(1e-6));

std::vector<int> labels_of(std::span<const LabeledImage> data);
ad::Array images_of(std::span<const LabeledImage> data);

}  // namespace mgnet
