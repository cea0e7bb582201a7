#include "mgnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mgnet {

namespace {

int argmax(std::span<const Real> row) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(row.size()); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

int count_correct(const ad::Array& logits, std::span<const int> labels) {
  int correct = 0;
  for (int i = 0; i < logits.n; ++i) correct += argmax(logits.sample(i)) == labels[i] ? 1 : 0;
  return correct;
}

void check_data(const ModelConfig& model, std::span<const LabeledImage> data, const char* where) {
  require(!data.empty(), std::string(where) + ": empty dataset");
  for (const LabeledImage& item : data) {
    require(item.label >= 0 && item.label < model.classes(),
            std::string(where) + ": label " + std::to_string(item.label) + " outside [0, " +
                std::to_string(model.classes()) + ")");
    require(item.image.channels() == model.input_channels(),
            std::string(where) + ": image has " + std::to_string(item.image.channels()) +
                " channels, model expects " + std::to_string(model.input_channels()));
  }
}

}  // namespace

Real LearningRateSchedule::at(int epoch) const {
  return initial / std::pow(decay_factor, static_cast<Real>(epoch / decay_period));
}

void TrainConfig::validate() const {
  require(learning_rate.initial > 0, "TrainConfig: learning rate must be > 0");
  require(learning_rate.decay_factor > 0, "TrainConfig: decay factor must be > 0");
  require(learning_rate.decay_period >= 1, "TrainConfig: decay period must be >= 1");
  require(momentum >= 0 && momentum < 1, "TrainConfig: momentum must lie in [0, 1)");
  require(batch_size >= 1, "TrainConfig: batch size must be >= 1");
  require(epochs >= 0, "TrainConfig: epochs must be >= 0");
}

void momentum_update(std::span<Real> w, std::span<const Real> g, std::span<Real> v, Real lr, Real alpha) {
  require(w.size() == g.size() && w.size() == v.size(), "momentum_update: size mismatch");
  for (std::size_t k = 0; k < w.size(); ++k) {
    v[k] = alpha * v[k] - lr * g[k];
    w[k] += v[k];
  }
}

void sgd_momentum_step(ParameterStore& params, const std::map<std::string, ad::Array>& grads,
                       MomentumState& state, int epoch, const TrainConfig& cfg) {
  const Real lr = cfg.learning_rate.at(epoch);
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    auto g = grads.find(e.name);
    if (g == grads.end()) continue;
    require(g->second.size() == e.values.size(), "sgd_momentum_step: gradient of " + e.name + " has the wrong size");
    auto& v = state.velocity[e.name];
    if (v.empty()) v.assign(e.values.size(), Real(0));
    momentum_update(e.values, g->second.data, v, lr, cfg.momentum);
  }
  ++state.step;
}

std::vector<int> labels_of(std::span<const LabeledImage> data) {
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const LabeledImage& item : data) labels.push_back(item.label);
  return labels;
}

ad::Array images_of(std::span<const LabeledImage> data) {
  std::vector<Tensor> images;
  images.reserve(data.size());
  for (const LabeledImage& item : data) images.push_back(item.image);
  return ad::Array::from_tensors(images);
}

std::vector<EpochMetrics> train(const ModelConfig& model, const TrainConfig& cfg,
                                std::span<const LabeledImage> data, TrainState& state,
                                const EpochCallback& on_epoch) {
  cfg.validate();
  model.validate();
  check_data(model, data, "train");
  check_store(state.params, model_layout(model));

  std::vector<EpochMetrics> history;
  std::vector<std::size_t> order(data.size());
  std::vector<LabeledImage> batch;
  for (int e = 0; e < cfg.epochs; ++e) {
    const int epoch = state.epochs_done;
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::mt19937_64 rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);

    Real loss_sum = 0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) batch.push_back(data[order[k]]);
      const std::vector<int> labels = labels_of(batch);

      ad::Tape tape;
      const ModelGraph graph = build_model_graph(tape, images_of(batch), model, state.params,
                                                 ad::NormMode::Training, ParamBinding::Trainable);
      const ad::Var loss = ad::softmax_cross_entropy(graph.logits, labels);
      const auto grads = tape.backward(loss);
      loss_sum += loss.value().data[0] * static_cast<Real>(batch.size());
      correct += count_correct(graph.logits.value(), labels);
      update_running_stats(state.params, *graph.batch_norms, model.bn_momentum());
      sgd_momentum_step(state.params, grads, state.momentum, epoch, cfg);
    }
    ++state.epochs_done;
    const EpochMetrics m{state.epochs_done, cfg.learning_rate.at(epoch), loss_sum / static_cast<Real>(data.size()),
                         static_cast<Real>(correct) / static_cast<Real>(data.size())};
    history.push_back(m);
    if (on_epoch) on_epoch(m, state);
  }
  return history;
}

std::vector<EpochMetrics> train(const ModelConfig& model, const TrainConfig& cfg,
                                std::span<const LabeledImage> data) {
  TrainState state{init_model(model, cfg.seed), {}, 0};
  return train(model, cfg, data, state);
}

EvalMetrics evaluate(const ModelConfig& model, const ParameterStore& params, std::span<const LabeledImage> data,
                     int batch_size) {
  check_data(model, data, "evaluate");
  require(batch_size >= 1, "evaluate: batch size must be >= 1");
  EvalMetrics out;
  Real loss_sum = 0;
  int correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const auto batch = data.subspan(start, std::min<std::size_t>(batch_size, data.size() - start));
    const std::vector<int> labels = labels_of(batch);
    ad::Tape tape;
    const ModelGraph graph =
        build_model_graph(tape, images_of(batch), model, params, ad::NormMode::Inference, ParamBinding::Constant);
    loss_sum += ad::softmax_cross_entropy(graph.logits, labels).value().data[0] * static_cast<Real>(batch.size());
    correct += count_correct(graph.logits.value(), labels);
  }
  out.count = data.size();
  out.loss = loss_sum / static_cast<Real>(data.size());
  out.accuracy = static_cast<Real>(correct) / static_cast<Real>(data.size());
  return out;
}

FiniteDiffReport finite_diff_check(const ModelConfig& model, const ParameterStore& params,
                                   std::span<const LabeledImage> batch, Real tolerance, Real step,
                                   Real min_margin) {
  check_data(model, batch, "finite_diff_check");
  std::vector<LabeledImage> inputs(batch.begin(), batch.end());
  const std::vector<int> labels = labels_of(inputs);
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<Real> nudge(-1e-3, 1e-3);

  FiniteDiffReport report;
  constexpr int kMaxPerturbations = 20;
  for (;;) {
    ad::Tape tape;
    const ModelGraph graph =
        build_model_graph(tape, images_of(inputs), model, params, ad::NormMode::Training, ParamBinding::Trainable);
    const ad::Var loss = ad::softmax_cross_entropy(graph.logits, labels);
    if (tape.relu_margin() < min_margin && report.input_perturbations < kMaxPerturbations) {
      for (LabeledImage& item : inputs) {
        for (Real& v : item.image.values()) v += nudge(rng);
      }
      ++report.input_perturbations;
      continue;
    }
    const ad::GradCheckReport check = ad::gradient_check(tape, loss, step);
    report.relative_error = check.relative_error;
    report.worst = check.worst;
    report.worst_parameter = check.worst_parameter;
    report.relu_margin = check.relu_margin;
    report.passed = report.worst < tolerance;
    return report;
  }
}

}  // namespace mgnet
