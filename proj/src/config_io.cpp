#include "mgnet/config_io.hpp"

#include <array>
#include <fstream>
#include <set>
#include <utility>

namespace mgnet {

using nlohmann::json;

namespace {

template <class E, std::size_t N>
using NameTable = std::array<std::pair<E, const char*>, N>;

constexpr NameTable<SmoothingVariant, 3> kSmoothing{{{SmoothingVariant::SingleStep, "single_step"},
                                                     {SmoothingVariant::MultiStep, "multi_step"},
                                                     {SmoothingVariant::ChebyshevSemi, "chebyshev_semi"}}};
constexpr NameTable<ExtractorStrategy, 3> kExtractor{{{ExtractorStrategy::Constant, "constant"},
                                                      {ExtractorStrategy::Scaled, "scaled"},
                                                      {ExtractorStrategy::Variable, "variable"}}};
constexpr NameTable<ExtractorForm, 2> kForm{{{ExtractorForm::ReluSandwich, "relu_sandwich"},
                                             {ExtractorForm::Linear, "linear"}}};
constexpr NameTable<PiVariant, 3> kPi{{{PiVariant::Pi0, "pi0"}, {PiVariant::Pi1, "pi1"}, {PiVariant::Pi2, "pi2"}}};
constexpr NameTable<FinVariant, 2> kFin{{{FinVariant::ConvRelu, "conv_relu"},
                                         {FinVariant::ConvReluMaxpool, "conv_relu_maxpool"}}};

template <class E, std::size_t N>
const char* name_of(const NameTable<E, N>& table, E value) {
  for (const auto& [e, name] : table) {
    if (e == value) return name;
  }
  return "?";
}

/// Reads the keys of one JSON object and rejects any it was not asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw FormatError(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw FormatError(where_ + "." + key + ": " + e.what());
    }
  }

  template <class E, std::size_t N>
  void get_enum(const char* key, const NameTable<E, N>& table, E& out) {
    std::string name;
    get(key, name);
    if (name.empty()) return;
    for (const auto& [e, n] : table) {
      if (name == n) {
        out = e;
        return;
      }
    }
    throw FormatError(where_ + "." + key + ": unknown value \"" + name + "\"");
  }

  bool has(const char* key) const { return j_.contains(key); }
  void allow(const char* key) { seen_.insert(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw FormatError(where_ + ": unknown key \"" + key + "\"");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string, std::less<>> seen_;
};

json mgnet_to_json(const MgNetConfig& c) {
  return {{"kind", "mgnet"},
          {"levels", c.levels},
          {"nu", c.nu},
          {"input_channels", c.input_channels},
          {"c_u", c.c_u},
          {"c_f", c.c_f},
          {"classes", c.classes},
          {"kernel_half_width", c.kernel_half_width},
          {"smoothing", name_of(kSmoothing, c.smoothing)},
          {"extractor", name_of(kExtractor, c.extractor)},
          {"extractor_form", name_of(kForm, c.extractor_form)},
          {"pi", name_of(kPi, c.pi)},
          {"f_in", name_of(kFin, c.f_in)},
          {"batchnorm", c.batchnorm},
          {"shared_data_feature", c.shared_data_feature},
          {"conv_bias", c.conv_bias},
          {"v_cycle", c.v_cycle},
          {"nu_up", c.nu_up},
          {"bn_eps", c.bn_eps},
          {"bn_momentum", c.bn_momentum}};
}

json resnet_to_json(const classic::ResNetConfig& c) {
  return {{"kind", "resnet"},           {"blocks", c.blocks}, {"widths", c.widths},
          {"input_channels", c.input_channels}, {"classes", c.classes}, {"bn_eps", c.bn_eps},
          {"bn_momentum", c.bn_momentum}};
}

}  // namespace

json model_to_json(const ModelConfig& model) {
  return model.kind == ModelConfig::Kind::MgNet ? mgnet_to_json(model.mgnet) : resnet_to_json(model.resnet);
}

ModelConfig model_from_json(const json& j) {
  Section s(j, "model");
  ModelConfig model;
  std::string kind = "mgnet";
  if (s.has("preset")) {
    std::string preset;
    int classes = 10;
    s.get("preset", preset);
    s.get("classes", classes);
    s.finish();
    try {
      model = model_preset(preset, classes);
    } catch (const ContractViolation& e) {
      throw FormatError(std::string("model.preset: ") + e.what());
    }
    return model;
  }
  s.get("kind", kind);
  if (kind == "mgnet") {
    MgNetConfig& c = model.mgnet;
    model.kind = ModelConfig::Kind::MgNet;
    s.get("levels", c.levels);
    s.get("nu", c.nu);
    s.get("input_channels", c.input_channels);
    s.get("c_u", c.c_u);
    s.get("c_f", c.c_f);
    s.get("classes", c.classes);
    s.get("kernel_half_width", c.kernel_half_width);
    s.get_enum("smoothing", kSmoothing, c.smoothing);
    s.get_enum("extractor", kExtractor, c.extractor);
    s.get_enum("extractor_form", kForm, c.extractor_form);
    s.get_enum("pi", kPi, c.pi);
    s.get_enum("f_in", kFin, c.f_in);
    s.get("batchnorm", c.batchnorm);
    s.get("shared_data_feature", c.shared_data_feature);
    s.get("conv_bias", c.conv_bias);
    s.get("v_cycle", c.v_cycle);
    s.get("nu_up", c.nu_up);
    s.get("bn_eps", c.bn_eps);
    s.get("bn_momentum", c.bn_momentum);
    // A bare "levels" without "nu" keeps nu_l = 2 on every level.
    if (j.contains("levels") && !j.contains("nu")) c.nu.assign(c.levels, 2);
  } else if (kind == "resnet") {
    classic::ResNetConfig& c = model.resnet;
    model.kind = ModelConfig::Kind::ResNet;
    s.get("blocks", c.blocks);
    s.get("widths", c.widths);
    s.get("input_channels", c.input_channels);
    s.get("classes", c.classes);
    s.get("bn_eps", c.bn_eps);
    s.get("bn_momentum", c.bn_momentum);
  } else {
    throw FormatError("model.kind: unknown value \"" + kind + "\"");
  }
  s.finish();
  try {
    model.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  return model;
}

json train_to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate.initial},
          {"decay_factor", cfg.learning_rate.decay_factor},
          {"decay_period", cfg.learning_rate.decay_period},
          {"momentum", cfg.momentum},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed}};
}

TrainConfig train_from_json(const json& j) {
  Section s(j, "train");
  TrainConfig cfg;
  s.get("learning_rate", cfg.learning_rate.initial);
  s.get("decay_factor", cfg.learning_rate.decay_factor);
  s.get("decay_period", cfg.learning_rate.decay_period);
  s.get("momentum", cfg.momentum);
  s.get("batch_size", cfg.batch_size);
  s.get("epochs", cfg.epochs);
  s.get("seed", cfg.seed);
  s.finish();
  try {
    cfg.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("train: ") + e.what());
  }
  return cfg;
}

json run_to_json(const RunConfig& run) {
  json train = train_to_json(run.train);
  train["checkpoint_every"] = run.checkpoint_every;
  const SyntheticSpec& syn = run.data.synthetic;
  return {{"model", model_to_json(run.model)},
          {"train", train},
          {"data",
           {{"classes", syn.classes},
            {"per_class", syn.per_class},
            {"test_per_class", run.data.test_per_class},
            {"size", syn.size},
            {"channels", syn.channels},
            {"noise", syn.noise},
            {"seed", run.data.seed},
            {"standardize", run.data.standardize}}}};
}

RunConfig run_from_json(const json& j) {
  Section s(j, "config");
  for (const char* key : {"model", "train", "data"}) s.allow(key);
  s.finish();

  RunConfig run;
  if (j.contains("model")) run.model = model_from_json(j.at("model"));
  if (j.contains("train")) {
    json train = j.at("train");
    if (train.is_object() && train.contains("checkpoint_every")) {
      try {
        run.checkpoint_every = train.at("checkpoint_every").get<int>();
      } catch (const json::exception& e) {
        throw FormatError(std::string("train.checkpoint_every: ") + e.what());
      }
      train.erase("checkpoint_every");
    }
    run.train = train_from_json(train);
  }
  // Synthetic data follows the model's class and channel counts unless the
  // data section says otherwise.
  run.data.synthetic.classes = run.model.classes();
  run.data.synthetic.channels = run.model.input_channels();
  if (j.contains("data")) {
    Section d(j.at("data"), "data");
    SyntheticSpec& syn = run.data.synthetic;
    d.get("classes", syn.classes);
    d.get("per_class", syn.per_class);
    d.get("test_per_class", run.data.test_per_class);
    d.get("size", syn.size);
    d.get("channels", syn.channels);
    d.get("noise", syn.noise);
    d.get("seed", run.data.seed);
    d.get("standardize", run.data.standardize);
    d.finish();
  }
  if (run.checkpoint_every < 0) throw FormatError("train.checkpoint_every must be >= 0");
  return run;
}

json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_from_json(parse_json_file(path)); }

void save_run_config(const std::filesystem::path& path, const RunConfig& run) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << run_to_json(run).dump(2) << "\n";
}

}  // namespace mgnet
