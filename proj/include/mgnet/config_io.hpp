#pragma once

// JSON run configuration.
//
// {
//   "model": {"kind": "mgnet", "levels": 3, "nu": [2, 2, 2], "c_u": 16, ...}
//          | {"kind": "resnet", "blocks": [2, 2, 2, 2], "widths": [...], ...}
//          | {"preset": "resnet18" | "mgnet-256-256-pi1", "classes": 10},
//   "train": {"learning_rate": 0.1, "decay_factor": 10, "decay_period": 30,
//             "momentum": 0.9, "batch_size": 128, "epochs": 120, "seed": 0,
//             "checkpoint_every": 10},
//   "data":  {"classes": 2, "per_class": 200, "test_per_class": 100,
//             "size": 16, "channels": 3, "noise": 0.1, "seed": 0,
//             "standardize": false}
// }
//
// Model keys mirror the MgNetConfig / ResNetConfig fields; enums are written
// as lower-case names ("single_step", "variable", "pi1", ...). Every section
// and key is optional and defaults to the struct default, but unknown keys
// are rejected.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mgnet/data_io.hpp"
#include "mgnet/model.hpp"
#include "mgnet/train.hpp"

namespace mgnet {

/// The "data" section: synthetic blob parameters (used when training on
/// "synthetic") and the opt-in per-channel standardization.
struct DataConfig {
  SyntheticSpec synthetic;
  int test_per_class = 100;
  std::uint64_t seed = 0;
  bool standardize = false;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  int checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints
};

nlohmann::json model_to_json(const ModelConfig& model);
ModelConfig model_from_json(const nlohmann::json& j);
nlohmann::json train_to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const nlohmann::json& j);

nlohmann::json run_to_json(const RunConfig& run);
RunConfig run_from_json(const nlohmann::json& j);

/// Parse errors and schema violations are FormatErrors naming the key.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& run);

nlohmann::json parse_json_file(const std::filesystem::path& path);

}  // namespace mgnet
