#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mgnet/config_io.hpp"

using namespace mgnet;
using nlohmann::json;

TEST_CASE("model config round trip") {
  ModelConfig m;
  m.mgnet.levels = 4;
  m.mgnet.nu = {1, 2, 3, 0};
  m.mgnet.c_u = 12;
  m.mgnet.c_f = 20;
  m.mgnet.classes = 7;
  m.mgnet.smoothing = SmoothingVariant::ChebyshevSemi;
  m.mgnet.extractor = ExtractorStrategy::Scaled;
  m.mgnet.pi = PiVariant::Pi2;
  m.mgnet.f_in = FinVariant::ConvReluMaxpool;
  m.mgnet.shared_data_feature = true;
  m.mgnet.conv_bias = true;
  m.mgnet.bn_momentum = 0.2;
  const ModelConfig back = model_from_json(model_to_json(m));
  CHECK(model_to_json(back) == model_to_json(m));
  CHECK(back.mgnet.smoothing == SmoothingVariant::ChebyshevSemi);
  CHECK(back.mgnet.nu == std::vector<int>{1, 2, 3, 0});
  CHECK(count_params(back) == count_params(m));

  ModelConfig r;
  r.kind = ModelConfig::Kind::ResNet;
  r.resnet = classic::resnet_preset("resnet34", 100);
  const ModelConfig rb = model_from_json(model_to_json(r));
  CHECK(rb.kind == ModelConfig::Kind::ResNet);
  CHECK(rb.resnet.blocks == std::vector<int>{3, 4, 6, 3});
  CHECK(count_params(rb) == count_params(r));
}

TEST_CASE("model presets and defaults") {
  const ModelConfig p = model_from_json(json{{"preset", "mgnet-256-256-pi1"}, {"classes", 10}});
  CHECK(count_params(p) == 8865546);
  const ModelConfig d = model_from_json(json{{"levels", 2}, {"classes", 3}});
  CHECK(d.mgnet.nu == std::vector<int>{2, 2});
  CHECK(d.mgnet.c_u == MgNetConfig{}.c_u);
}

TEST_CASE("schema violations are format errors naming the key") {
  CHECK_THROWS_WITH_AS(model_from_json(json{{"levls", 2}}), doctest::Contains("levls"), FormatError);
  CHECK_THROWS_WITH_AS(model_from_json(json{{"pi", "pi3"}}), doctest::Contains("model.pi"), FormatError);
  CHECK_THROWS_WITH_AS(model_from_json(json{{"c_u", "many"}}), doctest::Contains("model.c_u"), FormatError);
  CHECK_THROWS_WITH_AS(model_from_json(json{{"kind", "vgg"}}), doctest::Contains("vgg"), FormatError);
  CHECK_THROWS_AS(model_from_json(json{{"levels", 3}, {"nu", {2, 2}}}), FormatError);
  CHECK_THROWS_AS(model_from_json(json{{"preset", "resnet50"}}), FormatError);
  CHECK_THROWS_AS(model_from_json(json::array()), FormatError);
  CHECK_THROWS_WITH_AS(train_from_json(json{{"momentum", 1.0}}), doctest::Contains("momentum"), FormatError);
  CHECK_THROWS_WITH_AS(run_from_json(json{{"optimizer", {}}}), doctest::Contains("optimizer"), FormatError);
  CHECK_THROWS_WITH_AS(run_from_json(json{{"data", {{"sigma", 0.2}}}}), doctest::Contains("sigma"), FormatError);
}

TEST_CASE("run config file round trip") {
  RunConfig run;
  run.model.mgnet.classes = 2;
  run.train.epochs = 7;
  run.train.learning_rate.decay_period = 3;
  run.train.seed = 42;
  run.checkpoint_every = 2;
  run.data.synthetic.size = 12;
  run.data.synthetic.classes = 2;
  run.data.standardize = true;
  const auto path = std::filesystem::temp_directory_path() / "mgnet_test_run.json";
  save_run_config(path, run);
  const RunConfig back = load_run_config(path);
  CHECK(run_to_json(back) == run_to_json(run));
  CHECK(back.train.seed == 42);
  CHECK(back.checkpoint_every == 2);
  CHECK(back.data.standardize);
  std::filesystem::remove(path);

  const RunConfig defaults = run_from_json(json{{"model", {{"classes", 5}, {"input_channels", 1}}}});
  CHECK(defaults.data.synthetic.classes == 5);
  CHECK(defaults.data.synthetic.channels == 1);
  CHECK(defaults.train.learning_rate.initial == 0.1);
  CHECK(defaults.train.batch_size == 128);
}

TEST_CASE("unreadable or malformed files") {
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.json"), FormatError);
  const auto path = std::filesystem::temp_directory_path() / "mgnet_test_bad.json";
  {
    std::ofstream out(path);
    out << "{\"model\": ";
  }
  CHECK_THROWS_AS(load_run_config(path), FormatError);
  std::filesystem::remove(path);
}
