#include "mgnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <regex>

#include "mgnet/equivalence.hpp"
#include "mgnet/poisson_mg.hpp"

namespace mgnet::cli {

using nlohmann::json;

namespace {

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<std::filesystem::path> matching(const std::filesystem::path& dir, const std::regex& pattern) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && std::regex_match(entry.path().filename().string(), pattern)) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

void append(Dataset& to, Dataset from) {
  to.insert(to.end(), std::make_move_iterator(from.begin()), std::make_move_iterator(from.end()));
}

// ---- solve-poisson --------------------------------------------------------

struct SolveArgs {
  int size = 17;
  int levels = 3;
  int nu = 2;
  double omega = 0.8;
  int cycles = 50;
  std::uint64_t seed = 0;
  double tolerance = 1e-8;
  std::string out;
};

int solve_poisson(const SolveArgs& a, std::ostream& out) {
  const poisson::PoissonMultigrid mg(a.size, a.size, a.levels, poisson::SmootherSpec{Real(a.omega)});
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<Real> dist(-1, 1);
  Tensor f(a.size, a.size, 1);
  for (Real& v : f.values()) v = dist(rng);
  const std::vector<int> nu(a.levels, a.nu);
  const poisson::SolveResult result = mg.solve(f, nu, a.cycles);
  const Tensor direct = poisson::direct_solve(f);
  const Real error = l2_norm(result.solution - direct) / l2_norm(direct);
  // Once the residual reaches the rounding floor it only jitters.
  const Real floor = Real(1e-12) * result.residual_norms.front();
  bool monotone = true;
  for (std::size_t k = 1; k < result.residual_norms.size() && result.residual_norms[k - 1] >= floor; ++k) {
    monotone = monotone && result.residual_norms[k] < result.residual_norms[k - 1];
  }
  const bool converged = error <= a.tolerance;
  const json report{{"size", a.size},
                    {"levels", a.levels},
                    {"nu", a.nu},
                    {"omega", a.omega},
                    {"cycles", result.cycles},
                    {"seed", a.seed},
                    {"residual_norms", result.residual_norms},
                    {"relative_error", error},
                    {"tolerance", a.tolerance},
                    {"monotone", monotone},
                    {"converged", converged}};
  if (!a.out.empty()) write_json(a.out, report);
  out << report.dump() << "\n";
  return converged && monotone ? kExitOk : kExitFailure;
}

// ---- verify ---------------------------------------------------------------

struct VerifyArgs {
  std::string theorem = "all";
  std::uint64_t seed = 0;
  int seeds = 20;
  std::string out = "report.json";
};

int verify(const VerifyArgs& a, std::ostream& out) {
  std::vector<equivalence::TheoremId> ids;
  if (a.theorem == "all") {
    ids = {equivalence::TheoremId::MgNetMg0, equivalence::TheoremId::DualIResNet,
           equivalence::TheoremId::ResNetSigma, equivalence::TheoremId::CnnEmbedding};
  } else {
    ids = {equivalence::parse_theorem(a.theorem)};
  }
  json theorems = json::array();
  bool all_passed = true;
  for (equivalence::TheoremId id : ids) {
    Real worst = 0;
    int instances = 0;
    for (int k = 0; k < a.seeds; ++k) {
      const auto r = equivalence::verify_default(id, a.seed + static_cast<std::uint64_t>(k));
      worst = std::max(worst, r.max_abs_discrepancy);
      instances += r.instances_tested;
    }
    const bool passed = worst < equivalence::kTolerance;
    all_passed = all_passed && passed;
    theorems.push_back({{"name", equivalence::theorem_name(id)},
                        {"max_abs_discrepancy", worst},
                        {"instances_tested", instances},
                        {"passed", passed}});
  }
  const json report{{"seed", a.seed},
                    {"seeds", a.seeds},
                    {"tolerance", equivalence::kTolerance},
                    {"theorems", theorems},
                    {"passed", all_passed}};
  if (!a.out.empty()) write_json(a.out, report);
  out << report.dump() << "\n";
  return all_passed ? kExitOk : kExitFailure;
}

// ---- train / eval ---------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data = "synthetic";
  std::string out = "run";
};

json epoch_json(const EpochMetrics& m, const EvalMetrics* test) {
  json j{{"epoch", m.epoch}, {"learning_rate", m.learning_rate}, {"loss", m.loss}, {"accuracy", m.accuracy}};
  if (test != nullptr) {
    j["test_loss"] = test->loss;
    j["test_accuracy"] = test->accuracy;
  }
  return j;
}

int train_command(const TrainArgs& a, std::ostream& out) {
  const RunConfig run = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  Splits data = load_splits(a.data, run);
  ChannelStats stats;
  if (run.data.standardize) {
    stats = channel_stats(data.train);
    standardize(data.train, stats);
    if (!data.test.empty()) standardize(data.test, stats);
  }
  const ChannelStats* stats_ptr = run.data.standardize ? &stats : nullptr;

  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  save_run_config(dir / "config.json", run);
  std::ofstream metrics(dir / "metrics.jsonl");
  if (!metrics) throw FormatError("cannot write " + (dir / "metrics.jsonl").string());

  TrainState state{init_model(run.model, run.train.seed), {}, 0};
  EvalMetrics last_test;
  const auto history = train(run.model, run.train, data.train, state, [&](const EpochMetrics& m, const TrainState& s) {
    const EvalMetrics* test = nullptr;
    if (!data.test.empty()) {
      last_test = evaluate(run.model, s.params, data.test);
      test = &last_test;
    }
    const json line = epoch_json(m, test);
    metrics << line.dump() << "\n";
    metrics.flush();
    out << line.dump() << "\n";
    if (run.checkpoint_every > 0 && m.epoch % run.checkpoint_every == 0) {
      save_checkpoint(dir / ("checkpoint_epoch" + std::to_string(m.epoch) + ".bin"), make_checkpoint(s, stats_ptr));
    }
  });
  save_checkpoint(dir / "checkpoint.bin", make_checkpoint(state, stats_ptr));

  json summary{{"epochs", state.epochs_done},
               {"train_size", data.train.size()},
               {"test_size", data.test.size()},
               {"params", count_params(run.model)},
               {"checkpoint", (dir / "checkpoint.bin").string()}};
  if (!history.empty()) summary["final"] = epoch_json(history.back(), data.test.empty() ? nullptr : &last_test);
  write_json(dir / "summary.json", summary);
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data = "synthetic";
  std::string config;
  std::string out;
};

int eval_command(const EvalArgs& a, std::ostream& out) {
  const std::filesystem::path ckpt_path(a.checkpoint);
  const std::filesystem::path config_path =
      a.config.empty() ? ckpt_path.parent_path() / "config.json" : std::filesystem::path(a.config);
  const RunConfig run = load_run_config(config_path);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const ParameterStore params = store_from_checkpoint(ckpt, run.model);
  Splits data = load_splits(a.data, run);
  Dataset& eval_set = data.test.empty() ? data.train : data.test;
  const NamedTensor* mean = ckpt.find("data.mean");
  const NamedTensor* stddev = ckpt.find("data.std");
  if (mean != nullptr && stddev != nullptr) standardize(eval_set, ChannelStats{mean->values, stddev->values});
  const EvalMetrics m = evaluate(run.model, params, eval_set);
  const json report{{"checkpoint", a.checkpoint},
                    {"split", data.test.empty() ? "train" : "test"},
                    {"count", m.count},
                    {"loss", m.loss},
                    {"accuracy", m.accuracy}};
  if (!a.out.empty()) write_json(a.out, report);
  out << report.dump() << "\n";
  return kExitOk;
}

// ---- count-params ---------------------------------------------------------

struct CountArgs {
  std::string model;
  std::string config;
  int classes = 10;
};

int count_command(const CountArgs& a, std::ostream& out) {
  ModelConfig model;
  std::string name = a.model;
  if (!a.config.empty()) {
    model = load_run_config(a.config).model;
    if (name.empty()) name = "config";
  } else {
    model = model_preset(a.model, a.classes);
  }
  const json report{{"model", name}, {"classes", model.classes()}, {"params", count_params(model)}};
  out << report.dump() << "\n";
  return kExitOk;
}

}  // namespace

void apply_thread_env() {
  const char* env = std::getenv("MGNET_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ContractViolation("MGNET_THREADS must be a positive integer");
  set_thread_limit(static_cast<int>(n));
}

Splits load_splits(const std::string& data, const RunConfig& run) {
  Splits splits;
  if (data == "synthetic") {
    splits.train = gen_synthetic(run.data.synthetic, run.data.seed);
    SyntheticSpec test = run.data.synthetic;
    test.per_class = run.data.test_per_class;
    splits.test = gen_synthetic(test, run.data.seed + 1);
    return splits;
  }
  const std::filesystem::path path(data);
  const bool fine = run.model.classes() == 100;
  auto load = [&](const std::filesystem::path& p) { return fine ? load_cifar100(p) : load_cifar10(p); };
  if (std::filesystem::is_regular_file(path)) {
    splits.train = load(path);
    return splits;
  }
  if (!std::filesystem::is_directory(path)) throw FormatError("no such dataset: " + data);
  const std::regex train_name(fine ? "train\\.bin" : "data_batch_[0-9]+\\.bin");
  const std::regex test_name(fine ? "test\\.bin" : "test_batch\\.bin");
  for (const auto& p : matching(path, train_name)) append(splits.train, load(p));
  for (const auto& p : matching(path, test_name)) append(splits.test, load(p));
  if (splits.train.empty() && splits.test.empty()) throw FormatError("no CIFAR batches in " + data);
  return splits;
}

Checkpoint make_checkpoint(const TrainState& state, const ChannelStats* stats) {
  Checkpoint ckpt = checkpoint_from_store(state.params);
  for (const auto& e : state.params.entries()) {
    auto v = state.momentum.velocity.find(e.name);
    if (v != state.momentum.velocity.end()) ckpt.tensors.push_back({"momentum." + e.name, e.dims, v->second});
  }
  ckpt.tensors.push_back({"train.epochs_done", {1}, {static_cast<Real>(state.epochs_done)}});
  ckpt.tensors.push_back({"train.step", {1}, {static_cast<Real>(state.momentum.step)}});
  if (stats != nullptr) {
    const int c = static_cast<int>(stats->mean.size());
    ckpt.tensors.push_back({"data.mean", {c}, stats->mean});
    ckpt.tensors.push_back({"data.std", {c}, stats->stddev});
  }
  return ckpt;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MgNet toolkit: Poisson multigrid, equivalence checks, training and evaluation", "mgnet"};
  app.require_subcommand(1);

  SolveArgs solve;
  auto* solve_cmd = app.add_subcommand("solve-poisson", "Iterated multigrid on the five-point Poisson problem");
  solve_cmd->add_option("--size", solve.size, "Grid side N (odd, 2^k + 1)");
  solve_cmd->add_option("--levels", solve.levels, "Number of grid levels J");
  solve_cmd->add_option("--nu", solve.nu, "Smoothing steps per level");
  solve_cmd->add_option("--omega", solve.omega, "Jacobi damping");
  solve_cmd->add_option("--cycles", solve.cycles, "Maximum number of cycles");
  solve_cmd->add_option("--seed", solve.seed, "Seed of the random right-hand side");
  solve_cmd->add_option("--tol", solve.tolerance, "Relative error against the direct solve");
  solve_cmd->add_option("--out", solve.out, "Result JSON file");

  VerifyArgs ver;
  auto* verify_cmd = app.add_subcommand("verify", "Check the model equivalences numerically");
  verify_cmd->add_option("--theorem", ver.theorem, "all, mg0, dual, sigma or embed");
  verify_cmd->add_option("--seed", ver.seed, "First seed");
  verify_cmd->add_option("--seeds", ver.seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--out", ver.out, "Report JSON file");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model, writing metrics and checkpoints");
  train_cmd->add_option("--config", tr.config, "Run configuration JSON");
  train_cmd->add_option("--data", tr.data, "'synthetic', a CIFAR binary file or a directory of batches");
  train_cmd->add_option("--out", tr.out, "Run directory");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "'synthetic', a CIFAR binary file or a directory of batches");
  eval_cmd->add_option("--config", ev.config, "Run configuration (default: config.json next to the checkpoint)");
  eval_cmd->add_option("--out", ev.out, "Result JSON file");

  CountArgs cnt;
  auto* count_cmd = app.add_subcommand("count-params", "Trainable parameter count of a model");
  count_cmd->add_option("--model", cnt.model, "resnet18, resnet34 or mgnet-<c_u>-<c_f>-pi<0|1|2>");
  count_cmd->add_option("--config", cnt.config, "Run configuration whose model section is counted");
  count_cmd->add_option("--classes", cnt.classes, "Number of classes")->check(CLI::PositiveNumber);

  if (args.empty()) {
    err << app.help();
    return kExitUsage;
  }
  std::vector<const char*> argv{"mgnet"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (count_cmd->parsed() && cnt.model.empty() && cnt.config.empty()) {
      throw CLI::ValidationError("count-params", "--model or --config is required");
    }
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    apply_thread_env();
    if (solve_cmd->parsed()) return solve_poisson(solve, out);
    if (verify_cmd->parsed()) return verify(ver, out);
    if (train_cmd->parsed()) return train_command(tr, out);
    if (eval_cmd->parsed()) return eval_command(ev, out);
    if (count_cmd->parsed()) return count_command(cnt, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace mgnet::cli
