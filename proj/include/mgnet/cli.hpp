#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mgnet/config_io.hpp"
#include "mgnet/data_io.hpp"

namespace mgnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Subcommands: solve-poisson, verify, train, eval, count-params. Results go
/// to `out` (and to files named by --out), diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Applies MGNET_THREADS (a positive integer) to the kernel thread limit.
void apply_thread_env();

struct Splits {
  Dataset train;
  Dataset test;
};

/// "synthetic" draws train (seed) and test (seed + 1) splits from the data
/// section. A file is read as one CIFAR binary batch (train only). A
/// directory supplies data_batch_*.bin / test_batch.bin (10 classes) or
/// train.bin / test.bin (100 classes).
Splits load_splits(const std::string& data, const RunConfig& run);

/// Parameters plus the training state and normalization constants as one
/// checkpoint: "momentum.<name>" buffers, "train.epochs_done", "train.step",
/// "data.mean" / "data.std".
Checkpoint make_checkpoint(const TrainState& state, const ChannelStats* stats);

}  // namespace mgnet::cli
