#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mgnet/autodiff.hpp"
#include "mgnet/tensor.hpp"

namespace mgnet {

enum class InitKind { He, Zero, One, Small };

/// Declares one named parameter tensor of a model.
struct ParamSpec {
  std::string name;
  std::vector<int> dims;
  bool trainable = true;
  InitKind init = InitKind::He;
  int fan_in = 1;
};

std::size_t element_count(const std::vector<int>& dims);
/// "[a, b, c]"
std::string dims_string(const std::vector<int>& dims);

/// Ordered collection of named parameter tensors. Non-trainable entries
/// (batch-norm running statistics) are stored alongside and persisted, but
/// excluded from trainable counts and from optimizer updates.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    std::vector<int> dims;
    bool trainable = true;
    std::vector<Real> values;
  };

  /// Allocates every spec. He entries draw N(0, 2/fan_in), Small entries
  /// N(0, 0.01^2); Zero/One fill constants.
  static ParameterStore from_specs(const std::vector<ParamSpec>& specs, std::uint64_t seed);

  void add(std::string name, std::vector<int> dims, bool trainable, std::vector<Real> values);
  bool contains(const std::string& name) const { return index_.contains(name); }
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  ad::Array array(const std::string& name) const;
  /// Conv weight "<prefix>.weight" (out, in, w, w) plus optional "<prefix>.bias".
  ConvKernel kernel(const std::string& prefix) const;

  std::size_t trainable_count() const;
  std::size_t total_count() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Trainable scalar count of a layout.
std::size_t count_trainable(const std::vector<ParamSpec>& specs);

/// Checks that every spec is present in the store with its declared shape.
void check_store(const ParameterStore& store, const std::vector<ParamSpec>& specs);

enum class ParamBinding { Constant, Trainable };

struct BatchNormRecord {
  ad::BatchMoments moments;
  std::size_t count = 0;  // samples per channel (n * h * w)
};

using BatchNormRecords = std::map<std::string, BatchNormRecord>;

/// Exposes store entries as tape leaves (each name bound once) and builds
/// the parameterized layers shared by the model graphs.
class TapeBinder {
 public:
  TapeBinder(ad::Tape& tape, const ParameterStore& store, ad::NormMode mode, ParamBinding binding,
             Real bn_eps = Real(1e-5));

  ad::Tape& tape() { return tape_; }
  const ParameterStore& store() const { return store_; }
  std::shared_ptr<BatchNormRecords> records() const { return records_; }

  ad::Var param(const std::string& name);
  /// Absent Var when the store has no such entry.
  ad::Var optional(const std::string& name);
  /// Zero-padded conv with "<prefix>.weight" and optional "<prefix>.bias".
  ad::Var conv(const ad::Var& x, const std::string& prefix, int stride);
  /// Batch norm with "<prefix>.{gamma,beta,running_mean,running_var}".
  ad::Var bn(const ad::Var& x, const std::string& prefix);

 private:
  ad::Tape& tape_;
  const ParameterStore& store_;
  ad::NormMode mode_;
  ParamBinding binding_;
  Real eps_;
  std::map<std::string, ad::Var> vars_;
  std::shared_ptr<BatchNormRecords> records_;
};

/// r <- (1 - m) r + m s for every recorded batch norm, using the unbiased
/// batch variance.
void update_running_stats(ParameterStore& store, const BatchNormRecords& records, Real momentum);

}  // namespace mgnet
