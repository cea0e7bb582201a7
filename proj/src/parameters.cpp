#include "mgnet/parameters.hpp"

#include <cmath>
#include <random>

namespace mgnet {

std::size_t element_count(const std::vector<int>& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::string dims_string(const std::vector<int>& dims) {
  std::string s = "[";
  for (std::size_t k = 0; k < dims.size(); ++k) s += (k ? ", " : "") + std::to_string(dims[k]);
  return s + "]";
}

ParameterStore ParameterStore::from_specs(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParameterStore store;
  std::mt19937_64 rng(seed);
  for (const ParamSpec& spec : specs) {
    std::vector<Real> values(element_count(spec.dims), Real(0));
    switch (spec.init) {
      case InitKind::He: {
        std::normal_distribution<Real> dist(0, std::sqrt(Real(2) / static_cast<Real>(spec.fan_in)));
        for (Real& v : values) v = dist(rng);
        break;
      }
      case InitKind::Small: {
        std::normal_distribution<Real> dist(0, Real(0.01));
        for (Real& v : values) v = dist(rng);
        break;
      }
      case InitKind::One:
        std::fill(values.begin(), values.end(), Real(1));
        break;
      case InitKind::Zero:
        break;
    }
    store.add(spec.name, spec.dims, spec.trainable, std::move(values));
  }
  return store;
}

void ParameterStore::add(std::string name, std::vector<int> dims, bool trainable,
                         std::vector<Real> values) {
  require(!index_.contains(name), "ParameterStore: duplicate parameter " + name);
  require(values.size() == element_count(dims), "ParameterStore: " + name + " value count mismatch");
  index_[name] = entries_.size();
  entries_.push_back(Entry{std::move(name), std::move(dims), trainable, std::move(values)});
}

ParameterStore::Entry& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), "ParameterStore: no parameter named " + name);
  return entries_[it->second];
}

const ParameterStore::Entry& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), "ParameterStore: no parameter named " + name);
  return entries_[it->second];
}

ad::Array ParameterStore::array(const std::string& name) const {
  const Entry& e = at(name);
  return ad::Array::from_dims(e.dims, e.values);
}

ConvKernel ParameterStore::kernel(const std::string& prefix) const {
  const Entry& w = at(prefix + ".weight");
  require(w.dims.size() == 4 && w.dims[2] == w.dims[3] && w.dims[2] % 2 == 1,
          "ParameterStore: " + prefix + ".weight is not a conv kernel");
  ConvKernel kernel((w.dims[2] - 1) / 2, w.dims[1], w.dims[0]);
  kernel.weights = w.values;
  if (contains(prefix + ".bias")) {
    kernel.bias = at(prefix + ".bias").values;
  }
  return kernel;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) {
    if (e.trainable) n += e.values.size();
  }
  return n;
}

std::size_t ParameterStore::total_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.values.size();
  return n;
}

std::size_t count_trainable(const std::vector<ParamSpec>& specs) {
  std::size_t n = 0;
  for (const ParamSpec& s : specs) {
    if (s.trainable) n += element_count(s.dims);
  }
  return n;
}

void check_store(const ParameterStore& store, const std::vector<ParamSpec>& specs) {
  for (const ParamSpec& spec : specs) {
    require(store.contains(spec.name), "missing parameter " + spec.name);
    const std::vector<int>& dims = store.at(spec.name).dims;
    require(dims == spec.dims, "parameter " + spec.name + " has shape " + dims_string(dims) + ", expected " +
                                   dims_string(spec.dims));
  }
}

TapeBinder::TapeBinder(ad::Tape& tape, const ParameterStore& store, ad::NormMode mode,
                       ParamBinding binding, Real bn_eps)
    : tape_(tape),
      store_(store),
      mode_(mode),
      binding_(binding),
      eps_(bn_eps),
      records_(std::make_shared<BatchNormRecords>()) {}

ad::Var TapeBinder::param(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  const ParameterStore::Entry& e = store_.at(name);
  ad::Array value = ad::Array::from_dims(e.dims, e.values);
  ad::Var v = binding_ == ParamBinding::Trainable && e.trainable ? tape_.parameter(name, std::move(value))
                                                                 : tape_.constant(std::move(value));
  vars_.emplace(name, v);
  return v;
}

ad::Var TapeBinder::optional(const std::string& name) {
  return store_.contains(name) ? param(name) : ad::Var();
}

ad::Var TapeBinder::conv(const ad::Var& x, const std::string& prefix, int stride) {
  return ad::conv2d(x, param(prefix + ".weight"), optional(prefix + ".bias"), stride, PaddingMode::Zero);
}

ad::Var TapeBinder::bn(const ad::Var& x, const std::string& prefix) {
  BatchNormRecord& record = (*records_)[prefix];
  record.count = static_cast<std::size_t>(x.value().n) * x.value().h * x.value().w;
  return ad::batch_norm(x, param(prefix + ".gamma"), param(prefix + ".beta"), mode_,
                        store_.at(prefix + ".running_mean").values,
                        store_.at(prefix + ".running_var").values, eps_, &record.moments);
}

void update_running_stats(ParameterStore& store, const BatchNormRecords& records, Real momentum) {
  for (const auto& [prefix, record] : records) {
    if (record.moments.mean.empty()) continue;
    auto& mean = store.at(prefix + ".running_mean").values;
    auto& var = store.at(prefix + ".running_var").values;
    const Real unbias =
        record.count > 1 ? static_cast<Real>(record.count) / static_cast<Real>(record.count - 1) : Real(1);
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = (1 - momentum) * mean[c] + momentum * record.moments.mean[c];
      var[c] = (1 - momentum) * var[c] + momentum * record.moments.var[c] * unbias;
    }
  }
}

}  // namespace mgnet
