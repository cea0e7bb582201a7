#include "mgnet/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace mgnet {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

Dataset parse_cifar(std::span<const std::uint8_t> bytes, int label_bytes, int classes, const char* what) {
  const std::size_t record = label_bytes + kCifarPixels;
  if (bytes.size() % record != 0) {
    const std::size_t complete = bytes.size() / record;
    throw FormatError(std::string(what) + ": truncated record at byte offset " +
                      std::to_string(complete * record) + " (file length " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(record) + ")");
  }
  Dataset out;
  out.reserve(bytes.size() / record);
  for (std::size_t offset = 0; offset < bytes.size(); offset += record) {
    const int label = bytes[offset + label_bytes - 1];
    if (label >= classes) {
      throw FormatError(std::string(what) + ": label " + std::to_string(label) + " at byte offset " +
                        std::to_string(offset + label_bytes - 1) + " is not below " + std::to_string(classes));
    }
    LabeledImage item{Tensor(kCifarSide, kCifarSide, 3), label};
    const std::uint8_t* px = bytes.data() + offset + label_bytes;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < kCifarSide; ++i) {
        for (int j = 0; j < kCifarSide; ++j) {
          item.image(i, j, c) = Real(px[(c * kCifarSide + i) * kCifarSide + j]) / 255;
        }
      }
    }
    out.push_back(std::move(item));
  }
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint: truncated " + std::string(what) + " at byte offset " + std::to_string(pos_));
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return std::uint32_t(s[0]) | std::uint32_t(s[1]) << 8 | std::uint32_t(s[2]) << 16 | std::uint32_t(s[3]) << 24;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Bounds that reject garbage long before it can drive a huge allocation.
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) { return parse_cifar(bytes, 1, 10, "cifar10"); }
Dataset parse_cifar100(std::span<const std::uint8_t> bytes) { return parse_cifar(bytes, 2, 100, "cifar100"); }
Dataset load_cifar10(const std::filesystem::path& path) { return parse_cifar10(read_file(path)); }
Dataset load_cifar100(const std::filesystem::path& path) { return parse_cifar100(read_file(path)); }

std::vector<std::uint8_t> encode_cifar10(std::span<const LabeledImage> images) {
  std::vector<std::uint8_t> out;
  out.reserve(images.size() * (1 + kCifarPixels));
  for (const LabeledImage& item : images) {
    require(item.image.height() == kCifarSide && item.image.width() == kCifarSide && item.image.channels() == 3,
            "encode_cifar10: images must be 32x32x3");
    require(item.label >= 0 && item.label < 10, "encode_cifar10: label out of range");
    out.push_back(static_cast<std::uint8_t>(item.label));
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < kCifarSide; ++i) {
        for (int j = 0; j < kCifarSide; ++j) {
          const Real v = std::clamp(item.image(i, j, c), Real(0), Real(1));
          out.push_back(static_cast<std::uint8_t>(std::lround(v * 255)));
        }
      }
    }
  }
  return out;
}

std::pair<Real, Real> synthetic_center(int k, int classes, int size) {
  const Real angle = 2 * std::numbers::pi_v<Real> * k / classes;
  const Real mid = Real(size - 1) / 2;
  const Real radius = Real(size) / 4;
  return {mid + radius * std::sin(angle), mid + radius * std::cos(angle)};
}

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  require(spec.classes >= 2, "gen_synthetic: classes must be >= 2");
  require(spec.per_class >= 0 && spec.size >= 1 && spec.channels >= 1, "gen_synthetic: invalid sizes");
  require(spec.noise >= 0, "gen_synthetic: noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> noise(0, 1);
  const Real width = std::max(Real(spec.size) / 8, Real(0.5));
  Dataset out;
  out.reserve(static_cast<std::size_t>(spec.classes) * spec.per_class);
  for (int k = 0; k < spec.classes; ++k) {
    const auto [ci, cj] = synthetic_center(k, spec.classes, spec.size);
    Tensor blob(spec.size, spec.size, 1);
    for (int i = 0; i < spec.size; ++i) {
      for (int j = 0; j < spec.size; ++j) {
        const Real d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
        blob(i, j, 0) = std::exp(-d2 / (2 * width * width));
      }
    }
    for (int n = 0; n < spec.per_class; ++n) {
      LabeledImage item{Tensor(spec.size, spec.size, spec.channels), k};
      for (int i = 0; i < spec.size; ++i) {
        for (int j = 0; j < spec.size; ++j) {
          for (int c = 0; c < spec.channels; ++c) {
            item.image(i, j, c) = std::clamp(blob(i, j, 0) + spec.noise * noise(rng), Real(0), Real(1));
          }
        }
      }
      out.push_back(std::move(item));
    }
  }
  return out;
}

Dataset gen_synthetic(int classes, int per_class, int size, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.per_class = per_class;
  spec.size = size;
  return gen_synthetic(spec, seed);
}

ChannelStats channel_stats(std::span<const LabeledImage> data) {
  require(!data.empty(), "channel_stats: empty dataset");
  const int c = data.front().image.channels();
  std::vector<Real> sum(c, 0);
  std::vector<Real> sum2(c, 0);
  std::size_t count = 0;
  for (const LabeledImage& item : data) {
    require(item.image.channels() == c, "channel_stats: mixed channel counts");
    for (int i = 0; i < item.image.height(); ++i) {
      for (int j = 0; j < item.image.width(); ++j) {
        for (int k = 0; k < c; ++k) {
          const Real v = item.image(i, j, k);
          sum[k] += v;
          sum2[k] += v * v;
        }
      }
    }
    count += static_cast<std::size_t>(item.image.height()) * item.image.width();
  }
  ChannelStats stats;
  for (int k = 0; k < c; ++k) {
    const Real mean = sum[k] / count;
    const Real var = std::max(sum2[k] / count - mean * mean, Real(0));
    stats.mean.push_back(mean);
    stats.stddev.push_back(var > 0 ? std::sqrt(var) : Real(1));
  }
  return stats;
}

void standardize(std::span<LabeledImage> data, const ChannelStats& stats) {
  for (LabeledImage& item : data) {
    require(item.image.channels() == static_cast<int>(stats.mean.size()), "standardize: channel count mismatch");
    for (int i = 0; i < item.image.height(); ++i) {
      for (int j = 0; j < item.image.width(); ++j) {
        for (int k = 0; k < item.image.channels(); ++k) {
          item.image(i, j, k) = (item.image(i, j, k) - stats.mean[k]) / stats.stddev[k];
        }
      }
    }
  }
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 6);
  put_u32(out, ckpt.version);
  for (const NamedTensor& t : ckpt.tensors) {
    require(element_count(t.dims) == t.values.size(), "checkpoint: tensor " + t.name + " has inconsistent dims");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (int d : t.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (Real v : t.values) {
      const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(v));
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  }
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(6, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 6) != 0) throw FormatError("checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.version = in.u32("version");
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(ckpt.version));
  }
  while (!in.done()) {
    NamedTensor t;
    const std::size_t start = in.pos();
    const std::uint32_t name_length = in.u32("name length");
    if (name_length == 0 || name_length > kMaxNameLength) {
      throw FormatError("checkpoint: implausible name length at byte offset " + std::to_string(start));
    }
    const auto name = in.take(name_length, "name");
    t.name.assign(name.begin(), name.end());
    const std::uint32_t rank = in.u32("rank");
    if (rank > kMaxRank) throw FormatError("checkpoint: tensor " + t.name + " has implausible rank");
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t d = in.u32("dim");
      if (d == 0 || d > (1u << 30)) throw FormatError("checkpoint: tensor " + t.name + " has an invalid dim");
      t.dims.push_back(static_cast<int>(d));
      count *= d;
      if (count > bytes.size() / 8) {
        throw FormatError("checkpoint: tensor " + t.name + " is larger than the file");
      }
    }
    const auto raw = in.take(count * 8, "values");
    t.values.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t(raw[8 * k + b]) << (8 * b);
      t.values[k] = static_cast<Real>(std::bit_cast<double>(bits));
    }
    if (ckpt.find(t.name) != nullptr) throw FormatError("checkpoint: duplicate tensor " + t.name);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store) {
  save_checkpoint(path, checkpoint_from_store(store));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

Checkpoint checkpoint_from_store(const ParameterStore& store) {
  Checkpoint ckpt;
  for (const auto& e : store.entries()) ckpt.tensors.push_back({e.name, e.dims, e.values});
  return ckpt;
}

ParameterStore store_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& model) {
  ParameterStore store;
  for (const ParamSpec& spec : model_layout(model)) {
    const NamedTensor* t = ckpt.find(spec.name);
    require(t != nullptr, "checkpoint has no tensor " + spec.name);
    require(t->dims == spec.dims, "checkpoint tensor " + spec.name + " has shape " + dims_string(t->dims) +
                                      ", model expects " + dims_string(spec.dims));
    store.add(spec.name, spec.dims, spec.trainable, t->values);
  }
  return store;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace mgnet
