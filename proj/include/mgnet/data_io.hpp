#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mgnet/model.hpp"
#include "mgnet/parameters.hpp"
#include "mgnet/tensor.hpp"

namespace mgnet {

struct LabeledImage {
  Tensor image;  // h x w x c, values in [0, 1] after ingestion
  int label = 0;
};

using Dataset = std::vector<LabeledImage>;

// ---- CIFAR binary ---------------------------------------------------------

inline constexpr int kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;

/// Records of 1 label byte followed by the R, G, B planes (row-major),
/// 3073 bytes each. Pixel bytes are divided by 255.
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);
Dataset load_cifar10(const std::filesystem::path& path);
/// 3074-byte records: coarse label byte, fine label byte, planes. The fine
/// label (0..99) is kept.
Dataset parse_cifar100(std::span<const std::uint8_t> bytes);
Dataset load_cifar100(const std::filesystem::path& path);

/// Encodes images (32 x 32 x 3, values in [0, 1]) back into CIFAR-10 records,
/// rounding to the nearest byte.
std::vector<std::uint8_t> encode_cifar10(std::span<const LabeledImage> images);

// ---- synthetic ------------------------------------------------------------

struct SyntheticSpec {
  int classes = 2;
  int per_class = 100;
  int size = 16;
  int channels = 3;
  Real noise = Real(0.1);
};

/// Class k is a Gaussian bump (width size/8) centred on the k-th of
/// `classes` points spaced around a circle of radius size/4, plus i.i.d.
/// N(0, noise^2) pixel noise, clipped to [0, 1]. Items are ordered by class.
Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);
Dataset gen_synthetic(int classes, int per_class, int size, std::uint64_t seed);

/// Blob centre (row, col) of class k.
std::pair<Real, Real> synthetic_center(int k, int classes, int size);

// ---- normalization --------------------------------------------------------

struct ChannelStats {
  std::vector<Real> mean;
  std::vector<Real> stddev;
};

ChannelStats channel_stats(std::span<const LabeledImage> data);
/// x <- (x - mean_c) / std_c in place.
void standardize(std::span<LabeledImage> data, const ChannelStats& stats);

// ---- checkpoints ----------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "MGNET1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<Real> values;
};

/// Magic "MGNET1", a 4-byte little-endian version, then until end of file:
/// name length (u32), name bytes, rank (u32), dims (u32 each), values as
/// little-endian IEEE doubles.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Every store entry, in store order.
Checkpoint checkpoint_from_store(const ParameterStore& store);
/// Builds a store for `model` from the tensors named by its layout. Missing
/// tensors or shape mismatches are contract violations naming the tensor.
ParameterStore store_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& model);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace mgnet
