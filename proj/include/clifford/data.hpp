#pragma once

// CIFAR-10/100 binary ingestion, normalization, augmentation and batching.
//
// Record layout: CIFAR-10 records are 1 label byte + 3072 pixel bytes,
// CIFAR-100 records are coarse label + fine label + 3072 pixel bytes (the
// fine label is used). Pixels are channel-major (1024 R, 1024 G, 1024 B),
// row-major within a channel. In memory images are stored channel-last
// (32 x 32 x 3 bytes per image) to match the tensor layout.

#include "clifford/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace clifford::data {

inline constexpr Index kImageSide = 32;
inline constexpr Index kImageChannels = 3;
inline constexpr Index kImageBytes = kImageSide * kImageSide * kImageChannels;

enum class CifarVariant { cifar10, cifar100 };

CifarVariant parse_variant(std::string_view name);
std::string_view to_string(CifarVariant variant);
Index record_bytes(CifarVariant variant);
int class_count(CifarVariant variant);

struct Dataset {
  std::vector<std::uint8_t> images;  // N x 32 x 32 x 3, channel-last
  std::vector<int> labels;
  int class_count = 0;
  std::string split;

  Index size() const { return static_cast<Index>(labels.size()); }
  std::span<const std::uint8_t> image(Index i) const {
    return {images.data() + i * kImageBytes, static_cast<std::size_t>(kImageBytes)};
  }
  /// First n samples (all when n <= 0 or n >= size()).
  Dataset head(Index n) const;
};

/// Parses one binary file. Throws CorruptFileError when the size is not a
/// whole number of records and DataError for out-of-range labels.
Dataset load_cifar(const std::filesystem::path& path, CifarVariant variant);

/// Loads the train or test split from a directory holding the standard
/// files (data_batch_{1..5}.bin / test_batch.bin, or train.bin / test.bin).
/// Also accepts the parent directory of cifar-10-batches-bin / cifar-100-binary.
Dataset load_cifar_split(const std::filesystem::path& dir, CifarVariant variant, bool train);

/// Encodes samples in the published binary layout (inverse of load_cifar).
std::vector<std::uint8_t> encode_cifar(const Dataset& dataset, CifarVariant variant);
void write_cifar(const std::filesystem::path& path, const Dataset& dataset, CifarVariant variant);

struct NormalizeStats {
  std::array<float, 3> mean;
  std::array<float, 3> stddev;
};

NormalizeStats normalize_stats(CifarVariant variant);

/// Packs images (each kImageBytes, channel-last) into a (B, 32, 32, 3)
/// tensor with per-channel (x / 255 - mean) / std.
Tensor<float> normalize(std::span<const std::uint8_t> images, Index count, const NormalizeStats& stats);

struct AugmentConfig {
  int pad = 4;
  double hflip_prob = 0.5;
  double erase_prob = 0.25;
  double erase_area_min = 0.02;
  double erase_area_max = 0.33;

  void validate() const;
};

using Image = std::array<std::uint8_t, kImageBytes>;

/// Reflect-pads by `pad` and crops 32x32 at offset (dy, dx) relative to the
/// centred crop; both offsets lie in [-pad, pad].
Image pad_crop(std::span<const std::uint8_t> image, int pad, int dy, int dx);
Image hflip(std::span<const std::uint8_t> image);
/// Fills a rectangle with uniform noise bytes.
Image erase(std::span<const std::uint8_t> image, int top, int left, int height, int width, std::mt19937_64& rng);

/// Random crop, flip and erase. Deterministic given the rng state.
Image augment(std::span<const std::uint8_t> image, const AugmentConfig& config, std::mt19937_64& rng);

/// Epoch-seeded permutation split into batches; the last partial batch is kept.
std::vector<std::vector<Index>> batch_indices(Index n, Index batch_size, std::uint64_t seed, std::uint64_t epoch);

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

/// Iterates one epoch of batches. With an augment config, each image is
/// augmented with an rng derived from (seed, epoch).
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, Index batch_size, std::uint64_t seed, std::uint64_t epoch,
              NormalizeStats stats, std::optional<AugmentConfig> augment = std::nullopt, bool shuffle = true);

  /// Next batch, or nullopt when the epoch is exhausted.
  std::optional<Batch> next();
  std::size_t batch_count() const { return order_.size(); }

 private:
  const Dataset* dataset_;
  std::vector<std::vector<Index>> order_;
  std::size_t cursor_ = 0;
  NormalizeStats stats_;
  std::optional<AugmentConfig> augment_;
  std::mt19937_64 rng_;
};

/// Class-conditional synthetic images (colour tint plus an oriented
/// stripe pattern per class, with pixel noise). Used where the real
/// binaries are unavailable; never a substitute for accuracy claims.
Dataset synthetic_dataset(Index n, int classes, std::uint64_t seed, std::string split = "synthetic");

/// Derives a stream seed from (seed, epoch, salt).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t salt = 0);

}  // namespace clifford::data
