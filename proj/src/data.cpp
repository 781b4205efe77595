#include "clifford/data.hpp"

#include "clifford/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace clifford::data {

CifarVariant parse_variant(std::string_view name) {
  if (name == "cifar10") return CifarVariant::cifar10;
  if (name == "cifar100") return CifarVariant::cifar100;
  throw ConfigError("unknown dataset '" + std::string(name) + "' (expected cifar10 or cifar100)");
}

std::string_view to_string(CifarVariant variant) {
  return variant == CifarVariant::cifar10 ? "cifar10" : "cifar100";
}

Index record_bytes(CifarVariant variant) { return (variant == CifarVariant::cifar10 ? 1 : 2) + kImageBytes; }

int class_count(CifarVariant variant) { return variant == CifarVariant::cifar10 ? 10 : 100; }

Dataset Dataset::head(Index n) const {
  if (n <= 0 || n >= size()) return *this;
  Dataset out;
  out.class_count = class_count;
  out.split = split;
  out.labels.assign(labels.begin(), labels.begin() + n);
  out.images.assign(images.begin(), images.begin() + n * kImageBytes);
  return out;
}

namespace {

constexpr Index kPlane = kImageSide * kImageSide;

void append_records(Dataset& out, std::span<const std::uint8_t> bytes, CifarVariant variant,
                    const std::string& source) {
  const Index rec = record_bytes(variant);
  const Index total = static_cast<Index>(bytes.size());
  if (total % rec != 0) {
    const Index whole = total / rec;
    throw CorruptFileError(source + ": " + std::to_string(total) + " bytes is not a whole number of " +
                           std::to_string(rec) + "-byte records (expected " + std::to_string(whole * rec) + " or " +
                           std::to_string((whole + 1) * rec) + " bytes)");
  }
  const Index n = total / rec;
  const Index label_offset = variant == CifarVariant::cifar10 ? 0 : 1;
  const Index base = static_cast<Index>(out.labels.size());
  out.labels.resize(static_cast<std::size_t>(base + n));
  out.images.resize(static_cast<std::size_t>((base + n) * kImageBytes));
  for (Index i = 0; i < n; ++i) {
    const std::uint8_t* r = bytes.data() + i * rec;
    const int label = r[label_offset];
    if (label >= out.class_count) {
      throw DataError(source + ": record " + std::to_string(i) + " has label " + std::to_string(label) +
                      " outside [0, " + std::to_string(out.class_count) + ")");
    }
    out.labels[static_cast<std::size_t>(base + i)] = label;
    const std::uint8_t* px = r + rec - kImageBytes;
    std::uint8_t* dst = out.images.data() + (base + i) * kImageBytes;
    for (Index p = 0; p < kPlane; ++p) {
      for (Index c = 0; c < kImageChannels; ++c) dst[p * kImageChannels + c] = px[c * kPlane + p];
    }
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset load_cifar(const std::filesystem::path& path, CifarVariant variant) {
  Dataset out;
  out.class_count = class_count(variant);
  out.split = path.stem().string();
  const auto bytes = read_file(path);
  append_records(out, bytes, variant, path.string());
  return out;
}

Dataset load_cifar_split(const std::filesystem::path& dir, CifarVariant variant, bool train) {
  std::filesystem::path root = dir;
  const char* nested = variant == CifarVariant::cifar10 ? "cifar-10-batches-bin" : "cifar-100-binary";
  if (std::filesystem::is_directory(root / nested)) root /= nested;

  std::vector<std::filesystem::path> files;
  if (variant == CifarVariant::cifar10) {
    if (train) {
      for (int i = 1; i <= 5; ++i) files.push_back(root / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
      files.push_back(root / "test_batch.bin");
    }
  } else {
    files.push_back(root / (train ? "train.bin" : "test.bin"));
  }

  Dataset out;
  out.class_count = class_count(variant);
  out.split = train ? "train" : "test";
  for (const auto& f : files) {
    if (!std::filesystem::exists(f)) {
      throw DataError("missing " + std::string(to_string(variant)) + " file " + f.string());
    }
    append_records(out, read_file(f), variant, f.string());
  }
  return out;
}

std::vector<std::uint8_t> encode_cifar(const Dataset& dataset, CifarVariant variant) {
  const Index rec = record_bytes(variant);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(dataset.size() * rec));
  for (Index i = 0; i < dataset.size(); ++i) {
    std::uint8_t* r = bytes.data() + i * rec;
    const auto label = static_cast<std::uint8_t>(dataset.labels[static_cast<std::size_t>(i)]);
    if (variant == CifarVariant::cifar10) {
      r[0] = label;
    } else {
      r[0] = 0;
      r[1] = label;
    }
    const std::uint8_t* src = dataset.images.data() + i * kImageBytes;
    std::uint8_t* px = r + rec - kImageBytes;
    for (Index p = 0; p < kPlane; ++p) {
      for (Index c = 0; c < kImageChannels; ++c) px[c * kPlane + p] = src[p * kImageChannels + c];
    }
  }
  return bytes;
}

void write_cifar(const std::filesystem::path& path, const Dataset& dataset, CifarVariant variant) {
  const auto bytes = encode_cifar(dataset, variant);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

NormalizeStats normalize_stats(CifarVariant variant) {
  if (variant == CifarVariant::cifar100) return {{0.5071f, 0.4865f, 0.4409f}, {0.2673f, 0.2564f, 0.2762f}};
  return {{0.4914f, 0.4822f, 0.4465f}, {0.2470f, 0.2435f, 0.2616f}};
}

Tensor<float> normalize(std::span<const std::uint8_t> images, Index count, const NormalizeStats& stats) {
  if (static_cast<Index>(images.size()) != count * kImageBytes) {
    throw DimensionError("normalize: " + std::to_string(images.size()) + " bytes for " + std::to_string(count) +
                         " images");
  }
  Tensor<float> out({count, kImageSide, kImageSide, kImageChannels});
  float* dst = out.values().data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::size_t c = i % kImageChannels;
    dst[i] = (static_cast<float>(images[i]) / 255.0f - stats.mean[c]) / stats.stddev[c];
  }
  return out;
}

void AugmentConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (pad < 0 || pad >= kImageSide) throw ConfigError("augment pad must lie in [0, 32)");
  if (!prob(hflip_prob) || !prob(erase_prob)) throw ConfigError("augment probabilities must lie in [0, 1]");
  if (!(erase_area_min > 0.0 && erase_area_min <= erase_area_max && erase_area_max < 1.0)) {
    throw ConfigError("erase area range must satisfy 0 < min <= max < 1");
  }
}

namespace {

// Reflection without repeating the edge pixel (numpy/torch "reflect").
Index reflect(Index i, Index n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

}  // namespace

Image pad_crop(std::span<const std::uint8_t> image, int pad, int dy, int dx) {
  if (std::abs(dy) > pad || std::abs(dx) > pad) throw ConfigError("crop offset exceeds padding");
  Image out;
  for (Index y = 0; y < kImageSide; ++y) {
    const Index sy = reflect(y + dy, kImageSide);
    for (Index x = 0; x < kImageSide; ++x) {
      const Index sx = reflect(x + dx, kImageSide);
      std::copy_n(image.data() + (sy * kImageSide + sx) * kImageChannels, kImageChannels,
                  out.data() + (y * kImageSide + x) * kImageChannels);
    }
  }
  return out;
}

Image hflip(std::span<const std::uint8_t> image) {
  Image out;
  for (Index y = 0; y < kImageSide; ++y) {
    for (Index x = 0; x < kImageSide; ++x) {
      std::copy_n(image.data() + (y * kImageSide + (kImageSide - 1 - x)) * kImageChannels, kImageChannels,
                  out.data() + (y * kImageSide + x) * kImageChannels);
    }
  }
  return out;
}

Image erase(std::span<const std::uint8_t> image, int top, int left, int height, int width, std::mt19937_64& rng) {
  Image out;
  std::copy(image.begin(), image.end(), out.begin());
  std::uniform_int_distribution<int> noise(0, 255);
  for (int y = top; y < top + height; ++y) {
    for (int x = left; x < left + width; ++x) {
      for (Index c = 0; c < kImageChannels; ++c) {
        out[static_cast<std::size_t>((y * kImageSide + x) * kImageChannels + c)] = static_cast<std::uint8_t>(noise(rng));
      }
    }
  }
  return out;
}

Image augment(std::span<const std::uint8_t> image, const AugmentConfig& config, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> offset(-config.pad, config.pad);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int dy = offset(rng);
  const int dx = offset(rng);
  Image out = pad_crop(image, config.pad, dy, dx);
  if (unit(rng) < config.hflip_prob) out = hflip(out);
  if (unit(rng) < config.erase_prob) {
    // Area fraction and log-uniform aspect ratio; retried until the box fits.
    constexpr double kArea = static_cast<double>(kImageSide * kImageSide);
    std::uniform_real_distribution<double> area(config.erase_area_min, config.erase_area_max);
    std::uniform_real_distribution<double> log_ratio(std::log(0.3), std::log(1.0 / 0.3));
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double target = area(rng) * kArea;
      const double ratio = std::exp(log_ratio(rng));
      const int h = static_cast<int>(std::lround(std::sqrt(target * ratio)));
      const int w = static_cast<int>(std::lround(std::sqrt(target / ratio)));
      if (h < 1 || w < 1 || h >= kImageSide || w >= kImageSide) continue;
      std::uniform_int_distribution<int> top(0, static_cast<int>(kImageSide) - h);
      std::uniform_int_distribution<int> left(0, static_cast<int>(kImageSide) - w);
      const int t = top(rng);
      const int l = left(rng);
      out = erase(out, t, l, h, w, rng);
      break;
    }
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t salt) {
  // splitmix64 over the combined words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ epoch) ^ salt);
}

std::vector<std::vector<Index>> batch_indices(Index n, Index batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(mix_seed(seed, epoch, 1));
  // Fisher-Yates with an explicit modulo draw keeps the order independent of
  // the standard library's shuffle implementation.
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

BatchStream::BatchStream(const Dataset& dataset, Index batch_size, std::uint64_t seed, std::uint64_t epoch,
                         NormalizeStats stats, std::optional<AugmentConfig> augment, bool shuffle)
    : dataset_(&dataset), stats_(stats), augment_(std::move(augment)), rng_(mix_seed(seed, epoch, 2)) {
  if (augment_) augment_->validate();
  if (shuffle) {
    order_ = batch_indices(dataset.size(), batch_size, seed, epoch);
  } else {
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    for (Index start = 0; start < dataset.size(); start += batch_size) {
      std::vector<Index> b;
      for (Index i = start; i < std::min(dataset.size(), start + batch_size); ++i) b.push_back(i);
      order_.push_back(std::move(b));
    }
  }
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const auto& idx = order_[cursor_++];
  const auto count = static_cast<Index>(idx.size());
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(count * kImageBytes));
  Batch batch;
  batch.labels.reserve(idx.size());
  for (Index k = 0; k < count; ++k) {
    const Index i = idx[static_cast<std::size_t>(k)];
    auto src = dataset_->image(i);
    std::uint8_t* dst = pixels.data() + k * kImageBytes;
    if (augment_) {
      const Image img = augment(src, *augment_, rng_);
      std::copy(img.begin(), img.end(), dst);
    } else {
      std::copy(src.begin(), src.end(), dst);
    }
    batch.labels.push_back(dataset_->labels[static_cast<std::size_t>(i)]);
  }
  batch.images = normalize(pixels, count, stats_);
  return batch;
}

Dataset synthetic_dataset(Index n, int classes, std::uint64_t seed, std::string split) {
  if (classes < 1 || classes > 255) throw ConfigError("synthetic class count must lie in [1, 255]");
  Dataset out;
  out.class_count = classes;
  out.split = std::move(split);
  out.labels.resize(static_cast<std::size_t>(n));
  out.images.resize(static_cast<std::size_t>(n * kImageBytes));
  std::mt19937_64 rng(mix_seed(seed, 0, 4));
  std::uniform_int_distribution<int> label(0, classes - 1);
  std::normal_distribution<double> noise(0.0, 28.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (Index i = 0; i < n; ++i) {
    const int c = label(rng);
    out.labels[static_cast<std::size_t>(i)] = c;
    const double angle = std::numbers::pi * c / classes;
    const double freq = 0.35 + 0.05 * (c % 3);
    const double tint[3] = {std::cos(2.1 * c), std::cos(2.1 * c + 2.0), std::cos(2.1 * c + 4.0)};
    const double ph = phase(rng);
    std::uint8_t* img = out.images.data() + i * kImageBytes;
    for (Index y = 0; y < kImageSide; ++y) {
      for (Index x = 0; x < kImageSide; ++x) {
        const double wave = std::sin(freq * (std::cos(angle) * x + std::sin(angle) * y) + ph);
        for (Index ch = 0; ch < kImageChannels; ++ch) {
          const double v = 128.0 + 40.0 * tint[ch] + 45.0 * wave + noise(rng);
          img[(y * kImageSide + x) * kImageChannels + ch] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
    }
  }
  return out;
}

}  // namespace clifford::data
