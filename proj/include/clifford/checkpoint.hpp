#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   magic       8 bytes  "CLFNETCK"
//   version     u32      (kCheckpointVersion)
//   config      u32 length + UTF-8 text, one "key=value" line per config field
//   count       u32      number of entries
//   entry       u32 name length, name bytes,
//               u32 rank, rank x u64 dims,
//               prod(dims) x f32 values
//
// Entries follow the parameter order of for_each_parameter, with each
// block's batch-norm running statistics placed right after the matching
// norm affine ("blocks.i.bnK.running_mean", "blocks.i.bnK.running_var").

#include "clifford/network.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace clifford {

inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'F', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, Model<float>& model);
Model<float> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, Model<float>& model);
Model<float> load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing model; the stored config must match model.config.
void load_checkpoint_into(const std::filesystem::path& path, Model<float>& model);

}  // namespace clifford
