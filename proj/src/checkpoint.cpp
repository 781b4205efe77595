#include "clifford/checkpoint.hpp"

#include "clifford/error.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace clifford {
namespace {

struct Entry {
  std::string name;
  Shape shape;
  float* data;
};

// Parameters in for_each_parameter order with running statistics spliced in
// after their batch-norm affine.
std::vector<Entry> ordered_entries(Model<float>& model) {
  std::vector<std::pair<std::string, Array<float>*>> buffers;
  for_each_buffer<float>(model, [&](const std::string& name, Array<float>& b) { buffers.emplace_back(name, &b); });

  std::vector<Entry> entries;
  std::size_t next_buffer = 0;
  for_each_parameter<float>(model, [&](const std::string& name, Tensor<float>& t, ParamKind) {
    entries.push_back({name, t.shape(), t.values().data()});
    const bool bn_bias = name.ends_with(".bias") && name.find(".bn") != std::string::npos;
    if (!bn_bias) return;
    const std::string stem = name.substr(0, name.size() - std::string_view(".bias").size());
    while (next_buffer < buffers.size() && buffers[next_buffer].first.starts_with(stem + ".running_")) {
      auto& [bname, buf] = buffers[next_buffer++];
      entries.push_back({bname, {buf->size()}, buf->data()});
    }
  });
  return entries;
}

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T> || std::is_same_v<T, float>);
  std::array<unsigned char, sizeof(T)> bytes;
  if constexpr (std::is_same_v<T, float>) {
    const auto bits = std::bit_cast<std::uint32_t>(value);
    for (std::size_t i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  } else {
    const auto bits = static_cast<std::make_unsigned_t<T>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw CheckpointError("checkpoint truncated");
  }
  std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t> bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<decltype(bits)>(bytes[i]) << (8 * i);
  if constexpr (std::is_same_v<T, float>) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits));
  } else {
    return static_cast<T>(bits);
  }
}

std::string get_string(std::istream& in, std::uint32_t max_len) {
  const auto len = get<std::uint32_t>(in);
  if (len > max_len) throw CheckpointError("checkpoint string length " + std::to_string(len) + " is implausible");
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) throw CheckpointError("checkpoint truncated");
  return s;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

ModelConfig parse_config_text(const std::string& text) {
  ModelConfig config;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed config line '" + line + "'");
    try {
      set_config_field(config, std::string_view(line).substr(0, eq), std::string_view(line).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
  }
  return config;
}

std::string config_text(const ModelConfig& config) {
  std::string text;
  for (const auto& [key, value] : config_fields(config)) text += key + "=" + value + "\n";
  return text;
}

// Reads the entry stream into `model`, whose layout must match exactly.
void read_entries(std::istream& in, Model<float>& model) {
  std::vector<Entry> expected = ordered_entries(model);
  const auto count = get<std::uint32_t>(in);
  if (count != expected.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " entries, model expects " +
                          std::to_string(expected.size()));
  }
  for (const Entry& e : expected) {
    const std::string name = get_string(in, 1 << 16);
    if (name != e.name) throw CheckpointError("checkpoint entry '" + name + "' where '" + e.name + "' was expected");
    const auto rank = get<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(get<std::uint64_t>(in));
    if (shape != e.shape) {
      throw CheckpointError("checkpoint entry '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                            shape_string(e.shape));
    }
    const Index n = shape_size(shape);
    for (Index i = 0; i < n; ++i) e.data[i] = get<float>(in);
  }
}

ModelConfig read_header(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("not a CliffordNet checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  return parse_config_text(get_string(in, 1 << 20));
}

}  // namespace

void write_checkpoint(std::ostream& out, Model<float>& model) {
  out.write(kCheckpointMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, config_text(model.config));
  const std::vector<Entry> entries = ordered_entries(model);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const Entry& e : entries) {
    put_string(out, e.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (Index d : e.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    const Index n = shape_size(e.shape);
    for (Index i = 0; i < n; ++i) put<float>(out, e.data[i]);
  }
}

Model<float> read_checkpoint(std::istream& in) {
  const ModelConfig config = read_header(in);
  Model<float> model;
  try {
    model = init_model<float>(config, 0);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  read_entries(in, model);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, Model<float>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  write_checkpoint(out, model);
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void load_checkpoint_into(const std::filesystem::path& path, Model<float>& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const ModelConfig stored = read_header(in);
  if (config_fields(stored) != config_fields(model.config)) {
    throw CheckpointError("checkpoint " + path.string() + " was written for variant '" + stored.variant_name +
                          "' with a different configuration");
  }
  read_entries(in, model);
}

}  // namespace clifford
