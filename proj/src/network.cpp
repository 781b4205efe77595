#include "clifford/network.hpp"

#include "clifford/error.hpp"

#include <algorithm>
#include <charconv>

namespace clifford {

std::string_view to_string(CtxMode mode) { return mode == CtxMode::diff ? "diff" : "abs"; }

CtxMode parse_ctx_mode(std::string_view name) {
  if (name == "diff") return CtxMode::diff;
  if (name == "abs") return CtxMode::abs;
  throw ConfigError("unknown ctx_mode '" + std::string(name) + "' (expected diff or abs)");
}

void BlockConfig::validate() const {
  if (dim < 1) throw ConfigError("block dim must be positive");
  shifts.validate_for(dim);
  if (beta != 0 && beta != 1) throw ConfigError("beta must be 0 or 1");
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) throw ConfigError("drop_path_rate must lie in [0, 1)");
}

double ModelConfig::drop_path_rate(Index index) const {
  if (depth <= 1) return 0.0;
  return block.drop_path_rate * static_cast<double>(index) / static_cast<double>(depth - 1);
}

void ModelConfig::validate() const {
  block.validate();
  if (patch_size < 1 || image_size % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (depth < 0) throw ConfigError("depth must be non-negative");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (in_channels < 1) throw ConfigError("in_channels must be positive");
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

bool parse_flag(std::string_view key, std::string_view value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key));
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

void set_config_field(ModelConfig& c, std::string_view key, std::string_view value) {
  if (key == "variant") c.variant_name = std::string(value);
  else if (key == "patch_size") c.patch_size = parse_number<Index>(key, value);
  else if (key == "image_size") c.image_size = parse_number<Index>(key, value);
  else if (key == "in_channels") c.in_channels = parse_number<Index>(key, value);
  else if (key == "depth") c.depth = parse_number<Index>(key, value);
  else if (key == "num_classes") c.num_classes = parse_number<Index>(key, value);
  else if (key == "block.dim") c.block.dim = parse_number<Index>(key, value);
  else if (key == "block.shifts") c.block.shifts = ShiftSet::parse(value);
  else if (key == "block.cli_mode") c.block.cli_mode = parse_cli_mode(value);
  else if (key == "block.ctx_mode") c.block.ctx_mode = parse_ctx_mode(value);
  else if (key == "block.beta") c.block.beta = parse_number<int>(key, value);
  else if (key == "block.layerscale_init") c.block.layerscale_init = parse_number<double>(key, value);
  else if (key == "block.drop_path_rate") c.block.drop_path_rate = parse_number<double>(key, value);
  else if (key == "block.single_conv_context") c.block.single_conv_context = parse_flag(key, value);
  else throw ConfigError("unknown model config key '" + std::string(key) + "'");
}

std::vector<std::pair<std::string, std::string>> config_fields(const ModelConfig& c) {
  return {
      {"variant", c.variant_name},
      {"patch_size", std::to_string(c.patch_size)},
      {"image_size", std::to_string(c.image_size)},
      {"in_channels", std::to_string(c.in_channels)},
      {"depth", std::to_string(c.depth)},
      {"num_classes", std::to_string(c.num_classes)},
      {"block.dim", std::to_string(c.block.dim)},
      {"block.shifts", c.block.shifts.to_string()},
      {"block.cli_mode", std::string(to_string(c.block.cli_mode))},
      {"block.ctx_mode", std::string(to_string(c.block.ctx_mode))},
      {"block.beta", std::to_string(c.block.beta)},
      {"block.layerscale_init", format_double(c.block.layerscale_init)},
      {"block.drop_path_rate", format_double(c.block.drop_path_rate)},
      {"block.single_conv_context", c.block.single_conv_context ? "1" : "0"},
  };
}

ModelConfig variant_config(std::string_view name) {
  std::string_view base = name;
  bool global_branch = false;
  constexpr std::string_view suffix = "-gffng";
  if (base.size() > suffix.size() && base.ends_with(suffix)) {
    base.remove_suffix(suffix.size());
    global_branch = true;
  }

  ModelConfig config;
  config.variant_name = std::string(name);
  config.block.dim = 128;
  if (base == "nano") {
    config.depth = 12;
    config.block.shifts = ShiftSet({1, 2});
  } else if (base == "lite") {
    config.depth = 12;
    config.block.shifts = ShiftSet({1, 2, 4, 8, 16});
  } else if (base == "net32") {
    config.depth = 32;
    config.block.shifts = ShiftSet({1, 2, 4});
  } else if (base == "net64") {
    config.depth = 64;
    config.block.shifts = ShiftSet({1, 2, 4, 8, 16});
    config.block.cli_mode = CliMode::inner;
  } else if (base == "nano-mini") {
    config.depth = 4;
    config.num_classes = 10;
    config.block.dim = 64;
    config.block.shifts = ShiftSet({1, 2});
  } else {
    throw ConfigError("unknown variant '" + std::string(name) + "'");
  }
  config.block.beta = global_branch ? 1 : 0;
  return config;
}

std::vector<std::string> variant_names() {
  std::vector<std::string> names;
  for (const char* base : {"nano", "lite", "net32", "net64", "nano-mini"}) {
    names.emplace_back(base);
    names.push_back(std::string(base) + "-gffng");
  }
  return names;
}

std::optional<std::int64_t> reference_param_count(std::string_view variant) {
  if (variant == "nano") return 1'430'000;
  if (variant == "lite") return 2'610'000;
  if (variant == "net32") return 4'800'000;
  if (variant == "net64") return 8'600'000;
  if (variant == "nano-gffng") return 2'220'000;
  if (variant == "lite-gffng") return 3'400'000;
  return std::nullopt;
}

namespace {

template <typename S>
Tensor<S> truncated_normal(Shape shape, std::mt19937_64& rng, double stddev = 0.02) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) {
    double z = normal(rng);
    while (z < -2.0 || z > 2.0) z = normal(rng);
    t.values()[i] = static_cast<S>(z * stddev);
  }
  t.set_requires_grad(true);
  return t;
}

template <typename S>
Tensor<S> param_full(Shape shape, double value) {
  Tensor<S> t = Tensor<S>::full(std::move(shape), static_cast<S>(value));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

template <typename S>
BlockParams<S> init_block(const BlockConfig& config, std::mt19937_64& rng) {
  config.validate();
  const Index d = config.dim;
  const Index k = interaction_channels(config.cli_mode, config.shifts, d);
  BlockParams<S> p;
  p.norm_gain = param_full<S>({d}, 1.0);
  p.norm_bias = param_full<S>({d}, 0.0);
  p.det_weight = truncated_normal<S>({d, d}, rng);
  p.det_bias = param_full<S>({d}, 0.0);
  p.ctx1_kernel = truncated_normal<S>({d, 3, 3}, rng);
  p.ctx1_bias = param_full<S>({d}, 0.0);
  p.bn1_gain = param_full<S>({d}, 1.0);
  p.bn1_bias = param_full<S>({d}, 0.0);
  p.bn1 = BatchNormState<S>(d);
  if (!config.single_conv_context) {
    p.ctx2_kernel = truncated_normal<S>({d, 3, 3}, rng);
    p.ctx2_bias = param_full<S>({d}, 0.0);
    p.bn2_gain = param_full<S>({d}, 1.0);
    p.bn2_bias = param_full<S>({d}, 0.0);
    p.bn2 = BatchNormState<S>(d);
  }
  p.proj_weight = truncated_normal<S>({k, d}, rng);
  p.proj_bias = param_full<S>({d}, 0.0);
  if (config.beta == 1) {
    p.glo_proj_weight = truncated_normal<S>({k, d}, rng);
    p.glo_proj_bias = param_full<S>({d}, 0.0);
  }
  p.gate_weight = truncated_normal<S>({2 * d, d}, rng);
  p.gate_bias = param_full<S>({d}, 0.0);
  p.gamma = param_full<S>({d}, config.layerscale_init);
  return p;
}

template <typename S>
Model<S> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const Index d = config.dim();
  Model<S> m;
  m.config = config;
  m.embed_weight = truncated_normal<S>({config.patch_size, config.patch_size, config.in_channels, d}, rng);
  m.embed_bias = param_full<S>({d}, 0.0);
  m.stem_norm_gain = param_full<S>({d}, 1.0);
  m.stem_norm_bias = param_full<S>({d}, 0.0);
  m.blocks.reserve(static_cast<std::size_t>(config.depth));
  for (Index i = 0; i < config.depth; ++i) m.blocks.push_back(init_block<S>(config.block, rng));
  m.final_norm_gain = param_full<S>({d}, 1.0);
  m.final_norm_bias = param_full<S>({d}, 0.0);
  m.head_weight = truncated_normal<S>({d, config.num_classes}, rng);
  m.head_bias = param_full<S>({config.num_classes}, 0.0);
  return m;
}

template <typename S>
void for_each_parameter(Model<S>& m, const ParamVisitor<S>& visit) {
  auto emit = [&](const std::string& name, Tensor<S>& t, ParamKind kind) {
    if (t.defined()) visit(name, t, kind);
  };
  emit("embed.weight", m.embed_weight, ParamKind::weight);
  emit("embed.bias", m.embed_bias, ParamKind::bias);
  emit("stem_norm.gain", m.stem_norm_gain, ParamKind::norm);
  emit("stem_norm.bias", m.stem_norm_bias, ParamKind::norm);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    emit(p + "norm.gain", b.norm_gain, ParamKind::norm);
    emit(p + "norm.bias", b.norm_bias, ParamKind::norm);
    emit(p + "det.weight", b.det_weight, ParamKind::weight);
    emit(p + "det.bias", b.det_bias, ParamKind::bias);
    emit(p + "ctx1.kernel", b.ctx1_kernel, ParamKind::weight);
    emit(p + "ctx1.bias", b.ctx1_bias, ParamKind::bias);
    emit(p + "bn1.gain", b.bn1_gain, ParamKind::norm);
    emit(p + "bn1.bias", b.bn1_bias, ParamKind::norm);
    emit(p + "ctx2.kernel", b.ctx2_kernel, ParamKind::weight);
    emit(p + "ctx2.bias", b.ctx2_bias, ParamKind::bias);
    emit(p + "bn2.gain", b.bn2_gain, ParamKind::norm);
    emit(p + "bn2.bias", b.bn2_bias, ParamKind::norm);
    emit(p + "proj.weight", b.proj_weight, ParamKind::weight);
    emit(p + "proj.bias", b.proj_bias, ParamKind::bias);
    emit(p + "glo_proj.weight", b.glo_proj_weight, ParamKind::weight);
    emit(p + "glo_proj.bias", b.glo_proj_bias, ParamKind::bias);
    emit(p + "gate.weight", b.gate_weight, ParamKind::weight);
    emit(p + "gate.bias", b.gate_bias, ParamKind::bias);
    emit(p + "gamma", b.gamma, ParamKind::layerscale);
  }
  emit("final_norm.gain", m.final_norm_gain, ParamKind::norm);
  emit("final_norm.bias", m.final_norm_bias, ParamKind::norm);
  emit("head.weight", m.head_weight, ParamKind::weight);
  emit("head.bias", m.head_bias, ParamKind::bias);
}

template <typename S>
void for_each_buffer(Model<S>& m, const BufferVisitor<S>& visit) {
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    visit(p + "bn1.running_mean", b.bn1.running_mean);
    visit(p + "bn1.running_var", b.bn1.running_var);
    if (b.ctx2_kernel.defined()) {
      visit(p + "bn2.running_mean", b.bn2.running_mean);
      visit(p + "bn2.running_var", b.bn2.running_var);
    }
  }
}

template <typename S>
std::int64_t param_count(Model<S>& m) {
  std::int64_t total = 0;
  for_each_parameter<S>(m, [&](const std::string&, Tensor<S>& t, ParamKind) { total += t.size(); });
  return total;
}

template <typename S>
Tensor<S> local_context(const Tensor<S>& x, BlockParams<S>& p, const BlockConfig& config, bool training) {
  Tensor<S> z = silu(batch_norm(dw_conv3x3(x, p.ctx1_kernel, p.ctx1_bias), p.bn1_gain, p.bn1_bias, p.bn1, training));
  if (config.single_conv_context) return z;
  return silu(batch_norm(dw_conv3x3(z, p.ctx2_kernel, p.ctx2_bias), p.bn2_gain, p.bn2_bias, p.bn2, training));
}

template <typename S>
Tensor<S> make_context(const Tensor<S>& z_det, const Tensor<S>& z_ctx, CtxMode mode) {
  if (z_det.shape() != z_ctx.shape()) {
    throw DimensionError("make_context: " + shape_string(z_det.shape()) + " vs " + shape_string(z_ctx.shape()));
  }
  return mode == CtxMode::diff ? z_ctx - z_det : z_ctx;
}

template <typename S>
Tensor<S> gffn_g(const Tensor<S>& x, const BlockParams<S>& p, const BlockConfig& config) {
  if (!p.glo_proj_weight.defined()) throw ConfigError("gffn_g: block was built without the global branch");
  const Tensor<S> mean_field = broadcast_tokens(global_avg_pool(x), x.dim(1), x.dim(2));
  return linear(clifford_interact(x, mean_field, config.shifts, config.cli_mode), p.glo_proj_weight,
                p.glo_proj_bias);
}

template <typename S>
std::vector<S> sample_drop_path(Index batch, double rate, std::mt19937_64& rng) {
  std::vector<S> factors(static_cast<std::size_t>(batch), S(1));
  if (rate <= 0.0) return factors;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (auto& f : factors) f = uniform(rng) < rate ? S(0) : keep_scale;
  return factors;
}

template <typename S>
Tensor<S> clifford_block(const Tensor<S>& x, BlockParams<S>& p, const BlockConfig& config,
                         const ForwardOptions& options, double drop_path_rate) {
  if (x.rank() != 4 || x.dim(3) != config.dim) {
    throw DimensionError("clifford_block: expected (B, h, w, " + std::to_string(config.dim) + "), got " +
                         shape_string(x.shape()));
  }
  const Tensor<S> x_ln = layer_norm(x, p.norm_gain, p.norm_bias);
  const Tensor<S> z_det = linear(x_ln, p.det_weight, p.det_bias);
  const Tensor<S> z_ctx = make_context(z_det, local_context(x_ln, p, config, options.training), config.ctx_mode);

  Tensor<S> g_feat =
      linear(clifford_interact(z_det, z_ctx, config.shifts, config.cli_mode), p.proj_weight, p.proj_bias);
  if (config.beta == 1) g_feat = g_feat + gffn_g(x_ln, p, config);

  const Tensor<S> alpha = sigmoid(linear(concat_channels<S>({x_ln, g_feat}), p.gate_weight, p.gate_bias));
  const Tensor<S> h_mix = silu(x_ln) + alpha * g_feat;
  Tensor<S> update = h_mix * p.gamma;
  if (options.training && drop_path_rate > 0.0) {
    if (!options.rng) throw UsageError("clifford_block: drop path needs an rng in training mode");
    const auto factors = sample_drop_path<S>(x.dim(0), drop_path_rate, *options.rng);
    update = scale_samples(update, std::span<const S>(factors));
  }
  return x + update;
}

template <typename S>
Tensor<S> embed(const Tensor<S>& images, Model<S>& m) {
  const Tensor<S> tokens = conv_patch_embed(images, m.embed_weight, m.embed_bias, m.config.patch_size);
  return layer_norm(tokens, m.stem_norm_gain, m.stem_norm_bias);
}

template <typename S>
Tensor<S> head(const Tensor<S>& tokens, Model<S>& m) {
  const Tensor<S> pooled = global_avg_pool(layer_norm(tokens, m.final_norm_gain, m.final_norm_bias));
  return linear(pooled, m.head_weight, m.head_bias);
}

template <typename S>
Tensor<S> model_forward(const Tensor<S>& images, Model<S>& m, const ForwardOptions& options) {
  Tensor<S> x = embed(images, m);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    x = clifford_block(x, m.blocks[i], m.config.block, options, m.config.drop_path_rate(static_cast<Index>(i)));
  }
  return head(x, m);
}

#define CLIFFORD_INSTANTIATE(S)                                                                              \
  template BlockParams<S> init_block<S>(const BlockConfig&, std::mt19937_64&);                               \
  template Model<S> init_model<S>(const ModelConfig&, std::uint64_t);                                        \
  template void for_each_parameter<S>(Model<S>&, const ParamVisitor<S>&);                                    \
  template void for_each_buffer<S>(Model<S>&, const BufferVisitor<S>&);                                      \
  template std::int64_t param_count<S>(Model<S>&);                                                           \
  template Tensor<S> local_context<S>(const Tensor<S>&, BlockParams<S>&, const BlockConfig&, bool);          \
  template Tensor<S> make_context<S>(const Tensor<S>&, const Tensor<S>&, CtxMode);                           \
  template Tensor<S> gffn_g<S>(const Tensor<S>&, const BlockParams<S>&, const BlockConfig&);                 \
  template std::vector<S> sample_drop_path<S>(Index, double, std::mt19937_64&);                              \
  template Tensor<S> clifford_block<S>(const Tensor<S>&, BlockParams<S>&, const BlockConfig&,                \
                                       const ForwardOptions&, double);                                       \
  template Tensor<S> embed<S>(const Tensor<S>&, Model<S>&);                                                  \
  template Tensor<S> head<S>(const Tensor<S>&, Model<S>&);                                                   \
  template Tensor<S> model_forward<S>(const Tensor<S>&, Model<S>&, const ForwardOptions&);

CLIFFORD_INSTANTIATE(float)
CLIFFORD_INSTANTIATE(double)

#undef CLIFFORD_INSTANTIATE

}  // namespace clifford
