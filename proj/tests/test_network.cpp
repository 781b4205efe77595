#include "clifford/checkpoint.hpp"
#include "clifford/error.hpp"
#include "clifford/network.hpp"
#include "clifford/verify.hpp"
#include "fixtures/reference_values.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <sstream>

using namespace clifford;
using namespace testing_util;

namespace {

// Closed-form learnable-scalar count from the architecture description.
std::int64_t expected_params(const ModelConfig& c) {
  const std::int64_t d = c.dim();
  const std::int64_t k = interaction_channels(c.block.cli_mode, c.block.shifts, d);
  const std::int64_t stages = c.block.single_conv_context ? 1 : 2;
  std::int64_t block = 2 * d;            // layer norm
  block += d * d + d;                    // detail projection
  block += stages * (9 * d + d + 2 * d);  // depthwise conv + batch norm
  block += k * d + d;                    // interaction projection
  if (c.block.beta == 1) block += k * d + d;
  block += 2 * d * d + d;  // gate
  block += d;              // layer scale
  const std::int64_t p = c.patch_size;
  return p * p * c.in_channels * d + d + 2 * d + c.depth * block + 2 * d + d * c.num_classes + c.num_classes;
}

template <typename S>
std::vector<Tensor<S>*> block_fields(BlockParams<S>& b) {
  std::vector<Tensor<S>*> out;
  for (Tensor<S>* t : {&b.norm_gain, &b.norm_bias, &b.det_weight, &b.det_bias, &b.ctx1_kernel, &b.ctx1_bias,
                       &b.bn1_gain, &b.bn1_bias, &b.ctx2_kernel, &b.ctx2_bias, &b.bn2_gain, &b.bn2_bias,
                       &b.proj_weight, &b.proj_bias, &b.glo_proj_weight, &b.glo_proj_bias, &b.gate_weight,
                       &b.gate_bias, &b.gamma}) {
    if (t->defined()) out.push_back(t);
  }
  return out;
}

// Same closed-form parameters as make_fixtures.py.
template <typename S>
BlockParams<S> wave_block(const BlockConfig& cfg) {
  std::mt19937_64 rng(0);
  BlockParams<S> p = init_block<S>(cfg, rng);
  auto fields = block_fields(p);
  for (std::size_t idx = 0; idx < fields.size(); ++idx) {
    Tensor<S>& t = *fields[idx];
    const bool gain = &t == &p.norm_gain || &t == &p.bn1_gain || &t == &p.bn2_gain;
    const double offset = gain ? 1.0 : (&t == &p.gamma ? 0.5 : 0.0);
    const auto w = wave<S>(t.shape(), 0.41, 0.9 * static_cast<double>(idx) + 0.5, 0.3);
    t.values() = w.values() + static_cast<S>(offset);
  }
  return p;
}

}  // namespace

TEST(Presets, ParameterCountsMatchClosedForm) {
  for (const auto& name : variant_names()) {
    const ModelConfig cfg = variant_config(name);
    Model<float> m = init_model<float>(cfg, 0);
    EXPECT_EQ(param_count(m), expected_params(cfg)) << name;
  }
}

TEST(Presets, WithinFivePercentOfPublishedBudgets) {
  for (const char* name : {"nano", "lite", "net32", "net64", "nano-gffng"}) {
    const auto ref = reference_param_count(name);
    ASSERT_TRUE(ref.has_value());
    const double count = static_cast<double>(expected_params(variant_config(name)));
    EXPECT_LT(std::abs(count / static_cast<double>(*ref) - 1.0), 0.05) << name;
  }
  EXPECT_FALSE(reference_param_count("nano-mini").has_value());
}

TEST(Presets, Shapes) {
  const auto nano = variant_config("nano");
  EXPECT_EQ(nano.dim(), 128);
  EXPECT_EQ(nano.depth, 12);
  EXPECT_EQ(nano.grid(), 16);
  EXPECT_EQ(nano.block.shifts, ShiftSet({1, 2}));
  EXPECT_EQ(nano.block.beta, 0);
  EXPECT_EQ(variant_config("lite-gffng").block.beta, 1);
  EXPECT_EQ(variant_config("net64").block.cli_mode, CliMode::inner);
  EXPECT_EQ(variant_config("nano-mini").num_classes, 10);
  EXPECT_THROW(variant_config("huge"), ConfigError);
}

TEST(Config, FieldsRoundTrip) {
  ModelConfig c = variant_config("lite");
  set_config_field(c, "block.layerscale_init", "0.125");
  set_config_field(c, "block.ctx_mode", "abs");
  ModelConfig d;
  for (const auto& [k, v] : config_fields(c)) set_config_field(d, k, v);
  EXPECT_EQ(config_fields(c), config_fields(d));
  EXPECT_THROW(set_config_field(c, "block.nope", "1"), ConfigError);
  EXPECT_THROW(set_config_field(c, "depth", "many"), ConfigError);
  EXPECT_THROW(set_config_field(c, "block.cli_mode", "outer"), ConfigError);
}

TEST(Config, Validation) {
  ModelConfig c = variant_config("nano");
  c.block.shifts = ShiftSet({1, 128});
  EXPECT_THROW(c.validate(), ConfigError);
  c = variant_config("nano");
  c.patch_size = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = variant_config("nano");
  c.block.beta = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, DropPathRamp) {
  const ModelConfig c = variant_config("nano");
  EXPECT_EQ(c.drop_path_rate(0), 0.0);
  EXPECT_DOUBLE_EQ(c.drop_path_rate(11), 0.1);
  EXPECT_NEAR(c.drop_path_rate(6), 0.1 * 6.0 / 11.0, 1e-15);
}

TEST(Init, Conventions) {
  Model<float> m = init_model<float>(variant_config("nano-mini"), 3);
  const auto& b = m.blocks[0];
  EXPECT_EQ(b.gate_bias.values().abs().maxCoeff(), 0.0f);
  EXPECT_EQ(b.det_bias.values().abs().maxCoeff(), 0.0f);
  EXPECT_TRUE((b.gamma.values() == 1e-2f).all());
  EXPECT_TRUE((b.norm_gain.values() == 1.0f).all());
  EXPECT_LE(b.det_weight.values().abs().maxCoeff(), 0.04f);
  const double sd = std::sqrt(b.gate_weight.values().square().mean());
  EXPECT_NEAR(sd, 0.02 * 0.88, 0.002);  // a +-2 sigma truncated normal has std 0.88 sigma
  Model<float> again = init_model<float>(variant_config("nano-mini"), 3);
  EXPECT_TRUE(same_bits(m.head_weight.values(), again.head_weight.values()));
}

class BlockReference : public ::testing::TestWithParam<std::tuple<CliMode, CtxMode, int>> {};

TEST_P(BlockReference, MatchesIndependentImplementation) {
  const auto [cli, ctx, beta] = GetParam();
  BlockConfig cfg;
  cfg.dim = 4;
  cfg.shifts = ShiftSet({1, 2});
  cfg.cli_mode = cli;
  cfg.ctx_mode = ctx;
  cfg.beta = beta;
  const std::vector<double>* want = nullptr;
  if (cli == CliMode::full) want = &fixtures::block_full_diff_beta1;
  if (cli == CliMode::inner) want = &fixtures::block_inner_abs_beta0;
  if (cli == CliMode::wedge) want = &fixtures::block_wedge_diff_beta0;

  BlockParams<double> p = wave_block<double>(cfg);
  const auto x = wave<double>({2, 3, 3, 4}, 0.23, 0.3, 0.8);
  EXPECT_LT(max_abs_diff(clifford_block(x, p, cfg, ForwardOptions{true, nullptr}), *want), 1e-12);

  BlockParams<float> pf = wave_block<float>(cfg);
  const auto xf = wave<float>({2, 3, 3, 4}, 0.23, 0.3, 0.8);
  EXPECT_LT(max_abs_diff(clifford_block(xf, pf, cfg, ForwardOptions{true, nullptr}), *want), 2e-5);
}

INSTANTIATE_TEST_SUITE_P(Modes, BlockReference,
                         ::testing::Values(std::make_tuple(CliMode::full, CtxMode::diff, 1),
                                           std::make_tuple(CliMode::inner, CtxMode::abs, 0),
                                           std::make_tuple(CliMode::wedge, CtxMode::diff, 0)));

TEST(Block, GammaZeroIsIdentity) {
  BlockConfig cfg;
  cfg.dim = 16;
  cfg.shifts = ShiftSet({1, 2, 4});
  cfg.beta = 1;
  std::mt19937_64 rng(1);
  BlockParams<float> p = init_block<float>(cfg, rng);
  p.gamma.values().setZero();
  const auto x = randn<float>({2, 4, 4, 16}, rng);
  EXPECT_TRUE(same_bits(clifford_block(x, p, cfg, ForwardOptions{}).values(), x.values()));
  EXPECT_TRUE(same_bits(clifford_block(x, p, cfg, ForwardOptions{true, &rng}, 0.5).values(), x.values()));
}

TEST(Block, RejectsWrongWidth) {
  BlockConfig cfg;
  cfg.dim = 8;
  std::mt19937_64 rng(1);
  BlockParams<float> p = init_block<float>(cfg, rng);
  EXPECT_THROW(clifford_block(Tensor<float>({1, 2, 2, 6}), p, cfg, ForwardOptions{}), DimensionError);
  EXPECT_THROW(gffn_g(Tensor<float>({1, 2, 2, 8}), p, cfg), ConfigError);
  EXPECT_THROW(clifford_block(Tensor<float>({1, 2, 2, 8}), p, cfg, ForwardOptions{true, nullptr}, 0.1), UsageError);
}

TEST(Block, DropPathFactors) {
  std::mt19937_64 rng(5);
  const auto f = sample_drop_path<float>(10000, 0.25, rng);
  int dropped = 0;
  for (float v : f) {
    EXPECT_TRUE(v == 0.0f || v == static_cast<float>(1.0 / 0.75));
    dropped += v == 0.0f;
  }
  EXPECT_NEAR(dropped / 10000.0, 0.25, 0.02);
  for (float v : sample_drop_path<float>(8, 0.0, rng)) EXPECT_EQ(v, 1.0f);
}

TEST(Block, EvalModeIgnoresDropPath) {
  BlockConfig cfg;
  cfg.dim = 8;
  std::mt19937_64 rng(2);
  BlockParams<float> p = init_block<float>(cfg, rng);
  const auto x = randn<float>({2, 4, 4, 8}, rng);
  const auto a = clifford_block(x, p, cfg, ForwardOptions{}, 0.9);
  const auto b = clifford_block(x, p, cfg, ForwardOptions{}, 0.0);
  EXPECT_TRUE(same_bits(a.values(), b.values()));
}

TEST(Block, SingleGradientCheck) {
  BlockConfig cfg;
  cfg.dim = 8;
  cfg.shifts = ShiftSet({1, 3});
  cfg.single_conv_context = true;
  EXPECT_LT(verify::block_gradient_error(cfg, false, 4).max_error, 1e-6);
  EXPECT_LT(verify::block_gradient_error(cfg, true, 4).max_error, 1e-3);
}

TEST(Model, ForwardShapes) {
  ModelConfig cfg = variant_config("nano-mini");
  cfg.depth = 1;
  Model<float> m = init_model<float>(cfg, 0);
  const auto logits = model_forward(Tensor<float>({3, 32, 32, 3}), m, ForwardOptions{});
  EXPECT_EQ(logits.shape(), (Shape{3, 10}));
}

TEST(Checkpoint, RoundTripIsBitwise) {
  ModelConfig cfg = variant_config("nano-mini");
  cfg.depth = 2;
  set_config_field(cfg, "block.layerscale_init", "0.3");
  Model<float> m = init_model<float>(cfg, 9);
  m.blocks[1].bn2.running_mean.setConstant(0.25f);
  m.blocks[0].bn1.running_var.setConstant(3.5f);
  std::stringstream buf;
  write_checkpoint(buf, m);
  Model<float> back = read_checkpoint(buf);
  EXPECT_EQ(config_fields(back.config), config_fields(m.config));
  std::vector<Array<float>> a, b;
  for_each_parameter<float>(m, [&](const std::string&, Tensor<float>& t, ParamKind) { a.push_back(t.values()); });
  for_each_parameter<float>(back, [&](const std::string&, Tensor<float>& t, ParamKind) { b.push_back(t.values()); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_bits(a[i], b[i]));
  EXPECT_TRUE(same_bits(back.blocks[1].bn2.running_mean, m.blocks[1].bn2.running_mean));
  EXPECT_TRUE(same_bits(back.blocks[0].bn1.running_var, m.blocks[0].bn1.running_var));
}

TEST(Checkpoint, LayoutHeader) {
  Model<float> m = init_model<float>(variant_config("nano-mini"), 0);
  std::stringstream buf;
  write_checkpoint(buf, m);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 8), "CLFNETCK");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), kCheckpointVersion);
  EXPECT_NE(bytes.find("embed.weight"), std::string::npos);
  EXPECT_LT(bytes.find("blocks.0.bn1.bias"), bytes.find("blocks.0.bn1.running_mean"));
  EXPECT_LT(bytes.find("blocks.0.bn1.running_var"), bytes.find("blocks.0.ctx2.kernel"));
  EXPECT_LT(bytes.find("blocks.3.gamma"), bytes.find("head.weight"));
}

TEST(Checkpoint, Errors) {
  Model<float> m = init_model<float>(variant_config("nano-mini"), 0);
  std::stringstream buf;
  write_checkpoint(buf, m);
  std::string bytes = buf.str();

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream s1(bad_magic);
  EXPECT_THROW(read_checkpoint(s1), CheckpointError);

  std::string bad_version = bytes;
  bad_version[8] = 9;
  std::stringstream s2(bad_version);
  EXPECT_THROW(read_checkpoint(s2), CheckpointError);

  std::stringstream s3(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(s3), CheckpointError);

  const auto path = std::filesystem::temp_directory_path() / "clifford_ckpt_mismatch.bin";
  save_checkpoint(path, m);
  ModelConfig other = variant_config("nano-mini");
  other.depth = 3;
  Model<float> target = init_model<float>(other, 0);
  EXPECT_THROW(load_checkpoint_into(path, target), CheckpointError);
  Model<float> same = init_model<float>(variant_config("nano-mini"), 5);
  EXPECT_NO_THROW(load_checkpoint_into(path, same));
  EXPECT_TRUE(same_bits(same.head_weight.values(), m.head_weight.values()));
  std::filesystem::remove(path);
}
