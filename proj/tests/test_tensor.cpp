#include "clifford/error.hpp"
#include "clifford/ops.hpp"
#include "fixtures/reference_values.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace clifford;
using namespace testing_util;

TEST(Tensor, ShapeAndStorage) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24);
  EXPECT_EQ(t.rank(), 3);
  EXPECT_EQ(t.dim(-1), 4);
  EXPECT_EQ(t.values().abs().sum(), 0.0f);
  EXPECT_THROW(Tensor<float>({2, 2}, Array<float>::Zero(3)), DimensionError);
  EXPECT_EQ(Tensor<double>::scalar(2.5).item(), 2.5);
}

TEST(Ops, HadamardExample) {
  const auto a = Tensor<float>::from_values({3}, {1, 2, 3});
  const auto b = Tensor<float>::from_values({3}, {4, 5, 6});
  const auto c = mul(a, b);
  EXPECT_EQ(c.values()[0], 4.0f);
  EXPECT_EQ(c.values()[1], 10.0f);
  EXPECT_EQ(c.values()[2], 18.0f);
}

TEST(Ops, MatmulIdentity) {
  auto eye = Tensor<double>::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto v = Tensor<double>::from_values({3, 2}, {1.5, -2, 3, 0.25, 7, 9});
  EXPECT_TRUE(same_bits(matmul(eye, v).values(), v.values()));
  EXPECT_THROW(matmul(v, v), DimensionError);
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  Tensor<float> a({2, 3}), b({3, 2});
  try {
    add(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(3, 2)"), std::string::npos) << msg;
  }
}

TEST(Ops, ChannelBroadcast) {
  auto x = Tensor<float>::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  auto v = Tensor<float>::from_values({2}, {10, 100});
  auto y = add(x, v);
  EXPECT_EQ(y.values()[0], 11.0f);
  EXPECT_EQ(y.values()[3], 104.0f);
  auto z = mul(v, x);
  EXPECT_EQ(z.values()[1], 200.0f);
  EXPECT_THROW(add(x, Tensor<float>({3})), DimensionError);
}

TEST(Autodiff, GradOfSumProductIsOtherFactor) {
  std::mt19937_64 rng(3);
  auto a = randn<double>({2, 3, 4}, rng);
  auto b = randn<double>({2, 3, 4}, rng);
  a.set_requires_grad(true);
  backward(sum(a * b));
  EXPECT_TRUE(same_bits(a.grad(), b.values()));
}

TEST(Autodiff, ScaledSumGivesConstantGrad) {
  auto w = Tensor<float>::full({5}, 0.3f);
  w.set_requires_grad(true);
  backward(sum(scale(w, 2.0f)));
  for (Index i = 0; i < 5; ++i) EXPECT_EQ(w.grad()[i], 2.0f);
  backward(sum(scale(w, 2.0f)));
  for (Index i = 0; i < 5; ++i) EXPECT_EQ(w.grad()[i], 4.0f);
  w.zero_grad();
  EXPECT_FALSE(w.has_grad());
}

TEST(Autodiff, DetachedLossWritesNothing) {
  auto w = Tensor<float>::full({4}, 1.0f);
  w.set_requires_grad(true);
  backward(sum(w * w).detach());
  EXPECT_FALSE(w.has_grad());
}

TEST(Autodiff, NonScalarLossIsUsageError) {
  auto w = Tensor<float>::full({4}, 1.0f);
  w.set_requires_grad(true);
  EXPECT_THROW(backward(w * w), UsageError);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  auto w = Tensor<float>::full({4}, 1.0f);
  w.set_requires_grad(true);
  Tensor<float> y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = w * w;
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  auto x = Tensor<double>::from_values({2}, {3, -1});
  x.set_requires_grad(true);
  const auto y = x * x;
  backward(sum(y + y * x));  // d/dx (x^2 + x^3) = 2x + 3x^2
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0 + 27.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -2.0 + 3.0);
}

TEST(Roll, Examples) {
  const auto x = Tensor<float>::from_values({4}, {1, 2, 3, 4});
  const auto r = roll_channels(x, 1);
  EXPECT_EQ(r.values()[0], 2.0f);
  EXPECT_EQ(r.values()[1], 3.0f);
  EXPECT_EQ(r.values()[2], 4.0f);
  EXPECT_EQ(r.values()[3], 1.0f);
  EXPECT_TRUE(same_bits(roll_channels(x, 0).values(), x.values()));
  EXPECT_TRUE(same_bits(roll_channels(x, 5).values(), r.values()));
}

TEST(Roll, CyclicInverse) {
  std::mt19937_64 rng(11);
  const auto x = randn<float>({2, 3, 3, 8}, rng);
  for (Index s = 0; s < 8; ++s) {
    EXPECT_TRUE(same_bits(roll_channels(roll_channels(x, s), 8 - s).values(), x.values())) << "s=" << s;
  }
}

TEST(Roll, BackwardRollsTheOtherWay) {
  std::mt19937_64 rng(12);
  for (Index s = 0; s < 8; ++s) {
    auto x = randn<double>({3, 8}, rng);
    const auto up = randn<double>({3, 8}, rng);
    x.set_requires_grad(true);
    backward(sum(roll_channels(x, s) * up));
    EXPECT_TRUE(same_bits(x.grad(), roll_channels(up, 8 - s).values())) << "s=" << s;
  }
}

TEST(Activations, ClosedForms) {
  const auto x = Tensor<double>::from_values({5}, {0, 1, 4, 6, -2});
  const auto s = silu(x);
  EXPECT_EQ(s.values()[0], 0.0);
  EXPECT_NEAR(s.values()[1], 0.7310585786300049, 1e-15);
  EXPECT_NEAR(s.values()[2], 3.928055160151634, 1e-14);
  EXPECT_NEAR(s.values()[3], 5.985164261060192, 1e-14);
  EXPECT_NEAR(s.values()[4], -0.2384058440442351, 1e-15);
  const auto g = sigmoid(x);
  EXPECT_EQ(g.values()[0], 0.5);
  EXPECT_NEAR(g.values()[4], 1.0 - 0.8807970779778823, 1e-15);
  const auto f = silu(Tensor<float>::from_values({1}, {1.0f}));
  EXPECT_NEAR(f.values()[0], 0.7310585786300049, 1e-7);
}

TEST(Activations, ExtremeInputsStayFinite) {
  const auto x = Tensor<float>::from_values({4}, {-100, 100, -1e30f, 1e30f});
  EXPECT_TRUE(sigmoid(x).values().isFinite().all());
  EXPECT_TRUE(silu(x).values().isFinite().all());
}

TEST(LayerNorm, ConstantRowNormalizesToZero) {
  const auto x = Tensor<float>::full({2, 6}, 3.25f);
  const auto y = layer_norm(x, Tensor<float>::full({6}, 1.0f), Tensor<float>::zeros({6}));
  EXPECT_EQ(y.values().abs().maxCoeff(), 0.0f);
}

TEST(LayerNorm, MatchesReference) {
  const auto x = wave<double>({2, 4}, 1.1, 0.3, 2.0);
  auto g = wave<double>({4}, 0.9, 1.0, 0.5);
  g.values() += 1.0;
  const auto b = wave<double>({4}, 0.4, 0.0, 0.3);
  EXPECT_LT(max_abs_diff(layer_norm(x, g, b), fixtures::layernorm), 1e-12);
}

TEST(LayerNorm, UnitStatistics) {
  std::mt19937_64 rng(5);
  auto x = randn<double>({4, 32}, rng);
  x.values() = x.values() * 3.0 + 1.5;
  const auto y = layer_norm(x, Tensor<double>::full({32}, 1.0), Tensor<double>::zeros({32}));
  for (Index r = 0; r < 4; ++r) {
    const auto row = y.values().segment(r * 32, 32);
    EXPECT_NEAR(row.mean(), 0.0, 1e-12);
    EXPECT_NEAR((row - row.mean()).square().mean(), 1.0, 1e-5);
  }
}

TEST(BatchNorm, TrainingMatchesReference) {
  const auto x = wave<double>({2, 2, 2, 3}, 0.61, 0.2, 1.5);
  const auto g = Tensor<double>::from_values({3}, {1.2, 0.8, 1.0});
  const auto b = Tensor<double>::from_values({3}, {0.1, 0.0, -0.1});
  BatchNormState<double> state(3);
  EXPECT_LT(max_abs_diff(batch_norm(x, g, b, state, true), fixtures::batchnorm), 1e-12);
  for (Index c = 0; c < 3; ++c) {
    EXPECT_NEAR(state.running_mean[c], fixtures::bn_running_mean[c], 1e-14);
    EXPECT_NEAR(state.running_var[c], fixtures::bn_running_var[c], 1e-14);
  }
}

TEST(BatchNorm, EvalModeIsFixedAffine) {
  std::mt19937_64 rng(9);
  const auto x = randn<float>({2, 3, 3, 4}, rng);
  BatchNormState<float> state(4);
  state.running_mean << 0.5f, -1.0f, 0.0f, 2.0f;
  state.running_var << 4.0f, 1.0f, 0.25f, 9.0f;
  const auto g = Tensor<float>::from_values({4}, {1, 2, 0.5f, 1});
  const auto b = Tensor<float>::from_values({4}, {0, 1, 0, -1});
  const auto before = state.running_mean;
  const auto y1 = batch_norm(x, g, b, state, false);
  const auto y2 = batch_norm(x, g, b, state, false);
  EXPECT_TRUE(same_bits(y1.values(), y2.values()));
  EXPECT_TRUE(same_bits(state.running_mean, before));
  for (Index i = 0; i < x.size(); ++i) {
    const Index c = i % 4;
    const double want = (x.values()[i] - state.running_mean[c]) / std::sqrt(state.running_var[c] + 1e-5) *
                            g.values()[c] + b.values()[c];
    EXPECT_NEAR(y1.values()[i], want, 1e-5);
  }
}

TEST(BatchNorm, TrainingStatistics) {
  std::mt19937_64 rng(10);
  auto x = randn<double>({4, 5, 5, 3}, rng);
  x.values() = x.values() * 2.0 - 0.7;
  BatchNormState<double> state(3);
  const auto y = batch_norm(x, Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3}), state, true);
  for (Index c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    const Index n = y.size() / 3;
    for (Index r = 0; r < n; ++r) m += y.values()[r * 3 + c];
    m /= static_cast<double>(n);
    for (Index r = 0; r < n; ++r) v += std::pow(y.values()[r * 3 + c] - m, 2);
    v /= static_cast<double>(n);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
}

TEST(DwConv, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(4);
  const auto x = randn<float>({2, 5, 4, 3}, rng);
  Tensor<float> k({3, 3, 3});
  for (Index c = 0; c < 3; ++c) k.values()[c * 9 + 4] = 1.0f;
  EXPECT_TRUE(same_bits(dw_conv3x3(x, k, Tensor<float>()).values(), x.values()));
}

TEST(DwConv, AveragingPreservesInteriorConstant) {
  const auto x = Tensor<double>::full({1, 5, 5, 2}, 1.75);
  const auto k = Tensor<double>::full({2, 3, 3}, 1.0 / 9.0);
  const auto y = dw_conv3x3(x, k, Tensor<double>());
  for (Index yy = 1; yy < 4; ++yy) {
    for (Index xx = 1; xx < 4; ++xx) {
      for (Index c = 0; c < 2; ++c) EXPECT_NEAR(y.values()[(yy * 5 + xx) * 2 + c], 1.75, 1e-14);
    }
  }
  EXPECT_LT(y.values()[0], 1.75);  // corner sees zero padding
}

TEST(DwConv, MatchesReference) {
  const auto x = wave<double>({1, 3, 3, 2}, 0.7, 0.0);
  const auto k = wave<double>({2, 3, 3}, 0.3, 0.5);
  const auto b = Tensor<double>::from_values({2}, {0.1, -0.2});
  EXPECT_LT(max_abs_diff(dw_conv3x3(x, k, b), fixtures::dwconv), 1e-12);
}

TEST(PatchEmbed, GridAndReference) {
  const auto img = Tensor<float>({2, 32, 32, 3});
  const auto w = Tensor<float>({2, 2, 3, 16});
  const auto out = conv_patch_embed(img, w, Tensor<float>::zeros({16}), 2);
  EXPECT_EQ(out.shape(), (Shape{2, 16, 16, 16}));

  const auto x = wave<double>({1, 4, 4, 3}, 0.37, 0.1);
  const auto wt = wave<double>({2, 2, 3, 2}, 0.53, 0.2, 0.5);
  const auto b = Tensor<double>::from_values({2}, {0.05, -0.03});
  EXPECT_LT(max_abs_diff(conv_patch_embed(x, wt, b, 2), fixtures::patch), 1e-12);
}

TEST(PatchEmbed, IndivisibleIsConfigError) {
  EXPECT_THROW(conv_patch_embed(Tensor<float>({1, 5, 4, 3}), Tensor<float>({2, 2, 3, 4}), Tensor<float>(), 2),
               ConfigError);
}

TEST(Pooling, ConstantField) {
  auto x = Tensor<float>({2, 3, 3, 2});
  for (Index i = 0; i < x.size(); ++i) x.values()[i] = (i % 2) ? -0.5f : 2.0f;
  const auto p = global_avg_pool(x);
  EXPECT_EQ(p.shape(), (Shape{2, 2}));
  EXPECT_FLOAT_EQ(p.values()[0], 2.0f);
  EXPECT_FLOAT_EQ(p.values()[3], -0.5f);
}

TEST(Concat, ChannelCounts) {
  const auto a = Tensor<float>({1, 2, 2, 4});
  const auto b = Tensor<float>::full({1, 2, 2, 4}, 1.0f);
  const auto c = concat_channels<float>({a, b});
  EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 8}));
  EXPECT_EQ(c.values()[3], 0.0f);
  EXPECT_EQ(c.values()[4], 1.0f);
  EXPECT_THROW(concat_channels<float>({a, Tensor<float>({1, 3, 2, 4})}), DimensionError);
}

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
  const auto logits = Tensor<double>::full({3, 7}, 0.3);
  const std::vector<int> labels{0, 6, 3};
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(labels)).item(), std::log(7.0), 1e-14);
}

TEST(CrossEntropy, MatchesReferenceAndRejectsBadLabels) {
  const auto logits = wave<double>({3, 4}, 0.8, 0.0, 2.0);
  const std::vector<int> labels{0, 3, 1};
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(labels)).item(), fixtures::xent[0], 1e-14);
  const std::vector<int> bad{0, 4, 1};
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(bad)), DataError);
}

TEST(Determinism, RepeatedForwardBackwardIsBitwise) {
  auto run = [] {
    std::mt19937_64 rng(21);
    auto x = randn<float>({2, 4, 4, 8}, rng);
    auto k = randn<float>({8, 3, 3}, rng);
    auto w = randn<float>({8, 8}, rng);
    x.set_requires_grad(true);
    k.set_requires_grad(true);
    const auto y = silu(linear(dw_conv3x3(x, k, Tensor<float>()), w, Tensor<float>()));
    backward(mean(y * roll_channels(y, 3)));
    return std::make_tuple(y.values(), x.grad(), k.grad());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_TRUE(same_bits(std::get<0>(a), std::get<0>(b)));
  EXPECT_TRUE(same_bits(std::get<1>(a), std::get<1>(b)));
  EXPECT_TRUE(same_bits(std::get<2>(a), std::get<2>(b)));
}

TEST(Determinism, HadamardAssociativity) {
  std::mt19937_64 rng(22);
  const auto a = randn<float>({2, 3, 3, 8}, rng);
  const auto b = randn<float>({2, 3, 3, 8}, rng);
  const auto c = randn<float>({2, 3, 3, 8}, rng);
  const auto lhs = (a * b) * c;
  const auto rhs = a * (b * c);
  // Exact reals agree; rounded floats agree to within two ulps.
  EXPECT_TRUE(((lhs.values() - rhs.values()).abs() <= 2.5e-7f * lhs.values().abs() + 1e-30f).all());
}

// Finite-difference soundness of every op on shapes up to 2x4x4x8.
class OpGradient : public ::testing::TestWithParam<bool> {};

template <typename F>
void expect_grad(F f, const std::vector<Shape>& shapes, bool single) {
  const double err = single ? op_grad_error<float>(f, shapes) : op_grad_error<double>(f, shapes);
  EXPECT_LT(err, single ? 1e-3 : 1e-6);
}

TEST_P(OpGradient, Elementwise) {
  const bool single = GetParam();
  expect_grad([](const auto& in) { return in[0] + in[1]; }, {{2, 4, 4, 8}, {8}}, single);
  expect_grad([](const auto& in) { return in[0] - in[1]; }, {{2, 4, 4, 8}, {2, 4, 4, 8}}, single);
  expect_grad([](const auto& in) { return in[1] * in[0]; }, {{2, 4, 4, 8}, {8}}, single);
  expect_grad([](const auto& in) { return silu(in[0]); }, {{2, 4, 4, 8}}, single);
  expect_grad([](const auto& in) { return sigmoid(in[0]); }, {{2, 4, 4, 8}}, single);
  expect_grad([](const auto& in) { return roll_channels(in[0], 3); }, {{2, 4, 4, 8}}, single);
}

TEST_P(OpGradient, Contractions) {
  const bool single = GetParam();
  expect_grad([](const auto& in) { return matmul(in[0], in[1]); }, {{5, 4}, {4, 3}}, single);
  expect_grad([](const auto& in) { return linear(in[0], in[1], in[2]); }, {{2, 4, 4, 8}, {8, 6}, {6}}, single);
  expect_grad([](const auto& in) { return reshape(mean(in[0]), {1}); }, {{2, 4, 4, 8}}, single);
  expect_grad([](const auto& in) { return global_avg_pool(in[0]); }, {{2, 4, 4, 8}}, single);
  expect_grad([](const auto& in) { return broadcast_tokens(in[0], 4, 4); }, {{2, 8}}, single);
  expect_grad([](const auto& in) { return concat_channels<typename std::decay_t<decltype(in[0])>::value_type>({in[0], in[1]}); },
              {{2, 4, 4, 3}, {2, 4, 4, 5}}, single);
}

TEST_P(OpGradient, NormsAndConvs) {
  const bool single = GetParam();
  expect_grad([](const auto& in) { return layer_norm(in[0], in[1], in[2]); }, {{2, 4, 4, 8}, {8}, {8}}, single);
  expect_grad(
      [](const auto& in) {
        using S = typename std::decay_t<decltype(in[0])>::value_type;
        BatchNormState<S> state(8);
        return batch_norm(in[0], in[1], in[2], state, true);
      },
      {{2, 4, 4, 8}, {8}, {8}}, single);
  expect_grad([](const auto& in) { return dw_conv3x3(in[0], in[1], in[2]); }, {{2, 4, 4, 8}, {8, 3, 3}, {8}}, single);
  expect_grad([](const auto& in) { return conv_patch_embed(in[0], in[1], in[2], 2); }, {{2, 4, 4, 3}, {2, 2, 3, 8}, {8}},
              single);
}

TEST_P(OpGradient, LossAndSampleScaling) {
  const bool single = GetParam();
  expect_grad(
      [](const auto& in) {
        const std::vector<int> labels{1, 0, 4};
        return reshape(cross_entropy(in[0], std::span<const int>(labels)), {1});
      },
      {{3, 5}}, single);
  expect_grad(
      [](const auto& in) {
        using S = typename std::decay_t<decltype(in[0])>::value_type;
        const std::vector<S> f{S(0), S(1.25)};
        return scale_samples(in[0], std::span<const S>(f));
      },
      {{2, 4, 4, 8}}, single);
}

INSTANTIATE_TEST_SUITE_P(Precision, OpGradient, ::testing::Values(true, false),
                         [](const auto& info) { return info.param ? "f32" : "f64"; });
