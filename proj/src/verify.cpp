#include "clifford/verify.hpp"

#include "clifford/error.hpp"
#include "clifford/geometry.hpp"
#include "clifford/ops.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <random>
#include <sstream>

namespace clifford::verify {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

template <typename S>
Tensor<S> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = static_cast<S>(u(rng));
  return t;
}

template <typename S>
Tensor<S> normal_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor<S> t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = static_cast<S>(n(rng));
  return t;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::string format_result(const PropertyResult& r) {
  std::ostringstream out;
  out << (r.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(24) << r.name << std::right
      << " max_dev=" << std::setprecision(3) << std::scientific << r.max_deviation << " tol=" << r.tolerance
      << std::fixed << std::setprecision(2) << " (" << r.seconds << " s)";
  if (!r.detail.empty()) out << "  " << r.detail;
  return out.str();
}

InteractionKernels reference_kernels() {
  return {[](const Tensor<float>& h, const Tensor<float>& c, Index s) { return shifted_dot(h, c, s); },
          [](const Tensor<float>& h, const Tensor<float>& c, Index s) { return shifted_wedge(h, c, s); }};
}

InteractionKernels sign_flip_kernels() {
  auto k = reference_kernels();
  k.wedge = [](const Tensor<float>& h, const Tensor<float>& c, Index s) {
    return h * roll_channels(c, s) + c * roll_channels(h, s);
  };
  return k;
}

InteractionKernels reversed_roll_kernels() {
  auto back = [](const Tensor<float>& x, Index s) { return roll_channels(x, x.dim(-1) - s % x.dim(-1)); };
  return {[back](const Tensor<float>& h, const Tensor<float>& c, Index s) { return silu(h * back(c, s)); },
          [back](const Tensor<float>& h, const Tensor<float>& c, Index s) {
            return h * back(c, s) - c * back(h, s);
          }};
}

PropertyResult check_oracle_equivalence(const InteractionKernels& kernels, std::uint64_t seed, int tokens) {
  const auto start = Clock::now();
  PropertyResult r{"oracle_equivalence", true, 0.0, kOracleTolerance, 0.0, {}};
  std::mt19937_64 rng(seed);
  for (Index d : {4, 8, 16}) {
    const Tensor<float> h = random_tensor<float>({tokens, d}, rng);
    const Tensor<float> c = random_tensor<float>({tokens, d}, rng);
    for (Index s = 1; s < d; ++s) {
      const Tensor<float> dot = kernels.dot(h, c, s);
      const Tensor<float> wedge = kernels.wedge(h, c, s);
      for (Index t = 0; t < tokens; ++t) {
        const Eigen::VectorXd u = h.values().segment(t * d, d).cast<double>().matrix();
        const Eigen::VectorXd v = c.values().segment(t * d, d).cast<double>().matrix();
        const auto dense = dense_product_oracle(u, v);
        const Eigen::VectorXd dot_slice = extract_slice(dense.dot, s);
        const Eigen::VectorXd wedge_slice = extract_slice(dense.wedge, s);
        for (Index i = 0; i < d; ++i) {
          const double want_dot = dot_slice[i] * sigmoid_d(dot_slice[i]);
          const double dev = std::max(std::abs(dot.values()[t * d + i] - want_dot),
                                      std::abs(wedge.values()[t * d + i] - wedge_slice[i]));
          if (dev > r.max_deviation || std::isnan(dev)) {
            r.max_deviation = std::isnan(dev) ? INFINITY : dev;
            r.detail = "worst at D=" + std::to_string(d) + " s=" + std::to_string(s);
          }
        }
      }
    }
  }
  r.passed = r.max_deviation <= r.tolerance;
  r.seconds = elapsed(start);
  return r;
}

namespace {

struct Draw {
  Index rows, dim, shift;
};

Draw random_draw(std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> dim(2, 64);
  std::uniform_int_distribution<Index> rows(1, 8);
  const Index d = dim(rng);
  std::uniform_int_distribution<Index> shift(1, d - 1);
  return {rows(rng), d, shift(rng)};
}

}  // namespace

PropertyResult check_anti_symmetry(const InteractionKernels& kernels, std::uint64_t seed, int cases) {
  const auto start = Clock::now();
  PropertyResult r{"anti_symmetry", true, 0.0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  int failures = 0;
  for (int k = 0; k < cases; ++k) {
    const Draw draw = random_draw(rng);
    const Tensor<float> h = normal_tensor<float>({draw.rows, draw.dim}, rng);
    const Tensor<float> c = normal_tensor<float>({draw.rows, draw.dim}, rng);
    const Array<float> a = kernels.wedge(h, c, draw.shift).values();
    const Array<float> b = kernels.wedge(c, h, draw.shift).values();
    bool ok = true;
    for (Index i = 0; i < a.size(); ++i) {
      if (!(a[i] == -b[i])) {
        ok = false;
        r.max_deviation = std::max(r.max_deviation, static_cast<double>(std::abs(a[i] + b[i])));
      }
    }
    if (!ok && failures++ == 0) {
      r.detail = "first failure at D=" + std::to_string(draw.dim) + " s=" + std::to_string(draw.shift);
    }
  }
  r.passed = failures == 0;
  if (failures) r.detail += " (" + std::to_string(failures) + "/" + std::to_string(cases) + " cases)";
  r.seconds = elapsed(start);
  return r;
}

PropertyResult check_self_annihilation(const InteractionKernels& kernels, std::uint64_t seed, int cases) {
  const auto start = Clock::now();
  PropertyResult r{"self_annihilation", true, 0.0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  int failures = 0;
  for (int k = 0; k < cases; ++k) {
    const Draw draw = random_draw(rng);
    const Tensor<float> h = normal_tensor<float>({draw.rows, draw.dim}, rng);
    const Array<float> w = kernels.wedge(h, h, draw.shift).values();
    const double worst = w.abs().maxCoeff();
    if (!(worst == 0.0)) {
      r.max_deviation = std::max(r.max_deviation, worst);
      if (failures++ == 0) {
        r.detail = "first failure at D=" + std::to_string(draw.dim) + " s=" + std::to_string(draw.shift);
      }
    }
  }
  r.passed = failures == 0;
  if (failures) r.detail += " (" + std::to_string(failures) + "/" + std::to_string(cases) + " cases)";
  r.seconds = elapsed(start);
  return r;
}

PropertyResult check_zero_shift(const InteractionKernels& kernels, std::uint64_t seed) {
  const auto start = Clock::now();
  PropertyResult r{"zero_shift_wedge", true, 0.0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  for (Index d : {4, 8, 16, 128}) {
    const Tensor<float> h = normal_tensor<float>({2, 3, 3, d}, rng);
    const Tensor<float> c = normal_tensor<float>({2, 3, 3, d}, rng);
    for (Index s : {Index{0}, d}) {
      const double worst = kernels.wedge(h, c, s).values().abs().maxCoeff();
      r.max_deviation = std::max(r.max_deviation, worst);
    }
  }
  r.passed = r.max_deviation == 0.0;
  r.seconds = elapsed(start);
  return r;
}

PropertyResult check_identity(std::uint64_t seed, Index grid) {
  const auto start = Clock::now();
  PropertyResult r{"gamma_zero_identity", true, 0.0, 0.0, 0.0, {}};
  int blocks = 0;
  int failures = 0;
  for (const auto& name : variant_names()) {
    const ModelConfig cfg = variant_config(name);
    std::mt19937_64 rng(seed);
    std::mt19937_64 drop_rng(seed + 1);
    const Tensor<float> x = normal_tensor<float>({2, grid, grid, cfg.dim()}, rng);
    for (Index i = 0; i < cfg.depth; ++i) {
      BlockParams<float> p = init_block<float>(cfg.block, rng);
      p.gamma.values().setZero();
      for (bool training : {false, true}) {
        const Tensor<float> out =
            clifford_block(x, p, cfg.block, ForwardOptions{training, &drop_rng}, cfg.drop_path_rate(i));
        ++blocks;
        if (!same_bits(out, x)) {
          r.max_deviation = std::max(r.max_deviation, static_cast<double>((out.values() - x.values()).abs().maxCoeff()));
          if (failures++ == 0) r.detail = "first failure: " + name + " block " + std::to_string(i);
        }
      }
    }
  }
  r.passed = failures == 0;
  r.detail += (r.detail.empty() ? "" : "; ") + std::to_string(blocks) + " block evaluations";
  r.seconds = elapsed(start);
  return r;
}

double relative_error(const Array<double>& analytic, const Array<double>& numeric, double floor) {
  const double scale = std::max({analytic.matrix().norm(), numeric.matrix().norm(), floor});
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).matrix().norm() / scale;
}

namespace {

template <typename S>
std::vector<std::pair<std::string, Tensor<S>*>> block_tensors(BlockParams<S>& b) {
  std::vector<std::pair<std::string, Tensor<S>*>> out;
  auto add = [&](const char* name, Tensor<S>& t) {
    if (t.defined()) out.emplace_back(name, &t);
  };
  add("norm.gain", b.norm_gain);
  add("norm.bias", b.norm_bias);
  add("det.weight", b.det_weight);
  add("det.bias", b.det_bias);
  add("ctx1.kernel", b.ctx1_kernel);
  add("ctx1.bias", b.ctx1_bias);
  add("bn1.gain", b.bn1_gain);
  add("bn1.bias", b.bn1_bias);
  add("ctx2.kernel", b.ctx2_kernel);
  add("ctx2.bias", b.ctx2_bias);
  add("bn2.gain", b.bn2_gain);
  add("bn2.bias", b.bn2_bias);
  add("proj.weight", b.proj_weight);
  add("proj.bias", b.proj_bias);
  add("glo_proj.weight", b.glo_proj_weight);
  add("glo_proj.bias", b.glo_proj_bias);
  add("gate.weight", b.gate_weight);
  add("gate.bias", b.gate_bias);
  add("gamma", b.gamma);
  return out;
}

template <typename S>
std::vector<std::pair<std::string, Tensor<S>*>> model_tensors(Model<S>& m) {
  std::vector<std::pair<std::string, Tensor<S>*>> out;
  for_each_parameter<S>(m, [&](const std::string& name, Tensor<S>& t, ParamKind) { out.emplace_back(name, &t); });
  return out;
}

bool ends_with(const std::string& s, std::string_view suffix) { return s.ends_with(suffix); }

// Init-scale parameters make the block nearly linear; a wider spread
// exercises every nonlinearity.
void randomize(const std::vector<std::pair<std::string, Tensor<double>*>>& tensors, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& [name, t] : tensors) {
    for (Index i = 0; i < t->size(); ++i) {
      double v;
      if (ends_with(name, "gain")) v = 1.0 + 0.2 * n(rng);
      else if (ends_with(name, "bias")) v = 0.2 * n(rng);
      else if (ends_with(name, "gamma")) v = 0.5 + 0.3 * n(rng);
      else v = 0.4 * n(rng);
      t->values()[i] = v;
    }
  }
}

template <typename S>
void copy_values(const std::vector<std::pair<std::string, Tensor<double>*>>& from,
                 const std::vector<std::pair<std::string, Tensor<S>*>>& to) {
  if (from.size() != to.size()) throw UsageError("gradient check: parameter lists differ");
  for (std::size_t i = 0; i < from.size(); ++i) to[i].second->values() = from[i].second->values().template cast<S>();
}

template <typename S>
Tensor<S> cast_tensor(const Tensor<double>& t) {
  return Tensor<S>(t.shape(), t.values().template cast<S>());
}

// Central differences of `loss` with respect to every entry of every tensor.
std::vector<Array<double>> numeric_gradients(const std::vector<Tensor<double>*>& tensors,
                                             const std::function<double()>& loss) {
  NoGradGuard no_grad;
  std::vector<Array<double>> out;
  for (Tensor<double>* t : tensors) {
    Array<double> g(t->size());
    for (Index i = 0; i < t->size(); ++i) {
      const double saved = t->values()[i];
      auto at = [&](double offset) {
        t->values()[i] = saved + offset;
        return loss();
      };
      const double h = kFiniteDifferenceStep;
      const double d1 = at(h) - at(-h);
      const double d2 = at(2 * h) - at(-2 * h);
      t->values()[i] = saved;
      g[i] = (8.0 * d1 - d2) / (12.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

GradientReport compare(const std::vector<std::string>& names, const std::vector<Array<double>>& analytic,
                       const std::vector<Array<double>>& numeric) {
  GradientReport report;
  double largest = 0.0;
  for (const auto& n : numeric) largest = std::max(largest, n.matrix().norm());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i], kGradientFloor * largest);
    if (e > report.max_error || std::isnan(e)) {
      report.max_error = std::isnan(e) ? INFINITY : e;
      report.worst_tensor = names[i];
    }
  }
  return report;
}

template <typename S>
Array<double> grad_or_zero(const Tensor<S>& t) {
  return t.has_grad() ? Array<double>(t.grad().template cast<double>()) : Array<double>(Array<double>::Zero(t.size()));
}

template <typename S>
std::vector<Array<double>> block_analytic(const BlockConfig& config, BlockParams<double>& source, const Tensor<double>& x64,
                                          const Tensor<double>& weights64) {
  std::mt19937_64 unused(0);
  BlockParams<S> p = init_block<S>(config, unused);
  auto src = block_tensors(source);
  auto dst = block_tensors(p);
  copy_values<S>(src, dst);
  Tensor<S> x = cast_tensor<S>(x64);
  x.set_requires_grad(true);
  const Tensor<S> weights = cast_tensor<S>(weights64);
  const Tensor<S> loss = sum(clifford_block(x, p, config, ForwardOptions{true, nullptr}, 0.0) * weights);
  backward(loss);
  std::vector<Array<double>> out{grad_or_zero(x)};
  for (auto& [name, t] : dst) out.push_back(grad_or_zero(*t));
  return out;
}

template <typename S>
std::vector<Array<double>> model_analytic(const ModelConfig& config, Model<double>& source, const Tensor<double>& images64,
                                          std::span<const int> labels) {
  Model<S> m = init_model<S>(config, 0);
  auto dst = model_tensors(m);
  copy_values<S>(model_tensors(source), dst);
  const Tensor<S> loss = cross_entropy(model_forward(cast_tensor<S>(images64), m, ForwardOptions{true, nullptr}), labels);
  backward(loss);
  std::vector<Array<double>> out;
  for (auto& [name, t] : dst) out.push_back(grad_or_zero(*t));
  return out;
}

}  // namespace

GradientReport block_gradient_error(const BlockConfig& config, bool single_precision, std::uint64_t seed) {
  BlockConfig cfg = config;
  cfg.drop_path_rate = 0.0;
  cfg.validate();
  std::mt19937_64 rng(seed);
  BlockParams<double> p = init_block<double>(cfg, rng);
  auto tensors = block_tensors(p);
  randomize(tensors, rng);
  Tensor<double> x = normal_tensor<double>({2, 4, 4, cfg.dim}, rng);
  const Tensor<double> weights = normal_tensor<double>({2, 4, 4, cfg.dim}, rng);

  std::vector<std::string> names{"input"};
  std::vector<Tensor<double>*> targets{&x};
  for (auto& [name, t] : tensors) {
    names.push_back(name);
    targets.push_back(t);
  }
  const auto numeric = numeric_gradients(targets, [&] {
    const Tensor<double> out = clifford_block(x, p, cfg, ForwardOptions{true, nullptr}, 0.0);
    return (out.values() * weights.values()).sum();
  });
  const auto analytic = single_precision ? block_analytic<float>(cfg, p, x, weights)
                                         : block_analytic<double>(cfg, p, x, weights);
  return compare(names, analytic, numeric);
}

GradientReport model_gradient_error(const ModelConfig& config, bool single_precision, std::uint64_t seed) {
  ModelConfig cfg = config;
  cfg.block.drop_path_rate = 0.0;
  cfg.validate();
  Model<double> m = init_model<double>(cfg, seed);
  auto tensors = model_tensors(m);
  std::mt19937_64 rng(seed + 1);
  randomize(tensors, rng);
  const Tensor<double> images = normal_tensor<double>({2, cfg.image_size, cfg.image_size, cfg.in_channels}, rng);
  std::vector<int> labels(2);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(cfg.num_classes) - 1);
  for (auto& l : labels) l = pick(rng);

  std::vector<std::string> names;
  std::vector<Tensor<double>*> targets;
  for (auto& [name, t] : tensors) {
    names.push_back(name);
    targets.push_back(t);
  }
  const auto numeric = numeric_gradients(targets, [&] {
    return cross_entropy(model_forward(images, m, ForwardOptions{true, nullptr}), std::span<const int>(labels)).item();
  });
  const auto analytic = single_precision ? model_analytic<float>(cfg, m, images, labels)
                                         : model_analytic<double>(cfg, m, images, labels);
  return compare(names, analytic, numeric);
}

namespace {

std::string precision_tag(bool single_precision) { return single_precision ? "f32" : "f64"; }

}  // namespace

PropertyResult check_block_gradients(bool single_precision, std::uint64_t seed) {
  const auto start = Clock::now();
  PropertyResult r{"block_gradient_" + precision_tag(single_precision), true, 0.0,
                   single_precision ? kGradientToleranceFloat : kGradientToleranceDouble, 0.0, {}};
  for (CliMode cli : {CliMode::inner, CliMode::wedge, CliMode::full}) {
    for (CtxMode ctx : {CtxMode::diff, CtxMode::abs}) {
      for (int beta : {0, 1}) {
        BlockConfig cfg;
        cfg.dim = 8;
        cfg.shifts = ShiftSet({1, 2, 4});
        cfg.cli_mode = cli;
        cfg.ctx_mode = ctx;
        cfg.beta = beta;
        const GradientReport g = block_gradient_error(cfg, single_precision, seed);
        if (g.max_error > r.max_deviation || std::isinf(g.max_error)) {
          r.max_deviation = g.max_error;
          r.detail = "worst: " + std::string(to_string(cli)) + "/" + std::string(to_string(ctx)) +
                     "/beta=" + std::to_string(beta) + " " + g.worst_tensor;
        }
      }
    }
  }
  r.passed = r.max_deviation < r.tolerance;
  r.seconds = elapsed(start);
  return r;
}

PropertyResult check_model_gradients(bool single_precision, std::uint64_t seed) {
  const auto start = Clock::now();
  PropertyResult r{"model_gradient_" + precision_tag(single_precision), true, 0.0,
                   single_precision ? kGradientToleranceFloat : kGradientToleranceDouble, 0.0, {}};
  for (int beta : {0, 1}) {
    ModelConfig cfg;
    cfg.variant_name = "grad-check";
    cfg.image_size = 8;
    cfg.depth = 2;
    cfg.num_classes = 5;
    cfg.block.dim = 8;
    cfg.block.shifts = ShiftSet({1, 2, 4});
    cfg.block.beta = beta;
    const GradientReport g = model_gradient_error(cfg, single_precision, seed);
    if (g.max_error > r.max_deviation || std::isinf(g.max_error)) {
      r.max_deviation = g.max_error;
      r.detail = "worst: beta=" + std::to_string(beta) + " " + g.worst_tensor;
    }
  }
  r.passed = r.max_deviation < r.tolerance;
  r.seconds = elapsed(start);
  return r;
}

std::vector<PropertyResult> run_suite(std::uint64_t seed) {
  const auto k = reference_kernels();
  return {check_oracle_equivalence(k, seed),
          check_anti_symmetry(k, seed),
          check_self_annihilation(k, seed),
          check_zero_shift(k, seed),
          check_identity(seed),
          check_block_gradients(true, seed),
          check_block_gradients(false, seed),
          check_model_gradients(true, seed),
          check_model_gradients(false, seed)};
}

}  // namespace clifford::verify
