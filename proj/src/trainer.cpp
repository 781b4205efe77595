#include "clifford/trainer.hpp"

#include "clifford/error.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>

namespace clifford {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(base_lr > min_lr && min_lr >= 0.0)) throw ConfigError("learning rates must satisfy base_lr > min_lr >= 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size < 1 || eval_batch_size < 1) throw ConfigError("batch sizes must be at least 1");
  if (train_subset < 0 || eval_subset < 0) throw ConfigError("subset sizes must be non-negative");
}

template <typename S>
std::vector<ParamRef<S>> collect_parameters(Model<S>& model) {
  std::vector<ParamRef<S>> out;
  for_each_parameter<S>(model, [&](const std::string& name, Tensor<S>& t, ParamKind kind) {
    out.push_back({name, t, kind});
  });
  return out;
}

template <typename S>
void adamw_step(std::span<ParamRef<S>> params, OptimState<S>& state, double lr, double weight_decay,
                const AdamWConfig& hyper) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Array<S>::Zero(p.tensor.size()));
      state.v.push_back(Array<S>::Zero(p.tensor.size()));
    }
  }
  if (state.m.size() != params.size()) throw UsageError("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(hyper.beta1);
  const S b2 = static_cast<S>(hyper.beta2);
  const S step_size = static_cast<S>(lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(hyper.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    Array<S>& w = p.tensor.values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw UsageError("adamw_step: moment shape differs for " + p.name);
    if (decays(p.kind) && weight_decay > 0.0) w *= static_cast<S>(1.0 - lr * weight_decay);
    if (p.tensor.has_grad()) {
      const Array<S>& g = p.tensor.grad();
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g.square();
    } else {
      m *= b1;
      v *= b2;
    }
    w -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
  }
}

template <typename S>
double clip_grad_norm(std::span<ParamRef<S>> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().template cast<double>().square().sum();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.impl()->grad *= factor;
    }
  }
  return norm;
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr) {
  if (total_steps <= 0) return base_lr;
  const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps)) / static_cast<double>(total_steps);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

std::string shortest(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double median(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = xs.begin() + static_cast<std::ptrdiff_t>(xs.size() / 2);
  std::nth_element(xs.begin(), mid, xs.end());
  if (xs.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(xs.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

void write_history_csv(std::ostream& out, std::span<const HistoryRow> rows) {
  out << kHistoryHeader << '\n';
  for (const auto& r : rows) {
    out << r.epoch << ',' << shortest(r.lr) << ',' << shortest(r.train_loss) << ',' << shortest(r.train_loss_median)
        << ',' << shortest(r.eval_top1) << ',' << shortest(r.wall_seconds) << '\n';
  }
}

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_history_csv(out, rows);
}

Array<float> predict_logits(Model<float>& model, const data::Dataset& dataset, const data::NormalizeStats& stats,
                            Index batch_size) {
  NoGradGuard no_grad;
  const Index classes = model.config.num_classes;
  Array<float> logits(dataset.size() * classes);
  data::BatchStream stream(dataset, batch_size, 0, 0, stats, std::nullopt, false);
  Index row = 0;
  while (auto batch = stream.next()) {
    const Tensor<float> out = model_forward(batch->images, model, ForwardOptions{});
    logits.segment(row * classes, out.size()) = out.values();
    row += out.dim(0);
  }
  return logits;
}

double top1_accuracy(const Array<float>& logits, std::span<const int> labels, Index classes) {
  const auto n = static_cast<Index>(labels.size());
  if (logits.size() != n * classes) throw DimensionError("top1_accuracy: logits do not match labels");
  if (n == 0) return 0.0;
  Index correct = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    logits.segment(i * classes, classes).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double evaluate(Model<float>& model, const data::Dataset& dataset, const data::NormalizeStats& stats,
                Index batch_size) {
  return top1_accuracy(predict_logits(model, dataset, stats, batch_size), dataset.labels, model.config.num_classes);
}

std::vector<HistoryRow> train(Model<float>& model, const data::Dataset& train_set, const data::Dataset* eval_set,
                              const TrainConfig& config, const data::NormalizeStats& stats,
                              const data::AugmentConfig& augment, const EpochCallback& on_epoch) {
  config.validate();
  const data::Dataset train_data = train_set.head(config.train_subset);
  std::optional<data::Dataset> eval_data;
  if (eval_set) eval_data = eval_set->head(config.eval_subset);
  if (train_data.size() == 0) throw DataError("training set is empty");
  for (int label : train_data.labels) {
    if (label >= model.config.num_classes) {
      throw ConfigError("dataset label " + std::to_string(label) + " exceeds the model's " +
                        std::to_string(model.config.num_classes) + " classes");
    }
  }

  auto params = collect_parameters(model);
  OptimState<float> state;
  const std::int64_t steps_per_epoch = (train_data.size() + config.batch_size - 1) / config.batch_size;
  const std::int64_t total_steps = steps_per_epoch * config.epochs;
  std::int64_t step = 0;
  std::vector<HistoryRow> history;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::mt19937_64 drop_rng(data::mix_seed(config.seed, static_cast<std::uint64_t>(epoch), 3));
    data::BatchStream stream(train_data, config.batch_size, config.seed, static_cast<std::uint64_t>(epoch), stats,
                             config.augment ? std::optional(augment) : std::nullopt);
    HistoryRow row;
    row.epoch = epoch;
    row.lr = cosine_lr(step, total_steps, config.base_lr, config.min_lr);
    std::vector<double> losses;
    while (auto batch = stream.next()) {
      const double lr = cosine_lr(step, total_steps, config.base_lr, config.min_lr);
      for (auto& p : params) p.tensor.zero_grad();
      const Tensor<float> logits = model_forward(batch->images, model, ForwardOptions{true, &drop_rng});
      const Tensor<float> loss = cross_entropy(logits, std::span<const int>(batch->labels));
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      backward(loss);
      clip_grad_norm(std::span(params), config.grad_clip);
      adamw_step(std::span(params), state, lr, config.weight_decay);
      losses.push_back(loss_value);
      ++step;
    }
    for (auto& p : params) p.tensor.zero_grad();
    double total = 0.0;
    for (double l : losses) total += l;
    row.train_loss = total / static_cast<double>(losses.size());
    row.train_loss_median = median(losses);
    row.eval_top1 = eval_data ? evaluate(model, *eval_data, stats, config.eval_batch_size)
                              : std::numeric_limits<double>::quiet_NaN();
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return history;
}

#define CLIFFORD_INSTANTIATE(S)                                                                         \
  template std::vector<ParamRef<S>> collect_parameters<S>(Model<S>&);                                   \
  template void adamw_step<S>(std::span<ParamRef<S>>, OptimState<S>&, double, double, const AdamWConfig&); \
  template double clip_grad_norm<S>(std::span<ParamRef<S>>, double);

CLIFFORD_INSTANTIATE(float)
CLIFFORD_INSTANTIATE(double)

#undef CLIFFORD_INSTANTIATE

}  // namespace clifford
