#pragma once

// AdamW with a cosine schedule (no warmup), the training/evaluation loops and
// the per-epoch history.
//
// History CSV header:
//   epoch,lr,train_loss,train_loss_median,eval_top1,wall_seconds
// `lr` is the rate used by the epoch's first step; train_loss is the mean of
// the epoch's batch losses and train_loss_median their median.

#include "clifford/data.hpp"
#include "clifford/network.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace clifford {

struct TrainConfig {
  int epochs = 200;
  double base_lr = 1e-3;
  double min_lr = 1e-5;
  double weight_decay = 0.05;
  Index batch_size = 128;
  double grad_clip = 5.0;  // global-norm clip; <= 0 disables
  std::uint64_t seed = 0;
  bool augment = true;
  Index eval_batch_size = 256;
  Index train_subset = 0;  // first n training samples; 0 = all
  Index eval_subset = 0;

  void validate() const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct ParamRef {
  std::string name;
  Tensor<Scalar> tensor;
  ParamKind kind;
};

template <typename Scalar>
std::vector<ParamRef<Scalar>> collect_parameters(Model<Scalar>& model);

/// Only matrices and kernels decay; biases, norm affine and gamma do not.
inline bool decays(ParamKind kind) { return kind == ParamKind::weight; }

template <typename Scalar>
struct OptimState {
  std::vector<Array<Scalar>> m;
  std::vector<Array<Scalar>> v;
  std::int64_t step = 0;
};

/// One decoupled-decay Adam update. A parameter without a gradient is
/// treated as having a zero gradient.
template <typename Scalar>
void adamw_step(std::span<ParamRef<Scalar>> params, OptimState<Scalar>& state, double lr, double weight_decay,
                const AdamWConfig& hyper = {});

/// Rescales every gradient so the global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(std::span<ParamRef<Scalar>> params, double max_norm);

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr);

struct HistoryRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_loss_median = 0.0;
  double eval_top1 = 0.0;
  double wall_seconds = 0.0;
};

void write_history_csv(std::ostream& out, std::span<const HistoryRow> rows);
void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows);
inline constexpr const char* kHistoryHeader = "epoch,lr,train_loss,train_loss_median,eval_top1,wall_seconds";

/// Logits for every sample, in dataset order, concatenated row-major (N x classes).
Array<float> predict_logits(Model<float>& model, const data::Dataset& dataset, const data::NormalizeStats& stats,
                            Index batch_size = 256);

double top1_accuracy(const Array<float>& logits, std::span<const int> labels, Index classes);

/// Eval mode (running BN statistics, no drop path), no graph recording.
double evaluate(Model<float>& model, const data::Dataset& dataset, const data::NormalizeStats& stats,
                Index batch_size = 256);

using EpochCallback = std::function<void(const HistoryRow&)>;

/// Trains for config.epochs epochs; evaluates on `eval` after each epoch
/// when given (eval_top1 is NaN otherwise).
std::vector<HistoryRow> train(Model<float>& model, const data::Dataset& train_set, const data::Dataset* eval_set,
                              const TrainConfig& config, const data::NormalizeStats& stats,
                              const data::AugmentConfig& augment = {}, const EpochCallback& on_epoch = {});

}  // namespace clifford
