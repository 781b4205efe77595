#pragma once

// Whole-run configuration with dotted-path overrides:
//
//   model.<field>    any ModelConfig key ("model.depth", "model.block.shifts")
//   block.<field>    shorthand for model.block.<field>
//   trainer.<field>  epochs, base_lr, min_lr, weight_decay, batch_size,
//                    grad_clip, seed, augment, eval_batch_size,
//                    train_subset, eval_subset
//   augment.<field>  pad, hflip_prob, erase_prob, erase_area_min, erase_area_max
//   data.variant     cifar10 | cifar100

#include "clifford/data.hpp"
#include "clifford/network.hpp"
#include "clifford/trainer.hpp"

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace clifford {

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig trainer;
  data::AugmentConfig augment;
  data::CifarVariant data_variant = data::CifarVariant::cifar100;

  /// Applies "key=value". Throws ConfigError for unknown keys.
  void apply_override(std::string_view assignment);
  void set(std::string_view key, std::string_view value);
  void validate() const;
  std::vector<std::pair<std::string, std::string>> fields() const;
};

/// A preset variant, with the dataset chosen from its class count.
ExperimentConfig experiment_for_variant(std::string_view variant);

/// nano-mini on the first 5,000 CIFAR-10 training images, 5 epochs, no
/// augmentation, evaluated on the full test split.
ExperimentConfig smoke_experiment(std::uint64_t seed);

/// Keeps freed heap memory for reuse instead of returning it to the OS.
void retain_heap();

/// retain_heap(), then CLIFFORD_NUM_THREADS (when set) is passed to Eigen.
/// Returns the thread count in effect.
int configure_runtime();

}  // namespace clifford
