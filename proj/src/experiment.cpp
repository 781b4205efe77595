#include "clifford/experiment.hpp"

#include "clifford/error.hpp"

#include <Eigen/Core>
#include <charconv>
#include <cstdlib>
#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace clifford {

namespace {

template <typename T>
T parse_value(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key) + " (expected true/false)");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  auto strip = [&](std::string_view prefix) {
    if (!key.starts_with(prefix)) return false;
    key.remove_prefix(prefix.size());
    return true;
  };
  if (strip("model.")) {
    set_config_field(model, key, value);
    return;
  }
  if (key.starts_with("block.")) {
    set_config_field(model, key, value);
    return;
  }
  if (strip("trainer.")) {
    auto& t = trainer;
    if (key == "epochs") t.epochs = parse_value<int>(key, value);
    else if (key == "base_lr") t.base_lr = parse_value<double>(key, value);
    else if (key == "min_lr") t.min_lr = parse_value<double>(key, value);
    else if (key == "weight_decay") t.weight_decay = parse_value<double>(key, value);
    else if (key == "batch_size") t.batch_size = parse_value<Index>(key, value);
    else if (key == "grad_clip") t.grad_clip = parse_value<double>(key, value);
    else if (key == "seed") t.seed = parse_value<std::uint64_t>(key, value);
    else if (key == "augment") t.augment = parse_bool(key, value);
    else if (key == "eval_batch_size") t.eval_batch_size = parse_value<Index>(key, value);
    else if (key == "train_subset") t.train_subset = parse_value<Index>(key, value);
    else if (key == "eval_subset") t.eval_subset = parse_value<Index>(key, value);
    else throw ConfigError("unknown trainer field '" + std::string(key) + "'");
    return;
  }
  if (strip("augment.")) {
    auto& a = augment;
    if (key == "pad") a.pad = parse_value<int>(key, value);
    else if (key == "hflip_prob") a.hflip_prob = parse_value<double>(key, value);
    else if (key == "erase_prob") a.erase_prob = parse_value<double>(key, value);
    else if (key == "erase_area_min") a.erase_area_min = parse_value<double>(key, value);
    else if (key == "erase_area_max") a.erase_area_max = parse_value<double>(key, value);
    else throw ConfigError("unknown augment field '" + std::string(key) + "'");
    return;
  }
  if (key == "data.variant") {
    data_variant = data::parse_variant(value);
    return;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void ExperimentConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void ExperimentConfig::validate() const {
  model.validate();
  trainer.validate();
  augment.validate();
  if (model.num_classes != data::class_count(data_variant)) {
    throw ConfigError("model has " + std::to_string(model.num_classes) + " classes but " +
                      std::string(data::to_string(data_variant)) + " has " +
                      std::to_string(data::class_count(data_variant)));
  }
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::fields() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& [k, v] : config_fields(model)) out.emplace_back("model." + k, v);
  const auto& t = trainer;
  out.emplace_back("trainer.epochs", std::to_string(t.epochs));
  out.emplace_back("trainer.base_lr", fmt(t.base_lr));
  out.emplace_back("trainer.min_lr", fmt(t.min_lr));
  out.emplace_back("trainer.weight_decay", fmt(t.weight_decay));
  out.emplace_back("trainer.batch_size", std::to_string(t.batch_size));
  out.emplace_back("trainer.grad_clip", fmt(t.grad_clip));
  out.emplace_back("trainer.seed", std::to_string(t.seed));
  out.emplace_back("trainer.augment", t.augment ? "true" : "false");
  out.emplace_back("trainer.eval_batch_size", std::to_string(t.eval_batch_size));
  out.emplace_back("trainer.train_subset", std::to_string(t.train_subset));
  out.emplace_back("trainer.eval_subset", std::to_string(t.eval_subset));
  out.emplace_back("augment.pad", std::to_string(augment.pad));
  out.emplace_back("augment.hflip_prob", fmt(augment.hflip_prob));
  out.emplace_back("augment.erase_prob", fmt(augment.erase_prob));
  out.emplace_back("augment.erase_area_min", fmt(augment.erase_area_min));
  out.emplace_back("augment.erase_area_max", fmt(augment.erase_area_max));
  out.emplace_back("data.variant", std::string(data::to_string(data_variant)));
  return out;
}

ExperimentConfig experiment_for_variant(std::string_view variant) {
  ExperimentConfig e;
  e.model = variant_config(variant);
  e.data_variant = e.model.num_classes == 10 ? data::CifarVariant::cifar10 : data::CifarVariant::cifar100;
  return e;
}

ExperimentConfig smoke_experiment(std::uint64_t seed) {
  ExperimentConfig e = experiment_for_variant("nano-mini");
  e.trainer.epochs = 5;
  e.trainer.seed = seed;
  e.trainer.train_subset = 5000;
  e.trainer.augment = false;
  return e;
}

void retain_heap() {
#ifdef __GLIBC__
  // Large buffers otherwise come from fresh mmap pages on every op, and the
  // page faults dominate the cost of big elementwise passes.
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

int configure_runtime() {
  retain_heap();
  if (const char* env = std::getenv("CLIFFORD_NUM_THREADS")) {
    const int n = parse_value<int>("CLIFFORD_NUM_THREADS", env);
    if (n < 1) throw ConfigError("CLIFFORD_NUM_THREADS must be at least 1");
    Eigen::setNbThreads(n);
  }
  return Eigen::nbThreads();
}

}  // namespace clifford
