// cliffordnet: train | eval | verify | bench | params

#include "clifford/bench.hpp"
#include "clifford/checkpoint.hpp"
#include "clifford/error.hpp"
#include "clifford/experiment.hpp"
#include "clifford/verify.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace clifford;

namespace {

struct Shared {
  std::string variant = "nano";
  std::string data_dir;
  std::uint64_t seed = 0;
  std::string out = "runs/latest";
  std::string checkpoint;
  std::vector<std::string> overrides;
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--variant", s.variant, "Preset: nano, lite, net32, net64, nano-mini (optionally -gffng)")
      ->capture_default_str();
  cmd->add_option("--data-dir", s.data_dir, "Directory with the CIFAR binary files");
  cmd->add_option("--seed", s.seed, "Seed for initialization, shuffling and augmentation")->capture_default_str();
  cmd->add_option("--out", s.out, "Output directory")->capture_default_str();
  cmd->add_option("--checkpoint", s.checkpoint, "Checkpoint to load");
  cmd->add_option("--override", s.overrides, "key=value, e.g. trainer.epochs=1 or block.shifts=1,2,4");
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

ExperimentConfig build_experiment(const Shared& s) {
  ExperimentConfig e = experiment_for_variant(s.variant);
  e.trainer.seed = s.seed;
  for (const auto& o : s.overrides) e.apply_override(o);
  e.validate();
  return e;
}

fs::path require_data_dir(const Shared& s) {
  if (s.data_dir.empty()) throw UsageError("--data-dir is required");
  if (!fs::is_directory(s.data_dir)) throw DataError("data directory " + s.data_dir + " does not exist");
  return s.data_dir;
}

int cmd_train(const Shared& s) {
  ExperimentConfig e = build_experiment(s);
  const fs::path dir = require_data_dir(s);
  const data::Dataset train_set = data::load_cifar_split(dir, e.data_variant, true);
  const data::Dataset test_set = data::load_cifar_split(dir, e.data_variant, false);

  Model<float> model = init_model<float>(e.model, s.seed);
  if (!s.checkpoint.empty()) load_checkpoint_into(s.checkpoint, model);

  fs::create_directories(s.out);
  {
    std::ofstream cfg(fs::path(s.out) / "config.txt");
    for (const auto& [k, v] : e.fields()) cfg << k << '=' << v << '\n';
  }
  std::cout << "variant=" << e.model.variant_name << " params=" << param_count(model)
            << " train=" << train_set.size() << " test=" << test_set.size() << '\n';

  std::vector<HistoryRow> rows;
  const fs::path history = fs::path(s.out) / "history.csv";
  auto on_epoch = [&](const HistoryRow& r) {
    rows.push_back(r);
    write_history_csv(history, rows);
    std::cout << "epoch " << r.epoch << " lr=" << shortest(r.lr) << " loss=" << std::fixed << std::setprecision(4)
              << r.train_loss << " top1=" << r.eval_top1 << " (" << std::setprecision(1) << r.wall_seconds << " s)\n"
              << std::defaultfloat << std::flush;
  };
  train(model, train_set, &test_set, e.trainer, data::normalize_stats(e.data_variant), e.augment, on_epoch);
  save_checkpoint(fs::path(s.out) / "model.ckpt", model);
  std::cout << "wrote " << history.string() << " and " << (fs::path(s.out) / "model.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const Shared& s) {
  ExperimentConfig e = build_experiment(s);
  Model<float> model = s.checkpoint.empty() ? init_model<float>(e.model, s.seed) : load_checkpoint(s.checkpoint);
  const auto variant = model.config.num_classes == 10 ? data::CifarVariant::cifar10 : data::CifarVariant::cifar100;
  const data::Dataset test_set = data::load_cifar_split(require_data_dir(s), variant, false).head(e.trainer.eval_subset);
  const double top1 =
      evaluate(model, test_set, data::normalize_stats(variant), e.trainer.eval_batch_size);
  std::cout << "top1=" << shortest(top1) << '\n';
  return 0;
}

int cmd_verify(const Shared& s) {
  int failed = 0;
  for (const auto& r : verify::run_suite(s.seed)) {
    std::cout << verify::format_result(r) << '\n' << std::flush;
    if (!r.passed) {
      ++failed;
      std::cerr << "property " << r.name << " failed: max deviation " << r.max_deviation << '\n';
    }
  }
  std::cout << (failed ? std::to_string(failed) + " properties failed" : std::string("all properties passed")) << '\n';
  return failed ? 1 : 0;
}

int cmd_bench(const Shared& s, int repeats) {
  ExperimentConfig e = build_experiment(s);
  bool ok = true;
  std::cout << std::fixed;
  for (int beta : {0, 1}) {
    bench::ScalingOptions options;
    options.block = e.model.block;
    options.block.beta = beta;
    options.repeats = repeats;
    options.seed = s.seed;
    const auto points = bench::block_scaling(options);
    std::cout << "block forward, D=" << options.block.dim << " shifts=" << options.block.shifts.to_string()
              << " beta=" << beta << '\n'
              << "       N      grid    ms    ns/token  ratio\n";
    for (const auto& p : points) {
      std::cout << std::setw(8) << p.tokens << std::setw(6) << p.height << 'x' << std::left << std::setw(4)
                << p.width << std::right << std::setprecision(2) << std::setw(8) << 1e3 * p.seconds
                << std::setprecision(1) << std::setw(11) << p.ns_per_token << std::setprecision(2) << std::setw(7)
                << p.ratio << '\n';
    }
    const auto check = bench::check_doubling(points);
    std::cout << (check.passed ? "doubling ratios ok" : "FAIL: " + check.detail) << "\n\n";
    ok = ok && check.passed;
  }

  const std::vector<ShiftSet> sets{ShiftSet({1}), ShiftSet({1, 2}), ShiftSet({1, 2, 4, 8, 16})};
  const auto sweep = bench::shift_sweep(e.model.block, sets, 64, 64, repeats, s.seed);
  std::cout << "shift sweep, N=4096\n  |S|  interact ms  block ms  interact ratio\n";
  for (const auto& p : sweep) {
    std::cout << std::setw(5) << p.shift_count << std::setprecision(2) << std::setw(13) << 1e3 * p.interact_seconds
              << std::setw(10) << 1e3 * p.block_seconds << std::setw(16) << p.interact_ratio << '\n';
  }
  const auto growth = bench::check_shift_growth(sweep);
  std::cout << (growth.passed ? "shift growth ok" : "FAIL: " + growth.detail) << '\n';
  if (!ok || !growth.passed) std::cerr << "bench assertions failed\n";
  return ok && growth.passed ? 0 : 1;
}

int cmd_params(const Shared& s, bool all) {
  const std::vector<std::string> names = all ? variant_names() : std::vector<std::string>{s.variant};
  bool ok = true;
  for (const auto& name : names) {
    ExperimentConfig e = experiment_for_variant(name);
    for (const auto& o : s.overrides) e.apply_override(o);
    Model<float> model = init_model<float>(e.model, s.seed);
    const std::int64_t count = param_count(model);
    std::cout << std::left << std::setw(12) << name << std::right << " params=" << count;
    if (const auto ref = reference_param_count(name)) {
      const double dev = static_cast<double>(count - *ref) / static_cast<double>(*ref);
      const bool within = std::abs(dev) <= 0.05;
      std::cout << " reference=" << *ref << " deviation=" << std::showpos << std::fixed << std::setprecision(2)
                << 100.0 * dev << '%' << std::noshowpos << std::defaultfloat << (within ? "" : "  OVER 5%");
      ok = ok && within;
    } else {
      std::cout << " reference=none";
    }
    std::cout << '\n';
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CliffordNet: train, evaluate, verify, benchmark and audit the vision backbone"};
  app.require_subcommand(1);
  Shared shared;
  int repeats = 5;
  bool all = false;

  auto* train_cmd = app.add_subcommand("train", "Train a preset and write history.csv and model.ckpt");
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy on the test split");
  auto* verify_cmd = app.add_subcommand("verify", "Run the invariant and gradient-check suite");
  auto* bench_cmd = app.add_subcommand("bench", "Time the block forward pass against N and |S|");
  auto* params_cmd = app.add_subcommand("params", "Count learnable scalars and compare with the published figure");
  for (auto* cmd : {train_cmd, eval_cmd, verify_cmd, bench_cmd, params_cmd}) add_shared(cmd, shared);
  bench_cmd->add_option("--repeats", repeats, "Timed repeats per point (minimum is reported)")->capture_default_str();
  params_cmd->add_flag("--all", all, "Every preset");

  CLI11_PARSE(app, argc, argv);

  try {
    configure_runtime();
    if (*train_cmd) return cmd_train(shared);
    if (*eval_cmd) return cmd_eval(shared);
    if (*verify_cmd) return cmd_verify(shared);
    if (*bench_cmd) return cmd_bench(shared, repeats);
    if (*params_cmd) return cmd_params(shared, all);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
