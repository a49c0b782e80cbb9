// agcnet: dataset generation, training, gradient checking, AGC/BN
// benchmarking and λ trajectory extraction behind one binary.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "agcn/bench.hpp"
#include "agcn/checkpoint.hpp"
#include "agcn/data.hpp"
#include "agcn/gradcheck.hpp"
#include "agcn/network.hpp"
#include "agcn/trainer.hpp"

namespace fs = std::filesystem;
using namespace agcn;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

struct GenDataOpts {
  data::DatasetSpec spec;
  std::string out = ".";
};

int run_gen_data(const GenDataOpts& o) {
  const auto [train_set, val_set] = data::generate(o.spec);
  fs::create_directories(o.out);
  const fs::path train_path = fs::path(o.out) / "train.bin";
  const fs::path val_path = fs::path(o.out) / "val.bin";
  data::save_dataset(train_path.string(), train_set, o.spec.classes);
  data::save_dataset(val_path.string(), val_set, o.spec.classes);
  std::cout << "wrote " << train_set.size() << " train samples to " << train_path.string()
            << "\n";
  std::cout << "wrote " << val_set.size() << " val samples to " << val_path.string() << "\n";
  return 0;
}

struct TrainOpts {
  TrainConfig config;
  std::string out = "run";
  bool fake_clock = false;
};

int run_train(const TrainOpts& o) {
  TrainConfig config = o.config;

  std::vector<data::Sample> train_set, val_set;
  int classes = config.data_classes;
  if (!config.train_data.empty() || !config.val_data.empty()) {
    if (config.train_data.empty() || config.val_data.empty()) {
      throw std::runtime_error("set both train_data and val_data, or neither");
    }
    auto loaded_train = data::load_dataset(config.train_data);
    auto loaded_val = data::load_dataset(config.val_data);
    if (loaded_train.second != loaded_val.second) {
      throw std::runtime_error("train/val class counts disagree: " +
                               std::to_string(loaded_train.second) + " vs " +
                               std::to_string(loaded_val.second));
    }
    train_set = std::move(loaded_train.first);
    val_set = std::move(loaded_val.first);
    classes = loaded_train.second;
  } else {
    data::DatasetSpec dspec;
    dspec.h = config.data_h;
    dspec.w = config.data_w;
    dspec.classes = config.data_classes;
    dspec.n_train = config.data_train;
    dspec.n_val = config.data_val;
    dspec.seed = config.data_seed;
    auto sets = data::generate(dspec);
    train_set = std::move(sets.first);
    val_set = std::move(sets.second);
  }

  Network<float> net(NetworkSpec::toy(3, classes), config.norm_mode, config.identity_init,
                     Rng(config.seed));

  TrainHooks hooks;
  if (o.fake_clock) {
    auto ticks = std::make_shared<double>(0.0);
    hooks.clock = [ticks] {
      *ticks += 1.0;
      return *ticks;
    };
  }

  const TrainResult result = train(net, train_set, val_set, config, hooks);

  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "metrics.csv", result.metrics_csv);
  save_config(config, (fs::path(o.out) / "config.txt").string());
  checkpoint::save((fs::path(o.out) / "final.ckpt").string(), net.snapshot());

  const MetricsRecord& last = result.records.back();
  std::cout << "norm=" << norm_mode_name(config.norm_mode) << " epochs=" << last.epoch
            << " val_loss=" << last.val_loss << " val_pixel_error=" << last.val_pixel_error
            << "\n";
  for (const auto& l : last.lambda) {
    std::cout << "lambda " << l.layer << " min=" << l.min << " mean=" << l.mean
              << " max=" << l.max << "\n";
  }
  std::cout << "outputs in " << o.out << "\n";
  return 0;
}

struct GradcheckOpts {
  std::uint64_t seed = 1;
  int fixtures = 50;
};

int run_gradcheck(const GradcheckOpts& o) {
  const auto suites = gradcheck::run_suites(o.seed, o.fixtures);
  bool all_passed = true;
  for (const auto& s : suites) {
    const bool ok = s.passed();
    all_passed &= ok;
    std::cout << "suite=" << s.name << " fixtures=" << s.fixtures
              << " max_rel_err=" << s.max_rel_err << " tol=" << s.tolerance
              << " status=" << (ok ? "pass" : "fail") << "\n";
  }
  return all_passed ? 0 : 1;
}

struct BenchOpts {
  int minibatch = 8;
  int steps = 30;
  std::uint64_t seed = 1;
  int h = 64;
  int w = 64;
  int classes = 5;
  std::string out_csv;
};

int run_bench(const BenchOpts& o) {
  const BenchPair pair =
      bench_pair(NetworkSpec::toy(3, o.classes), o.h, o.w, o.minibatch, o.steps, o.seed);
  std::cout << pair.to_text();
  std::cout << pair.to_csv();
  if (!o.out_csv.empty()) write_text(o.out_csv, pair.to_csv());
  return 0;
}

struct LambdaReportOpts {
  std::string csv;
};

// Cuts the epoch column and every lambda_* column out of a metrics CSV.
int run_lambda_report(const LambdaReportOpts& o) {
  std::ifstream in(o.csv, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + o.csv);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv " + o.csv);

  std::vector<std::string> names;
  std::vector<std::size_t> keep;
  std::stringstream header(line);
  std::string field;
  for (std::size_t i = 0; std::getline(header, field, ','); ++i) {
    if (field == "epoch" || field.rfind("lambda_", 0) == 0) {
      keep.push_back(i);
      names.push_back(field);
    }
  }
  if (keep.size() < 2) {
    throw std::runtime_error(o.csv + " has no lambda columns (not an agc run?)");
  }

  const auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      std::cout << (i == 0 ? "" : ",") << fields[i];
    }
    std::cout << "\n";
  };
  emit(names);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream row(line);
    while (std::getline(row, field, ',')) fields.push_back(field);
    std::vector<std::string> picked;
    for (const std::size_t i : keep) {
      if (i >= fields.size()) throw std::runtime_error("short row in " + o.csv);
      picked.push_back(fields[i]);
    }
    emit(picked);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"per-sample gain-controlled segmentation nets: data, training, benchmarks"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GenDataOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "write synthetic dataset files");
  gen_cmd->add_option("--height", gen.spec.h, "image height");
  gen_cmd->add_option("--width", gen.spec.w, "image width");
  gen_cmd->add_option("--classes", gen.spec.classes, "class count incl. background");
  gen_cmd->add_option("--train", gen.spec.n_train, "training sample count");
  gen_cmd->add_option("--val", gen.spec.n_val, "validation sample count");
  gen_cmd->add_option("--seed", gen.spec.seed, "dataset seed");
  gen_cmd->add_option("--out", gen.out, "output directory");

  TrainOpts tr;
  std::string config_path, norm, lr_scale, gems;
  int minibatch = 0, epochs = 0;
  double base_lr = 0;
  std::uint64_t seed = 0;
  CLI::App* train_cmd = app.add_subcommand("train", "train one network, write metrics + checkpoint");
  train_cmd->add_option("--config", config_path, "key=value config file")
      ->check(CLI::ExistingFile);
  auto* norm_opt = train_cmd->add_option("--norm", norm, "normalization mode")
                       ->check(CLI::IsMember({"agc", "bn", "none"}));
  auto* mb_opt = train_cmd->add_option("--minibatch", minibatch, "minibatch size");
  auto* lr_opt = train_cmd->add_option("--base-lr", base_lr, "base learning rate");
  auto* scale_opt = train_cmd->add_option("--lr-scale", lr_scale, "scale lr by minibatch size")
                        ->check(CLI::IsMember({"on", "off"}));
  auto* gems_opt = train_cmd->add_option("--gems", gems, "active-count gradient renormalization")
                       ->check(CLI::IsMember({"on", "off"}));
  auto* seed_opt = train_cmd->add_option("--seed", seed, "training seed");
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "epoch count");
  train_cmd->add_option("--out", tr.out, "output directory");
  train_cmd->add_flag("--fake-clock", tr.fake_clock,
                      "deterministic wall_time_s column (reproducibility tests)");

  GradcheckOpts gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  gc_cmd->add_option("--seed", gc.seed, "fixture seed");
  gc_cmd->add_option("--fixtures", gc.fixtures, "fixtures per suite")
      ->check(CLI::PositiveNumber);

  BenchOpts be;
  CLI::App* bench_cmd = app.add_subcommand("bench", "paired agc/bn step time + memory benchmark");
  bench_cmd->add_option("--minibatch", be.minibatch, "minibatch size");
  bench_cmd->add_option("--steps", be.steps, "timed steps per mode");
  bench_cmd->add_option("--seed", be.seed, "network/data seed");
  bench_cmd->add_option("--height", be.h, "image height");
  bench_cmd->add_option("--width", be.w, "image width");
  bench_cmd->add_option("--classes", be.classes, "class count");
  bench_cmd->add_option("--out-csv", be.out_csv, "also write the csv row here");

  LambdaReportOpts lr;
  CLI::App* lam_cmd = app.add_subcommand("lambda-report", "extract lambda columns from a metrics csv");
  lam_cmd->add_option("csv", lr.csv, "metrics csv path")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return run_gen_data(gen);
    if (train_cmd->parsed()) {
      if (!config_path.empty()) tr.config = load_config(config_path);
      if (norm_opt->count()) tr.config.norm_mode = norm_mode_from_name(norm);
      if (mb_opt->count()) tr.config.minibatch_size = minibatch;
      if (lr_opt->count()) tr.config.base_lr = base_lr;
      if (scale_opt->count()) tr.config.lr_scale = lr_scale == "on";
      if (gems_opt->count()) tr.config.gems_enabled = gems == "on";
      if (seed_opt->count()) tr.config.seed = seed;
      if (epochs_opt->count()) tr.config.epochs = epochs;
      validate_config(tr.config);
      return run_train(tr);
    }
    if (gc_cmd->parsed()) return run_gradcheck(gc);
    if (bench_cmd->parsed()) return run_bench(be);
    if (lam_cmd->parsed()) return run_lambda_report(lr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
