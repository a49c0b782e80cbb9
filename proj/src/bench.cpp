#include "agcn/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <new>

#include "agcn/data.hpp"
#include "agcn/trainer.hpp"

namespace agcn {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

BenchReport run_mode(NormMode mode, const NetworkSpec& spec, const TensorF& images,
                     const IntTensor& labels, int minibatch, int steps, std::uint64_t seed) {
  BenchReport r;
  r.mode = norm_mode_name(mode);
  r.minibatch = minibatch;
  r.steps = steps;
  TrainConfig config;
  config.norm_mode = mode;
  config.base_lr = 0.005;  // keep the measured loop numerically quiet
  config.lr_scale = false;
  config.seed = seed;
  try {
    Network<float> net(spec, mode, false, Rng(seed));
    const TensorF weights({spec.classes}, 1.0f);
    optim::SgdState<float> opt{static_cast<float>(effective_lr(config)),
                               static_cast<float>(config.momentum),
                               {}};
    const auto step = [&] {
      train_step(net, TensorF(images), IntTensor(labels), weights, config, opt);
    };
    for (int i = 0; i < 3; ++i) step();  // warmup, excluded from both meters

    std::size_t worst_transient = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < steps; ++i) {
      const std::size_t base = alloc::current_bytes();
      alloc::reset_peak();
      step();
      worst_transient = std::max(worst_transient, alloc::peak_bytes() - base);
    }
    const auto t1 = std::chrono::steady_clock::now();
    r.mean_step_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(steps);
    r.peak_transient_bytes = worst_transient;
  } catch (const std::bad_alloc&) {
    r.oom = true;
    r.error = "out of memory";
  }
  return r;
}

}  // namespace

std::string BenchPair::to_text() const {
  std::string out;
  for (const BenchReport* r : {&agc, &bn}) {
    out += "mode=" + r->mode;
    out += " minibatch=" + std::to_string(r->minibatch);
    out += " steps=" + std::to_string(r->steps);
    if (r->oom) {
      out += " result=oom";
    } else {
      out += " mean_step_ms=" + fmt(r->mean_step_ms);
      out += " peak_transient_bytes=" + std::to_string(r->peak_transient_bytes);
    }
    out += "\n";
  }
  out += "speedup_ratio=" + fmt(speedup_ratio) + "\n";
  out += "memory_ratio=" + fmt(memory_ratio) + "\n";
  return out;
}

std::string BenchPair::to_csv() const {
  std::string out =
      "minibatch,steps,agc_mean_step_ms,bn_mean_step_ms,agc_peak_transient_bytes,"
      "bn_peak_transient_bytes,agc_oom,bn_oom,speedup_ratio,memory_ratio\n";
  out += std::to_string(agc.minibatch) + "," + std::to_string(agc.steps);
  out += "," + fmt(agc.mean_step_ms) + "," + fmt(bn.mean_step_ms);
  out += "," + std::to_string(agc.peak_transient_bytes);
  out += "," + std::to_string(bn.peak_transient_bytes);
  out += std::string(",") + (agc.oom ? "1" : "0") + "," + (bn.oom ? "1" : "0");
  out += "," + fmt(speedup_ratio) + "," + fmt(memory_ratio) + "\n";
  return out;
}

BenchPair bench_pair(const NetworkSpec& spec, std::int64_t h, std::int64_t w, int minibatch,
                     int steps, std::uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("bench: steps must be >= 1");
  if (minibatch < 1) throw std::invalid_argument("bench: minibatch must be >= 1");
  spec.validate(h, w);

  // both modes get the same fixed batch; the loop measures step compute
  data::DatasetSpec dspec;
  dspec.h = static_cast<int>(h);
  dspec.w = static_cast<int>(w);
  dspec.classes = spec.classes;
  dspec.n_train = minibatch;
  dspec.n_val = 1;
  dspec.seed = seed;
  const auto generated = data::generate(dspec);
  const std::vector<data::Sample>& samples = generated.first;
  TensorF images({minibatch, 3, h, w});
  IntTensor labels({minibatch, h, w});
  for (int b = 0; b < minibatch; ++b) {
    const data::Sample& s = samples[static_cast<std::size_t>(b)];
    std::copy(s.image.data(), s.image.data() + 3 * h * w, images.data() + b * 3 * h * w);
    std::copy(s.labels.data(), s.labels.data() + h * w, labels.data() + b * h * w);
  }

  BenchPair pair;
  pair.agc = run_mode(NormMode::agc, spec, images, labels, minibatch, steps, seed);
  pair.bn = run_mode(NormMode::bn, spec, images, labels, minibatch, steps, seed);
  const bool comparable = !pair.agc.oom && !pair.bn.oom;
  pair.speedup_ratio =
      comparable ? pair.bn.mean_step_ms / pair.agc.mean_step_ms
                 : std::numeric_limits<double>::quiet_NaN();
  pair.memory_ratio = comparable ? static_cast<double>(pair.bn.peak_transient_bytes) /
                                       static_cast<double>(pair.agc.peak_transient_bytes)
                                 : std::numeric_limits<double>::quiet_NaN();
  return pair;
}

}  // namespace agcn
