#pragma once

#include <cstdint>
#include <string>

#include "agcn/network.hpp"

namespace agcn {

struct BenchReport {
  std::string mode;
  int minibatch = 0;
  int steps = 0;  // timed steps, warmup excluded
  double mean_step_ms = 0.0;
  std::size_t peak_transient_bytes = 0;  // worst per-step allocation growth
  bool oom = false;
  std::string error;
};

/// Paired AGC/BN measurement on identical data, seed and schedule. Ratios
/// are bn/agc, so values above 1 favor AGC.
struct BenchPair {
  BenchReport agc;
  BenchReport bn;
  double speedup_ratio = 0.0;
  double memory_ratio = 0.0;

  std::string to_text() const;      // key=value lines
  std::string to_csv() const;       // header line + one data row
};

/// Times forward+backward+update steps for both norm modes on the given
/// network shape at h x w inputs. steps counts timed steps (>= 1; the
/// defaults used by the benchmark command are 30); a few warmup steps run
/// first and are not measured. Running out of memory in either mode is
/// reported in that mode's slot, not thrown.
BenchPair bench_pair(const NetworkSpec& spec, std::int64_t h, std::int64_t w, int minibatch,
                     int steps, std::uint64_t seed);

}  // namespace agcn
