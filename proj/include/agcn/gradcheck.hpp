#pragma once

// Central finite-difference oracle for the analytic gradients. Independent
// of the backward path by construction: it only re-runs forwards.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "agcn/ops.hpp"
#include "agcn/tape.hpp"
#include "agcn/tensor.hpp"

namespace agcn::gradcheck {

// Perturbations below this are considered noise, not a gradient mismatch.
inline constexpr double kAbsFloor = 1e-7;

/// Worst relative error between the tape gradients and central differences,
/// taken over every element of every input. `build` must be a deterministic
/// function of the input tensors: (Tape<double>&, const std::vector<Val>&)
/// -> Val scalar loss.
template <typename BuildFn>
double max_rel_error(const std::vector<Tensor<double>>& inputs, const BuildFn& build,
                     double step = 1e-5) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Val> vs;
    vs.reserve(inputs.size());
    for (const auto& t : inputs) vs.push_back(tape.leaf(t));
    const Val loss = build(tape, vs);
    tape.backward(loss);
    for (const Val v : vs) analytic.push_back(tape.grad(v));
  }

  auto eval = [&build](const std::vector<Tensor<double>>& in) {
    Tape<double> tape;
    std::vector<Val> vs;
    vs.reserve(in.size());
    for (const auto& t : in) vs.push_back(tape.leaf(t));
    return tape.value(build(tape, vs))[0];
  };

  std::vector<Tensor<double>> work = inputs;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < work.size(); ++i) {
    for (std::int64_t j = 0; j < work[i].numel(); ++j) {
      const double orig = work[i][j];
      work[i][j] = orig + step;
      const double lp = eval(work);
      work[i][j] = orig - step;
      const double lm = eval(work);
      work[i][j] = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double diff = std::abs(numeric - analytic[i][j]);
      if (diff <= kAbsFloor) continue;
      const double denom = std::max(std::abs(numeric), std::abs(analytic[i][j]));
      max_rel = std::max(max_rel, diff / std::max(denom, 1e-300));
    }
  }
  return max_rel;
}

struct SuiteResult {
  std::string name;
  int fixtures = 0;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return max_rel_err < tolerance; }
};

/// Named finite-difference suites over random fixtures; shared by the unit
/// tests, the acceptance gate, and the gradcheck CLI subcommand.
std::vector<SuiteResult> run_suites(std::uint64_t seed, int fixtures_per_suite);

}  // namespace agcn::gradcheck
