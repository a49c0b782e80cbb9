#include "agcn/gradcheck.hpp"

#include <algorithm>

#include "agcn/network.hpp"
#include "agcn/rng.hpp"

namespace agcn::gradcheck {

namespace {

Tensor<double> randt(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0,
                     double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps finite differences valid at the ReLU kink: no value closer to zero
// than the margin.
Tensor<double> randt_away_from_zero(Rng& rng, std::vector<std::int64_t> shape,
                                    double margin = 1e-2) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double mag = margin + rng.uniform(0.0, 1.0);
    t[i] = rng.below(2) == 0 ? mag : -mag;
  }
  return t;
}

// Keeps finite differences valid at pooling argmax switches: top two values
// of every 2x2 window stay separated.
Tensor<double> randt_pool_separated(Rng& rng, std::int64_t n, std::int64_t c, std::int64_t h,
                                    std::int64_t w, double gap = 1e-3) {
  for (;;) {
    Tensor<double> t = randt(rng, {n, c, h, w});
    bool ok = true;
    for (std::int64_t m = 0; m < n * c && ok; ++m) {
      for (std::int64_t py = 0; py < h / 2 && ok; ++py) {
        for (std::int64_t px = 0; px < w / 2 && ok; ++px) {
          double v[4];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              v[2 * dy + dx] = t[m * h * w + (2 * py + dy) * w + 2 * px + dx];
          std::sort(v, v + 4);
          ok = v[3] - v[2] >= gap;
        }
      }
    }
    if (ok) return t;
  }
}

double conv_suite(Rng rng, int fixtures) {
  double worst = 0.0;
  for (int f = 0; f < fixtures; ++f) {
    Rng r = rng.split(static_cast<std::uint64_t>(f));
    ConvGeom g;
    g.n = 1 + static_cast<std::int64_t>(r.below(2));
    g.in_ch = 1 + static_cast<std::int64_t>(r.below(3));
    g.out_ch = 1 + static_cast<std::int64_t>(r.below(3));
    g.h = 3 + static_cast<std::int64_t>(r.below(4));
    g.w = 3 + static_cast<std::int64_t>(r.below(4));
    const bool same = f % 2 == 0;
    g.pad = same ? Padding::same : Padding::valid;
    g.kh = same ? 3 : 2;
    g.kw = same ? (f % 4 == 0 ? 1 : 3) : 3;
    if (g.pad == Padding::valid && (g.kh > g.h || g.kw > g.w)) g.kh = g.kw = 2;

    auto x = randt(r, {g.n, g.in_ch, g.h, g.w});
    auto w = randt(r, {g.out_ch, g.in_ch, g.kh, g.kw});
    auto proj = randt(r, {g.n, g.out_ch, g.out_h(), g.out_w()});
    const auto pad = g.pad;
    worst = std::max(
        worst, max_rel_error({x, w}, [&proj, pad](Tape<double>& t, const std::vector<Val>& in) {
          const Val y = ops::conv2d(t, in[0], in[1], pad);
          return ops::sum(t, ops::mul(t, y, t.leaf(proj)));
        }));
  }
  return worst;
}

double agc_suite(Rng rng, int fixtures) {
  double worst = 0.0;
  for (int f = 0; f < fixtures; ++f) {
    Rng r = rng.split(static_cast<std::uint64_t>(f));
    const std::int64_t n = 1 + static_cast<std::int64_t>(r.below(3));
    const std::int64_t c = 1 + static_cast<std::int64_t>(r.below(4));
    const std::int64_t h = 2 + static_cast<std::int64_t>(r.below(5));
    const std::int64_t w = 2 + static_cast<std::int64_t>(r.below(5));
    auto z = randt(r, {n, c, h, w}, -2.0, 2.0);
    auto lambda = randt(r, {c}, -0.5, 2.0);
    auto gamma = randt(r, {c}, 0.2, 2.0);
    auto beta = randt(r, {c}, -1.0, 1.0);
    auto proj = randt(r, {n, c, h, w});
    worst = std::max(worst,
                     max_rel_error({z, lambda, gamma, beta},
                                   [&proj](Tape<double>& t, const std::vector<Val>& in) {
                                     const Val y = ops::agc(t, in[0], in[1], in[2], in[3]);
                                     return ops::sum(t, ops::mul(t, y, t.leaf(proj)));
                                   }));
  }
  return worst;
}

double batchnorm_suite(Rng rng, int fixtures) {
  double worst = 0.0;
  for (int f = 0; f < fixtures; ++f) {
    Rng r = rng.split(static_cast<std::uint64_t>(f));
    const std::int64_t n = 1 + static_cast<std::int64_t>(r.below(3));
    const std::int64_t c = 1 + static_cast<std::int64_t>(r.below(4));
    const std::int64_t h = 2 + static_cast<std::int64_t>(r.below(5));
    const std::int64_t w = 2 + static_cast<std::int64_t>(r.below(5));
    auto z = randt(r, {n, c, h, w}, -2.0, 2.0);
    auto scale = randt(r, {c}, 0.2, 2.0);
    auto shift = randt(r, {c}, -1.0, 1.0);
    auto proj = randt(r, {n, c, h, w});
    auto rm = std::make_shared<Tensor<double>>(std::vector<std::int64_t>{c});
    auto rv = std::make_shared<Tensor<double>>(std::vector<std::int64_t>{c}, 1.0);
    worst = std::max(
        worst,
        max_rel_error({z, scale, shift}, [&proj, rm, rv](Tape<double>& t,
                                                         const std::vector<Val>& in) {
          const Val y = ops::batchnorm_train(t, in[0], in[1], in[2], *rm, *rv, 1e-5, 0.9);
          return ops::sum(t, ops::mul(t, y, t.leaf(proj)));
        }));
  }
  return worst;
}

double relu_suite(Rng rng, int fixtures) {
  double worst = 0.0;
  for (int f = 0; f < fixtures; ++f) {
    Rng r = rng.split(static_cast<std::uint64_t>(f));
    const std::int64_t n = 1 + static_cast<std::int64_t>(r.below(2));
    const std::int64_t c = 1 + static_cast<std::int64_t>(r.below(3));
    auto z = randt_away_from_zero(r, {n, c, 4, 5});
    auto proj = randt(r, {n, c, 4, 5});
    worst = std::max(worst,
                     max_rel_error({z}, [&proj](Tape<double>& t, const std::vector<Val>& in) {
                       const Val y = ops::relu(t, in[0]);
                       return ops::sum(t, ops::mul(t, y, t.leaf(proj)));
                     }));
  }
  return worst;
}

double pool_suite(Rng rng, int fixtures) {
  double worst = 0.0;
  for (int f = 0; f < fixtures; ++f) {
    Rng r = rng.split(static_cast<std::uint64_t>(f));
    const std::int64_t n = 1 + static_cast<std::int64_t>(r.below(2));
    const std::int64_t c = 1 + static_cast<std::int64_t>(r.below(3));
    const std::int64_t h = 4 + 2 * static_cast<std::int64_t>(r.below(2));
    const std::int64_t w = 4 + 2 * static_cast<std::int64_t>(r.below(2));
    auto z = randt_pool_separated(r, n, c, h, w);
    auto proj = randt(r, {n, c, h, w});
    worst = std::max(worst,
                     max_rel_error({z}, [&proj](Tape<double>& t, const std::vector<Val>& in) {
                       const auto pooled = ops::maxpool2x2(t, in[0]);
                       const Val up = ops::unpool2x2(t, pooled.y, pooled.indices);
                       return ops::sum(t, ops::mul(t, up, t.leaf(proj)));
                     }));
  }
  return worst;
}

double xent_suite(Rng rng, int fixtures) {
  double worst = 0.0;
  for (int f = 0; f < fixtures; ++f) {
    Rng r = rng.split(static_cast<std::uint64_t>(f));
    const std::int64_t n = 1 + static_cast<std::int64_t>(r.below(2));
    const std::int64_t k = 2 + static_cast<std::int64_t>(r.below(4));
    const std::int64_t h = 2 + static_cast<std::int64_t>(r.below(4));
    const std::int64_t w = 2 + static_cast<std::int64_t>(r.below(4));
    auto logits = randt(r, {n, k, h, w}, -2.0, 2.0);
    IntTensor labels({n, h, w});
    bool any_valid = false;
    for (std::int64_t i = 0; i < labels.numel(); ++i) {
      const auto draw = r.below(static_cast<std::uint64_t>(k) + 1);
      labels[i] = static_cast<std::int32_t>(draw) - 1;  // -1 = ignored pixel
      any_valid |= labels[i] >= 0;
    }
    if (!any_valid) labels[0] = 0;
    Tensor<double> wts({k});
    for (std::int64_t i = 0; i < k; ++i) wts[i] = r.uniform(0.5, 1.5);
    const double mean_shift =
        [&] {
          double s = 0;
          for (std::int64_t i = 0; i < k; ++i) s += wts[i];
          return s / static_cast<double>(k);
        }();
    for (std::int64_t i = 0; i < k; ++i) wts[i] /= mean_shift;  // keep the mean at 1

    worst = std::max(
        worst, max_rel_error({logits}, [&labels, &wts](Tape<double>& t,
                                                       const std::vector<Val>& in) {
          return ops::weighted_softmax_xent(t, in[0], labels, wts);
        }));
  }
  return worst;
}

double tensor_ops_suite(Rng rng, int fixtures) {
  double worst = 0.0;
  for (int f = 0; f < fixtures; ++f) {
    Rng r = rng.split(static_cast<std::uint64_t>(f));
    const std::int64_t n = 1 + static_cast<std::int64_t>(r.below(2));
    const std::int64_t c = 1 + static_cast<std::int64_t>(r.below(3));
    const std::int64_t h = 2 + static_cast<std::int64_t>(r.below(3));
    const std::int64_t w = 2 + static_cast<std::int64_t>(r.below(3));
    auto x = randt(r, {n, c, h, w});
    auto y = randt(r, {n, c, h, w});
    auto proj = randt(r, {n, c, 1, 1});
    worst = std::max(
        worst, max_rel_error({x, y}, [&proj](Tape<double>& t, const std::vector<Val>& in) {
          const Val a = ops::add(t, in[0], in[1]);
          const Val b = ops::mul(t, a, in[0]);
          const Val m = ops::reduce_mean(t, b, {2, 3});
          const Val s1 = ops::sum(t, ops::mul(t, m, t.leaf(proj)));
          const Val s2 = ops::sum(t, ops::scale(t, ops::sub(t, in[0], in[1]), 0.37));
          return ops::add(t, s1, s2);
        }));
  }
  return worst;
}

// Whole-network check: a 2-level encoder/decoder on an 8x8 input, every
// trainable parameter perturbed through the real forward path. Looser
// tolerance than single ops since errors compound across the op chain.
double e2e_suite(NormMode mode, const Rng& root) {
  const NetworkSpec spec = NetworkSpec::encoder_decoder(2, 3, {2, 3});
  Network<double> net(spec, mode, false, root.split(0));
  Rng r = root.split(1);
  Tensor<double> images({2, 2, 8, 8});
  for (std::int64_t i = 0; i < images.numel(); ++i) images[i] = r.uniform(0.0, 1.0);
  IntTensor labels({2, 8, 8});
  for (std::int64_t i = 0; i < labels.numel(); ++i) {
    labels[i] = static_cast<std::int32_t>(r.below(3));
  }
  const Tensor<double> weights({3}, std::vector<double>{1.1, 0.8, 1.1});

  const auto loss_value = [&net, &images, &labels, &weights]() {
    Tape<double> tape;
    auto b = net.forward(tape, Tensor<double>(images), true);
    return tape.value(ops::weighted_softmax_xent(tape, b.logits, labels, weights))[0];
  };

  std::vector<std::pair<std::string, Tensor<double>>> analytic;
  {
    Tape<double> tape;
    auto b = net.forward(tape, Tensor<double>(images), true);
    tape.backward(ops::weighted_softmax_xent(tape, b.logits, labels, weights));
    for (const auto& [name, v] : b.trainable) analytic.emplace_back(name, tape.grad(v));
  }
  for (const auto& [name, g] : analytic) {
    double mag = 0.0;
    for (std::int64_t j = 0; j < g.numel(); ++j) mag = std::max(mag, std::abs(g[j]));
    if (mag == 0.0) {
      // a dead parameter would make the comparison below vacuous
      throw std::logic_error("e2e gradcheck fixture leaves '" + name + "' without gradient");
    }
  }

  const double step = 1e-5;
  double max_rel = 0.0;
  for (const auto& [name, g] : analytic) {
    Tensor<double>& p = net.param(name);
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      const double orig = p[j];
      p[j] = orig + step;
      const double lp = loss_value();
      p[j] = orig - step;
      const double lm = loss_value();
      p[j] = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double diff = std::abs(numeric - g[j]);
      if (diff <= kAbsFloor) continue;
      const double denom = std::max(std::abs(numeric), std::abs(g[j]));
      max_rel = std::max(max_rel, diff / std::max(denom, 1e-300));
    }
  }
  return max_rel;
}

}  // namespace

std::vector<SuiteResult> run_suites(std::uint64_t seed, int fixtures_per_suite) {
  Rng root(seed);
  std::vector<SuiteResult> out;
  const auto run = [&](const char* name, int fixtures, double err, double tol = 1e-4) {
    out.push_back(SuiteResult{name, fixtures, err, tol});
  };
  run("conv2d", fixtures_per_suite, conv_suite(root.split(1), fixtures_per_suite));
  run("agc", fixtures_per_suite, agc_suite(root.split(2), fixtures_per_suite));
  run("batchnorm", fixtures_per_suite, batchnorm_suite(root.split(3), fixtures_per_suite));
  run("relu", fixtures_per_suite, relu_suite(root.split(4), fixtures_per_suite));
  run("maxpool_unpool", fixtures_per_suite, pool_suite(root.split(5), fixtures_per_suite));
  run("softmax_xent", fixtures_per_suite, xent_suite(root.split(6), fixtures_per_suite));
  run("tensor_ops", fixtures_per_suite, tensor_ops_suite(root.split(7), fixtures_per_suite));
  run("e2e_agc", 1, e2e_suite(NormMode::agc, root.split(8)), 1e-3);
  run("e2e_bn", 1, e2e_suite(NormMode::bn, root.split(9)), 1e-3);
  run("e2e_none", 1, e2e_suite(NormMode::none, root.split(10)), 1e-3);
  return out;
}

}  // namespace agcn::gradcheck
