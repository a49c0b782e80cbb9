#include <cmath>
#include <cstring>
#include <vector>

#include "agcn/kernels.hpp"
#include "agcn/rng.hpp"
#include "doctest.h"

#ifdef _OPENMP
#include <omp.h>
#endif

using agcn::ConvGeom;
using agcn::Padding;
using agcn::Rng;
namespace ks = agcn::kernels::serial;
namespace ko = agcn::kernels::omp;

namespace {

template <typename T>
std::vector<T> randu(Rng& rng, std::size_t n, T lo = T(-1), T hi = T(1)) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(double(lo), double(hi)));
  return v;
}

template <typename T>
bool same_bits(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("conv2d_forward valid-mode hand example") {
  std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> w = {1, 0, 0, 1};
  ConvGeom g;
  g.h = g.w = 3;
  g.kh = g.kw = 2;
  g.pad = Padding::valid;
  std::vector<double> y(4);
  ks::conv2d_forward(x.data(), w.data(), y.data(), g);
  CHECK(y == std::vector<double>{6, 8, 12, 14});
}

TEST_CASE("conv2d_forward 1x1 unit kernel is identity, zero kernel is zero") {
  Rng rng(7);
  const auto x = randu<float>(rng, 2 * 3 * 4 * 4);
  ConvGeom g;
  g.n = 2, g.in_ch = 3, g.out_ch = 3, g.h = g.w = 4, g.kh = g.kw = 1;
  // unit 1x1 kernel per channel = identity map on channels
  std::vector<float> w(3 * 3, 0.0f);
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0f;
  std::vector<float> y(x.size());
  ks::conv2d_forward(x.data(), w.data(), y.data(), g);
  CHECK(same_bits(x, y));

  std::fill(w.begin(), w.end(), 0.0f);
  ks::conv2d_forward(x.data(), w.data(), y.data(), g);
  CHECK(std::all_of(y.begin(), y.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("conv2d geometry validation") {
  ConvGeom g;
  g.kh = 2, g.kw = 2;  // same padding wants odd kernels
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g.pad = Padding::valid;
  g.h = g.w = 1;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("agc_forward hand example and identity") {
  std::vector<double> z = {1, 2, 3, 4};
  std::vector<double> lambda = {1}, gamma = {2}, beta = {0.5};
  std::vector<double> y(4), mu(1);
  ks::agc_forward(z.data(), lambda.data(), gamma.data(), beta.data(), y.data(), mu.data(), 1, 1,
                  4);
  CHECK(mu[0] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(y == std::vector<double>{-2.5, -0.5, 1.5, 3.5});

  lambda[0] = 0, gamma[0] = 1, beta[0] = 0;
  ks::agc_forward(z.data(), lambda.data(), gamma.data(), beta.data(), y.data(), mu.data(), 1, 1,
                  4);
  CHECK(same_bits(y, z));  // (z - 0*mu)*1 + 0 stays exact
}

TEST_CASE_TEMPLATE("agc_forward lambda=1 beta=0 zeroes the per-sample mean", T, float, double) {
  Rng rng(11);
  const std::int64_t n = 3, c = 2, map = 64 * 64;
  const auto z = randu<T>(rng, n * c * map, T(-3), T(3));
  std::vector<T> lambda(c, T(1)), gamma(c), beta(c, T(0));
  gamma[0] = T(0.7), gamma[1] = T(1.9);
  std::vector<T> y(z.size()), mu(n * c);
  ks::agc_forward(z.data(), lambda.data(), gamma.data(), beta.data(), y.data(), mu.data(), n, c,
                  map);
  for (std::int64_t sc = 0; sc < n * c; ++sc) {
    double acc = 0;
    for (std::int64_t i = 0; i < map; ++i) acc += double(y[sc * map + i]);
    CHECK(std::abs(acc / map) <= (sizeof(T) == 4 ? 1e-6 : 1e-12));
  }
}

TEST_CASE("agc_forward is per-sample: permuting samples permutes outputs") {
  Rng rng(13);
  const std::int64_t n = 4, c = 3, map = 25;
  const auto z = randu<float>(rng, n * c * map);
  std::vector<float> lambda = {0.3f, 1.0f, 1.7f}, gamma = {1.0f, 0.5f, 2.0f},
                     beta = {0.0f, 0.1f, -0.2f};
  std::vector<float> y(z.size()), mu(n * c);
  ks::agc_forward(z.data(), lambda.data(), gamma.data(), beta.data(), y.data(), mu.data(), n, c,
                  map);

  const std::int64_t perm[4] = {2, 0, 3, 1};
  std::vector<float> zp(z.size()), yp(z.size()), mup(n * c);
  for (std::int64_t s = 0; s < n; ++s) {
    std::memcpy(zp.data() + s * c * map, z.data() + perm[s] * c * map,
                sizeof(float) * c * map);
  }
  ks::agc_forward(zp.data(), lambda.data(), gamma.data(), beta.data(), yp.data(), mup.data(), n,
                  c, map);
  for (std::int64_t s = 0; s < n; ++s) {
    CHECK(std::memcmp(yp.data() + s * c * map, y.data() + perm[s] * c * map,
                      sizeof(float) * c * map) == 0);
  }
}

TEST_CASE("agc_backward hand example") {
  std::vector<double> z = {1, 2, 3, 4};
  std::vector<double> lambda = {1}, gamma = {1}, beta = {0};
  std::vector<double> y(4), mu(1);
  ks::agc_forward(z.data(), lambda.data(), gamma.data(), beta.data(), y.data(), mu.data(), 1, 1,
                  4);
  std::vector<double> gy = {1, 0, 0, 0};
  std::vector<double> gz(4), gl(1), gg(1), gb(1);
  ks::agc_backward(z.data(), lambda.data(), gamma.data(), mu.data(), gy.data(), gz.data(),
                   gl.data(), gg.data(), gb.data(), 1, 1, 4);
  CHECK(gz[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(gz[1] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(gz[2] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(gz[3] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(gl[0] == doctest::Approx(-2.5).epsilon(1e-12));
  CHECK(gg[0] == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK(gb[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("agc_backward zero upstream gives zero grads, lambda=0 passes gamma*gy") {
  Rng rng(17);
  const std::int64_t n = 2, c = 2, map = 9;
  const auto z = randu<double>(rng, n * c * map);
  std::vector<double> lambda = {0.0, 0.0}, gamma = {2.0, 0.5}, beta = {0, 0};
  std::vector<double> y(z.size()), mu(n * c);
  ks::agc_forward(z.data(), lambda.data(), gamma.data(), beta.data(), y.data(), mu.data(), n, c,
                  map);

  std::vector<double> gy(z.size(), 0.0), gz(z.size()), gl(c), gg(c), gb(c);
  ks::agc_backward(z.data(), lambda.data(), gamma.data(), mu.data(), gy.data(), gz.data(),
                   gl.data(), gg.data(), gb.data(), n, c, map);
  CHECK(std::all_of(gz.begin(), gz.end(), [](double v) { return v == 0.0; }));
  CHECK((gl[0] == 0.0 && gg[0] == 0.0 && gb[0] == 0.0));

  const auto gy2 = randu<double>(rng, z.size());
  ks::agc_backward(z.data(), lambda.data(), gamma.data(), mu.data(), gy2.data(), gz.data(),
                   gl.data(), gg.data(), gb.data(), n, c, map);
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t i = 0; i < map; ++i) {
        const auto at = (s * c + ch) * map + i;
        CHECK(gz[at] == gamma[ch] * gy2[at]);  // exact: lambda term vanishes
      }
    }
  }
}

TEST_CASE("bn_train_forward hand example and constant input") {
  std::vector<double> z = {1, 3};  // two samples, one channel, 1x1 maps
  std::vector<double> scale = {2}, shift = {1};
  std::vector<double> y(2), xhat(2), mean(1), var(1);
  ks::bn_train_forward(z.data(), scale.data(), shift.data(), 0.0, y.data(), xhat.data(),
                       mean.data(), var.data(), 2, 1, 1);
  CHECK(mean[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(var[0] == doctest::Approx(1.0).epsilon(1e-15));  // biased variance
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(3.0).epsilon(1e-12));

  std::vector<double> zc(2 * 1 * 4, 0.7);
  std::vector<double> yc(zc.size()), xc(zc.size());
  ks::bn_train_forward(zc.data(), scale.data(), shift.data(), 1e-5, yc.data(), xc.data(),
                       mean.data(), var.data(), 2, 1, 4);
  for (double v : yc) CHECK(v == doctest::Approx(shift[0]).epsilon(1e-9));
}

TEST_CASE("bn_infer_forward uses running stats") {
  std::vector<float> z = {1, 2, 3, 4};
  std::vector<float> scale = {1}, shift = {0}, rm = {2}, rv = {4};
  std::vector<float> y(4);
  ks::bn_infer_forward(z.data(), scale.data(), shift.data(), rm.data(), rv.data(), 0.0f,
                       y.data(), 1, 1, 4);
  CHECK(y[0] == doctest::Approx(-0.5));
  CHECK(y[3] == doctest::Approx(1.0));
}

TEST_CASE("relu forward and backward conventions") {
  std::vector<float> z = {-1, 0, 2};
  std::vector<float> y(3);
  ks::relu_forward(z.data(), y.data(), 3);
  CHECK(y == std::vector<float>{0, 0, 2});
  std::vector<float> gy = {5, 5, 5}, gz(3);
  ks::relu_backward(z.data(), gy.data(), gz.data(), 3);
  CHECK(gz == std::vector<float>{0, 0, 5});  // gradient at exactly 0 is 0
}

TEST_CASE("maxpool2x2 picks max, stores offset, unpool scatters back") {
  std::vector<double> z = {1, 2, 3, 4};
  std::vector<double> y(1);
  std::vector<std::int32_t> idx(1);
  ks::maxpool2x2_forward(z.data(), y.data(), idx.data(), 1, 1, 2, 2);
  CHECK(y[0] == 4.0);
  CHECK(idx[0] == 3);

  std::vector<double> up(4, -1.0);
  ks::unpool2x2_scatter(y.data(), idx.data(), up.data(), 1, 1, 2, 2);
  CHECK(up == std::vector<double>{0, 0, 0, 4});
}

TEST_CASE("maxpool2x2 ties go to the lowest row-major offset") {
  std::vector<float> z(4, 1.5f);
  std::vector<float> y(1);
  std::vector<std::int32_t> idx(1);
  ks::maxpool2x2_forward(z.data(), y.data(), idx.data(), 1, 1, 2, 2);
  CHECK(idx[0] == 0);
}

TEST_CASE("maxpool2x2 rejects odd extents, unpool rejects corrupted indices") {
  std::vector<float> z(9), y(4);
  std::vector<std::int32_t> idx(4);
  CHECK_THROWS_AS(ks::maxpool2x2_forward(z.data(), y.data(), idx.data(), 1, 1, 3, 3),
                  std::invalid_argument);

  std::vector<float> v = {1.0f}, out(4);
  std::int32_t bad = 7;  // outside the 2x2 window of pooled cell (0,0)... and the map
  CHECK_THROWS_AS(ks::unpool2x2_scatter(v.data(), &bad, out.data(), 1, 1, 2, 2),
                  std::invalid_argument);
  std::vector<float> gfull(16);
  std::vector<std::int32_t> idx4 = {2, 3, 8, 11};  // cell (0,0) points into its neighbour
  std::vector<float> gp(4);
  CHECK_THROWS_AS(ks::unpool2x2_gather(gfull.data(), idx4.data(), gp.data(), 1, 1, 4, 4),
                  std::invalid_argument);
}

TEST_CASE("unpool(maxpool(z)) keeps exactly one value per window") {
  Rng rng(23);
  const std::int64_t n = 2, c = 3, h = 6, w = 8;
  const auto z = randu<double>(rng, n * c * h * w);
  std::vector<double> y(n * c * (h / 2) * (w / 2));
  std::vector<std::int32_t> idx(y.size());
  ks::maxpool2x2_forward(z.data(), y.data(), idx.data(), n, c, h, w);
  std::vector<double> up(z.size());
  ks::unpool2x2_scatter(y.data(), idx.data(), up.data(), n, c, h, w);
  for (std::int64_t m = 0; m < n * c; ++m) {
    for (std::int64_t py = 0; py < h / 2; ++py) {
      for (std::int64_t px = 0; px < w / 2; ++px) {
        int nonzero = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const double v = up[m * h * w + (2 * py + dy) * w + 2 * px + dx];
            if (v != 0.0) {
              ++nonzero;
              CHECK(v == y[m * (h / 2) * (w / 2) + py * (w / 2) + px]);
            }
          }
        CHECK(nonzero <= 1);  // a zero max leaves the window all-zero
      }
    }
  }
}

TEST_CASE("softmax_xent flat logits give ln 2 and zero-sum gradient over classes") {
  std::vector<double> logits = {0, 0};  // one pixel, K=2
  std::vector<std::int32_t> labels = {0};
  std::vector<double> wts = {1, 1};
  double loss = 0;
  std::vector<double> gl(2);
  ks::softmax_xent(logits.data(), labels.data(), wts.data(), 1, 2, 1, -1, 1, &loss, gl.data());
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(gl[0] + gl[1] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(gl[0] == doctest::Approx(-0.5).epsilon(1e-12));

  // confident correct prediction drives the loss toward zero
  logits = {50, -50};
  ks::softmax_xent(logits.data(), labels.data(), wts.data(), 1, 2, 1, -1, 1, &loss, gl.data());
  CHECK(loss < 1e-12);
}

TEST_CASE("softmax_xent ignores the sentinel label and weights classes") {
  const std::int64_t n = 1, k = 3, map = 4;
  Rng rng(29);
  const auto logits = randu<double>(rng, n * k * map, -2.0, 2.0);
  std::vector<std::int32_t> labels = {0, -1, 2, -1};
  std::vector<double> wts = {0.5, 1.0, 1.5};
  double loss = 0;
  std::vector<double> gl(logits.size());
  ks::softmax_xent(logits.data(), labels.data(), wts.data(), n, k, map, -1, 2, &loss, gl.data());
  for (std::int64_t j = 0; j < k; ++j) {
    CHECK(gl[j * map + 1] == 0.0);
    CHECK(gl[j * map + 3] == 0.0);
  }
  // hand recompute of the two live pixels
  double expect = 0;
  for (std::int64_t pix : {0, 2}) {
    double m = -1e300, sum = 0;
    for (std::int64_t j = 0; j < k; ++j) m = std::max(m, logits[j * map + pix]);
    for (std::int64_t j = 0; j < k; ++j) sum += std::exp(logits[j * map + pix] - m);
    const double lse = m + std::log(sum);
    expect += wts[labels[pix]] * (lse - logits[labels[pix] * map + pix]);
  }
  CHECK(loss == doctest::Approx(expect / 2).epsilon(1e-12));
}

TEST_CASE("count_active_per_channel counts strictly positive entries") {
  std::vector<float> y = {0.0f, 1.0f, -1.0f, 2.0f,   // sample 0, channel 0
                          0.0f, 0.0f, 0.0f, 0.0f};   // sample 0, channel 1
  std::vector<std::int64_t> counts(2);
  ks::count_active_per_channel(y.data(), 1, 2, 4, counts.data());
  CHECK(counts[0] == 2);
  CHECK(counts[1] == 0);
}

TEST_CASE_TEMPLATE("serial and openmp backends agree bitwise", T, float, double) {
#ifdef _OPENMP
  omp_set_num_threads(3);  // oversubscribe so partitioning is actually exercised
#endif
  Rng rng(101);
  for (int trial = 0; trial < 8; ++trial) {
    ConvGeom g;
    g.n = 1 + std::int64_t(rng.below(3));
    g.in_ch = 1 + std::int64_t(rng.below(4));
    g.out_ch = 1 + std::int64_t(rng.below(4));
    g.h = 4 + 2 * std::int64_t(rng.below(3));
    g.w = 4 + 2 * std::int64_t(rng.below(3));
    g.kh = g.kw = 3;
    g.pad = trial % 2 == 0 ? Padding::same : Padding::valid;

    const auto x = randu<T>(rng, g.n * g.in_ch * g.h * g.w);
    const auto w = randu<T>(rng, g.out_ch * g.in_ch * g.kh * g.kw);
    const std::int64_t ysz = g.n * g.out_ch * g.out_h() * g.out_w();
    std::vector<T> y1(ysz), y2(ysz);
    ks::conv2d_forward(x.data(), w.data(), y1.data(), g);
    ko::conv2d_forward(x.data(), w.data(), y2.data(), g);
    CHECK(same_bits(y1, y2));

    const auto gy = randu<T>(rng, ysz);
    std::vector<T> gx1(x.size()), gx2(x.size());
    ks::conv2d_backward_input(gy.data(), w.data(), gx1.data(), g);
    ko::conv2d_backward_input(gy.data(), w.data(), gx2.data(), g);
    CHECK(same_bits(gx1, gx2));

    std::vector<T> gw1(w.size()), gw2(w.size());
    ks::conv2d_backward_weights(x.data(), gy.data(), gw1.data(), g);
    ko::conv2d_backward_weights(x.data(), gy.data(), gw2.data(), g);
    CHECK(same_bits(gw1, gw2));

    const std::int64_t n = g.n, c = g.out_ch, map = g.out_h() * g.out_w();
    const auto z = randu<T>(rng, n * c * map);
    const auto lambda = randu<T>(rng, c), gamma = randu<T>(rng, c), beta = randu<T>(rng, c);
    std::vector<T> a1(z.size()), a2(z.size()), mu1(n * c), mu2(n * c);
    ks::agc_forward(z.data(), lambda.data(), gamma.data(), beta.data(), a1.data(), mu1.data(), n,
                    c, map);
    ko::agc_forward(z.data(), lambda.data(), gamma.data(), beta.data(), a2.data(), mu2.data(), n,
                    c, map);
    CHECK(same_bits(a1, a2));
    CHECK(same_bits(mu1, mu2));

    std::vector<T> gz1(z.size()), gz2(z.size()), gl1(c), gl2(c), gg1(c), gg2(c), gb1(c), gb2(c);
    ks::agc_backward(z.data(), lambda.data(), gamma.data(), mu1.data(), gy.data(), gz1.data(),
                     gl1.data(), gg1.data(), gb1.data(), n, c, map);
    ko::agc_backward(z.data(), lambda.data(), gamma.data(), mu2.data(), gy.data(), gz2.data(),
                     gl2.data(), gg2.data(), gb2.data(), n, c, map);
    CHECK(same_bits(gz1, gz2));
    CHECK(same_bits(gl1, gl2));
    CHECK(same_bits(gg1, gg2));
    CHECK(same_bits(gb1, gb2));

    std::vector<T> b1(z.size()), b2(z.size()), xh1(z.size()), xh2(z.size()), m1(c), m2(c), v1(c),
        v2(c);
    ks::bn_train_forward(z.data(), gamma.data(), beta.data(), T(1e-5), b1.data(), xh1.data(),
                         m1.data(), v1.data(), n, c, map);
    ko::bn_train_forward(z.data(), gamma.data(), beta.data(), T(1e-5), b2.data(), xh2.data(),
                         m2.data(), v2.data(), n, c, map);
    CHECK(same_bits(b1, b2));
    CHECK(same_bits(xh1, xh2));

    std::vector<T> c1(z.size()), c2(z.size()), gs1(c), gs2(c), gh1(c), gh2(c);
    ks::bn_train_backward(gy.data(), xh1.data(), gamma.data(), v1.data(), T(1e-5), c1.data(),
                          gs1.data(), gh1.data(), n, c, map);
    ko::bn_train_backward(gy.data(), xh2.data(), gamma.data(), v2.data(), T(1e-5), c2.data(),
                          gs2.data(), gh2.data(), n, c, map);
    CHECK(same_bits(c1, c2));
    CHECK(same_bits(gs1, gs2));
    CHECK(same_bits(gh1, gh2));

    std::vector<T> r1(z.size()), r2(z.size());
    ks::relu_forward(z.data(), r1.data(), std::int64_t(z.size()));
    ko::relu_forward(z.data(), r2.data(), std::int64_t(z.size()));
    CHECK(same_bits(r1, r2));

    const std::int64_t ph = g.h / 2, pw = g.w / 2;
    std::vector<T> p1(g.n * g.in_ch * ph * pw), p2(p1.size());
    std::vector<std::int32_t> i1(p1.size()), i2(p1.size());
    ks::maxpool2x2_forward(x.data(), p1.data(), i1.data(), g.n, g.in_ch, g.h, g.w);
    ko::maxpool2x2_forward(x.data(), p2.data(), i2.data(), g.n, g.in_ch, g.h, g.w);
    CHECK(same_bits(p1, p2));
    CHECK(i1 == i2);

    std::vector<T> u1(x.size()), u2(x.size());
    ks::unpool2x2_scatter(p1.data(), i1.data(), u1.data(), g.n, g.in_ch, g.h, g.w);
    ko::unpool2x2_scatter(p1.data(), i1.data(), u2.data(), g.n, g.in_ch, g.h, g.w);
    CHECK(same_bits(u1, u2));

    std::vector<T> q1(p1.size()), q2(p1.size());
    ks::unpool2x2_gather(x.data(), i1.data(), q1.data(), g.n, g.in_ch, g.h, g.w);
    ko::unpool2x2_gather(x.data(), i1.data(), q2.data(), g.n, g.in_ch, g.h, g.w);
    CHECK(same_bits(q1, q2));

    const std::int64_t kcls = 1 + std::int64_t(rng.below(4));
    const std::int64_t pix = g.h * g.w;
    const auto logits = randu<T>(rng, g.n * kcls * pix, T(-4), T(4));
    std::vector<std::int32_t> labels(g.n * pix);
    std::int64_t valid = 0;
    for (auto& lb : labels) {
      lb = std::int32_t(rng.below(std::uint64_t(kcls) + 1)) - 1;  // -1 is the ignore sentinel
      valid += lb >= 0 ? 1 : 0;
    }
    if (valid == 0) {
      labels[0] = 0;
      valid = 1;
    }
    const auto cw = randu<T>(rng, kcls, T(0.5), T(1.5));
    T l1 = T(0), l2 = T(0);
    std::vector<T> gl1v(logits.size()), gl2v(logits.size());
    ks::softmax_xent(logits.data(), labels.data(), cw.data(), g.n, kcls, pix, -1, valid, &l1,
                     gl1v.data());
    ko::softmax_xent(logits.data(), labels.data(), cw.data(), g.n, kcls, pix, -1, valid, &l2,
                     gl2v.data());
    CHECK(l1 == l2);
    CHECK(same_bits(gl1v, gl2v));

    std::vector<std::int64_t> ct1(c), ct2(c);
    ks::count_active_per_channel(z.data(), n, c, map, ct1.data());
    ko::count_active_per_channel(z.data(), n, c, map, ct2.data());
    CHECK(ct1 == ct2);
  }
}
