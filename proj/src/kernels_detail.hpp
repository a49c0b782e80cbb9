#pragma once

// Kernel bodies shared by the serial and OpenMP drivers. Each body is handed
// a for-each callable that runs `f(0..count)` either as a plain loop or as an
// omp parallel for. Work items own disjoint output slices and accumulate in a
// fixed order, which is what makes the two backends agree bitwise.
// All outputs are fully overwritten; accumulation across calls is the
// caller's job. Reductions go through double accumulators so real32 stats
// stay usable at large map sizes.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "agcn/kernels.hpp"

namespace agcn::kernels::detail {

using std::int32_t;
using std::int64_t;

struct SeqFor {
  template <typename F>
  void operator()(int64_t count, F&& f) const {
    for (int64_t i = 0; i < count; ++i) f(i);
  }
};

template <typename T, typename ForEach>
void conv2d_forward_impl(const T* x, const T* w, T* y, const ConvGeom& g, const ForEach& fe) {
  g.validate();
  const int64_t oh = g.out_h(), ow = g.out_w(), ph = g.pad_h(), pw = g.pad_w();
  fe(g.n * g.out_ch, [&](int64_t item) {
    const int64_t s = item / g.out_ch, oc = item % g.out_ch;
    T* __restrict ym = y + item * oh * ow;
    std::fill(ym, ym + oh * ow, T(0));
    for (int64_t ic = 0; ic < g.in_ch; ++ic) {
      const T* xm = x + (s * g.in_ch + ic) * g.h * g.w;
      const T* wk = w + (oc * g.in_ch + ic) * g.kh * g.kw;
      for (int64_t ky = 0; ky < g.kh; ++ky) {
        const int64_t oy0 = std::max<int64_t>(0, ph - ky);
        const int64_t oy1 = std::min(oh, g.h + ph - ky);
        for (int64_t kx = 0; kx < g.kw; ++kx) {
          const T a = wk[ky * g.kw + kx];
          const int64_t ox0 = std::max<int64_t>(0, pw - kx);
          const int64_t ox1 = std::min(ow, g.w + pw - kx);
          for (int64_t oy = oy0; oy < oy1; ++oy) {
            T* __restrict yr = ym + oy * ow;
            const T* __restrict xr = xm + (oy + ky - ph) * g.w + (kx - pw);
            for (int64_t ox = ox0; ox < ox1; ++ox) yr[ox] += a * xr[ox];
          }
        }
      }
    }
  });
}

template <typename T, typename ForEach>
void conv2d_backward_input_impl(const T* gy, const T* w, T* gx, const ConvGeom& g,
                                const ForEach& fe) {
  g.validate();
  const int64_t oh = g.out_h(), ow = g.out_w(), ph = g.pad_h(), pw = g.pad_w();
  fe(g.n * g.in_ch, [&](int64_t item) {
    const int64_t s = item / g.in_ch, ic = item % g.in_ch;
    T* gxm = gx + item * g.h * g.w;
    std::fill(gxm, gxm + g.h * g.w, T(0));
    for (int64_t oc = 0; oc < g.out_ch; ++oc) {
      const T* gym = gy + (s * g.out_ch + oc) * oh * ow;
      const T* wk = w + (oc * g.in_ch + ic) * g.kh * g.kw;
      for (int64_t ky = 0; ky < g.kh; ++ky) {
        const int64_t oy0 = std::max<int64_t>(0, ph - ky);
        const int64_t oy1 = std::min(oh, g.h + ph - ky);
        for (int64_t kx = 0; kx < g.kw; ++kx) {
          const T a = wk[ky * g.kw + kx];
          const int64_t ox0 = std::max<int64_t>(0, pw - kx);
          const int64_t ox1 = std::min(ow, g.w + pw - kx);
          for (int64_t oy = oy0; oy < oy1; ++oy) {
            const T* __restrict gyr = gym + oy * ow;
            T* __restrict gxr = gxm + (oy + ky - ph) * g.w + (kx - pw);
            for (int64_t ox = ox0; ox < ox1; ++ox) gxr[ox] += a * gyr[ox];
          }
        }
      }
    }
  });
}

template <typename T, typename ForEach>
void conv2d_backward_weights_impl(const T* x, const T* gy, T* gw, const ConvGeom& g,
                                  const ForEach& fe) {
  g.validate();
  const int64_t oh = g.out_h(), ow = g.out_w(), ph = g.pad_h(), pw = g.pad_w();
  fe(g.out_ch * g.in_ch, [&](int64_t item) {
    const int64_t oc = item / g.in_ch, ic = item % g.in_ch;
    T* wk = gw + item * g.kh * g.kw;
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      const int64_t oy0 = std::max<int64_t>(0, ph - ky);
      const int64_t oy1 = std::min(oh, g.h + ph - ky);
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const int64_t ox0 = std::max<int64_t>(0, pw - kx);
        const int64_t ox1 = std::min(ow, g.w + pw - kx);
        double acc = 0.0;
        for (int64_t s = 0; s < g.n; ++s) {
          const T* gym = gy + (s * g.out_ch + oc) * oh * ow;
          const T* xm = x + (s * g.in_ch + ic) * g.h * g.w;
          for (int64_t oy = oy0; oy < oy1; ++oy) {
            const T* __restrict gyr = gym + oy * ow;
            const T* __restrict xr = xm + (oy + ky - ph) * g.w + (kx - pw);
            T dot = T(0);
            for (int64_t ox = ox0; ox < ox1; ++ox) dot += gyr[ox] * xr[ox];
            acc += static_cast<double>(dot);
          }
        }
        wk[ky * g.kw + kx] = static_cast<T>(acc);
      }
    }
  });
}

template <typename T, typename ForEach>
void agc_forward_impl(const T* z, const T* lambda, const T* gamma, const T* beta, T* y, T* mu,
                      int64_t n, int64_t c, int64_t map, const ForEach& fe) {
  fe(n * c, [&](int64_t item) {
    const int64_t ch = item % c;
    const T* __restrict zm = z + item * map;
    T* __restrict ym = y + item * map;
    double acc = 0.0;
    for (int64_t i = 0; i < map; ++i) acc += static_cast<double>(zm[i]);
    const T m = static_cast<T>(acc / static_cast<double>(map));
    mu[item] = m;
    const T lm = lambda[ch] * m, ga = gamma[ch], be = beta[ch];
    for (int64_t i = 0; i < map; ++i) ym[i] = (zm[i] - lm) * ga + be;
  });
}

template <typename T, typename ForEach>
void agc_backward_impl(const T* z, const T* lambda, const T* gamma, const T* mu, const T* gy,
                       T* gz, T* glambda, T* ggamma, T* gbeta, int64_t n, int64_t c, int64_t map,
                       const ForEach& fe) {
  fe(c, [&](int64_t ch) {
    const T lam = lambda[ch], ga = gamma[ch];
    double gl = 0.0, gg = 0.0, gb = 0.0;
    for (int64_t s = 0; s < n; ++s) {
      const int64_t base = s * c + ch;
      const T* __restrict zm = z + base * map;
      const T* __restrict gym = gy + base * map;
      T* __restrict gzm = gz + base * map;
      double sg = 0.0, sgz = 0.0;
      for (int64_t i = 0; i < map; ++i) {
        sg += static_cast<double>(gym[i]);
        sgz += static_cast<double>(gym[i]) * static_cast<double>(zm[i]);
      }
      const T gbar = static_cast<T>(sg / static_cast<double>(map));
      const T lg = lam * gbar;
      for (int64_t i = 0; i < map; ++i) gzm[i] = ga * (gym[i] - lg);
      const double m = static_cast<double>(mu[base]);
      gl -= static_cast<double>(ga) * m * sg;
      gg += sgz - static_cast<double>(lam) * m * sg;
      gb += sg;
    }
    glambda[ch] = static_cast<T>(gl);
    ggamma[ch] = static_cast<T>(gg);
    gbeta[ch] = static_cast<T>(gb);
  });
}

template <typename T, typename ForEach>
void bn_train_forward_impl(const T* z, const T* scale, const T* shift, T eps, T* y, T* xhat,
                           T* mean, T* var, int64_t n, int64_t c, int64_t map, const ForEach& fe) {
  const double count = static_cast<double>(n) * static_cast<double>(map);
  fe(c, [&](int64_t ch) {
    double s1 = 0.0;
    for (int64_t s = 0; s < n; ++s) {
      const T* __restrict zm = z + (s * c + ch) * map;
      for (int64_t i = 0; i < map; ++i) s1 += static_cast<double>(zm[i]);
    }
    const double mean_d = s1 / count;
    double s2 = 0.0;
    for (int64_t s = 0; s < n; ++s) {
      const T* __restrict zm = z + (s * c + ch) * map;
      for (int64_t i = 0; i < map; ++i) {
        const double d = static_cast<double>(zm[i]) - mean_d;
        s2 += d * d;
      }
    }
    const double var_d = s2 / count;
    mean[ch] = static_cast<T>(mean_d);
    var[ch] = static_cast<T>(var_d);
    const T mn = static_cast<T>(mean_d);
    const T r = static_cast<T>(1.0 / std::sqrt(var_d + static_cast<double>(eps)));
    const T sc = scale[ch], sh = shift[ch];
    for (int64_t s = 0; s < n; ++s) {
      const int64_t base = (s * c + ch) * map;
      const T* __restrict zm = z + base;
      T* __restrict xm = xhat + base;
      T* __restrict ym = y + base;
      for (int64_t i = 0; i < map; ++i) {
        const T xh = (zm[i] - mn) * r;
        xm[i] = xh;
        ym[i] = xh * sc + sh;
      }
    }
  });
}

template <typename T, typename ForEach>
void bn_infer_forward_impl(const T* z, const T* scale, const T* shift, const T* running_mean,
                           const T* running_var, T eps, T* y, int64_t n, int64_t c, int64_t map,
                           const ForEach& fe) {
  fe(n * c, [&](int64_t item) {
    const int64_t ch = item % c;
    const T mn = running_mean[ch];
    const T r = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(running_var[ch]) + static_cast<double>(eps)));
    const T sc = scale[ch], sh = shift[ch];
    const T* __restrict zm = z + item * map;
    T* __restrict ym = y + item * map;
    for (int64_t i = 0; i < map; ++i) ym[i] = (zm[i] - mn) * r * sc + sh;
  });
}

template <typename T, typename ForEach>
void bn_train_backward_impl(const T* gy, const T* xhat, const T* scale, const T* var, T eps,
                            T* gz, T* gscale, T* gshift, int64_t n, int64_t c, int64_t map,
                            const ForEach& fe) {
  const double count = static_cast<double>(n) * static_cast<double>(map);
  fe(c, [&](int64_t ch) {
    double s1 = 0.0, s2 = 0.0;
    for (int64_t s = 0; s < n; ++s) {
      const int64_t base = (s * c + ch) * map;
      const T* __restrict gym = gy + base;
      const T* __restrict xm = xhat + base;
      for (int64_t i = 0; i < map; ++i) {
        s1 += static_cast<double>(gym[i]);
        s2 += static_cast<double>(gym[i]) * static_cast<double>(xm[i]);
      }
    }
    const double r = 1.0 / std::sqrt(static_cast<double>(var[ch]) + static_cast<double>(eps));
    const T coef = static_cast<T>(static_cast<double>(scale[ch]) * r);
    const T m1 = static_cast<T>(s1 / count), m2 = static_cast<T>(s2 / count);
    for (int64_t s = 0; s < n; ++s) {
      const int64_t base = (s * c + ch) * map;
      const T* __restrict gym = gy + base;
      const T* __restrict xm = xhat + base;
      T* __restrict gzm = gz + base;
      for (int64_t i = 0; i < map; ++i) gzm[i] = coef * (gym[i] - m1 - xm[i] * m2);
    }
    gscale[ch] = static_cast<T>(s2);
    gshift[ch] = static_cast<T>(s1);
  });
}

inline constexpr int64_t kEltChunk = 16384;

template <typename T, typename ForEach>
void relu_forward_impl(const T* z, T* y, int64_t numel, const ForEach& fe) {
  fe((numel + kEltChunk - 1) / kEltChunk, [&](int64_t item) {
    const int64_t lo = item * kEltChunk, hi = std::min(numel, lo + kEltChunk);
    for (int64_t i = lo; i < hi; ++i) y[i] = z[i] > T(0) ? z[i] : T(0);
  });
}

template <typename T, typename ForEach>
void relu_backward_impl(const T* z, const T* gy, T* gz, int64_t numel, const ForEach& fe) {
  fe((numel + kEltChunk - 1) / kEltChunk, [&](int64_t item) {
    const int64_t lo = item * kEltChunk, hi = std::min(numel, lo + kEltChunk);
    for (int64_t i = lo; i < hi; ++i) gz[i] = z[i] > T(0) ? gy[i] : T(0);
  });
}

// idx stores flat offsets iy*w+ix inside the sample/channel map. Ties go to
// the lowest row-major offset (strict > while scanning the window in order).
template <typename T, typename ForEach>
void maxpool2x2_forward_impl(const T* z, T* y, int32_t* idx, int64_t n, int64_t c, int64_t h,
                             int64_t w, const ForEach& fe) {
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2x2: spatial extents must be even");
  }
  const int64_t ph = h / 2, pw = w / 2;
  fe(n * c, [&](int64_t item) {
    const T* zm = z + item * h * w;
    T* ym = y + item * ph * pw;
    int32_t* im = idx + item * ph * pw;
    for (int64_t py = 0; py < ph; ++py) {
      for (int64_t px = 0; px < pw; ++px) {
        int64_t best = (2 * py) * w + 2 * px;
        T bv = zm[best];
        const int64_t cand[3] = {(2 * py) * w + 2 * px + 1, (2 * py + 1) * w + 2 * px,
                                 (2 * py + 1) * w + 2 * px + 1};
        for (int64_t k = 0; k < 3; ++k) {
          if (zm[cand[k]] > bv) {
            bv = zm[cand[k]];
            best = cand[k];
          }
        }
        ym[py * pw + px] = bv;
        im[py * pw + px] = static_cast<int32_t>(best);
      }
    }
  });
}

inline bool offset_in_window(int64_t off, int64_t py, int64_t px, int64_t w) {
  const int64_t iy = off / w, ix = off % w;
  return off >= 0 && (iy == 2 * py || iy == 2 * py + 1) && (ix == 2 * px || ix == 2 * px + 1);
}

// h, w are the full-resolution extents; v/g_pooled are h/2 by w/2.
template <typename T, typename ForEach>
void unpool2x2_scatter_impl(const T* v, const int32_t* idx, T* out, int64_t n, int64_t c,
                            int64_t h, int64_t w, const ForEach& fe) {
  const int64_t ph = h / 2, pw = w / 2;
  std::atomic<bool> bad{false};
  fe(n * c, [&](int64_t item) {
    const T* vm = v + item * ph * pw;
    const int32_t* im = idx + item * ph * pw;
    T* om = out + item * h * w;
    std::fill(om, om + h * w, T(0));
    for (int64_t py = 0; py < ph; ++py) {
      for (int64_t px = 0; px < pw; ++px) {
        const int64_t off = im[py * pw + px];
        if (!offset_in_window(off, py, px, w)) {
          bad.store(true, std::memory_order_relaxed);
          continue;
        }
        om[off] = vm[py * pw + px];
      }
    }
  });
  if (bad.load()) throw std::invalid_argument("unpool2x2: index outside its pooling window");
}

template <typename T, typename ForEach>
void unpool2x2_gather_impl(const T* g_full, const int32_t* idx, T* g_pooled, int64_t n, int64_t c,
                           int64_t h, int64_t w, const ForEach& fe) {
  const int64_t ph = h / 2, pw = w / 2;
  std::atomic<bool> bad{false};
  fe(n * c, [&](int64_t item) {
    const T* gm = g_full + item * h * w;
    const int32_t* im = idx + item * ph * pw;
    T* pm = g_pooled + item * ph * pw;
    for (int64_t py = 0; py < ph; ++py) {
      for (int64_t px = 0; px < pw; ++px) {
        const int64_t off = im[py * pw + px];
        if (!offset_in_window(off, py, px, w)) {
          bad.store(true, std::memory_order_relaxed);
          pm[py * pw + px] = T(0);
          continue;
        }
        pm[py * pw + px] = gm[off];
      }
    }
  });
  if (bad.load()) throw std::invalid_argument("unpool2x2: index outside its pooling window");
}

// logits [n,k,map], labels [n,map]. Pixels labeled ignore_label contribute
// nothing and get zero gradient. valid_count is the caller-side count of
// non-ignored pixels across the batch; caller guarantees it is positive and
// labels are in range.
template <typename T, typename ForEach>
void softmax_xent_impl(const T* logits, const int32_t* labels, const T* class_weights, int64_t n,
                       int64_t k, int64_t map, int32_t ignore_label, int64_t valid_count, T* loss,
                       T* glogits, const ForEach& fe) {
  const double inv_count = 1.0 / static_cast<double>(valid_count);
  std::vector<double> partial(static_cast<size_t>(n), 0.0);
  fe(n, [&](int64_t s) {
    const T* lb = logits + s * k * map;
    T* gb = glogits + s * k * map;
    double part = 0.0;
    for (int64_t pix = 0; pix < map; ++pix) {
      const int32_t lab = labels[s * map + pix];
      if (lab == ignore_label) {
        for (int64_t j = 0; j < k; ++j) gb[j * map + pix] = T(0);
        continue;
      }
      double m = static_cast<double>(lb[pix]);
      for (int64_t j = 1; j < k; ++j) {
        m = std::max(m, static_cast<double>(lb[j * map + pix]));
      }
      double sum = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        sum += std::exp(static_cast<double>(lb[j * map + pix]) - m);
      }
      const double lse = m + std::log(sum);
      const double wt = class_weights ? static_cast<double>(class_weights[lab]) : 1.0;
      part += wt * (lse - static_cast<double>(lb[lab * map + pix]));
      const double gw = wt * inv_count;
      for (int64_t j = 0; j < k; ++j) {
        const double p = std::exp(static_cast<double>(lb[j * map + pix]) - lse);
        gb[j * map + pix] = static_cast<T>(gw * (p - (j == lab ? 1.0 : 0.0)));
      }
    }
    partial[static_cast<size_t>(s)] = part;
  });
  double total = 0.0;
  for (int64_t s = 0; s < n; ++s) total += partial[static_cast<size_t>(s)];
  *loss = static_cast<T>(total * inv_count);
}

template <typename T, typename ForEach>
void count_active_per_channel_impl(const T* y, int64_t n, int64_t c, int64_t map, int64_t* counts,
                                   const ForEach& fe) {
  fe(c, [&](int64_t ch) {
    int64_t cnt = 0;
    for (int64_t s = 0; s < n; ++s) {
      const T* __restrict ym = y + (s * c + ch) * map;
      for (int64_t i = 0; i < map; ++i) cnt += ym[i] > T(0) ? 1 : 0;
    }
    counts[ch] = cnt;
  });
}

}  // namespace agcn::kernels::detail
