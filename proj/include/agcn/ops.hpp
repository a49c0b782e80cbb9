#pragma once

// Differentiable ops over a Tape. Every op computes its forward value through
// the kernel layer, then records a closure that routes the output gradient
// back to its inputs. Cached auxiliaries (means, xhat, pool indices, the
// softmax gradient) ride in the closures via shared_ptr.

#include <atomic>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "agcn/kernels.hpp"
#include "agcn/tape.hpp"
#include "agcn/tensor.hpp"

namespace agcn::ops {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

template <typename T>
void require_per_channel(const char* op, const char* name, const Tensor<T>& p, std::int64_t c) {
  if (p.rank() != 1 || p.extent(0) != c) {
    throw std::invalid_argument(std::string(op) + ": " + name + " must have shape [" +
                                std::to_string(c) + "], got " + p.shape_str());
  }
}

}  // namespace detail

template <typename T>
Val add(Tape<T>& tape, Val a, Val b) {
  detail::require_same_shape("add", tape.value(a), tape.value(b));
  const auto& at = tape.value(a);
  const auto& bt = tape.value(b);
  Tensor<T> y(at.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = at[i] + bt[i];
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, a, b, out]() {
    if (!tape.grad_touched(out)) return;
    tape.add_grad(a, Tensor<T>(tape.grad(out)));
    tape.add_grad(b, Tensor<T>(tape.grad(out)));
  });
  return out;
}

template <typename T>
Val sub(Tape<T>& tape, Val a, Val b) {
  detail::require_same_shape("sub", tape.value(a), tape.value(b));
  const auto& at = tape.value(a);
  const auto& bt = tape.value(b);
  Tensor<T> y(at.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = at[i] - bt[i];
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, a, b, out]() {
    if (!tape.grad_touched(out)) return;
    tape.add_grad(a, Tensor<T>(tape.grad(out)));
    Tensor<T> gb(tape.value(b).shape());
    const Tensor<T>& gy = tape.grad(out);
    for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] = -gy[i];
    tape.add_grad(b, std::move(gb));
  });
  return out;
}

template <typename T>
Val mul(Tape<T>& tape, Val a, Val b) {
  detail::require_same_shape("mul", tape.value(a), tape.value(b));
  const auto& at = tape.value(a);
  const auto& bt = tape.value(b);
  Tensor<T> y(at.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = at[i] * bt[i];
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, a, b, out]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> ga(tape.value(a).shape());
    Tensor<T> gb(tape.value(b).shape());
    for (std::int64_t i = 0; i < ga.numel(); ++i) {
      ga[i] = gy[i] * tape.value(b)[i];
      gb[i] = gy[i] * tape.value(a)[i];
    }
    tape.add_grad(a, std::move(ga));
    tape.add_grad(b, std::move(gb));
  });
  return out;
}

template <typename T>
Val scale(Tape<T>& tape, Val a, T s) {
  const auto& at = tape.value(a);
  Tensor<T> y(at.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = s * at[i];
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, a, out, s]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> ga(tape.value(a).shape());
    for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = s * gy[i];
    tape.add_grad(a, std::move(ga));
  });
  return out;
}

template <typename T>
Val sum(Tape<T>& tape, Val a) {
  const auto& at = tape.value(a);
  double acc = 0.0;
  for (std::int64_t i = 0; i < at.numel(); ++i) acc += static_cast<double>(at[i]);
  const Val out = tape.leaf(Tensor<T>({1}, static_cast<T>(acc)));
  tape.record([&tape, a, out]() {
    if (!tape.grad_touched(out)) return;
    const T g = tape.grad(out)[0];
    tape.add_grad(a, Tensor<T>(tape.value(a).shape(), g));
  });
  return out;
}

/// Mean over the given axes with kept dims (reduced extents become 1).
template <typename T>
Val reduce_mean(Tape<T>& tape, Val a, const std::vector<int>& axes) {
  const auto& at = tape.value(a);
  if (axes.empty()) throw std::invalid_argument("reduce_mean: empty axis list");
  bool reduced[4] = {false, false, false, false};
  for (int ax : axes) {
    if (ax < 0 || ax >= at.rank()) {
      throw std::invalid_argument("reduce_mean: axis " + std::to_string(ax) +
                                  " out of range for rank " + std::to_string(at.rank()));
    }
    if (reduced[ax]) throw std::invalid_argument("reduce_mean: duplicate axis");
    reduced[ax] = true;
  }
  std::vector<std::int64_t> out_shape = at.shape();
  std::int64_t count = 1;
  for (int ax = 0; ax < at.rank(); ++ax) {
    if (reduced[ax]) {
      count *= out_shape[ax];
      out_shape[ax] = 1;
    }
  }

  // flat input index -> flat output index, walking coordinates right to left
  const auto out_index = [shape = at.shape(), out_shape,
                          reduced_mask = std::vector<bool>(reduced, reduced + 4)](std::int64_t i) {
    std::int64_t out = 0, out_stride = 1;
    for (int ax = static_cast<int>(shape.size()) - 1; ax >= 0; --ax) {
      const std::int64_t coord = i % shape[ax];
      i /= shape[ax];
      if (!reduced_mask[ax]) out += coord * out_stride;
      out_stride *= out_shape[ax];
    }
    return out;
  };

  Tensor<T> y(out_shape);
  {
    std::vector<double> acc(static_cast<std::size_t>(y.numel()), 0.0);
    for (std::int64_t i = 0; i < at.numel(); ++i) {
      acc[static_cast<std::size_t>(out_index(i))] += static_cast<double>(at[i]);
    }
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      y[i] = static_cast<T>(acc[static_cast<std::size_t>(i)] / static_cast<double>(count));
    }
  }
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, a, out, out_index, count]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> ga(tape.value(a).shape());
    const T inv = T(1) / static_cast<T>(count);
    for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = gy[out_index(i)] * inv;
    tape.add_grad(a, std::move(ga));
  });
  return out;
}

template <typename T>
Val conv2d(Tape<T>& tape, Val x, Val w, Padding pad = Padding::same) {
  const auto& xt = tape.value(x);
  const auto& wt = tape.value(w);
  if (xt.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be [s,ic,h,w], got " + xt.shape_str());
  }
  if (wt.rank() != 4) {
    throw std::invalid_argument("conv2d: weights must be [oc,ic,kh,kw], got " + wt.shape_str());
  }
  if (xt.extent(1) != wt.extent(1)) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(xt.extent(1)) +
                                " channels but weights expect " + std::to_string(wt.extent(1)));
  }
  ConvGeom g;
  g.n = xt.extent(0);
  g.in_ch = xt.extent(1);
  g.h = xt.extent(2);
  g.w = xt.extent(3);
  g.out_ch = wt.extent(0);
  g.kh = wt.extent(2);
  g.kw = wt.extent(3);
  g.pad = pad;
  g.validate();

  Tensor<T> y({g.n, g.out_ch, g.out_h(), g.out_w()});
  kernels::conv2d_forward(xt.data(), wt.data(), y.data(), g);
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, x, w, out, g]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> gx(tape.value(x).shape());
    kernels::conv2d_backward_input(gy.data(), tape.value(w).data(), gx.data(), g);
    tape.add_grad(x, std::move(gx));
    Tensor<T> gw(tape.value(w).shape());
    kernels::conv2d_backward_weights(tape.value(x).data(), gy.data(), gw.data(), g);
    tape.add_grad(w, std::move(gw));
  });
  return out;
}

/// The gain-control transform: per sample and channel, with mu the mean of
/// that sample's map, out = (z - lambda_c * mu) * gamma_c + beta_c. The mean
/// never crosses samples and nothing divides by a standard deviation.
template <typename T>
Val agc(Tape<T>& tape, Val z, Val lambda, Val gamma, Val beta) {
  const auto& zt = tape.value(z);
  if (zt.rank() != 4) {
    throw std::invalid_argument("agc: input must be [s,c,h,w], got " + zt.shape_str());
  }
  const std::int64_t n = zt.extent(0), c = zt.extent(1), map = zt.extent(2) * zt.extent(3);
  detail::require_per_channel("agc", "lambda", tape.value(lambda), c);
  detail::require_per_channel("agc", "gamma", tape.value(gamma), c);
  detail::require_per_channel("agc", "beta", tape.value(beta), c);
  for (Val p : {lambda, gamma, beta}) {
    if (!tape.value(p).all_finite()) throw std::invalid_argument("agc: non-finite parameter");
  }

  Tensor<T> y(zt.shape());
  auto mu = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{n, c});
  kernels::agc_forward(zt.data(), tape.value(lambda).data(), tape.value(gamma).data(),
                       tape.value(beta).data(), y.data(), mu->data(), n, c, map);
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, z, lambda, gamma, beta, out, mu, n, c, map]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> gz(tape.value(z).shape());
    Tensor<T> gl({c}), gg({c}), gb({c});
    kernels::agc_backward(tape.value(z).data(), tape.value(lambda).data(),
                          tape.value(gamma).data(), mu->data(), gy.data(), gz.data(), gl.data(),
                          gg.data(), gb.data(), n, c, map);
    tape.add_grad(z, std::move(gz));
    tape.add_grad(lambda, std::move(gl));
    tape.add_grad(gamma, std::move(gg));
    tape.add_grad(beta, std::move(gb));
  });
  return out;
}

/// Train-mode batch norm: channel statistics over the whole minibatch
/// (sample x h x w), then scale and shift. Updates the running stats in
/// place with EMA keep factor ema_keep. xhat is cached for the backward.
template <typename T>
Val batchnorm_train(Tape<T>& tape, Val z, Val scale, Val shift, Tensor<T>& running_mean,
                    Tensor<T>& running_var, T eps, T ema_keep) {
  const auto& zt = tape.value(z);
  if (zt.rank() != 4) {
    throw std::invalid_argument("batchnorm: input must be [s,c,h,w], got " + zt.shape_str());
  }
  if (!(eps > T(0))) throw std::invalid_argument("batchnorm: epsilon must be positive");
  const std::int64_t n = zt.extent(0), c = zt.extent(1), map = zt.extent(2) * zt.extent(3);
  detail::require_per_channel("batchnorm", "scale", tape.value(scale), c);
  detail::require_per_channel("batchnorm", "shift", tape.value(shift), c);
  detail::require_per_channel("batchnorm", "running_mean", running_mean, c);
  detail::require_per_channel("batchnorm", "running_var", running_var, c);

  Tensor<T> y(zt.shape());
  auto xhat = std::make_shared<Tensor<T>>(zt.shape());
  Tensor<T> mean({c});
  auto var = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{c});
  kernels::bn_train_forward(zt.data(), tape.value(scale).data(), tape.value(shift).data(), eps,
                            y.data(), xhat->data(), mean.data(), var->data(), n, c, map);
  for (std::int64_t i = 0; i < c; ++i) {
    running_mean[i] = ema_keep * running_mean[i] + (T(1) - ema_keep) * mean[i];
    running_var[i] = ema_keep * running_var[i] + (T(1) - ema_keep) * (*var)[i];
  }
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, z, scale, shift, out, xhat, var, eps, n, c, map]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> gz(tape.value(z).shape());
    Tensor<T> gs({c}), gh({c});
    kernels::bn_train_backward(gy.data(), xhat->data(), tape.value(scale).data(), var->data(),
                               eps, gz.data(), gs.data(), gh.data(), n, c, map);
    tape.add_grad(z, std::move(gz));
    tape.add_grad(scale, std::move(gs));
    tape.add_grad(shift, std::move(gh));
  });
  return out;
}

template <typename T>
Val batchnorm_infer(Tape<T>& tape, Val z, Val scale, Val shift, const Tensor<T>& running_mean,
                    const Tensor<T>& running_var, T eps) {
  const auto& zt = tape.value(z);
  if (zt.rank() != 4) {
    throw std::invalid_argument("batchnorm: input must be [s,c,h,w], got " + zt.shape_str());
  }
  const std::int64_t n = zt.extent(0), c = zt.extent(1), map = zt.extent(2) * zt.extent(3);
  detail::require_per_channel("batchnorm", "scale", tape.value(scale), c);
  detail::require_per_channel("batchnorm", "shift", tape.value(shift), c);
  for (std::int64_t i = 0; i < c; ++i) {
    if (running_var[i] < T(0)) throw std::invalid_argument("batchnorm: negative running_var");
  }

  Tensor<T> y(zt.shape());
  kernels::bn_infer_forward(zt.data(), tape.value(scale).data(), tape.value(shift).data(),
                            running_mean.data(), running_var.data(), eps, y.data(), n, c, map);
  // per-channel normalizer reused by the (rarely exercised) backward
  auto coef = std::make_shared<Tensor<T>>(std::vector<std::int64_t>{c});
  for (std::int64_t i = 0; i < c; ++i) {
    (*coef)[i] = tape.value(scale)[i] /
                 static_cast<T>(std::sqrt(static_cast<double>(running_var[i]) +
                                          static_cast<double>(eps)));
  }
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, z, out, coef, n, c, map]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> gz(tape.value(z).shape());
    for (std::int64_t s = 0; s < n; ++s) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t base = (s * c + ch) * map;
        for (std::int64_t i = 0; i < map; ++i) gz[base + i] = gy[base + i] * (*coef)[ch];
      }
    }
    tape.add_grad(z, std::move(gz));
  });
  return out;
}

template <typename T>
Val relu(Tape<T>& tape, Val z) {
  const auto& zt = tape.value(z);
  Tensor<T> y(zt.shape());
  kernels::relu_forward(zt.data(), y.data(), zt.numel());
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, z, out]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> gz(tape.value(z).shape());
    kernels::relu_backward(tape.value(z).data(), gy.data(), gz.data(), gz.numel());
    tape.add_grad(z, std::move(gz));
  });
  return out;
}

template <typename T>
struct Pooled {
  Val y;
  std::shared_ptr<const IntTensor> indices;  // argmax offsets, [s,c,h/2,w/2]
};

template <typename T>
Pooled<T> maxpool2x2(Tape<T>& tape, Val z) {
  const auto& zt = tape.value(z);
  if (zt.rank() != 4) {
    throw std::invalid_argument("maxpool2x2: input must be [s,c,h,w], got " + zt.shape_str());
  }
  const std::int64_t n = zt.extent(0), c = zt.extent(1), h = zt.extent(2), w = zt.extent(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2x2: spatial extents must be even, got " +
                                zt.shape_str());
  }
  Tensor<T> y({n, c, h / 2, w / 2});
  auto idx = std::make_shared<IntTensor>(std::vector<std::int64_t>{n, c, h / 2, w / 2});
  kernels::maxpool2x2_forward(zt.data(), y.data(), idx->data(), n, c, h, w);
  const Val out = tape.leaf(std::move(y));
  std::shared_ptr<const IntTensor> cidx = idx;
  tape.record([&tape, z, out, cidx, n, c, h, w]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> gz(tape.value(z).shape());
    kernels::unpool2x2_scatter(gy.data(), cidx->data(), gz.data(), n, c, h, w);
    tape.add_grad(z, std::move(gz));
  });
  return {out, cidx};
}

template <typename T>
Val unpool2x2(Tape<T>& tape, Val v, std::shared_ptr<const IntTensor> indices) {
  const auto& vt = tape.value(v);
  if (vt.rank() != 4) {
    throw std::invalid_argument("unpool2x2: input must be [s,c,h,w], got " + vt.shape_str());
  }
  if (!indices) throw std::invalid_argument("unpool2x2: missing pooling indices");
  if (indices->shape() != vt.shape()) {
    throw std::invalid_argument("unpool2x2: indices shape " + indices->shape_str() +
                                " does not match input " + vt.shape_str());
  }
  const std::int64_t n = vt.extent(0), c = vt.extent(1), h = 2 * vt.extent(2),
                     w = 2 * vt.extent(3);
  Tensor<T> y({n, c, h, w});
  kernels::unpool2x2_scatter(vt.data(), indices->data(), y.data(), n, c, h, w);
  const Val out = tape.leaf(std::move(y));
  tape.record([&tape, v, out, indices, n, c, h, w]() {
    if (!tape.grad_touched(out)) return;
    const Tensor<T>& gy = tape.grad(out);
    Tensor<T> gv(tape.value(v).shape());
    kernels::unpool2x2_gather(gy.data(), indices->data(), gv.data(), n, c, h, w);
    tape.add_grad(v, std::move(gv));
  });
  return out;
}

/// Weighted pixelwise cross entropy. loss = mean over non-ignored pixels of
/// w[label] * (-log softmax(logits)[label]). The logits gradient is computed
/// alongside the forward and cached. Empty class_weights means unit weights.
template <typename T>
Val weighted_softmax_xent(Tape<T>& tape, Val logits, const IntTensor& labels,
                          const Tensor<T>& class_weights, std::int32_t ignore_label = -1) {
  const auto& lt = tape.value(logits);
  if (lt.rank() != 4) {
    throw std::invalid_argument("softmax_xent: logits must be [s,K,h,w], got " + lt.shape_str());
  }
  const std::int64_t n = lt.extent(0), k = lt.extent(1), map = lt.extent(2) * lt.extent(3);
  if (labels.rank() != 3 || labels.extent(0) != n || labels.extent(1) != lt.extent(2) ||
      labels.extent(2) != lt.extent(3)) {
    throw std::invalid_argument("softmax_xent: labels shape " + labels.shape_str() +
                                " does not match logits " + lt.shape_str());
  }
  const T* wptr = nullptr;
  if (class_weights.numel() > 0) {
    if (class_weights.rank() != 1 || class_weights.extent(0) != k) {
      throw std::invalid_argument("softmax_xent: class_weights must have shape [" +
                                  std::to_string(k) + "], got " + class_weights.shape_str());
    }
    double mean = 0;
    for (std::int64_t i = 0; i < k; ++i) mean += static_cast<double>(class_weights[i]);
    mean /= static_cast<double>(k);
    static std::atomic<bool> warned{false};
    if (std::abs(mean - 1.0) > 1e-6 && !warned.exchange(true)) {
      std::fprintf(stderr, "softmax_xent: class weight mean %.6f differs from 1\n", mean);
    }
    wptr = class_weights.data();
  }

  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < labels.numel(); ++i) {
    const std::int32_t lab = labels[i];
    if (lab == ignore_label) continue;
    if (lab < 0 || lab >= k) {
      throw std::invalid_argument("softmax_xent: label " + std::to_string(lab) +
                                  " out of range for K=" + std::to_string(k));
    }
    ++valid;
  }
  if (valid == 0) throw std::invalid_argument("softmax_xent: every pixel is ignored");

  T loss_value{};
  auto glogits = std::make_shared<Tensor<T>>(lt.shape());
  kernels::softmax_xent(lt.data(), labels.data(), wptr, n, k, map, ignore_label, valid,
                        &loss_value, glogits->data());
  const Val out = tape.leaf(Tensor<T>({1}, loss_value));
  tape.record([&tape, logits, out, glogits]() {
    if (!tape.grad_touched(out)) return;
    const T g = tape.grad(out)[0];
    Tensor<T> gl(glogits->shape());
    for (std::int64_t i = 0; i < gl.numel(); ++i) gl[i] = g * (*glogits)[i];
    tape.add_grad(logits, std::move(gl));
  });
  return out;
}

}  // namespace agcn::ops
