#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace agcn {

enum class Padding { same, valid };

/// Geometry of one 2-D cross-correlation (no kernel flip). Stride is 1.
/// "same" keeps the spatial size with zero padding and requires odd kernels;
/// "valid" shrinks it and exists mainly as a test hook.
struct ConvGeom {
  std::int64_t n = 1;       // samples
  std::int64_t in_ch = 1;
  std::int64_t h = 1, w = 1;
  std::int64_t out_ch = 1;
  std::int64_t kh = 1, kw = 1;
  Padding pad = Padding::same;

  std::int64_t pad_h() const { return pad == Padding::same ? (kh - 1) / 2 : 0; }
  std::int64_t pad_w() const { return pad == Padding::same ? (kw - 1) / 2 : 0; }
  std::int64_t out_h() const { return pad == Padding::same ? h : h - kh + 1; }
  std::int64_t out_w() const { return pad == Padding::same ? w : w - kw + 1; }

  void validate() const {
    if (n < 1 || in_ch < 1 || out_ch < 1 || h < 1 || w < 1 || kh < 1 || kw < 1) {
      throw std::invalid_argument("conv2d: extents must be >= 1");
    }
    if (pad == Padding::same && (kh % 2 == 0 || kw % 2 == 0)) {
      throw std::invalid_argument("conv2d: same padding requires odd kernel extents");
    }
    if (pad == Padding::valid && (kh > h || kw > w)) {
      throw std::invalid_argument("conv2d: valid padding needs kernel <= input extents");
    }
  }
};

// Low-level compute kernels. Each kernel exists twice: kernels::serial is the
// plain reference implementation, kernels::omp runs the same per-work-item
// bodies under OpenMP. Work is decomposed so that every output element is
// written by exactly one work item with a fixed accumulation order; both
// backends therefore produce bit-identical results for any thread count.
// The unqualified kernels::* functions dispatch on the active backend.
namespace kernels {

enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);
bool openmp_compiled();
int openmp_max_threads();
Backend backend_from_name(const std::string& name);
std::string backend_name(Backend b);

// One declaration block, instantiated for the serial backend, the omp
// backend, and the dispatching front.
#define AGCN_DECLARE_KERNELS                                                                      \
  template <typename T>                                                                           \
  void conv2d_forward(const T* x, const T* w, T* y, const ConvGeom& g);                           \
  template <typename T>                                                                           \
  void conv2d_backward_input(const T* gy, const T* w, T* gx, const ConvGeom& g);                  \
  template <typename T>                                                                           \
  void conv2d_backward_weights(const T* x, const T* gy, T* gw, const ConvGeom& g);                \
  template <typename T>                                                                           \
  void agc_forward(const T* z, const T* lambda, const T* gamma, const T* beta, T* y, T* mu,       \
                   std::int64_t n, std::int64_t c, std::int64_t map);                             \
  template <typename T>                                                                           \
  void agc_backward(const T* z, const T* lambda, const T* gamma, const T* mu, const T* gy,        \
                    T* gz, T* glambda, T* ggamma, T* gbeta, std::int64_t n, std::int64_t c,       \
                    std::int64_t map);                                                            \
  template <typename T>                                                                           \
  void bn_train_forward(const T* z, const T* scale, const T* shift, T eps, T* y, T* xhat,         \
                        T* mean, T* var, std::int64_t n, std::int64_t c, std::int64_t map);       \
  template <typename T>                                                                           \
  void bn_infer_forward(const T* z, const T* scale, const T* shift, const T* running_mean,        \
                        const T* running_var, T eps, T* y, std::int64_t n, std::int64_t c,        \
                        std::int64_t map);                                                        \
  template <typename T>                                                                           \
  void bn_train_backward(const T* gy, const T* xhat, const T* scale, const T* var, T eps, T* gz,  \
                         T* gscale, T* gshift, std::int64_t n, std::int64_t c, std::int64_t map); \
  template <typename T>                                                                           \
  void relu_forward(const T* z, T* y, std::int64_t numel);                                        \
  template <typename T>                                                                           \
  void relu_backward(const T* z, const T* gy, T* gz, std::int64_t numel);                         \
  template <typename T>                                                                           \
  void maxpool2x2_forward(const T* z, T* y, std::int32_t* idx, std::int64_t n, std::int64_t c,    \
                          std::int64_t h, std::int64_t w);                                        \
  template <typename T>                                                                           \
  void unpool2x2_scatter(const T* v, const std::int32_t* idx, T* out, std::int64_t n,             \
                         std::int64_t c, std::int64_t h, std::int64_t w);                         \
  template <typename T>                                                                           \
  void unpool2x2_gather(const T* g_full, const std::int32_t* idx, T* g_pooled, std::int64_t n,    \
                        std::int64_t c, std::int64_t h, std::int64_t w);                          \
  template <typename T>                                                                           \
  void softmax_xent(const T* logits, const std::int32_t* labels, const T* class_weights,          \
                    std::int64_t n, std::int64_t k, std::int64_t map, std::int32_t ignore_label,  \
                    std::int64_t valid_count, T* loss, T* glogits);                               \
  template <typename T>                                                                           \
  void count_active_per_channel(const T* y, std::int64_t n, std::int64_t c, std::int64_t map,     \
                                std::int64_t* counts)

namespace serial {
AGCN_DECLARE_KERNELS;
}
namespace omp {
AGCN_DECLARE_KERNELS;
}
AGCN_DECLARE_KERNELS;

#undef AGCN_DECLARE_KERNELS

}  // namespace kernels
}  // namespace agcn
