#include "agcn/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace agcn::kernels {

namespace {
std::atomic<Backend>& backend_state() {
  static std::atomic<Backend> state{openmp_compiled() ? Backend::openmp : Backend::serial};
  return state;
}
}  // namespace

Backend backend() { return backend_state().load(std::memory_order_relaxed); }

void set_backend(Backend b) { backend_state().store(b, std::memory_order_relaxed); }

bool openmp_compiled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int openmp_max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

Backend backend_from_name(const std::string& name) {
  if (name == "serial") return Backend::serial;
  if (name == "openmp") return Backend::openmp;
  throw std::invalid_argument("unknown kernel backend '" + name + "' (serial|openmp)");
}

std::string backend_name(Backend b) { return b == Backend::openmp ? "openmp" : "serial"; }

template <typename T>
void conv2d_forward(const T* x, const T* w, T* y, const ConvGeom& g) {
  backend() == Backend::openmp ? omp::conv2d_forward(x, w, y, g)
                               : serial::conv2d_forward(x, w, y, g);
}

template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const ConvGeom& g) {
  backend() == Backend::openmp ? omp::conv2d_backward_input(gy, w, gx, g)
                               : serial::conv2d_backward_input(gy, w, gx, g);
}

template <typename T>
void conv2d_backward_weights(const T* x, const T* gy, T* gw, const ConvGeom& g) {
  backend() == Backend::openmp ? omp::conv2d_backward_weights(x, gy, gw, g)
                               : serial::conv2d_backward_weights(x, gy, gw, g);
}

template <typename T>
void agc_forward(const T* z, const T* lambda, const T* gamma, const T* beta, T* y, T* mu,
                 std::int64_t n, std::int64_t c, std::int64_t map) {
  backend() == Backend::openmp ? omp::agc_forward(z, lambda, gamma, beta, y, mu, n, c, map)
                               : serial::agc_forward(z, lambda, gamma, beta, y, mu, n, c, map);
}

template <typename T>
void agc_backward(const T* z, const T* lambda, const T* gamma, const T* mu, const T* gy, T* gz,
                  T* glambda, T* ggamma, T* gbeta, std::int64_t n, std::int64_t c,
                  std::int64_t map) {
  backend() == Backend::openmp
      ? omp::agc_backward(z, lambda, gamma, mu, gy, gz, glambda, ggamma, gbeta, n, c, map)
      : serial::agc_backward(z, lambda, gamma, mu, gy, gz, glambda, ggamma, gbeta, n, c, map);
}

template <typename T>
void bn_train_forward(const T* z, const T* scale, const T* shift, T eps, T* y, T* xhat, T* mean,
                      T* var, std::int64_t n, std::int64_t c, std::int64_t map) {
  backend() == Backend::openmp
      ? omp::bn_train_forward(z, scale, shift, eps, y, xhat, mean, var, n, c, map)
      : serial::bn_train_forward(z, scale, shift, eps, y, xhat, mean, var, n, c, map);
}

template <typename T>
void bn_infer_forward(const T* z, const T* scale, const T* shift, const T* running_mean,
                      const T* running_var, T eps, T* y, std::int64_t n, std::int64_t c,
                      std::int64_t map) {
  backend() == Backend::openmp
      ? omp::bn_infer_forward(z, scale, shift, running_mean, running_var, eps, y, n, c, map)
      : serial::bn_infer_forward(z, scale, shift, running_mean, running_var, eps, y, n, c, map);
}

template <typename T>
void bn_train_backward(const T* gy, const T* xhat, const T* scale, const T* var, T eps, T* gz,
                       T* gscale, T* gshift, std::int64_t n, std::int64_t c, std::int64_t map) {
  backend() == Backend::openmp
      ? omp::bn_train_backward(gy, xhat, scale, var, eps, gz, gscale, gshift, n, c, map)
      : serial::bn_train_backward(gy, xhat, scale, var, eps, gz, gscale, gshift, n, c, map);
}

template <typename T>
void relu_forward(const T* z, T* y, std::int64_t numel) {
  backend() == Backend::openmp ? omp::relu_forward(z, y, numel) : serial::relu_forward(z, y, numel);
}

template <typename T>
void relu_backward(const T* z, const T* gy, T* gz, std::int64_t numel) {
  backend() == Backend::openmp ? omp::relu_backward(z, gy, gz, numel)
                               : serial::relu_backward(z, gy, gz, numel);
}

template <typename T>
void maxpool2x2_forward(const T* z, T* y, std::int32_t* idx, std::int64_t n, std::int64_t c,
                        std::int64_t h, std::int64_t w) {
  backend() == Backend::openmp ? omp::maxpool2x2_forward(z, y, idx, n, c, h, w)
                               : serial::maxpool2x2_forward(z, y, idx, n, c, h, w);
}

template <typename T>
void unpool2x2_scatter(const T* v, const std::int32_t* idx, T* out, std::int64_t n,
                       std::int64_t c, std::int64_t h, std::int64_t w) {
  backend() == Backend::openmp ? omp::unpool2x2_scatter(v, idx, out, n, c, h, w)
                               : serial::unpool2x2_scatter(v, idx, out, n, c, h, w);
}

template <typename T>
void unpool2x2_gather(const T* g_full, const std::int32_t* idx, T* g_pooled, std::int64_t n,
                      std::int64_t c, std::int64_t h, std::int64_t w) {
  backend() == Backend::openmp ? omp::unpool2x2_gather(g_full, idx, g_pooled, n, c, h, w)
                               : serial::unpool2x2_gather(g_full, idx, g_pooled, n, c, h, w);
}

template <typename T>
void softmax_xent(const T* logits, const std::int32_t* labels, const T* class_weights,
                  std::int64_t n, std::int64_t k, std::int64_t map, std::int32_t ignore_label,
                  std::int64_t valid_count, T* loss, T* glogits) {
  backend() == Backend::openmp
      ? omp::softmax_xent(logits, labels, class_weights, n, k, map, ignore_label, valid_count,
                          loss, glogits)
      : serial::softmax_xent(logits, labels, class_weights, n, k, map, ignore_label, valid_count,
                             loss, glogits);
}

template <typename T>
void count_active_per_channel(const T* y, std::int64_t n, std::int64_t c, std::int64_t map,
                              std::int64_t* counts) {
  backend() == Backend::openmp ? omp::count_active_per_channel(y, n, c, map, counts)
                               : serial::count_active_per_channel(y, n, c, map, counts);
}

#define AGCN_INSTANTIATE_KERNELS(T)                                                               \
  template void conv2d_forward<T>(const T*, const T*, T*, const ConvGeom&);                       \
  template void conv2d_backward_input<T>(const T*, const T*, T*, const ConvGeom&);                \
  template void conv2d_backward_weights<T>(const T*, const T*, T*, const ConvGeom&);              \
  template void agc_forward<T>(const T*, const T*, const T*, const T*, T*, T*, std::int64_t,      \
                               std::int64_t, std::int64_t);                                       \
  template void agc_backward<T>(const T*, const T*, const T*, const T*, const T*, T*, T*, T*,    \
                                T*, std::int64_t, std::int64_t, std::int64_t);                    \
  template void bn_train_forward<T>(const T*, const T*, const T*, T, T*, T*, T*, T*,              \
                                    std::int64_t, std::int64_t, std::int64_t);                    \
  template void bn_infer_forward<T>(const T*, const T*, const T*, const T*, const T*, T, T*,      \
                                    std::int64_t, std::int64_t, std::int64_t);                    \
  template void bn_train_backward<T>(const T*, const T*, const T*, const T*, T, T*, T*, T*,       \
                                     std::int64_t, std::int64_t, std::int64_t);                   \
  template void relu_forward<T>(const T*, T*, std::int64_t);                                      \
  template void relu_backward<T>(const T*, const T*, T*, std::int64_t);                           \
  template void maxpool2x2_forward<T>(const T*, T*, std::int32_t*, std::int64_t, std::int64_t,    \
                                      std::int64_t, std::int64_t);                                \
  template void unpool2x2_scatter<T>(const T*, const std::int32_t*, T*, std::int64_t,             \
                                     std::int64_t, std::int64_t, std::int64_t);                   \
  template void unpool2x2_gather<T>(const T*, const std::int32_t*, T*, std::int64_t,              \
                                    std::int64_t, std::int64_t, std::int64_t);                    \
  template void softmax_xent<T>(const T*, const std::int32_t*, const T*, std::int64_t,            \
                                std::int64_t, std::int64_t, std::int32_t, std::int64_t, T*, T*);  \
  template void count_active_per_channel<T>(const T*, std::int64_t, std::int64_t, std::int64_t,   \
                                            std::int64_t*)

AGCN_INSTANTIATE_KERNELS(float);
AGCN_INSTANTIATE_KERNELS(double);

#undef AGCN_INSTANTIATE_KERNELS

}  // namespace agcn::kernels
