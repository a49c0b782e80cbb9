// The only TU compiled with OpenMP pragmas. Without OpenMP support the
// pragma is inert and this backend degrades to the serial loop.

#include "kernels_detail.hpp"

namespace agcn::kernels::detail {

struct OmpFor {
  template <typename F>
  void operator()(int64_t count, F&& f) const {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) f(i);
  }
};

}  // namespace agcn::kernels::detail

#define AGCN_KERNEL_NS omp
#define AGCN_KERNEL_FOR agcn::kernels::detail::OmpFor{}
#include "kernels_backend.inc"
