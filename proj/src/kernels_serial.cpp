#include "kernels_detail.hpp"

#define AGCN_KERNEL_NS serial
#define AGCN_KERNEL_FOR agcn::kernels::detail::SeqFor{}
#include "kernels_backend.inc"
