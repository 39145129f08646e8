#include "kernels_detail.hpp"

// Reference build: the exact loops of the OpenMP build, minus the pragmas.
// Kept as the comparison baseline for tests and the kernel benchmark.

namespace a2n::kernels::serial {

void conv2d_forward(const ConvDims& d, const double* in, const double* w,
                    const double* bias, double* out) {
  const int64_t plane = d.out_h() * d.out_w();
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t oc = 0; oc < d.out_c; ++oc) {
      detail::conv2d_forward_plane(d, b, oc, in, w, bias[oc],
                                   out + (b * d.out_c + oc) * plane);
    }
  }
}

void conv2d_grad_input(const ConvDims& d, const double* gout, const double* w,
                       double* gin) {
  const int64_t plane = d.in_h * d.in_w;
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t ic = 0; ic < d.in_c; ++ic) {
      detail::conv2d_grad_input_plane(d, b, ic, gout, w,
                                      gin + (b * d.in_c + ic) * plane);
    }
  }
}

void conv2d_grad_weight(const ConvDims& d, const double* gout,
                        const double* in, double* gw, double* gbias) {
  for (int64_t oc = 0; oc < d.out_c; ++oc) {
    detail::conv2d_grad_weight_oc(d, oc, gout, in, gw, gbias);
  }
}

}  // namespace a2n::kernels::serial
