#include "kernels_detail.hpp"

// OpenMP build. Work is split over whole output planes (or whole output
// channels for weight grads); each element's summation order lives in the
// shared workers, so results match the serial build bit for bit at any
// thread count. schedule(static) keeps the partition itself deterministic.

namespace a2n::kernels::par {

#ifdef _OPENMP

void conv2d_forward(const ConvDims& d, const double* in, const double* w,
                    const double* bias, double* out) {
  const int64_t plane = d.out_h() * d.out_w();
#pragma omp parallel for collapse(2) schedule(static) \
    num_threads(num_threads())
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
#pragma omp parallel for collapse(2) schedule(static) \
    num_threads(num_threads())
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t ic = 0; ic < d.in_c; ++ic) {
      detail::conv2d_grad_input_plane(d, b, ic, gout, w,
                                      gin + (b * d.in_c + ic) * plane);
    }
  }
}

void conv2d_grad_weight(const ConvDims& d, const double* gout,
                        const double* in, double* gw, double* gbias) {
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (int64_t oc = 0; oc < d.out_c; ++oc) {
    detail::conv2d_grad_weight_oc(d, oc, gout, in, gw, gbias);
  }
}

#else  // no OpenMP: the parallel entry points degrade to the reference build

void conv2d_forward(const ConvDims& d, const double* in, const double* w,
                    const double* bias, double* out) {
  serial::conv2d_forward(d, in, w, bias, out);
}

void conv2d_grad_input(const ConvDims& d, const double* gout, const double* w,
                       double* gin) {
  serial::conv2d_grad_input(d, gout, w, gin);
}

void conv2d_grad_weight(const ConvDims& d, const double* gout,
                        const double* in, double* gw, double* gbias) {
  serial::conv2d_grad_weight(d, gout, in, gw, gbias);
}

#endif

}  // namespace a2n::kernels::par
