#pragma once

#include <cstdint>

// Convolution compute kernels. Two builds of the same math: a serial
// reference under kernels::serial and an OpenMP build under kernels::par.
// Both call the shared per-plane workers in kernels_common.cpp, so for any
// thread count the summation order per output element is identical and the
// results are bit-identical. The unqualified entry points dispatch on the
// process-wide thread setting.

namespace a2n::kernels {

// stride is fixed at 1; output sides are in + 2*pad - k + 1.
struct ConvDims {
  int64_t batch, in_c, in_h, in_w;
  int64_t out_c, k_h, k_w, pad;

  int64_t out_h() const { return in_h + 2 * pad - k_h + 1; }
  int64_t out_w() const { return in_w + 2 * pad - k_w + 1; }
};

int num_threads();
void set_num_threads(int n);
bool openmp_available();

namespace serial {
void conv2d_forward(const ConvDims& d, const double* in, const double* w,
                    const double* bias, double* out);
// Accumulates (+=) into gin.
void conv2d_grad_input(const ConvDims& d, const double* gout, const double* w,
                       double* gin);
// Accumulates (+=) into gw / gbias; either may be null to skip.
void conv2d_grad_weight(const ConvDims& d, const double* gout,
                        const double* in, double* gw, double* gbias);
}  // namespace serial

namespace par {
void conv2d_forward(const ConvDims& d, const double* in, const double* w,
                    const double* bias, double* out);
void conv2d_grad_input(const ConvDims& d, const double* gout, const double* w,
                       double* gin);
void conv2d_grad_weight(const ConvDims& d, const double* gout,
                        const double* in, double* gw, double* gbias);
}  // namespace par

void conv2d_forward(const ConvDims& d, const double* in, const double* w,
                    const double* bias, double* out);
void conv2d_grad_input(const ConvDims& d, const double* gout, const double* w,
                       double* gin);
void conv2d_grad_weight(const ConvDims& d, const double* gout,
                        const double* in, double* gw, double* gbias);

}  // namespace a2n::kernels
