#pragma once

#include "a2n/kernels.hpp"

// Per-plane workers shared by the serial and OpenMP kernel builds. They are
// compiled once (kernels_common.cpp) so both paths execute the same machine
// code and stay bit-identical.

namespace a2n::kernels::detail {

void conv2d_forward_plane(const ConvDims& d, int64_t b, int64_t oc,
                          const double* in, const double* w, double bias,
                          double* out_plane);

void conv2d_grad_input_plane(const ConvDims& d, int64_t b, int64_t ic,
                             const double* gout, const double* w,
                             double* gin_plane);

void conv2d_grad_weight_oc(const ConvDims& d, int64_t oc, const double* gout,
                           const double* in, double* gw, double* gbias);

}  // namespace a2n::kernels::detail
