#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kernels_detail.hpp"

namespace a2n::kernels {

namespace {
std::atomic<int> g_threads{
#ifdef _OPENMP
    0  // 0 = not yet initialized, resolved lazily to omp_get_max_threads()
#else
    1
#endif
};
}  // namespace

int num_threads() {
  int n = g_threads.load(std::memory_order_relaxed);
#ifdef _OPENMP
  if (n == 0) {
    n = omp_get_max_threads();
    g_threads.store(n, std::memory_order_relaxed);
  }
#endif
  return n < 1 ? 1 : n;
}

void set_num_threads(int n) {
  g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

void conv2d_forward(const ConvDims& d, const double* in, const double* w,
                    const double* bias, double* out) {
  if (num_threads() > 1 && openmp_available()) {
    par::conv2d_forward(d, in, w, bias, out);
  } else {
    serial::conv2d_forward(d, in, w, bias, out);
  }
}

void conv2d_grad_input(const ConvDims& d, const double* gout, const double* w,
                       double* gin) {
  if (num_threads() > 1 && openmp_available()) {
    par::conv2d_grad_input(d, gout, w, gin);
  } else {
    serial::conv2d_grad_input(d, gout, w, gin);
  }
}

void conv2d_grad_weight(const ConvDims& d, const double* gout,
                        const double* in, double* gw, double* gbias) {
  if (num_threads() > 1 && openmp_available()) {
    par::conv2d_grad_weight(d, gout, in, gw, gbias);
  } else {
    serial::conv2d_grad_weight(d, gout, in, gw, gbias);
  }
}

namespace detail {

// out[oy][ox] = bias + sum over (ic, kh, kw) of w * in, in that order.
void conv2d_forward_plane(const ConvDims& d, int64_t b, int64_t oc,
                          const double* in, const double* w, double bias,
                          double* out_plane) {
  const int64_t oh = d.out_h(), ow = d.out_w();
  std::fill(out_plane, out_plane + oh * ow, bias);
  for (int64_t ic = 0; ic < d.in_c; ++ic) {
    const double* wk = w + ((oc * d.in_c + ic) * d.k_h) * d.k_w;
    const double* ipl = in + ((b * d.in_c + ic) * d.in_h) * d.in_w;
    for (int64_t oy = 0; oy < oh; ++oy) {
      double* orow = out_plane + oy * ow;
      for (int64_t kh = 0; kh < d.k_h; ++kh) {
        const int64_t iy = oy + kh - d.pad;
        if (iy < 0 || iy >= d.in_h) continue;
        const double* irow = ipl + iy * d.in_w;
        for (int64_t kw = 0; kw < d.k_w; ++kw) {
          const double wv = wk[kh * d.k_w + kw];
          const int64_t lo = std::max<int64_t>(0, d.pad - kw);
          const int64_t hi = std::min(ow, d.in_w + d.pad - kw);
          const double* src = irow + kw - d.pad;
          for (int64_t ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
        }
      }
    }
  }
}

// gin[iy][ix] += sum over (oc, kh, kw) of w * gout, in that order.
void conv2d_grad_input_plane(const ConvDims& d, int64_t b, int64_t ic,
                             const double* gout, const double* w,
                             double* gin_plane) {
  const int64_t oh = d.out_h(), ow = d.out_w();
  for (int64_t oc = 0; oc < d.out_c; ++oc) {
    const double* wk = w + ((oc * d.in_c + ic) * d.k_h) * d.k_w;
    const double* gpl = gout + ((b * d.out_c + oc) * oh) * ow;
    for (int64_t iy = 0; iy < d.in_h; ++iy) {
      double* grow = gin_plane + iy * d.in_w;
      for (int64_t kh = 0; kh < d.k_h; ++kh) {
        const int64_t oy = iy - kh + d.pad;
        if (oy < 0 || oy >= oh) continue;
        const double* gorow = gpl + oy * ow;
        for (int64_t kw = 0; kw < d.k_w; ++kw) {
          const double wv = wk[kh * d.k_w + kw];
          // ox = ix - kw + pad must land in [0, ow)
          const int64_t lo = std::max<int64_t>(0, kw - d.pad);
          const int64_t hi = std::min(d.in_w, ow + kw - d.pad);
          const double* src = gorow - kw + d.pad;
          for (int64_t ix = lo; ix < hi; ++ix) grow[ix] += wv * src[ix];
        }
      }
    }
  }
}

// gw[oc][ic][kh][kw] += sum over (b, oy, ox); gbias[oc] += sum of gout.
void conv2d_grad_weight_oc(const ConvDims& d, int64_t oc, const double* gout,
                           const double* in, double* gw, double* gbias) {
  const int64_t oh = d.out_h(), ow = d.out_w();
  if (gw != nullptr) {
    for (int64_t ic = 0; ic < d.in_c; ++ic) {
      double* wk = gw + ((oc * d.in_c + ic) * d.k_h) * d.k_w;
      for (int64_t kh = 0; kh < d.k_h; ++kh) {
        for (int64_t kw = 0; kw < d.k_w; ++kw) {
          double acc = 0.0;
          for (int64_t b = 0; b < d.batch; ++b) {
            const double* gpl = gout + ((b * d.out_c + oc) * oh) * ow;
            const double* ipl = in + ((b * d.in_c + ic) * d.in_h) * d.in_w;
            for (int64_t oy = 0; oy < oh; ++oy) {
              const int64_t iy = oy + kh - d.pad;
              if (iy < 0 || iy >= d.in_h) continue;
              const double* gorow = gpl + oy * ow;
              const double* irow = ipl + iy * d.in_w + kw - d.pad;
              const int64_t lo = std::max<int64_t>(0, d.pad - kw);
              const int64_t hi = std::min(ow, d.in_w + d.pad - kw);
              for (int64_t ox = lo; ox < hi; ++ox) acc += gorow[ox] * irow[ox];
            }
          }
          wk[kh * d.k_w + kw] += acc;
        }
      }
    }
  }
  if (gbias != nullptr) {
    double acc = 0.0;
    for (int64_t b = 0; b < d.batch; ++b) {
      const double* gpl = gout + ((b * d.out_c + oc) * oh) * ow;
      for (int64_t i = 0; i < oh * ow; ++i) acc += gpl[i];
    }
    gbias[oc] += acc;
  }
}

}  // namespace detail
}  // namespace a2n::kernels
