#include "a2n/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "a2n/errors.hpp"
#include "a2n/kernels.hpp"
#include "a2n/rng.hpp"

namespace a2n {

namespace {

thread_local bool g_grad_enabled = true;

// Collects the non-null tape nodes of the parents and installs the
// backprop closure.
void attach(Tensor& out, std::initializer_list<const Tensor*> parents,
            std::function<void()> fn) {
  out.node = std::make_shared<Node>();
  for (const Tensor* p : parents) {
    if (p->node) out.node->parents.push_back(p->node);
  }
  out.node->backprop = std::move(fn);
  out.node->out_grad = out.grad;
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad) return true;
  }
  return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape == b.shape)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape.str() +
                     " vs " + b.shape.str());
  }
}

enum class Broadcast { None, ChannelMap, SampleScalar };

// Second operand may be (B,C,1,1) over spatial dims or (B,1,1,1)/(1,1,1,1)
// over everything; those are the only two supported forms.
Broadcast resolve_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::None;
  if (b.b == a.b && b.c == a.c && b.h == 1 && b.w == 1)
    return Broadcast::ChannelMap;
  if ((b.b == a.b || b.b == 1) && b.c == 1 && b.h == 1 && b.w == 1)
    return Broadcast::SampleScalar;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() +
                   " vs " + b.str());
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << b << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor::Tensor(Shape s, bool rg) : shape(s), requires_grad(rg) {
  if (s.b < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw ShapeError("tensor: negative dimension in " + s.str());
  }
  data = std::make_shared<std::vector<double>>(
      static_cast<size_t>(s.numel()), 0.0);
  if (rg) {
    grad = std::make_shared<std::vector<double>>(
        static_cast<size_t>(s.numel()), 0.0);
  }
}

Tensor Tensor::full(Shape s, double value, bool rg) {
  Tensor t(s, rg);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> values, bool rg) {
  if (static_cast<int64_t>(values.size()) != s.numel()) {
    throw ShapeError("tensor: value count " + std::to_string(values.size()) +
                     " does not match shape " + s.str());
  }
  Tensor t(s, rg);
  *t.data = std::move(values);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor has " + std::to_string(numel()) +
                                " elements, expected 1");
  }
  return (*data)[0];
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : *data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::detached_copy() const {
  Tensor t(shape, false);
  *t.data = *data;
  return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- conv2d ---------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  const int64_t out_c = weight.shape.b, in_c = weight.shape.c;
  const int64_t kh = weight.shape.h, kw = weight.shape.w;
  if (input.shape.c != in_c) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.shape.c) +
                     " != weight in_c " + std::to_string(in_c));
  }
  if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3)) {
    throw ShapeError("conv2d: kernel sides must be 1 or 3, got " +
                     std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (stride != 1) {
    throw std::invalid_argument("conv2d: stride must be 1");
  }
  if (padding != 0 && (kh != 3 || padding != 1)) {
    throw std::invalid_argument("conv2d: padding must be 0 or (k-1)/2");
  }
  if (!(bias.shape == Shape{1, out_c, 1, 1})) {
    throw ShapeError("conv2d: bias shape " + bias.shape.str() +
                     " != (1," + std::to_string(out_c) + ",1,1)");
  }
  if (!weight.all_finite() || !bias.all_finite()) {
    throw NumericError("conv2d: non-finite weights");
  }

  kernels::ConvDims d{input.shape.b, in_c,  input.shape.h, input.shape.w,
                      out_c,         kh,    kw,            padding};
  if (d.out_h() < 1 || d.out_w() < 1) {
    throw ShapeError("conv2d: output would be empty for input " +
                     input.shape.str());
  }

  const bool want = want_grad({&input, &weight, &bias});
  Tensor out(Shape{d.batch, out_c, d.out_h(), d.out_w()}, want);
  kernels::conv2d_forward(d, input.data->data(), weight.data->data(),
                          bias.data->data(), out.data->data());
  if (want) {
    auto in_d = input.data, w_d = weight.data;
    auto gin = input.requires_grad ? input.grad : nullptr;
    auto gw = weight.requires_grad ? weight.grad : nullptr;
    auto gb = bias.requires_grad ? bias.grad : nullptr;
    auto go = out.grad;
    attach(out, {&input, &weight, &bias}, [d, in_d, w_d, gin, gw, gb, go]() {
      if (gin) kernels::conv2d_grad_input(d, go->data(), w_d->data(),
                                          gin->data());
      if (gw || gb)
        kernels::conv2d_grad_weight(d, go->data(), in_d->data(),
                                    gw ? gw->data() : nullptr,
                                    gb ? gb->data() : nullptr);
    });
  }
  return out;
}

// ---- elementwise nonlinearities --------------------------------------------

Tensor relu(const Tensor& x) {
  const bool want = want_grad({&x});
  Tensor out(x.shape, want);
  const auto& xd = *x.data;
  auto& od = *out.data;
  for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (want) {
    auto x_d = x.data, gin = x.grad, go = out.grad;
    attach(out, {&x}, [x_d, gin, go]() {
      if (!gin) return;
      for (size_t i = 0; i < x_d->size(); ++i) {
        if ((*x_d)[i] > 0.0) (*gin)[i] += (*go)[i];  // subgradient 0 at 0
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  const bool want = want_grad({&x});
  Tensor out(x.shape, want);
  const auto& xd = *x.data;
  auto& od = *out.data;
  // Upper clamp to the largest double below 1: saturation must not round
  // the open interval (0,1) shut.
  const double hi = std::nextafter(1.0, 0.0);
  const double lo = std::numeric_limits<double>::denorm_min();
  for (size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    od[i] = std::min(std::max(s, lo), hi);
  }
  if (want) {
    auto y_d = out.data, gin = x.grad, go = out.grad;
    attach(out, {&x}, [y_d, gin, go]() {
      if (!gin) return;
      for (size_t i = 0; i < y_d->size(); ++i) {
        const double y = (*y_d)[i];
        (*gin)[i] += (*go)[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

// ---- softmax ----------------------------------------------------------------

std::vector<double> softmax(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (double& o : out) o /= sum;
  return out;
}

Tensor softmax_channels(const Tensor& x) {
  if (x.shape.h != 1 || x.shape.w != 1 || x.shape.c < 1) {
    throw ShapeError("softmax_channels: expected (B,n,1,1), got " +
                     x.shape.str());
  }
  const bool want = want_grad({&x});
  Tensor out(x.shape, want);
  const int64_t B = x.shape.b, n = x.shape.c;
  for (int64_t b = 0; b < B; ++b) {
    const double* xi = x.data->data() + b * n;
    double* yo = out.data->data() + b * n;
    double m = xi[0];
    for (int64_t i = 1; i < n; ++i) m = std::max(m, xi[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      yo[i] = std::exp(xi[i] - m);
      sum += yo[i];
    }
    for (int64_t i = 0; i < n; ++i) yo[i] /= sum;
  }
  if (want) {
    auto y_d = out.data, gin = x.grad, go = out.grad;
    attach(out, {&x}, [y_d, gin, go, B, n]() {
      if (!gin) return;
      for (int64_t b = 0; b < B; ++b) {
        const double* y = y_d->data() + b * n;
        const double* g = go->data() + b * n;
        double dot = 0.0;
        for (int64_t i = 0; i < n; ++i) dot += g[i] * y[i];
        double* gi = gin->data() + b * n;
        for (int64_t i = 0; i < n; ++i) gi[i] += y[i] * (g[i] - dot);
      }
    });
  }
  return out;
}

// ---- pooling / linear -------------------------------------------------------

Tensor global_avg_pool(const Tensor& x) {
  const int64_t hw = x.shape.h * x.shape.w;
  if (hw < 1) {
    throw ShapeError("global_avg_pool: empty spatial extent " + x.shape.str());
  }
  const bool want = want_grad({&x});
  Tensor out(Shape{x.shape.b, x.shape.c, 1, 1}, want);
  const int64_t planes = x.shape.b * x.shape.c;
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = x.data->data() + p * hw;
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += src[i];
    (*out.data)[p] = acc / static_cast<double>(hw);
  }
  if (want) {
    auto gin = x.grad, go = out.grad;
    attach(out, {&x}, [gin, go, planes, hw]() {
      if (!gin) return;
      for (int64_t p = 0; p < planes; ++p) {
        const double g = (*go)[p] / static_cast<double>(hw);
        double* dst = gin->data() + p * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] += g;
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const int64_t in = weight.shape.c, out_n = weight.shape.b;
  if (x.shape.c != in || x.shape.h != 1 || x.shape.w != 1 ||
      weight.shape.h != 1 || weight.shape.w != 1) {
    throw ShapeError("linear: shapes " + x.shape.str() + " and " +
                     weight.shape.str() + " do not agree");
  }
  if (!(bias.shape == Shape{1, out_n, 1, 1})) {
    throw ShapeError("linear: bias shape " + bias.shape.str());
  }
  const bool want = want_grad({&x, &weight, &bias});
  const int64_t B = x.shape.b;
  Tensor out(Shape{B, out_n, 1, 1}, want);
  for (int64_t b = 0; b < B; ++b) {
    const double* xi = x.data->data() + b * in;
    double* yo = out.data->data() + b * out_n;
    for (int64_t o = 0; o < out_n; ++o) {
      const double* wrow = weight.data->data() + o * in;
      double acc = (*bias.data)[o];
      for (int64_t i = 0; i < in; ++i) acc += wrow[i] * xi[i];
      yo[o] = acc;
    }
  }
  if (want) {
    auto x_d = x.data, w_d = weight.data;
    auto gx = x.requires_grad ? x.grad : nullptr;
    auto gw = weight.requires_grad ? weight.grad : nullptr;
    auto gb = bias.requires_grad ? bias.grad : nullptr;
    auto go = out.grad;
    attach(out, {&x, &weight, &bias},
           [x_d, w_d, gx, gw, gb, go, B, in, out_n]() {
             for (int64_t b = 0; b < B; ++b) {
               const double* g = go->data() + b * out_n;
               const double* xi = x_d->data() + b * in;
               if (gx) {
                 double* gxi = gx->data() + b * in;
                 for (int64_t o = 0; o < out_n; ++o) {
                   const double* wrow = w_d->data() + o * in;
                   for (int64_t i = 0; i < in; ++i) gxi[i] += g[o] * wrow[i];
                 }
               }
               if (gw) {
                 for (int64_t o = 0; o < out_n; ++o) {
                   double* gwrow = gw->data() + o * in;
                   for (int64_t i = 0; i < in; ++i) gwrow[i] += g[o] * xi[i];
                 }
               }
               if (gb) {
                 for (int64_t o = 0; o < out_n; ++o) (*gb)[o] += g[o];
               }
             }
           });
  }
  return out;
}

// ---- resampling -------------------------------------------------------------

Tensor nearest_upsample(const Tensor& x, int factor) {
  if (factor < 1) throw std::invalid_argument("nearest_upsample: factor < 1");
  const bool want = want_grad({&x});
  const int64_t f = factor;
  const Shape os{x.shape.b, x.shape.c, x.shape.h * f, x.shape.w * f};
  Tensor out(os, want);
  const int64_t planes = x.shape.b * x.shape.c;
  const int64_t ih = x.shape.h, iw = x.shape.w;
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = x.data->data() + p * ih * iw;
    double* dst = out.data->data() + p * os.h * os.w;
    for (int64_t oy = 0; oy < os.h; ++oy) {
      const double* srow = src + (oy / f) * iw;
      double* drow = dst + oy * os.w;
      for (int64_t ox = 0; ox < os.w; ++ox) drow[ox] = srow[ox / f];
    }
  }
  if (want) {
    auto gin = x.grad, go = out.grad;
    attach(out, {&x}, [gin, go, planes, ih, iw, f]() {
      if (!gin) return;
      const int64_t oh = ih * f, ow = iw * f;
      for (int64_t p = 0; p < planes; ++p) {
        const double* g = go->data() + p * oh * ow;
        double* dst = gin->data() + p * ih * iw;
        for (int64_t iy = 0; iy < ih; ++iy) {
          for (int64_t ix = 0; ix < iw; ++ix) {
            double acc = 0.0;
            for (int64_t dy = 0; dy < f; ++dy) {
              const double* grow = g + (iy * f + dy) * ow + ix * f;
              for (int64_t dx = 0; dx < f; ++dx) acc += grow[dx];
            }
            dst[iy * iw + ix] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (factor < 1) throw std::invalid_argument("bilinear_upsample: factor < 1");
  const bool want = want_grad({&x});
  const int64_t f = factor;
  const int64_t ih = x.shape.h, iw = x.shape.w;
  const Shape os{x.shape.b, x.shape.c, ih * f, iw * f};
  Tensor out(os, want);

  // Half-pixel-center mapping with edge clamp, per axis.
  auto stencil = [f](int64_t out_n, int64_t in_n) {
    std::vector<int64_t> i0(out_n), i1(out_n);
    std::vector<double> w1(out_n);
    for (int64_t o = 0; o < out_n; ++o) {
      double s = (static_cast<double>(o) + 0.5) / static_cast<double>(f) - 0.5;
      s = std::min(std::max(s, 0.0), static_cast<double>(in_n - 1));
      const int64_t lo = static_cast<int64_t>(std::floor(s));
      i0[o] = lo;
      i1[o] = std::min(lo + 1, in_n - 1);
      w1[o] = s - static_cast<double>(lo);
    }
    return std::tuple(i0, i1, w1);
  };
  const auto [y0, y1, wy] = stencil(os.h, ih);
  const auto [x0, x1, wx] = stencil(os.w, iw);

  const int64_t planes = x.shape.b * x.shape.c;
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = x.data->data() + p * ih * iw;
    double* dst = out.data->data() + p * os.h * os.w;
    for (int64_t oy = 0; oy < os.h; ++oy) {
      const double* r0 = src + y0[oy] * iw;
      const double* r1 = src + y1[oy] * iw;
      const double fy = wy[oy];
      double* drow = dst + oy * os.w;
      for (int64_t ox = 0; ox < os.w; ++ox) {
        const double fx = wx[ox];
        const double top = r0[x0[ox]] * (1.0 - fx) + r0[x1[ox]] * fx;
        const double bot = r1[x0[ox]] * (1.0 - fx) + r1[x1[ox]] * fx;
        drow[ox] = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  if (want) {
    auto gin = x.grad, go = out.grad;
    attach(out, {&x},
           [gin, go, planes, ih, iw, y0 = y0, y1 = y1, wy = wy, x0 = x0,
            x1 = x1, wx = wx]() {
             if (!gin) return;
             const int64_t oh = static_cast<int64_t>(y0.size());
             const int64_t ow = static_cast<int64_t>(x0.size());
             for (int64_t p = 0; p < planes; ++p) {
               const double* g = go->data() + p * oh * ow;
               double* dst = gin->data() + p * ih * iw;
               for (int64_t oy = 0; oy < oh; ++oy) {
                 const double fy = wy[oy];
                 for (int64_t ox = 0; ox < ow; ++ox) {
                   const double fx = wx[ox];
                   const double gv = g[oy * ow + ox];
                   dst[y0[oy] * iw + x0[ox]] += gv * (1.0 - fy) * (1.0 - fx);
                   dst[y0[oy] * iw + x1[ox]] += gv * (1.0 - fy) * fx;
                   dst[y1[oy] * iw + x0[ox]] += gv * fy * (1.0 - fx);
                   dst[y1[oy] * iw + x1[ox]] += gv * fy * fx;
                 }
               }
             }
           });
  }
  return out;
}

// ---- elementwise arithmetic ---------------------------------------------------

namespace {

// Shared forward/backward skeleton for add/mul with the two broadcast cases.
Tensor binary_op(const Tensor& a, const Tensor& b, bool is_mul,
                 const char* name) {
  const Broadcast bc = resolve_broadcast(a.shape, b.shape, name);
  const bool want = want_grad({&a, &b});
  Tensor out(a.shape, want);
  const int64_t B = a.shape.b, C = a.shape.c, hw = a.shape.h * a.shape.w;
  const auto& ad = *a.data;
  const auto& bd = *b.data;
  auto& od = *out.data;

  auto b_index = [&](int64_t bi, int64_t ci) -> int64_t {
    switch (bc) {
      case Broadcast::None:
        return -1;  // unused
      case Broadcast::ChannelMap:
        return bi * C + ci;
      case Broadcast::SampleScalar:
        return b.shape.b == 1 ? 0 : bi;
    }
    return 0;
  };

  if (bc == Broadcast::None) {
    for (size_t i = 0; i < ad.size(); ++i)
      od[i] = is_mul ? ad[i] * bd[i] : ad[i] + bd[i];
  } else {
    for (int64_t bi = 0; bi < B; ++bi) {
      for (int64_t ci = 0; ci < C; ++ci) {
        const double bv = bd[b_index(bi, ci)];
        const double* ap = ad.data() + (bi * C + ci) * hw;
        double* op = od.data() + (bi * C + ci) * hw;
        for (int64_t i = 0; i < hw; ++i)
          op[i] = is_mul ? ap[i] * bv : ap[i] + bv;
      }
    }
  }

  if (want) {
    auto a_d = a.data, b_d = b.data;
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto gb = b.requires_grad ? b.grad : nullptr;
    auto go = out.grad;
    const int64_t bB = b.shape.b;
    attach(out, {&a, &b}, [a_d, b_d, ga, gb, go, bc, is_mul, B, C, hw, bB]() {
      auto bidx = [&](int64_t bi, int64_t ci) -> int64_t {
        return bc == Broadcast::ChannelMap ? bi * C + ci
                                           : (bB == 1 ? 0 : bi);
      };
      if (bc == Broadcast::None) {
        const size_t n = go->size();
        if (ga) {
          for (size_t i = 0; i < n; ++i)
            (*ga)[i] += is_mul ? (*go)[i] * (*b_d)[i] : (*go)[i];
        }
        if (gb) {
          for (size_t i = 0; i < n; ++i)
            (*gb)[i] += is_mul ? (*go)[i] * (*a_d)[i] : (*go)[i];
        }
        return;
      }
      for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t ci = 0; ci < C; ++ci) {
          const int64_t base = (bi * C + ci) * hw;
          const double bv = (*b_d)[bidx(bi, ci)];
          if (ga) {
            for (int64_t i = 0; i < hw; ++i)
              (*ga)[base + i] += is_mul ? (*go)[base + i] * bv
                                        : (*go)[base + i];
          }
          if (gb) {
            double acc = 0.0;
            for (int64_t i = 0; i < hw; ++i)
              acc += is_mul ? (*go)[base + i] * (*a_d)[base + i]
                            : (*go)[base + i];
            (*gb)[bidx(bi, ci)] += acc;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  // Broadcasting is only recognized on the second operand; both ops are
  // commutative, so reorder when the first is the small one.
  if (a.numel() < b.numel()) return binary_op(b, a, false, "add");
  return binary_op(a, b, false, "add");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.numel() < b.numel()) return binary_op(b, a, true, "mul");
  return binary_op(a, b, true, "mul");
}

Tensor scale_add(const Tensor& a, double alpha, const Tensor& b, double beta) {
  check_same_shape(a, b, "scale_add");
  const bool want = want_grad({&a, &b});
  Tensor out(a.shape, want);
  const auto& ad = *a.data;
  const auto& bd = *b.data;
  auto& od = *out.data;
  for (size_t i = 0; i < ad.size(); ++i) od[i] = alpha * ad[i] + beta * bd[i];
  if (want) {
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto gb = b.requires_grad ? b.grad : nullptr;
    auto go = out.grad;
    attach(out, {&a, &b}, [ga, gb, go, alpha, beta]() {
      const size_t n = go->size();
      if (ga)
        for (size_t i = 0; i < n; ++i) (*ga)[i] += alpha * (*go)[i];
      if (gb)
        for (size_t i = 0; i < n; ++i) (*gb)[i] += beta * (*go)[i];
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int64_t c0, int64_t len) {
  if (c0 < 0 || len < 1 || c0 + len > x.shape.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," +
                     std::to_string(c0 + len) + ") outside " + x.shape.str());
  }
  const bool want = want_grad({&x});
  const int64_t hw = x.shape.h * x.shape.w;
  Tensor out(Shape{x.shape.b, len, x.shape.h, x.shape.w}, want);
  for (int64_t b = 0; b < x.shape.b; ++b) {
    const double* src = x.data->data() + (b * x.shape.c + c0) * hw;
    double* dst = out.data->data() + b * len * hw;
    std::copy(src, src + len * hw, dst);
  }
  if (want) {
    auto gin = x.grad, go = out.grad;
    const int64_t B = x.shape.b, C = x.shape.c;
    attach(out, {&x}, [gin, go, B, C, c0, len, hw]() {
      if (!gin) return;
      for (int64_t b = 0; b < B; ++b) {
        const double* g = go->data() + b * len * hw;
        double* dst = gin->data() + (b * C + c0) * hw;
        for (int64_t i = 0; i < len * hw; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape.b != b.shape.b || a.shape.h != b.shape.h ||
      a.shape.w != b.shape.w) {
    throw ShapeError("concat_channels: shapes " + a.shape.str() + " vs " +
                     b.shape.str());
  }
  const bool want = want_grad({&a, &b});
  const int64_t ca = a.shape.c, cb = b.shape.c, hw = a.shape.h * a.shape.w;
  Tensor out(Shape{a.shape.b, ca + cb, a.shape.h, a.shape.w}, want);
  for (int64_t bi = 0; bi < a.shape.b; ++bi) {
    std::copy(a.data->data() + bi * ca * hw, a.data->data() + (bi + 1) * ca * hw,
              out.data->data() + bi * (ca + cb) * hw);
    std::copy(b.data->data() + bi * cb * hw, b.data->data() + (bi + 1) * cb * hw,
              out.data->data() + (bi * (ca + cb) + ca) * hw);
  }
  if (want) {
    auto ga = a.requires_grad ? a.grad : nullptr;
    auto gb = b.requires_grad ? b.grad : nullptr;
    auto go = out.grad;
    const int64_t B = a.shape.b;
    attach(out, {&a, &b}, [ga, gb, go, B, ca, cb, hw]() {
      for (int64_t bi = 0; bi < B; ++bi) {
        const double* g = go->data() + bi * (ca + cb) * hw;
        if (ga) {
          double* dst = ga->data() + bi * ca * hw;
          for (int64_t i = 0; i < ca * hw; ++i) dst[i] += g[i];
        }
        if (gb) {
          double* dst = gb->data() + bi * cb * hw;
          for (int64_t i = 0; i < cb * hw; ++i) dst[i] += g[ca * hw + i];
        }
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  const bool want = want_grad({&x});
  Tensor out(Shape{1, 1, 1, 1}, want);
  double acc = 0.0;
  for (double v : *x.data) acc += v;
  (*out.data)[0] = acc;
  if (want) {
    auto gin = x.grad, go = out.grad;
    attach(out, {&x}, [gin, go]() {
      if (!gin) return;
      const double g = (*go)[0];
      for (double& v : *gin) v += g;
    });
  }
  return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "l1_loss");
  const bool want = want_grad({&pred, &target});
  Tensor out(Shape{1, 1, 1, 1}, want);
  const auto& pd = *pred.data;
  const auto& td = *target.data;
  const double n = static_cast<double>(pd.size());
  double acc = 0.0;
  for (size_t i = 0; i < pd.size(); ++i) acc += std::abs(pd[i] - td[i]);
  (*out.data)[0] = acc / n;
  if (want) {
    auto p_d = pred.data, t_d = target.data;
    auto gp = pred.requires_grad ? pred.grad : nullptr;
    auto gt = target.requires_grad ? target.grad : nullptr;
    auto go = out.grad;
    attach(out, {&pred, &target}, [p_d, t_d, gp, gt, go, n]() {
      const double g = (*go)[0] / n;
      for (size_t i = 0; i < p_d->size(); ++i) {
        const double diff = (*p_d)[i] - (*t_d)[i];
        const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        if (gp) (*gp)[i] += g * s;
        if (gt) (*gt)[i] -= g * s;
      }
    });
  }
  return out;
}

Tensor l2_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "l2_loss");
  const bool want = want_grad({&pred, &target});
  Tensor out(Shape{1, 1, 1, 1}, want);
  const auto& pd = *pred.data;
  const auto& td = *target.data;
  const double n = static_cast<double>(pd.size());
  double acc = 0.0;
  for (size_t i = 0; i < pd.size(); ++i) {
    const double d = pd[i] - td[i];
    acc += d * d;
  }
  (*out.data)[0] = acc / n;
  if (want) {
    auto p_d = pred.data, t_d = target.data;
    auto gp = pred.requires_grad ? pred.grad : nullptr;
    auto gt = target.requires_grad ? target.grad : nullptr;
    auto go = out.grad;
    attach(out, {&pred, &target}, [p_d, t_d, gp, gt, go, n]() {
      const double g = 2.0 * (*go)[0] / n;
      for (size_t i = 0; i < p_d->size(); ++i) {
        const double diff = (*p_d)[i] - (*t_d)[i];
        if (gp) (*gp)[i] += g * diff;
        if (gt) (*gt)[i] -= g * diff;
      }
    });
  }
  return out;
}

// ---- backward sweep -----------------------------------------------------------

void backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                loss.shape.str());
  }
  if (!loss.requires_grad || !loss.grad) return;
  if (!loss.node) {
    (*loss.grad)[0] += 1.0;  // bare leaf loss
    return;
  }

  // Iterative postorder DFS; the reversed order runs every consumer before
  // its producers.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    size_t next;
  };
  std::vector<Frame> stack{{loss.node.get(), 0}};
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p != nullptr && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  // Interior buffers carry only this sweep's values; leaves (no node) keep
  // accumulating across sweeps.
  for (Node* n : order) {
    if (n->out_grad) std::fill(n->out_grad->begin(), n->out_grad->end(), 0.0);
  }
  (*loss.grad)[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop();
  }
}

void zero_grads(const std::vector<Tensor>& tensors) {
  for (const Tensor& t : tensors) {
    if (t.grad) std::fill(t.grad->begin(), t.grad->end(), 0.0);
  }
}

void zero_grads(std::vector<Parameter>& params) {
  for (Parameter& p : params) p.tensor.zero_grad();
}

// ---- finite differences ---------------------------------------------------------

double grad_check(const std::function<Tensor()>& make_loss,
                  const std::vector<Tensor>& params, double eps,
                  int64_t max_coords_per_param, uint64_t seed) {
  const double v1 = make_loss().item();
  const double v2 = make_loss().item();
  if (v1 != v2) {
    throw NumericError("grad_check: map is not deterministic (" +
                       std::to_string(v1) + " vs " + std::to_string(v2) + ")");
  }

  zero_grads(params);
  Tensor loss = make_loss();
  backward(loss);

  Rng rng(seed);
  double max_rel = 0.0;
  for (const Tensor& p : params) {
    if (!p.grad) continue;
    const int64_t n = p.numel();
    const int64_t k = std::min<int64_t>(max_coords_per_param, n);
    for (int64_t j = 0; j < k; ++j) {
      const int64_t i = k == n ? j : rng.uniform_int(n);
      const double keep = (*p.data)[i];
      (*p.data)[i] = keep + eps;
      const double fp = make_loss().item();
      (*p.data)[i] = keep - eps;
      const double fm = make_loss().item();
      (*p.data)[i] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = (*p.grad)[i];
      const double rel = std::abs(an - fd) / std::max(std::abs(an), 1e-8);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace a2n
