#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace a2n {

// Dense 4-D shape, NCHW.
struct Shape {
  int64_t b = 0, c = 0, h = 0, w = 0;

  int64_t numel() const { return b * c * h * w; }
  bool operator==(const Shape& o) const = default;
  std::string str() const;
};

struct Node;

// Value type with shared payload: copies alias the same data/grad buffers.
// Tensors are immutable once built into a graph; gradient buffers are the
// one mutable part and are only written during backward() and zero_grad().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, bool requires_grad = false);

  static Tensor full(Shape s, double value, bool requires_grad = false);
  static Tensor from(Shape s, std::vector<double> values,
                     bool requires_grad = false);

  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // null unless requires_grad
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves

  int64_t numel() const { return shape.numel(); }
  int64_t idx(int64_t b, int64_t c, int64_t y, int64_t x) const {
    return ((b * shape.c + c) * shape.h + y) * shape.w + x;
  }
  double& at(int64_t b, int64_t c, int64_t y, int64_t x) {
    return (*data)[idx(b, c, y, x)];
  }
  double at(int64_t b, int64_t c, int64_t y, int64_t x) const {
    return (*data)[idx(b, c, y, x)];
  }
  // Scalar value of a 1-element tensor.
  double item() const;

  void zero_grad();
  bool all_finite() const;
  Tensor detached_copy() const;
};

// Tape node. backprop() adds into the parents' grad buffers; everything it
// needs is captured at op-construction time. out_grad is the producing op's
// output gradient buffer, reset at the start of every backward sweep so that
// only leaf gradients accumulate across sweeps.
struct Node {
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;
  std::shared_ptr<std::vector<double>> out_grad;
};

// Named trainable tensor. Models keep these in registration order; that
// order is the documented parameter iteration order.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Graph-mode switch. Ops record tape nodes only while grads are enabled.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- differentiable ops -------------------------------------------------
//
// All ops are pure: they read their inputs and return a fresh tensor.
// Gradient accumulation uses += throughout, so repeated backward() calls
// without zero_grad() accumulate.

// Cross-correlation with zero padding. weight is (out_c, in_c, kh, kw)
// packed into Shape{out_c, in_c, kh, kw}; bias is (1, out_c, 1, 1).
// stride must be 1; kernel sides in {1, 3}; padding 0 or (k-1)/2.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0);

Tensor relu(const Tensor& x);

// Stable logistic; output clamped inside (0, 1) so saturation never rounds
// to an exact 0 or 1.
Tensor sigmoid(const Tensor& x);

// Softmax across the channel axis of a (B, n, 1, 1) tensor, with
// max-subtraction.
Tensor softmax_channels(const Tensor& x);

// Plain vector softmax, same algorithm. Used by tests and weight readouts.
std::vector<double> softmax(const std::vector<double>& v);

Tensor global_avg_pool(const Tensor& x);

// Affine map on (B, in, 1, 1): weight (out, in, 1, 1), bias (1, out, 1, 1).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor nearest_upsample(const Tensor& x, int factor);

// Half-pixel-center bilinear upsample with edge clamp.
Tensor bilinear_upsample(const Tensor& x, int factor);

// Elementwise add/mul. Shapes must match except for the two supported
// broadcast forms of the second operand: (B, C, 1, 1) over spatial dims,
// and (B, 1, 1, 1) or (1, 1, 1, 1) per-sample scalars over all dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// alpha*a + beta*b, same shape only.
Tensor scale_add(const Tensor& a, double alpha, const Tensor& b, double beta);

Tensor slice_channels(const Tensor& x, int64_t c0, int64_t len);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Sum of all elements, as a (1,1,1,1) tensor.
Tensor sum_all(const Tensor& x);

// Mean absolute error. Subgradient at ties is 0.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// Mean squared error over all elements.
Tensor l2_loss(const Tensor& pred, const Tensor& target);

// Reverse-mode sweep from a scalar loss. Resets the gradient buffers of all
// interior (op-produced) tensors in the subgraph, seeds d(loss)/d(loss) = 1,
// and runs the tape consumer-first. Leaf gradients are never reset here, so
// repeated calls accumulate one sweep's worth each.
void backward(Tensor& loss);

void zero_grads(const std::vector<Tensor>& tensors);
void zero_grads(std::vector<Parameter>& params);

// Central finite differences against the analytic gradient.
//
// make_loss must rebuild the graph from the current parameter values and
// be deterministic; it is evaluated twice up front and a mismatch raises
// NumericError. Returns the max over sampled coordinates of
// |analytic - (f(t+e) - f(t-e)) / 2e| / max(|analytic|, 1e-8).
double grad_check(const std::function<Tensor()>& make_loss,
                  const std::vector<Tensor>& params, double eps = 1e-5,
                  int64_t max_coords_per_param = 16, uint64_t seed = 17);

}  // namespace a2n
