#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "lttr/errors.hpp"

namespace lttr {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Value-semantic handle to a node of the reverse-mode tape. Copies share
// the underlying storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);
  static Tensor from(const Shape& shape, std::vector<double> data);
  static Tensor scalar(double v);
  // Leaf with requires_grad set; the starting point for parameters.
  static Tensor leaf(const Shape& shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& raw_value() { return node_->value; }
  const std::vector<double>& grad() const;
  std::vector<double>& raw_grad() { return node_->grad; }

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  // Reverse pass from a scalar root; accumulates into .grad of every
  // requires_grad node reachable through the tape.
  void backward() const;
  void zero_grad();

  std::shared_ptr<TensorNode> node_;

  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
};

// Autograd toggle; finite-difference evaluation runs with it off.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Elementwise; b may equal a's shape, be a suffix of it (broadcast over
// leading dims), or be a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor abs_op(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double p);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-D only

Tensor softmax(const Tensor& x, int64_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);

Tensor sum_axis(const Tensor& x, int64_t axis);
Tensor mean_axis(const Tensor& x, int64_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// out[i, ...] = x[i, ...] * w[i];  w of shape (N) or (N,1).
Tensor scale_rows(const Tensor& x, const Tensor& w);

// Non-overlapping block partition of a (H,W,C) map into rows of length
// bh*bw*C, row-major over blocks, row contents row-major over the block.
Tensor unfold_blocks(const Tensor& x, int64_t bh, int64_t bw);
Tensor fold_blocks(const Tensor& rows, int64_t h, int64_t w, int64_t c,
                   int64_t bh, int64_t bw);

// x (H,W,Ci), w (kh,kw,Ci,Co), b (Co)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int64_t stride, int64_t pad);
// x (X,Y,Z,Ci), w (kx,ky,kz,Ci,Co), b (Co)
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
              int64_t stride, int64_t pad);

}  // namespace lttr
