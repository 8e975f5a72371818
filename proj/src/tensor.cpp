#include "lttr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace lttr {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

namespace {

thread_local int g_no_grad_depth = 0;

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

void check_positive_extents(const Shape& s) {
  for (int64_t d : s)
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
}

// b must equal a's shape, be a suffix of it, or be a scalar; returns b's
// flat length, which divides a's.
int64_t broadcast_len(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size())
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) +
                     " onto " + shape_str(a));
  for (size_t i = 0; i < b.size(); ++i) {
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i])
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                       " vs " + shape_str(b));
  }
  return shape_numel(b);
}

bool want_grad(std::initializer_list<const Tensor*> ins) {
  if (g_no_grad_depth > 0) return false;
  for (const Tensor* t : ins)
    if (t->node_->requires_grad) return true;
  return false;
}

void attach(const std::shared_ptr<TensorNode>& n,
            std::initializer_list<std::shared_ptr<TensorNode>> parents,
            std::function<void()> fn) {
  n->requires_grad = true;
  n->parents.assign(parents.begin(), parents.end());
  n->backward_fn = std::move(fn);
}

}  // namespace

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

Tensor Tensor::zeros(const Shape& shape) {
  check_positive_extents(shape);
  return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), 0.0)));
}

Tensor Tensor::full(const Shape& shape, double v) {
  check_positive_extents(shape);
  return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), v)));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data) {
  check_positive_extents(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  return Tensor(make_node(shape, std::move(data)));
}

Tensor Tensor::scalar(double v) { return Tensor(make_node({}, {v})); }

Tensor Tensor::leaf(const Shape& shape, std::vector<double> data) {
  Tensor t = from(shape, std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.size() != node_->value.size())
    throw NumericError("no gradient accumulated for this tensor");
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size())
    throw ShapeError("index rank mismatch for shape " + shape_str(s));
  int64_t flat = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[k]) throw ShapeError("index out of range");
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->value[flat];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1)
    throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Reverse post-order DFS over parent edges gives a valid order: every
  // node's grad is complete before it propagates.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  // Interior grads are scratch for this pass; clearing them keeps a second
  // backward over a shared subgraph from double-counting. Leaves accumulate.
  for (TensorNode* n : topo)
    if (!n->parents.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <class Fwd>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* name,
                        Fwd fwd, bool is_mul, bool is_sub) {
  const int64_t bn = broadcast_len(a.shape(), b.shape(), name);
  const int64_t an = a.numel();
  std::vector<double> out(an);
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  for (int64_t i = 0; i < an; ++i) out[i] = fwd(pa[i], pb[i % bn]);
  auto n = make_node(a.shape(), std::move(out));
  if (want_grad({&a, &b})) {
    TensorNode* on = n.get();
    TensorNode* anp = a.node_.get();
    TensorNode* bnp = b.node_.get();
    attach(n, {a.node_, b.node_}, [on, anp, bnp, an, bn, is_mul, is_sub]() {
      on->ensure_grad();
      const double* g = on->grad.data();
      if (anp->requires_grad) {
        anp->ensure_grad();
        double* da = anp->grad.data();
        if (is_mul) {
          const double* pb2 = bnp->value.data();
          for (int64_t i = 0; i < an; ++i) da[i] += g[i] * pb2[i % bn];
        } else {
          for (int64_t i = 0; i < an; ++i) da[i] += g[i];
        }
      }
      if (bnp->requires_grad) {
        bnp->ensure_grad();
        double* db = bnp->grad.data();
        if (is_mul) {
          const double* pa2 = anp->value.data();
          for (int64_t i = 0; i < an; ++i) db[i % bn] += g[i] * pa2[i];
        } else if (is_sub) {
          for (int64_t i = 0; i < an; ++i) db[i % bn] -= g[i];
        } else {
          for (int64_t i = 0; i < an; ++i) db[i % bn] += g[i];
        }
      }
    });
  }
  return Tensor(n);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, "add", [](double x, double y) { return x + y; },
                          false, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, "sub", [](double x, double y) { return x - y; },
                          false, true);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, "mul", [](double x, double y) { return x * y; },
                          true, false);
}

Tensor add_scalar(const Tensor& a, double c) {
  const int64_t n = a.numel();
  std::vector<double> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + c;
  auto nd = make_node(a.shape(), std::move(out));
  if (want_grad({&a})) {
    TensorNode* on = nd.get();
    TensorNode* an = a.node_.get();
    attach(nd, {a.node_}, [on, an, n]() {
      on->ensure_grad();
      an->ensure_grad();
      for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    });
  }
  return Tensor(nd);
}

Tensor mul_scalar(const Tensor& a, double c) {
  const int64_t n = a.numel();
  std::vector<double> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * c;
  auto nd = make_node(a.shape(), std::move(out));
  if (want_grad({&a})) {
    TensorNode* on = nd.get();
    TensorNode* an = a.node_.get();
    attach(nd, {a.node_}, [on, an, n, c]() {
      on->ensure_grad();
      an->ensure_grad();
      for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * c;
    });
  }
  return Tensor(nd);
}

namespace {

template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
  const int64_t n = x.numel();
  std::vector<double> out(n);
  const double* px = x.value().data();
  for (int64_t i = 0; i < n; ++i) out[i] = f(px[i]);
  auto nd = make_node(x.shape(), std::move(out));
  if (want_grad({&x})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    attach(nd, {x.node_}, [on, xn, n, df]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* g = on->grad.data();
      const double* xv = xn->value.data();
      const double* yv = on->value.data();
      double* dx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * df(xv[i], yv[i]);
    });
  }
  return Tensor(nd);
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_op(const Tensor& x) {
  return unary_op(x, [](double v) { return std::log(v); },
                  [](double v, double) { return 1.0 / v; });
}

Tensor abs_op(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor pow_scalar(const Tensor& x, double p) {
  return unary_op(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) {
        if (v == 0.0) return 0.0;
        return p * std::pow(v, p - 1.0);
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw NumericError("clamp: lo > hi");
  return unary_op(
      x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected 2-D operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int64_t m = a.shape()[0], k = a.shape()[1];
  const int64_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  {
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    for (int64_t i = 0; i < m; ++i) {
      double* po = out.data() + i * n;
      for (int64_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        if (av == 0.0) continue;
        const double* pbr = pb + p * n;
        for (int64_t j = 0; j < n; ++j) po[j] += av * pbr[j];
      }
    }
  }
  auto nd = make_node({m, n}, std::move(out));
  if (want_grad({&a, &b})) {
    TensorNode* on = nd.get();
    TensorNode* an = a.node_.get();
    TensorNode* bn = b.node_.get();
    attach(nd, {a.node_, b.node_}, [on, an, bn, m, k, n]() {
      on->ensure_grad();
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        double* da = an->grad.data();
        const double* pb = bn->value.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* gr = g + i * n;
            const double* br = pb + p * n;
            for (int64_t j = 0; j < n; ++j) s += gr[j] * br[j];
            da[i * k + p] += s;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* db = bn->grad.data();
        const double* pa = an->value.data();
        for (int64_t i = 0; i < m; ++i) {
          const double* gr = g + i * n;
          for (int64_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            double* dbr = db + p * n;
            for (int64_t j = 0; j < n; ++j) dbr[j] += av * gr[j];
          }
        }
      }
    });
  }
  return Tensor(nd);
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
  const int64_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const double* pa = a.value().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = pa[i * n + j];
  auto nd = make_node({n, m}, std::move(out));
  if (want_grad({&a})) {
    TensorNode* on = nd.get();
    TensorNode* an = a.node_.get();
    attach(nd, {a.node_}, [on, an, m, n]() {
      on->ensure_grad();
      an->ensure_grad();
      const double* g = on->grad.data();
      double* da = an->grad.data();
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < m; ++i) da[i * n + j] += g[j * m + i];
    });
  }
  return Tensor(nd);
}

// ---------------------------------------------------------------------------
// Normalization

Tensor softmax(const Tensor& x, int64_t axis) {
  if (axis < 0 || axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[i];
  for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  const int64_t n = s[axis];
  std::vector<double> out(x.numel());
  const double* px = x.value().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double mx = px[base];
      for (int64_t t = 1; t < n; ++t) mx = std::max(mx, px[base + t * inner]);
      double z = 0.0;
      for (int64_t t = 0; t < n; ++t) {
        const double e = std::exp(px[base + t * inner] - mx);
        out[base + t * inner] = e;
        z += e;
      }
      const double iz = 1.0 / z;
      for (int64_t t = 0; t < n; ++t) out[base + t * inner] *= iz;
    }
  auto nd = make_node(s, std::move(out));
  if (want_grad({&x})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    attach(nd, {x.node_}, [on, xn, outer, inner, n]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* g = on->grad.data();
      const double* y = on->value.data();
      double* dx = xn->grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * n * inner + in;
          double dot = 0.0;
          for (int64_t t = 0; t < n; ++t)
            dot += g[base + t * inner] * y[base + t * inner];
          for (int64_t t = 0; t < n; ++t) {
            const int64_t k = base + t * inner;
            dx[k] += y[k] * (g[k] - dot);
          }
        }
    });
  }
  return Tensor(nd);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const int64_t n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n)
    throw ShapeError("layer_norm: gain/bias length must equal last extent " +
                     std::to_string(n) + ", got " + shape_str(gain.shape()) +
                     " and " + shape_str(bias.shape()));
  const int64_t slices = x.numel() / n;
  std::vector<double> out(x.numel());
  std::vector<double> means(slices), inv_std(slices);
  const double* px = x.value().data();
  const double* pg = gain.value().data();
  const double* pb = bias.value().data();
  for (int64_t sI = 0; sI < slices; ++sI) {
    const double* row = px + sI * n;
    double mu = 0.0;
    for (int64_t t = 0; t < n; ++t) mu += row[t];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t t = 0; t < n; ++t) {
      const double d = row[t] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    means[sI] = mu;
    inv_std[sI] = is;
    double* orow = out.data() + sI * n;
    for (int64_t t = 0; t < n; ++t) orow[t] = (row[t] - mu) * is * pg[t] + pb[t];
  }
  auto nd = make_node(x.shape(), std::move(out));
  if (want_grad({&x, &gain, &bias})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    TensorNode* gn = gain.node_.get();
    TensorNode* bn = bias.node_.get();
    attach(nd, {x.node_, gain.node_, bias.node_},
           [on, xn, gn, bn, n, slices, means, inv_std]() {
             on->ensure_grad();
             const double* g = on->grad.data();
             const double* px2 = xn->value.data();
             const double* pg2 = gn->value.data();
             const bool need_x = xn->requires_grad;
             const bool need_g = gn->requires_grad;
             const bool need_b = bn->requires_grad;
             if (need_x) xn->ensure_grad();
             if (need_g) gn->ensure_grad();
             if (need_b) bn->ensure_grad();
             for (int64_t sI = 0; sI < slices; ++sI) {
               const double* row = px2 + sI * n;
               const double* gr = g + sI * n;
               const double mu = means[sI];
               const double is = inv_std[sI];
               if (need_g || need_b) {
                 for (int64_t t = 0; t < n; ++t) {
                   if (need_g) gn->grad[t] += gr[t] * (row[t] - mu) * is;
                   if (need_b) bn->grad[t] += gr[t];
                 }
               }
               if (need_x) {
                 double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                 for (int64_t t = 0; t < n; ++t) {
                   const double xh = (row[t] - mu) * is;
                   const double dxh = gr[t] * pg2[t];
                   sum_dxh += dxh;
                   sum_dxh_xh += dxh * xh;
                 }
                 const double invn = 1.0 / static_cast<double>(n);
                 double* dx = xn->grad.data() + sI * n;
                 for (int64_t t = 0; t < n; ++t) {
                   const double xh = (row[t] - mu) * is;
                   const double dxh = gr[t] * pg2[t];
                   dx[t] += is * (dxh - invn * sum_dxh - xh * invn * sum_dxh_xh);
                 }
               }
             }
           });
  }
  return Tensor(nd);
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, const Shape& shape) {
  check_positive_extents(shape);
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  auto nd = make_node(shape, x.value());
  if (want_grad({&x})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    attach(nd, {x.node_}, [on, xn]() {
      on->ensure_grad();
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return Tensor(nd);
}

Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= x.rank())
    throw ShapeError("slice: axis out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  if (start < 0 || len <= 0 || start + len > s[axis])
    throw ShapeError("slice: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range for axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[i];
  for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = len;
  std::vector<double> out(outer * len * inner);
  const double* px = x.value().data();
  const int64_t n = s[axis];
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t t = 0; t < len; ++t)
      std::copy_n(px + (o * n + start + t) * inner, inner,
                  out.data() + (o * len + t) * inner);
  auto nd = make_node(os, std::move(out));
  if (want_grad({&x})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    attach(nd, {x.node_}, [on, xn, outer, inner, n, start, len]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* dx = xn->grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t t = 0; t < len; ++t) {
          const double* gs = g + (o * len + t) * inner;
          double* dxs = dx + (o * n + start + t) * inner;
          for (int64_t i = 0; i < inner; ++i) dxs[i] += gs[i];
        }
    });
  }
  return Tensor(nd);
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= parts[0].rank())
    throw ShapeError("concat: axis out of range for " + shape_str(s0));
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank())
      throw ShapeError("concat: rank mismatch");
    for (int64_t i = 0; i < p.rank(); ++i)
      if (i != axis && p.shape()[i] != s0[i])
        throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " +
                         shape_str(p.shape()));
    total += p.shape()[axis];
  }
  Shape os = s0;
  os[axis] = total;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s0[i];
  for (int64_t i = axis + 1; i < parts[0].rank(); ++i) inner *= s0[i];
  std::vector<double> out(outer * total * inner);
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t n = p.shape()[axis];
    const double* pp = p.value().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(pp + o * n * inner, n * inner,
                  out.data() + (o * total + off) * inner);
    off += n;
  }
  auto nd = make_node(os, std::move(out));
  bool any = false;
  if (g_no_grad_depth == 0)
    for (const Tensor& p : parts)
      if (p.requires_grad()) any = true;
  if (any) {
    nd->requires_grad = true;
    for (const Tensor& p : parts) nd->parents.push_back(p.node_);
    TensorNode* on = nd.get();
    std::vector<TensorNode*> pns;
    std::vector<int64_t> lens;
    for (const Tensor& p : parts) {
      pns.push_back(p.node_.get());
      lens.push_back(p.shape()[axis]);
    }
    nd->backward_fn = [on, pns, lens, outer, inner, total]() {
      on->ensure_grad();
      const double* g = on->grad.data();
      int64_t off2 = 0;
      for (size_t k = 0; k < pns.size(); ++k) {
        const int64_t n = lens[k];
        if (pns[k]->requires_grad) {
          pns[k]->ensure_grad();
          double* dp = pns[k]->grad.data();
          for (int64_t o = 0; o < outer; ++o) {
            const double* gs = g + (o * total + off2) * inner;
            double* ds = dp + o * n * inner;
            for (int64_t i = 0; i < n * inner; ++i) ds[i] += gs[i];
          }
        }
        off2 += n;
      }
    };
  }
  return Tensor(nd);
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

Tensor reduce_axis(const Tensor& x, int64_t axis, bool mean) {
  if (axis < 0 || axis >= x.rank())
    throw ShapeError("reduce: axis out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[i];
  for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  const int64_t n = s[axis];
  Shape os;
  for (int64_t i = 0; i < x.rank(); ++i)
    if (i != axis) os.push_back(s[i]);
  std::vector<double> out(outer * inner, 0.0);
  const double* px = x.value().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t t = 0; t < n; ++t) {
      const double* row = px + (o * n + t) * inner;
      double* po = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) po[i] += row[i];
    }
  const double scale = mean ? 1.0 / static_cast<double>(n) : 1.0;
  if (mean)
    for (double& v : out) v *= scale;
  auto nd = make_node(os, std::move(out));
  if (want_grad({&x})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    attach(nd, {x.node_}, [on, xn, outer, inner, n, scale]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* dx = xn->grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t t = 0; t < n; ++t) {
          const double* gs = g + o * inner;
          double* dxs = dx + (o * n + t) * inner;
          for (int64_t i = 0; i < inner; ++i) dxs[i] += gs[i] * scale;
        }
    });
  }
  return Tensor(nd);
}

Tensor reduce_all(const Tensor& x, bool mean) {
  const int64_t n = x.numel();
  double s = 0.0;
  for (double v : x.value()) s += v;
  const double scale = mean ? 1.0 / static_cast<double>(n) : 1.0;
  auto nd = make_node({}, {s * scale});
  if (want_grad({&x})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    attach(nd, {x.node_}, [on, xn, n, scale]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double g = on->grad[0] * scale;
      double* dx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return Tensor(nd);
}

}  // namespace

Tensor sum_axis(const Tensor& x, int64_t axis) { return reduce_axis(x, axis, false); }
Tensor mean_axis(const Tensor& x, int64_t axis) { return reduce_axis(x, axis, true); }
Tensor sum_all(const Tensor& x) { return reduce_all(x, false); }
Tensor mean_all(const Tensor& x) { return reduce_all(x, true); }

Tensor scale_rows(const Tensor& x, const Tensor& w) {
  if (x.rank() < 1) throw ShapeError("scale_rows: scalar input");
  const int64_t rows = x.shape()[0];
  if (w.numel() != rows)
    throw ShapeError("scale_rows: weight shape " + shape_str(w.shape()) +
                     " does not match row count " + std::to_string(rows));
  const int64_t rl = x.numel() / rows;
  std::vector<double> out(x.numel());
  const double* px = x.value().data();
  const double* pw = w.value().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double wv = pw[r];
    const double* xr = px + r * rl;
    double* po = out.data() + r * rl;
    for (int64_t i = 0; i < rl; ++i) po[i] = xr[i] * wv;
  }
  auto nd = make_node(x.shape(), std::move(out));
  if (want_grad({&x, &w})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    TensorNode* wn = w.node_.get();
    attach(nd, {x.node_, w.node_}, [on, xn, wn, rows, rl]() {
      on->ensure_grad();
      const double* g = on->grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        double* dx = xn->grad.data();
        const double* pw2 = wn->value.data();
        for (int64_t r = 0; r < rows; ++r) {
          const double wv = pw2[r];
          for (int64_t i = 0; i < rl; ++i) dx[r * rl + i] += g[r * rl + i] * wv;
        }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        double* dw = wn->grad.data();
        const double* px2 = xn->value.data();
        for (int64_t r = 0; r < rows; ++r) {
          double s = 0.0;
          for (int64_t i = 0; i < rl; ++i) s += g[r * rl + i] * px2[r * rl + i];
          dw[r] += s;
        }
      }
    });
  }
  return Tensor(nd);
}

// ---------------------------------------------------------------------------
// Block unfold / fold

namespace {

void check_blocks(const Shape& s, int64_t bh, int64_t bw) {
  if (s.size() != 3)
    throw ShapeError("unfold/fold: expected rank-3 (H,W,C), got " + shape_str(s));
  if (bh <= 0 || bw <= 0 || s[0] % bh != 0 || s[1] % bw != 0)
    throw ShapeError("unfold/fold: block (" + std::to_string(bh) + ", " +
                     std::to_string(bw) + ") does not tile " + shape_str(s));
}

}  // namespace

Tensor unfold_blocks(const Tensor& x, int64_t bh, int64_t bw) {
  check_blocks(x.shape(), bh, bw);
  const int64_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const int64_t gh = h / bh, gw = w / bw;
  std::vector<double> out(x.numel());
  const double* px = x.value().data();
  int64_t row = 0;
  for (int64_t by = 0; by < gh; ++by)
    for (int64_t bx = 0; bx < gw; ++bx, ++row) {
      double* po = out.data() + row * bh * bw * c;
      for (int64_t iy = 0; iy < bh; ++iy)
        for (int64_t ix = 0; ix < bw; ++ix) {
          const double* src = px + ((by * bh + iy) * w + bx * bw + ix) * c;
          std::copy_n(src, c, po + (iy * bw + ix) * c);
        }
    }
  auto nd = make_node({gh * gw, bh * bw * c}, std::move(out));
  if (want_grad({&x})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    attach(nd, {x.node_}, [on, xn, h, w, c, bh, bw, gh, gw]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* dx = xn->grad.data();
      int64_t row2 = 0;
      for (int64_t by = 0; by < gh; ++by)
        for (int64_t bx = 0; bx < gw; ++bx, ++row2) {
          const double* gs = g + row2 * bh * bw * c;
          for (int64_t iy = 0; iy < bh; ++iy)
            for (int64_t ix = 0; ix < bw; ++ix) {
              double* dst = dx + ((by * bh + iy) * w + bx * bw + ix) * c;
              const double* src = gs + (iy * bw + ix) * c;
              for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
            }
        }
      (void)h;
    });
  }
  return Tensor(nd);
}

Tensor fold_blocks(const Tensor& rows, int64_t h, int64_t w, int64_t c,
                   int64_t bh, int64_t bw) {
  check_blocks({h, w, c}, bh, bw);
  const int64_t gh = h / bh, gw = w / bw;
  if (rows.rank() != 2 || rows.shape()[0] != gh * gw ||
      rows.shape()[1] != bh * bw * c)
    throw ShapeError("fold: rows " + shape_str(rows.shape()) +
                     " do not match target (" + std::to_string(h) + ", " +
                     std::to_string(w) + ", " + std::to_string(c) + ") blocks");
  std::vector<double> out(h * w * c);
  const double* pr = rows.value().data();
  int64_t row = 0;
  for (int64_t by = 0; by < gh; ++by)
    for (int64_t bx = 0; bx < gw; ++bx, ++row) {
      const double* src = pr + row * bh * bw * c;
      for (int64_t iy = 0; iy < bh; ++iy)
        for (int64_t ix = 0; ix < bw; ++ix)
          std::copy_n(src + (iy * bw + ix) * c, c,
                      out.data() + ((by * bh + iy) * w + bx * bw + ix) * c);
    }
  auto nd = make_node({h, w, c}, std::move(out));
  if (want_grad({&rows})) {
    TensorNode* on = nd.get();
    TensorNode* rn = rows.node_.get();
    attach(nd, {rows.node_}, [on, rn, h, w, c, bh, bw, gh, gw]() {
      on->ensure_grad();
      rn->ensure_grad();
      const double* g = on->grad.data();
      double* dr = rn->grad.data();
      int64_t row2 = 0;
      for (int64_t by = 0; by < gh; ++by)
        for (int64_t bx = 0; bx < gw; ++bx, ++row2) {
          double* dst = dr + row2 * bh * bw * c;
          for (int64_t iy = 0; iy < bh; ++iy)
            for (int64_t ix = 0; ix < bw; ++ix) {
              const double* src = g + ((by * bh + iy) * w + bx * bw + ix) * c;
              double* d = dst + (iy * bw + ix) * c;
              for (int64_t k = 0; k < c; ++k) d[k] += src[k];
            }
        }
      (void)h;
    });
  }
  return Tensor(nd);
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad,
                        const char* op) {
  const int64_t span = in + 2 * pad - k;
  if (span < 0)
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) +
                     " larger than padded input " + std::to_string(in + 2 * pad));
  return span / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride,
              int64_t pad) {
  if (x.rank() != 3 || w.rank() != 4)
    throw ShapeError("conv2d: expected x (H,W,Ci) and w (kh,kw,Ci,Co), got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int64_t H = x.shape()[0], W = x.shape()[1], Ci = x.shape()[2];
  const int64_t kh = w.shape()[0], kw = w.shape()[1];
  if (w.shape()[2] != Ci)
    throw ShapeError("conv2d: input channels " + std::to_string(Ci) +
                     " vs kernel " + shape_str(w.shape()));
  const int64_t Co = w.shape()[3];
  if (b.numel() != Co)
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
  if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
  const int64_t Ho = conv_out_extent(H, kh, stride, pad, "conv2d");
  const int64_t Wo = conv_out_extent(W, kw, stride, pad, "conv2d");

  std::vector<double> out(Ho * Wo * Co);
  {
    const double* px = x.value().data();
    const double* pw = w.value().data();
    const double* pb = b.value().data();
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        double* po = out.data() + (oy * Wo + ox) * Co;
        for (int64_t co = 0; co < Co; ++co) po[co] = pb[co];
        for (int64_t ty = 0; ty < kh; ++ty) {
          const int64_t iy = oy * stride - pad + ty;
          if (iy < 0 || iy >= H) continue;
          for (int64_t tx = 0; tx < kw; ++tx) {
            const int64_t ix = ox * stride - pad + tx;
            if (ix < 0 || ix >= W) continue;
            const double* xin = px + (iy * W + ix) * Ci;
            const double* wt = pw + ((ty * kw + tx) * Ci) * Co;
            for (int64_t ci = 0; ci < Ci; ++ci) {
              const double a = xin[ci];
              if (a == 0.0) continue;
              const double* wr = wt + ci * Co;
              for (int64_t co = 0; co < Co; ++co) po[co] += a * wr[co];
            }
          }
        }
      }
  }
  auto nd = make_node({Ho, Wo, Co}, std::move(out));
  if (want_grad({&x, &w, &b})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    TensorNode* wn = w.node_.get();
    TensorNode* bn = b.node_.get();
    attach(nd, {x.node_, w.node_, b.node_},
           [on, xn, wn, bn, H, W, Ci, kh, kw, Co, Ho, Wo, stride, pad]() {
             on->ensure_grad();
             const double* g = on->grad.data();
             const bool need_x = xn->requires_grad;
             const bool need_w = wn->requires_grad;
             if (need_x) xn->ensure_grad();
             if (need_w) wn->ensure_grad();
             if (bn->requires_grad) {
               bn->ensure_grad();
               double* db = bn->grad.data();
               for (int64_t cell = 0; cell < Ho * Wo; ++cell)
                 for (int64_t co = 0; co < Co; ++co) db[co] += g[cell * Co + co];
             }
             if (!need_x && !need_w) return;
             const double* px = xn->value.data();
             const double* pw = wn->value.data();
             double* dx = need_x ? xn->grad.data() : nullptr;
             double* dw = need_w ? wn->grad.data() : nullptr;
             for (int64_t oy = 0; oy < Ho; ++oy)
               for (int64_t ox = 0; ox < Wo; ++ox) {
                 const double* gi = g + (oy * Wo + ox) * Co;
                 for (int64_t ty = 0; ty < kh; ++ty) {
                   const int64_t iy = oy * stride - pad + ty;
                   if (iy < 0 || iy >= H) continue;
                   for (int64_t tx = 0; tx < kw; ++tx) {
                     const int64_t ix = ox * stride - pad + tx;
                     if (ix < 0 || ix >= W) continue;
                     const int64_t xoff = (iy * W + ix) * Ci;
                     const int64_t woff = ((ty * kw + tx) * Ci) * Co;
                     for (int64_t ci = 0; ci < Ci; ++ci) {
                       const double a = px[xoff + ci];
                       const double* wr = pw + woff + ci * Co;
                       double s = 0.0;
                       if (need_w && a != 0.0) {
                         double* dwr = dw + woff + ci * Co;
                         for (int64_t co = 0; co < Co; ++co) {
                           const double gv = gi[co];
                           s += gv * wr[co];
                           dwr[co] += a * gv;
                         }
                         if (need_x) dx[xoff + ci] += s;
                       } else if (need_x) {
                         for (int64_t co = 0; co < Co; ++co) s += gi[co] * wr[co];
                         dx[xoff + ci] += s;
                       }
                     }
                   }
                 }
               }
           });
  }
  return Tensor(nd);
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride,
              int64_t pad) {
  if (x.rank() != 4 || w.rank() != 5)
    throw ShapeError("conv3d: expected x (X,Y,Z,Ci) and w (kx,ky,kz,Ci,Co), got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int64_t X = x.shape()[0], Y = x.shape()[1], Z = x.shape()[2],
                Ci = x.shape()[3];
  const int64_t kx = w.shape()[0], ky = w.shape()[1], kz = w.shape()[2];
  if (w.shape()[3] != Ci)
    throw ShapeError("conv3d: input channels " + std::to_string(Ci) +
                     " vs kernel " + shape_str(w.shape()));
  const int64_t Co = w.shape()[4];
  if (b.numel() != Co)
    throw ShapeError("conv3d: bias shape " + shape_str(b.shape()));
  if (stride <= 0) throw ShapeError("conv3d: stride must be positive");
  const int64_t Xo = conv_out_extent(X, kx, stride, pad, "conv3d");
  const int64_t Yo = conv_out_extent(Y, ky, stride, pad, "conv3d");
  const int64_t Zo = conv_out_extent(Z, kz, stride, pad, "conv3d");

  std::vector<double> out(Xo * Yo * Zo * Co);
  {
    const double* px = x.value().data();
    const double* pw = w.value().data();
    const double* pb = b.value().data();
    for (int64_t oxi = 0; oxi < Xo; ++oxi)
      for (int64_t oyi = 0; oyi < Yo; ++oyi)
        for (int64_t ozi = 0; ozi < Zo; ++ozi) {
          double* po = out.data() + ((oxi * Yo + oyi) * Zo + ozi) * Co;
          for (int64_t co = 0; co < Co; ++co) po[co] = pb[co];
          for (int64_t tx = 0; tx < kx; ++tx) {
            const int64_t ix = oxi * stride - pad + tx;
            if (ix < 0 || ix >= X) continue;
            for (int64_t ty = 0; ty < ky; ++ty) {
              const int64_t iy = oyi * stride - pad + ty;
              if (iy < 0 || iy >= Y) continue;
              for (int64_t tz = 0; tz < kz; ++tz) {
                const int64_t iz = ozi * stride - pad + tz;
                if (iz < 0 || iz >= Z) continue;
                const double* xin = px + (((ix * Y + iy) * Z + iz)) * Ci;
                const double* wt = pw + (((tx * ky + ty) * kz + tz) * Ci) * Co;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  const double a = xin[ci];
                  if (a == 0.0) continue;
                  const double* wr = wt + ci * Co;
                  for (int64_t co = 0; co < Co; ++co) po[co] += a * wr[co];
                }
              }
            }
          }
        }
  }
  auto nd = make_node({Xo, Yo, Zo, Co}, std::move(out));
  if (want_grad({&x, &w, &b})) {
    TensorNode* on = nd.get();
    TensorNode* xn = x.node_.get();
    TensorNode* wn = w.node_.get();
    TensorNode* bn = b.node_.get();
    attach(nd, {x.node_, w.node_, b.node_}, [on, xn, wn, bn, X, Y, Z, Ci, kx, ky,
                                             kz, Co, Xo, Yo, Zo, stride, pad]() {
      on->ensure_grad();
      const double* g = on->grad.data();
      const bool need_x = xn->requires_grad;
      const bool need_w = wn->requires_grad;
      if (need_x) xn->ensure_grad();
      if (need_w) wn->ensure_grad();
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* db = bn->grad.data();
        const int64_t cells = Xo * Yo * Zo;
        for (int64_t cell = 0; cell < cells; ++cell)
          for (int64_t co = 0; co < Co; ++co) db[co] += g[cell * Co + co];
      }
      if (!need_x && !need_w) return;
      const double* px = xn->value.data();
      const double* pw = wn->value.data();
      double* dx = need_x ? xn->grad.data() : nullptr;
      double* dw = need_w ? wn->grad.data() : nullptr;
      for (int64_t oxi = 0; oxi < Xo; ++oxi)
        for (int64_t oyi = 0; oyi < Yo; ++oyi)
          for (int64_t ozi = 0; ozi < Zo; ++ozi) {
            const double* gi = g + ((oxi * Yo + oyi) * Zo + ozi) * Co;
            for (int64_t tx = 0; tx < kx; ++tx) {
              const int64_t ix = oxi * stride - pad + tx;
              if (ix < 0 || ix >= X) continue;
              for (int64_t ty = 0; ty < ky; ++ty) {
                const int64_t iy = oyi * stride - pad + ty;
                if (iy < 0 || iy >= Y) continue;
                for (int64_t tz = 0; tz < kz; ++tz) {
                  const int64_t iz = ozi * stride - pad + tz;
                  if (iz < 0 || iz >= Z) continue;
                  const int64_t xoff = ((ix * Y + iy) * Z + iz) * Ci;
                  const int64_t woff = ((tx * ky + ty) * kz + tz) * Ci * Co;
                  for (int64_t ci = 0; ci < Ci; ++ci) {
                    const double a = px[xoff + ci];
                    const double* wr = pw + woff + ci * Co;
                    double s = 0.0;
                    if (need_w && a != 0.0) {
                      double* dwr = dw + woff + ci * Co;
                      for (int64_t co = 0; co < Co; ++co) {
                        const double gv = gi[co];
                        s += gv * wr[co];
                        dwr[co] += a * gv;
                      }
                      if (need_x) dx[xoff + ci] += s;
                    } else if (need_x) {
                      for (int64_t co = 0; co < Co; ++co) s += gi[co] * wr[co];
                      dx[xoff + ci] += s;
                    }
                  }
                }
              }
            }
          }
    });
  }
  return Tensor(nd);
}

}  // namespace lttr
