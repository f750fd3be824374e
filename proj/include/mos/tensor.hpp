#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mos/errors.hpp"

namespace mos {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline thread_local bool grad_mode_enabled = true;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Handle to a node of the autodiff graph. Copies share the node; values are
// row-major. Rank-1 tensors are treated as a single row where a matrix is
// expected.
template <typename T = float>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw DimensionError("tensor " + shape_str(shape) + " given " + std::to_string(values.size()) +
                           " values");
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->ensure_grad();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows, bool requires_grad = false) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values), requires_grad);
  }

  static Tensor wrap(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t cols() const { return node_->shape.back(); }
  std::size_t rows() const { return size() / cols(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  T item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_lineage() const { return !node_->is_leaf(); }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), T(0));
  }

  // Same values, no lineage, no gradient tracking.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  // Deep copy as a fresh leaf; keeps the requires_grad flag.
  Tensor clone_leaf() const { return Tensor(shape(), node_->value, requires_grad()); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> values(node_->value.begin(), node_->value.end());
    return Tensor<U>(shape(), std::move(values), requires_grad());
  }

 private:
  NodePtr node_;
};

namespace detail {

template <typename T>
std::vector<T>* grad_of(const std::shared_ptr<Node<T>>& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return &n->grad;
}

// Builds an op result; attaches lineage only when some input needs gradients.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_mode_enabled) return out;
  bool needs = false;
  for (const auto* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto* in : inputs) node.parents.push_back(in->node());
  node.backward_fn = std::move(fn);
  return out;
}

template <typename T>
Tensor<T> make_result_n(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                        std::function<void(Node<T>&)> fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_mode_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs) node.parents.push_back(in.node());
  node.backward_fn = std::move(fn);
  return out;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() > 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * n;
      T s = 0;
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
      c[i * k + p] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Interior gradients are recomputed on
// every call; leaf gradients accumulate until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward() requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
  }
  if (!loss.requires_grad()) throw UsageError("backward() on a tensor without autodiff lineage");

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (NodeT* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  NodeT* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (k != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node<T>& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (auto* ga = detail::grad_of(pa)) detail::gemm_nt(self.grad.data(), pb->value.data(), ga->data(), m, n, k);
    if (auto* gb = detail::grad_of(pb)) detail::gemm_tn(pa->value.data(), self.grad.data(), gb->data(), m, k, n);
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    for (const auto& p : self.parents) {
      if (auto* g = detail::grad_of(p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (auto* ga = detail::grad_of(pa)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * pb->value[i];
    }
    if (auto* gb = detail::grad_of(pb)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [s](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
    }
  });
}

// x[n,d] + bias[d] added to every row. The only row-broadcast in the engine.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t d = x.cols(), n = x.rows();
  if (bias.size() != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] + bias[c];
  return detail::make_result<T>(x.shape(), std::move(out), {&x, &bias}, [n, d](detail::Node<T>& self) {
    if (auto* gx = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    }
    if (auto* gb = detail::grad_of(self.parents[1])) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) (*gb)[c] += self.grad[r * d + c];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (auto v : x.data()) s += v;
  return detail::make_result<T>({1}, {s}, {&x}, [](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(self.parents[0])) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [](detail::Node<T>& self) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    const auto& px = self.parents[0];
    if (auto* g = detail::grad_of(px)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T v = px->value[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        (*g)[i] += self.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

// Normalizes over the last dimension (population variance), then applies
// gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t d = x.cols();
  if (d == 0) throw DimensionError("layer_norm: feature dimension is zero");
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match feature dimension of " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows();
  std::vector<T> xhat(x.size()), rstd(n), out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data().data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= T(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= T(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mean) * rstd[r];
      out[r * d + c] = xhat[r * d + c] * gain[c] + bias[c];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
        const auto& pg = self.parents[1];
        auto* gx = detail::grad_of(self.parents[0]);
        auto* gg = detail::grad_of(pg);
        auto* gb = detail::grad_of(self.parents[2]);
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < n; ++r) {
          const T* dy = self.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          if (gg) {
            for (std::size_t c = 0; c < d; ++c) (*gg)[c] += dy[c] * xh[c];
          }
          if (gb) {
            for (std::size_t c = 0; c < d; ++c) (*gb)[c] += dy[c];
          }
          if (gx) {
            T mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t c = 0; c < d; ++c) {
              dxhat[c] = dy[c] * pg->value[c];
              mean_dxhat += dxhat[c];
              mean_dxhat_xhat += dxhat[c] * xh[c];
            }
            mean_dxhat /= T(d);
            mean_dxhat_xhat /= T(d);
            for (std::size_t c = 0; c < d; ++c) {
              (*gx)[r * d + c] += rstd[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
            }
          }
        }
      });
}

namespace detail {

template <typename T>
void softmax_row(const T* in, T* out, std::size_t c) {
  T mx = in[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
  T total = 0;
  for (std::size_t j = 0; j < c; ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] /= total;
}

template <typename T>
void require_no_nan(std::span<const T> values, const char* op) {
  for (auto v : values) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN in input");
  }
}

}  // namespace detail

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::require_no_nan(x.data(), "softmax_rows");
  const std::size_t c = x.cols(), r = x.rows();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i) detail::softmax_row(x.data().data() + i * c, out.data() + i * c, c);
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [r, c](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < r; ++i) {
        const T* y = self.value.data() + i * c;
        const T* dy = self.grad.data() + i * c;
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += y[j] * (dy[j] - dot);
      }
    }
  });
}

// Mean over rows of -log softmax(logits)[label], via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) {
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) +
                     " rows");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw InputError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(c) +
                       ")");
    }
  }
  std::vector<T> probs(logits.size());
  T loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits.data().data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const T lse = mx + std::log(total);
    loss += lse - row[labels[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
  }
  loss /= T(b);
  std::vector<int> owned(labels.begin(), labels.end());
  return detail::make_result<T>(
      {1}, {loss}, {&logits},
      [b, c, probs = std::move(probs), owned = std::move(owned)](detail::Node<T>& self) {
        if (auto* g = detail::grad_of(self.parents[0])) {
          const T s = self.grad[0] / T(b);
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              const T onehot = static_cast<int>(j) == owned[i] ? T(1) : T(0);
              (*g)[i * c + j] += s * (probs[i * c + j] - onehot);
            }
          }
        }
      });
}

// Stacks matrices with equal column counts vertically.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) {
      throw DimensionError("concat_rows: width mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    n += p.rows();
  }
  std::vector<T> out;
  out.reserve(n * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_result_n<T>({n, d}, std::move(out), parts, [](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& p : self.parents) {
      if (auto* g = detail::grad_of(p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[offset + i];
      }
      offset += p->value.size();
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  const std::size_t d = x.cols();
  if (count == 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of " + shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin() + start * d, x.data().begin() + (start + count) * d);
  return detail::make_result<T>({count, d}, std::move(out), {&x}, [start, d](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[start * d + i] += self.grad[i];
    }
  });
}

// [r,d] -> [times*r, d]: the whole block repeated `times` times.
template <typename T>
Tensor<T> tile_rows(const Tensor<T>& x, std::size_t times) {
  const std::size_t block = x.size(), d = x.cols();
  std::vector<T> out;
  out.reserve(block * times);
  for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), x.data().begin(), x.data().end());
  return detail::make_result<T>({x.rows() * times, d}, std::move(out), {&x}, [block, times](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(self.parents[0])) {
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t i = 0; i < block; ++i) (*g)[i] += self.grad[t * block + i];
    }
  });
}

// [r,d] -> [r*times, d]: each row repeated `times` times in place.
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times) {
  const std::size_t r = x.rows(), d = x.cols();
  std::vector<T> out;
  out.reserve(r * d * times);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t t = 0; t < times; ++t)
      out.insert(out.end(), x.data().begin() + i * d, x.data().begin() + (i + 1) * d);
  return detail::make_result<T>({r * times, d}, std::move(out), {&x}, [r, d, times](detail::Node<T>& self) {
    if (auto* g = detail::grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t t = 0; t < times; ++t)
          for (std::size_t c = 0; c < d; ++c) (*g)[i * d + c] += self.grad[((i * times) + t) * d + c];
    }
  });
}

// Attention probabilities captured by multi_head_attention, one n x n
// row-major matrix per head.
template <typename T>
struct AttentionProbe {
  std::size_t tokens = 0;
  std::vector<std::vector<T>> per_head;
};

// Scaled dot-product attention over `heads` column groups of q, k, v [n, d].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               AttentionProbe<T>* probe = nullptr) {
  detail::require_same_shape(q, k, "multi_head_attention");
  detail::require_same_shape(q, v, "multi_head_attention");
  const std::size_t n = q.rows(), d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const std::size_t dh = d / heads;
  const T scl = T(1) / std::sqrt(T(dh));
  std::vector<T> probs(heads * n * n);
  std::vector<T> out(n * d, T(0));
  std::vector<T> scores(n);
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    T* P = probs.data() + h * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += Q[i * d + off + c] * K[j * d + off + c];
        scores[j] = s * scl;
      }
      detail::softmax_row(scores.data(), P + i * n, n);
      for (std::size_t j = 0; j < n; ++j) {
        const T p = P[i * n + j];
        for (std::size_t c = 0; c < dh; ++c) out[i * d + off + c] += p * V[j * d + off + c];
      }
    }
  }
  if (probe) {
    probe->tokens = n;
    probe->per_head.clear();
    for (std::size_t h = 0; h < heads; ++h)
      probe->per_head.emplace_back(probs.begin() + h * n * n, probs.begin() + (h + 1) * n * n);
  }
  return detail::make_result<T>(
      {n, d}, std::move(out), {&q, &k, &v},
      [n, d, dh, heads, scl, probs = std::move(probs)](detail::Node<T>& self) {
        const auto& pq = self.parents[0];
        const auto& pk = self.parents[1];
        const auto& pv = self.parents[2];
        auto* gq = detail::grad_of(pq);
        auto* gk = detail::grad_of(pk);
        auto* gv = detail::grad_of(pv);
        const T* Q = pq->value.data();
        const T* K = pk->value.data();
        const T* V = pv->value.data();
        const T* dO = self.grad.data();
        std::vector<T> dP(n), dS(n);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          const T* P = probs.data() + h * n * n;
          for (std::size_t i = 0; i < n; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) {
              T s = 0;
              for (std::size_t c = 0; c < dh; ++c) s += dO[i * d + off + c] * V[j * d + off + c];
              dP[j] = s;
              dot += s * P[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) dS[j] = P[i * n + j] * (dP[j] - dot) * scl;
            if (gv) {
              for (std::size_t j = 0; j < n; ++j) {
                const T p = P[i * n + j];
                for (std::size_t c = 0; c < dh; ++c) (*gv)[j * d + off + c] += p * dO[i * d + off + c];
              }
            }
            if (gq) {
              for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < dh; ++c) (*gq)[i * d + off + c] += dS[j] * K[j * d + off + c];
            }
            if (gk) {
              for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < dh; ++c) (*gk)[j * d + off + c] += dS[j] * Q[i * d + off + c];
            }
          }
        }
      });
}

}  // namespace mos
