#pragma once
// Dense tensors with tape-based reverse-mode autodiff.
//
// The graph is rebuilt on every forward pass and freed when the output
// tensors go out of scope. Templated on the scalar type: float is the
// working precision, double instantiations back the finite-difference
// gradient harness. Reductions and dot products accumulate in double.
//
// Forward/backward over one graph is single-threaded; distinct graphs over
// read-only parameters may run in parallel.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mer {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Boolean mask with numpy-style right-aligned broadcasting.
struct BoolTensor {
  Shape shape;
  std::vector<uint8_t> v;

  static BoolTensor ones(Shape s) {
    BoolTensor m;
    m.v.assign(size_t(shape_numel(s)), 1);
    m.shape = std::move(s);
    return m;
  }
  static BoolTensor from(Shape s, std::vector<uint8_t> data) {
    if (int64_t(data.size()) != shape_numel(s))
      throw std::invalid_argument("BoolTensor: data size does not match shape");
    BoolTensor m;
    m.shape = std::move(s);
    m.v = std::move(data);
    return m;
  }

  // materialize broadcast against `target` (throws on incompatible shapes)
  std::vector<uint8_t> broadcast_to(const Shape& target) const {
    const size_t tr = target.size(), mr = shape.size();
    if (mr > tr) throw std::invalid_argument("mask rank exceeds logits rank");
    std::vector<int64_t> mdims(tr, 1);
    for (size_t i = 0; i < mr; ++i) mdims[tr - mr + i] = shape[i];
    std::vector<int64_t> mstride(tr, 0);
    int64_t acc = 1;
    for (size_t i = tr; i-- > 0;) {
      if (mdims[i] != 1 && mdims[i] != target[i])
        throw std::invalid_argument("mask shape " + shape_str(shape) +
                                    " does not broadcast to " + shape_str(target));
      mstride[i] = (mdims[i] == 1) ? 0 : acc;
      acc *= mdims[i];
    }
    std::vector<uint8_t> out(size_t(shape_numel(target)));
    std::vector<int64_t> idx(tr, 0);
    for (size_t flat = 0; flat < out.size(); ++flat) {
      int64_t moff = 0;
      for (size_t i = 0; i < tr; ++i) moff += idx[i] * mstride[i];
      out[flat] = v[size_t(moff)];
      for (size_t i = tr; i-- > 0;) {
        if (++idx[i] < target[i]) break;
        idx[i] = 0;
      }
    }
    return out;
  }
};

namespace detail {

template <class T>
struct NodeT {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on demand, same extent as value
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

inline uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

// C (+)= A(MxK) * B(KxN); double accumulation
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += double(a[i * k + p]) * double(b[p * n + j]);
      c[i * n + j] = accumulate ? T(double(c[i * n + j]) + acc) : T(acc);
    }
}

// C (+)= A(MxK) * B(NxK)^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += double(a[i * k + p]) * double(b[j * k + p]);
      c[i * n + j] = accumulate ? T(double(c[i * n + j]) + acc) : T(acc);
    }
}

// C (+)= A(KxM)^T * B(KxN)
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += double(a[p * m + i]) * double(b[p * n + j]);
      c[i * n + j] = accumulate ? T(double(c[i * n + j]) + acc) : T(acc);
    }
}

}  // namespace detail

template <class T>
class TensorT {
 public:
  using Node = detail::NodeT<T>;
  using value_type = T;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static TensorT zeros(Shape s, bool requires_grad = false) {
    return filled(std::move(s), T(0), requires_grad);
  }
  static TensorT filled(Shape s, T v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(size_t(shape_numel(s)), v);
    n->shape = std::move(s);
    n->requires_grad = requires_grad;
    n->id = detail::next_node_id();
    return TensorT(std::move(n));
  }
  static TensorT from_data(Shape s, std::vector<T> data, bool requires_grad = false) {
    if (int64_t(data.size()) != shape_numel(s))
      throw std::invalid_argument("Tensor: data size " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(s));
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->id = detail::next_node_id();
    return TensorT(std::move(n));
  }
  static TensorT scalar(T v) { return from_data({1}, {v}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int ndim() const { return int(n_->shape.size()); }
  int64_t dim(int i) const { return n_->shape[size_t(i)]; }
  int64_t size() const { return int64_t(n_->value.size()); }
  int64_t rows() const { return n_->shape.at(0); }
  int64_t cols() const { return n_->shape.at(1); }

  std::vector<T>& values() { return n_->value; }
  const std::vector<T>& values() const { return n_->value; }
  T* data() { return n_->value.data(); }
  const T* data() const { return n_->value.data(); }
  T item() const {
    if (size() != 1) throw std::logic_error("item(): tensor is not scalar");
    return n_->value[0];
  }
  T at(int64_t i, int64_t j) const { return n_->value[size_t(i * cols() + j)]; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<T>& grad() const { return n_->grad; }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  std::shared_ptr<Node> node() const { return n_; }

  // Reverse pass from a scalar. Node ids increase monotonically with
  // creation order and parents precede children, so descending-id order is
  // a valid reverse topological order.
  void backward() {
    if (size() != 1) throw std::logic_error("backward(): loss must be scalar");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{n_.get()};
    seen.insert(n_.get());
    while (!stack.empty()) {
      Node* cur = stack.back();
      stack.pop_back();
      order.push_back(cur);
      for (auto& p : cur->parents)
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });
    n_->ensure_grad();
    n_->grad[0] = T(1);
    for (Node* node : order)
      if (node->backprop && node->requires_grad) node->backprop(*node);
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

template <class T>
std::shared_ptr<NodeT<T>> make_node(Shape shape,
                                    std::vector<std::shared_ptr<NodeT<T>>> parents) {
  auto n = std::make_shared<NodeT<T>>();
  n->value.assign(size_t(shape_numel(shape)), T(0));
  n->shape = std::move(shape);
  n->id = next_node_id();
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  return n;
}

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "add");
  auto n = detail::make_node<T>(a.shape(), {a.node(), b.node()});
  const auto &av = a.values(), &bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] + bv[i];
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    n->backprop = [pa, pb](detail::NodeT<T>& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
      }
    };
  }
  return TensorT<T>(n);
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "sub");
  auto n = detail::make_node<T>(a.shape(), {a.node(), b.node()});
  const auto &av = a.values(), &bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] - bv[i];
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    n->backprop = [pa, pb](detail::NodeT<T>& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
      }
    };
  }
  return TensorT<T>(n);
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  auto n = detail::make_node<T>(a.shape(), {a.node(), b.node()});
  const auto &av = a.values(), &bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] * bv[i];
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    n->backprop = [pa, pb](detail::NodeT<T>& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          pa->grad[i] += self.grad[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          pb->grad[i] += self.grad[i] * pa->value[i];
      }
    };
  }
  return TensorT<T>(n);
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  auto n = detail::make_node<T>(a.shape(), {a.node()});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] * c;
  if (n->requires_grad) {
    auto pa = a.node();
    n->backprop = [pa, c](detail::NodeT<T>& self) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
    };
  }
  return TensorT<T>(n);
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
  auto n = detail::make_node<T>(a.shape(), {a.node()});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] > T(0) ? av[i] : T(0);
  if (n->requires_grad) {
    auto pa = a.node();
    n->backprop = [pa](detail::NodeT<T>& self) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (pa->value[i] > T(0)) pa->grad[i] += self.grad[i];
    };
  }
  return TensorT<T>(n);
}

// softplus(x) = log(1 + e^x), computed as max(x,0) + log1p(exp(-|x|))
template <class T>
TensorT<T> softplus(const TensorT<T>& a) {
  auto n = detail::make_node<T>(a.shape(), {a.node()});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) {
    double x = double(av[i]);
    n->value[i] = T(std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))));
  }
  if (n->requires_grad) {
    auto pa = a.node();
    n->backprop = [pa](detail::NodeT<T>& self) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-double(pa->value[i])));
        pa->grad[i] += self.grad[i] * T(s);
      }
    };
  }
  return TensorT<T>(n);
}

// log(max(x, floor)); zero gradient in the clamped region
template <class T>
TensorT<T> log_clamped(const TensorT<T>& a, T floor = T(1e-12)) {
  auto n = detail::make_node<T>(a.shape(), {a.node()});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i)
    n->value[i] = T(std::log(std::max(double(av[i]), double(floor))));
  if (n->requires_grad) {
    auto pa = a.node();
    n->backprop = [pa, floor](detail::NodeT<T>& self) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (pa->value[i] > floor) pa->grad[i] += self.grad[i] / pa->value[i];
    };
  }
  return TensorT<T>(n);
}

// detached copy: same values, no graph link
template <class T>
TensorT<T> detach(const TensorT<T>& a) {
  return TensorT<T>::from_data(a.shape(), a.values(), false);
}

// ---------------------------------------------------------------------------
// broadcasting helpers
// ---------------------------------------------------------------------------

// x (n x d) + v (d), v broadcast over rows
template <class T>
TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& v) {
  if (x.ndim() != 2 || v.ndim() != 1 || v.dim(0) != x.cols())
    throw std::invalid_argument("add_rowvec: want (n,d) and (d), got " +
                                shape_str(x.shape()) + " and " + shape_str(v.shape()));
  const int64_t n = x.rows(), d = x.cols();
  auto out = detail::make_node<T>(x.shape(), {x.node(), v.node()});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out->value[size_t(i * d + j)] = x.values()[size_t(i * d + j)] + v.values()[size_t(j)];
  if (out->requires_grad) {
    auto px = x.node(), pv = v.node();
    out->backprop = [px, pv, n, d](detail::NodeT<T>& self) {
      if (px->requires_grad) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
      }
      if (pv->requires_grad) {
        pv->ensure_grad();
        for (int64_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (int64_t i = 0; i < n; ++i) acc += double(self.grad[size_t(i * d + j)]);
          pv->grad[size_t(j)] += T(acc);
        }
      }
    };
  }
  return TensorT<T>(out);
}

// x (n x d) * c (n or n x 1), one scalar per row broadcast over columns
template <class T>
TensorT<T> mul_colvec(const TensorT<T>& x, const TensorT<T>& c) {
  const bool ok = x.ndim() == 2 &&
                  ((c.ndim() == 1 && c.dim(0) == x.rows()) ||
                   (c.ndim() == 2 && c.dim(0) == x.rows() && c.dim(1) == 1));
  if (!ok)
    throw std::invalid_argument("mul_colvec: want (n,d) and (n), got " +
                                shape_str(x.shape()) + " and " + shape_str(c.shape()));
  const int64_t n = x.rows(), d = x.cols();
  auto out = detail::make_node<T>(x.shape(), {x.node(), c.node()});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out->value[size_t(i * d + j)] = x.values()[size_t(i * d + j)] * c.values()[size_t(i)];
  if (out->requires_grad) {
    auto px = x.node(), pc = c.node();
    out->backprop = [px, pc, n, d](detail::NodeT<T>& self) {
      if (px->requires_grad) {
        px->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j)
            px->grad[size_t(i * d + j)] += self.grad[size_t(i * d + j)] * pc->value[size_t(i)];
      }
      if (pc->requires_grad) {
        pc->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < d; ++j)
            acc += double(self.grad[size_t(i * d + j)]) * double(px->value[size_t(i * d + j)]);
          pc->grad[size_t(i)] += T(acc);
        }
      }
    };
  }
  return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = detail::make_node<T>({m, n}, {a.node(), b.node()});
  detail::gemm_nn(a.data(), b.data(), out->value.data(), m, k, n, false);
  if (out->requires_grad) {
    auto pa = a.node(), pb = b.node();
    out->backprop = [pa, pb, m, k, n](detail::NodeT<T>& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        detail::gemm_nt(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k, true);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        detail::gemm_tn(pa->value.data(), self.grad.data(), pb->grad.data(), k, m, n, true);
      }
    };
  }
  return TensorT<T>(out);
}

template <class T>
TensorT<T> transpose(const TensorT<T>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose: want 2-d tensor");
  const int64_t m = a.rows(), n = a.cols();
  auto out = detail::make_node<T>({n, m}, {a.node()});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out->value[size_t(j * m + i)] = a.values()[size_t(i * n + j)];
  if (out->requires_grad) {
    auto pa = a.node();
    out->backprop = [pa, m, n](detail::NodeT<T>& self) {
      pa->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          pa->grad[size_t(i * n + j)] += self.grad[size_t(j * m + i)];
    };
  }
  return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> sum_all(const TensorT<T>& a) {
  auto out = detail::make_node<T>({1}, {a.node()});
  double acc = 0.0;
  for (T v : a.values()) acc += double(v);
  out->value[0] = T(acc);
  if (out->requires_grad) {
    auto pa = a.node();
    out->backprop = [pa](detail::NodeT<T>& self) {
      pa->ensure_grad();
      for (auto& g : pa->grad) g += self.grad[0];
    };
  }
  return TensorT<T>(out);
}

template <class T>
TensorT<T> mean_all(const TensorT<T>& a) {
  const T inv = T(1) / T(double(a.size()));
  return scale(sum_all(a), inv);
}

// mean over entries of `v` (1-d) where mask is true; errors when none are
template <class T>
TensorT<T> masked_mean_vec(const TensorT<T>& v, const std::vector<uint8_t>& mask) {
  if (v.ndim() != 1) throw std::invalid_argument("masked_mean_vec: want 1-d tensor");
  if (!mask.empty() && int64_t(mask.size()) != v.dim(0))
    throw std::invalid_argument("masked_mean_vec: mask length mismatch");
  int64_t count = 0;
  double acc = 0.0;
  for (int64_t i = 0; i < v.dim(0); ++i) {
    if (mask.empty() || mask[size_t(i)]) {
      acc += double(v.values()[size_t(i)]);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("masked_mean_vec: no valid positions");
  auto out = detail::make_node<T>({1}, {v.node()});
  out->value[0] = T(acc / double(count));
  if (out->requires_grad) {
    auto pv = v.node();
    const T inv = T(1.0 / double(count));
    out->backprop = [pv, mask, inv](detail::NodeT<T>& self) {
      pv->ensure_grad();
      for (size_t i = 0; i < pv->grad.size(); ++i)
        if (mask.empty() || mask[i]) pv->grad[i] += self.grad[0] * inv;
    };
  }
  return TensorT<T>(out);
}

// coordinate-wise mean of same-shaped tensors, double accumulation
template <class T>
TensorT<T> mean_tensors(const std::vector<TensorT<T>>& ts) {
  if (ts.empty()) throw std::invalid_argument("mean_tensors: empty list");
  for (const auto& t : ts) detail::check_same_shape(ts[0], t, "mean_tensors");
  std::vector<std::shared_ptr<detail::NodeT<T>>> parents;
  for (const auto& t : ts) parents.push_back(t.node());
  auto out = detail::make_node<T>(ts[0].shape(), std::move(parents));
  const double inv = 1.0 / double(ts.size());
  for (size_t i = 0; i < out->value.size(); ++i) {
    double acc = 0.0;
    for (const auto& t : ts) acc += double(t.values()[i]);
    out->value[i] = T(acc * inv);
  }
  if (out->requires_grad) {
    const T invT = T(inv);
    out->backprop = [invT](detail::NodeT<T>& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * invT;
      }
    };
  }
  return TensorT<T>(out);
}

template <class T>
TensorT<T> mean_tensors(std::initializer_list<TensorT<T>> ts) {
  return mean_tensors(std::vector<TensorT<T>>(ts));
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& ts) {
  if (ts.empty()) throw std::invalid_argument("concat_cols: empty list");
  const int64_t n = ts[0].rows();
  int64_t total = 0;
  for (const auto& t : ts) {
    if (t.ndim() != 2 || t.rows() != n)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += t.cols();
  }
  std::vector<std::shared_ptr<detail::NodeT<T>>> parents;
  for (const auto& t : ts) parents.push_back(t.node());
  auto out = detail::make_node<T>({n, total}, std::move(parents));
  std::vector<int64_t> offs;
  int64_t off = 0;
  for (const auto& t : ts) {
    offs.push_back(off);
    const int64_t d = t.cols();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j)
        out->value[size_t(i * total + off + j)] = t.values()[size_t(i * d + j)];
    off += d;
  }
  if (out->requires_grad) {
    out->backprop = [n, total, offs](detail::NodeT<T>& self) {
      for (size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = self.parents[k];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        const int64_t d = p->shape[1];
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j)
            p->grad[size_t(i * d + j)] += self.grad[size_t(i * total + offs[k] + j)];
      }
    };
  }
  return TensorT<T>(out);
}

template <class T>
TensorT<T> concat_cols(std::initializer_list<TensorT<T>> ts) {
  return concat_cols(std::vector<TensorT<T>>(ts));
}

template <class T>
TensorT<T> slice_cols(const TensorT<T>& x, int64_t c0, int64_t len) {
  if (x.ndim() != 2 || c0 < 0 || len <= 0 || c0 + len > x.cols())
    throw std::invalid_argument("slice_cols: bad range");
  const int64_t n = x.rows(), d = x.cols();
  auto out = detail::make_node<T>({n, len}, {x.node()});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < len; ++j)
      out->value[size_t(i * len + j)] = x.values()[size_t(i * d + c0 + j)];
  if (out->requires_grad) {
    auto px = x.node();
    out->backprop = [px, n, d, c0, len](detail::NodeT<T>& self) {
      px->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < len; ++j)
          px->grad[size_t(i * d + c0 + j)] += self.grad[size_t(i * len + j)];
    };
  }
  return TensorT<T>(out);
}

// out[i] = x[i, idx[i]]
template <class T>
TensorT<T> select_per_row(const TensorT<T>& x, const std::vector<int>& idx) {
  if (x.ndim() != 2 || int64_t(idx.size()) != x.rows())
    throw std::invalid_argument("select_per_row: want (n,c) and n indices");
  const int64_t n = x.rows(), c = x.cols();
  for (int64_t i = 0; i < n; ++i)
    if (idx[size_t(i)] < 0 || idx[size_t(i)] >= c)
      throw std::invalid_argument("select_per_row: index out of range");
  auto out = detail::make_node<T>({n}, {x.node()});
  for (int64_t i = 0; i < n; ++i)
    out->value[size_t(i)] = x.values()[size_t(i * c + idx[size_t(i)])];
  if (out->requires_grad) {
    auto px = x.node();
    out->backprop = [px, idx, c](detail::NodeT<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        px->grad[i * size_t(c) + size_t(idx[i])] += self.grad[i];
    };
  }
  return TensorT<T>(out);
}

// zero out rows whose mask entry is false (empty mask = keep all)
template <class T>
TensorT<T> mask_rows(const TensorT<T>& x, const std::vector<uint8_t>& mask) {
  if (x.ndim() != 2) throw std::invalid_argument("mask_rows: want 2-d tensor");
  if (mask.empty()) return x;
  if (int64_t(mask.size()) != x.rows())
    throw std::invalid_argument("mask_rows: mask length mismatch");
  const int64_t n = x.rows(), d = x.cols();
  auto out = detail::make_node<T>(x.shape(), {x.node()});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out->value[size_t(i * d + j)] = mask[size_t(i)] ? x.values()[size_t(i * d + j)] : T(0);
  if (out->requires_grad) {
    auto px = x.node();
    out->backprop = [px, mask, d](detail::NodeT<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i])
          for (int64_t j = 0; j < d; ++j)
            px->grad[i * size_t(d) + size_t(j)] += self.grad[i * size_t(d) + size_t(j)];
    };
  }
  return TensorT<T>(out);
}

// table (v x d), one output row per id
template <class T>
TensorT<T> embedding_rows(const TensorT<T>& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw std::invalid_argument("embedding_rows: want 2-d table");
  const int64_t v = table.rows(), d = table.cols(), n = int64_t(ids.size());
  for (int id : ids)
    if (id < 0 || int64_t(id) >= v)
      throw std::invalid_argument("embedding_rows: id out of range");
  auto out = detail::make_node<T>({n, d}, {table.node()});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out->value[size_t(i * d + j)] = table.values()[size_t(int64_t(ids[size_t(i)]) * d + j)];
  if (out->requires_grad) {
    auto pt = table.node();
    out->backprop = [pt, ids, d](detail::NodeT<T>& self) {
      pt->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t j = 0; j < d; ++j)
          pt->grad[size_t(int64_t(ids[i]) * d + j)] += self.grad[i * size_t(d) + size_t(j)];
    };
  }
  return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// masked softmax
// ---------------------------------------------------------------------------

// Softmax along `axis`; masked entries get exactly zero and unmasked entries
// of every slice sum to one. Stabilized by max subtraction.
template <class T>
TensorT<T> masked_softmax(const TensorT<T>& x, int axis, const BoolTensor* mask = nullptr) {
  const auto& s = x.shape();
  if (axis < 0 || axis >= int(s.size()))
    throw std::invalid_argument("masked_softmax: axis out of range");
  std::vector<uint8_t> m;
  if (mask) m = mask->broadcast_to(s);
  const int64_t len = s[size_t(axis)];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[size_t(i)];
  for (size_t i = size_t(axis) + 1; i < s.size(); ++i) inner *= s[i];

  auto out = detail::make_node<T>(s, {x.node()});
  const auto& xv = x.values();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      bool any_unmasked = false;
      for (int64_t k = 0; k < len; ++k) {
        const size_t p = size_t(base + k * inner);
        if (m.empty() || m[p]) {
          any_unmasked = true;
          if (double(xv[p]) > mx) mx = double(xv[p]);  // non-finite inputs propagate
        }
      }
      if (!any_unmasked) throw std::invalid_argument("masked_softmax: empty attention row");
      double denom = 0.0;
      for (int64_t k = 0; k < len; ++k) {
        const size_t p = size_t(base + k * inner);
        if (m.empty() || m[p]) denom += std::exp(double(xv[p]) - mx);
      }
      for (int64_t k = 0; k < len; ++k) {
        const size_t p = size_t(base + k * inner);
        out->value[p] = (m.empty() || m[p]) ? T(std::exp(double(xv[p]) - mx) / denom) : T(0);
      }
    }
  }
  if (out->requires_grad) {
    auto px = x.node();
    out->backprop = [px, m, outer, inner, len](detail::NodeT<T>& self) {
      px->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * len * inner + in;
          double dot = 0.0;
          for (int64_t k = 0; k < len; ++k) {
            const size_t p = size_t(base + k * inner);
            if (m.empty() || m[p]) dot += double(self.value[p]) * double(self.grad[p]);
          }
          for (int64_t k = 0; k < len; ++k) {
            const size_t p = size_t(base + k * inner);
            if (m.empty() || m[p])
              px->grad[p] += T(double(self.value[p]) * (double(self.grad[p]) - dot));
          }
        }
      }
    };
  }
  return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// layer norm over the last axis
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      T eps = T(1e-5)) {
  if (x.ndim() < 1) throw std::invalid_argument("layer_norm: want rank >= 1");
  const int64_t d = x.shape().back();
  if (gain.ndim() != 1 || bias.ndim() != 1 || gain.dim(0) != d || bias.dim(0) != d)
    throw std::invalid_argument("layer_norm: feature extent mismatch");
  const int64_t rows = x.size() / d;
  auto out = detail::make_node<T>(x.shape(), {x.node(), gain.node(), bias.node()});
  std::vector<T> xhat(size_t(x.size()), T(0));
  std::vector<T> inv_std(size_t(rows), T(0));
  const auto& xv = x.values();
  for (int64_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += double(xv[size_t(r * d + j)]);
    mu /= double(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = double(xv[size_t(r * d + j)]) - mu;
      var += c * c;
    }
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + double(eps));
    inv_std[size_t(r)] = T(inv);
    for (int64_t j = 0; j < d; ++j) {
      const size_t p = size_t(r * d + j);
      xhat[p] = T((double(xv[p]) - mu) * inv);
      out->value[p] = gain.values()[size_t(j)] * xhat[p] + bias.values()[size_t(j)];
    }
  }
  if (out->requires_grad) {
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    out->backprop = [px, pg, pb, xhat, inv_std, rows, d](detail::NodeT<T>& self) {
      if (pg->requires_grad) pg->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      if (px->requires_grad) px->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const size_t p = size_t(r * d + j);
          const double dxh = double(self.grad[p]) * double(pg->value[size_t(j)]);
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * double(xhat[p]);
          if (pg->requires_grad) pg->grad[size_t(j)] += self.grad[p] * xhat[p];
          if (pb->requires_grad) pb->grad[size_t(j)] += self.grad[p];
        }
        if (!px->requires_grad) continue;
        mean_dxhat /= double(d);
        mean_dxhat_xhat /= double(d);
        for (int64_t j = 0; j < d; ++j) {
          const size_t p = size_t(r * d + j);
          const double dxh = double(self.grad[p]) * double(pg->value[size_t(j)]);
          px->grad[p] += T(double(inv_std[size_t(r)]) *
                           (dxh - mean_dxhat - double(xhat[p]) * mean_dxhat_xhat));
        }
      }
    };
  }
  return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// 1-d convolution along the row (utterance) axis
// ---------------------------------------------------------------------------

// x (n x d_in), w (k x d_in x d_out), b (d_out); symmetric zero padding
// (k-1)/2 keeps the output length at n. k must be odd.
template <class T>
TensorT<T> conv1d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 3 || b.ndim() != 1)
    throw std::invalid_argument("conv1d: want (n,d_in), (k,d_in,d_out), (d_out)");
  const int64_t n = x.rows(), din = x.cols();
  const int64_t k = w.dim(0), wdin = w.dim(1), dout = w.dim(2);
  if (wdin != din) throw std::invalid_argument("conv1d: feature-dim mismatch");
  if (b.dim(0) != dout) throw std::invalid_argument("conv1d: bias extent mismatch");
  if (k % 2 == 0) throw std::invalid_argument("conv1d: kernel extent must be odd");
  const int64_t c = (k - 1) / 2;
  auto out = detail::make_node<T>({n, dout}, {x.node(), w.node(), b.node()});
  const auto &xv = x.values(), &wv = w.values(), &bv = b.values();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t o = 0; o < dout; ++o) {
      double acc = double(bv[size_t(o)]);
      for (int64_t t = 0; t < k; ++t) {
        const int64_t r = i + t - c;
        if (r < 0 || r >= n) continue;
        for (int64_t j = 0; j < din; ++j)
          acc += double(xv[size_t(r * din + j)]) * double(wv[size_t((t * din + j) * dout + o)]);
      }
      out->value[size_t(i * dout + o)] = T(acc);
    }
  }
  if (out->requires_grad) {
    auto px = x.node(), pw = w.node(), pb = b.node();
    out->backprop = [px, pw, pb, n, din, k, dout, c](detail::NodeT<T>& self) {
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int64_t o = 0; o < dout; ++o) {
          double acc = 0.0;
          for (int64_t i = 0; i < n; ++i) acc += double(self.grad[size_t(i * dout + o)]);
          pb->grad[size_t(o)] += T(acc);
        }
      }
      if (pw->requires_grad) {
        pw->ensure_grad();
        for (int64_t t = 0; t < k; ++t)
          for (int64_t j = 0; j < din; ++j)
            for (int64_t o = 0; o < dout; ++o) {
              double acc = 0.0;
              for (int64_t i = 0; i < n; ++i) {
                const int64_t r = i + t - c;
                if (r < 0 || r >= n) continue;
                acc += double(px->value[size_t(r * din + j)]) *
                       double(self.grad[size_t(i * dout + o)]);
              }
              pw->grad[size_t((t * din + j) * dout + o)] += T(acc);
            }
      }
      if (px->requires_grad) {
        px->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t t = 0; t < k; ++t) {
            const int64_t r = i + t - c;
            if (r < 0 || r >= n) continue;
            for (int64_t j = 0; j < din; ++j) {
              double acc = 0.0;
              for (int64_t o = 0; o < dout; ++o)
                acc += double(pw->value[size_t((t * din + j) * dout + o)]) *
                       double(self.grad[size_t(i * dout + o)]);
              px->grad[size_t(r * din + j)] += T(acc);
            }
          }
      }
    };
  }
  return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// dropout (inverted scaling); identity when p == 0 or not training
// ---------------------------------------------------------------------------

template <class T, class RngT>
TensorT<T> dropout(const TensorT<T>& x, float p, RngT& rng, bool training) {
  if (p < 0.f || p >= 1.f) throw std::invalid_argument("dropout: p must be in [0,1)");
  if (!training || p == 0.f) return x;
  const T keep = T(1.0 / (1.0 - double(p)));
  std::vector<T> m(size_t(x.size()));
  for (auto& e : m) e = rng.uniformf() >= p ? keep : T(0);
  auto out = detail::make_node<T>(x.shape(), {x.node()});
  for (size_t i = 0; i < m.size(); ++i) out->value[i] = x.values()[i] * m[i];
  if (out->requires_grad) {
    auto px = x.node();
    out->backprop = [px, m](detail::NodeT<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < m.size(); ++i) px->grad[i] += self.grad[i] * m[i];
    };
  }
  return TensorT<T>(out);
}

using Tensor = TensorT<float>;

}  // namespace mer
