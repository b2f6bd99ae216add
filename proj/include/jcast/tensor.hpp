// tensor.hpp -- dense tensors with reverse-mode automatic differentiation.
//
// Values are stored as f64 internally; a tensor tagged f32 has its values
// snapped through float precision on construction (and on checkpoint I/O),
// which keeps round-trips bit-exact while all arithmetic stays in double.
//
// Tensors are immutable after creation except for their gradient buffers.
// Graph construction and backward() are single-threaded per training step.
#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "jcast/common.hpp"

namespace jcast {

enum class DType : int { f32 = 0, f64 = 1 };

namespace detail {

struct TensorImpl {
  std::vector<std::size_t> shape;
  DType dtype = DType::f64;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;  // reads self.grad, accumulates into parents

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

inline void check_no_nan(const std::vector<double>& v, const char* where) {
  for (double x : v)
    if (std::isnan(x)) throw NumericError(std::string("NaN input to ") + where);
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, DType dt = DType::f64) {
    return full(std::move(shape), 0.0, dt);
  }

  static Tensor full(std::vector<std::size_t> shape, double value, DType dt = DType::f64) {
    auto impl = std::make_shared<detail::TensorImpl>();
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    impl->shape = std::move(shape);
    impl->dtype = dt;
    impl->data.assign(n, dt == DType::f32 ? static_cast<double>(static_cast<float>(value)) : value);
    return Tensor(std::move(impl));
  }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          DType dt = DType::f64) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != data.size())
      throw DimensionError("from_data: shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->dtype = dt;
    if (dt == DType::f32)
      for (auto& x : data) x = static_cast<double>(static_cast<float>(x));
    impl->data = std::move(data);
    return Tensor(std::move(impl));
  }

  static Tensor scalar(double v, DType dt = DType::f64) { return from_data({}, {v}, dt); }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
  DType dtype() const { return impl_->dtype; }
  const std::vector<double>& data() const { return impl_->data; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of size " + std::to_string(size()));
    return impl_->data[0];
  }
  double at(std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape[1] + c]; }

  Tensor& set_requires_grad(bool b = true) {
    if (!impl_->is_leaf) throw ContractError("set_requires_grad on a non-leaf tensor");
    impl_->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->is_leaf; }

  const std::vector<double>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  // A detached tensor shares data but never receives gradient.
  Tensor detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
  }

  // Deep copy of values (leaf, no grad history).
  Tensor clone() const { return from_data(impl_->shape, impl_->data, impl_->dtype); }

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

  static Tensor make_op(std::vector<std::size_t> shape, std::vector<double> data,
                        std::vector<Tensor> inputs,
                        std::function<void(detail::TensorImpl&)> backward_fn,
                        DType dt = DType::f64) {
    Tensor out = from_data(std::move(shape), std::move(data), dt);
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.impl()->requires_grad;
    if (needs) {
      out.impl_->requires_grad = true;
      out.impl_->is_leaf = false;
      for (const auto& t : inputs) out.impl_->parents.push_back(t.impl_ptr());
      out.impl_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls; intermediate gradients are reset at the start of every sweep.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  auto* root = loss.impl();
  if (!root->requires_grad) return;

  // iterative topological sort (children after parents)
  std::vector<detail::TensorImpl*> topo;
  std::unordered_set<detail::TensorImpl*> seen;
  struct Frame {
    detail::TensorImpl* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }
  // topo now has parents before children; visit in reverse.
  for (auto* n : topo)
    if (!n->is_leaf) {
      n->ensure_grad();
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::TensorImpl* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}
inline void accumulate(TensorImpl& t, const std::vector<double>& g) {
  if (!t.requires_grad) return;
  t.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [ai, bi](detail::TensorImpl& self) {
    detail::accumulate(*ai, self.grad);
    detail::accumulate(*bi, self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [ai, bi](detail::TensorImpl& self) {
    detail::accumulate(*ai, self.grad);
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [ai, bi](detail::TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i] * ai->data[i];
    }
  });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  auto ai = a.impl_ptr();
  return Tensor::make_op(a.shape(), std::move(out), {a}, [ai, c](detail::TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * c;
    }
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + c;
  auto ai = a.impl_ptr();
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [ai](detail::TensorImpl& self) { detail::accumulate(*ai, self.grad); });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<double> out(M * N, 0.0);
  const auto& A = a.data();
  const auto& B = b.data();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = A[i * K + k];
      if (aik == 0.0) continue;
      const double* brow = &B[k * N];
      double* orow = &out[i * N];
      for (std::size_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return Tensor::make_op({M, N}, std::move(out), {a, b}, [ai, bi, M, K, N](detail::TensorImpl& self) {
    if (ai->requires_grad) {
      ai->ensure_grad();  // dA = dC . B^T
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double g = self.grad[i * N + j];
          if (g == 0.0) continue;
          for (std::size_t k = 0; k < K; ++k) ai->grad[i * K + k] += g * bi->data[k * N + j];
        }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();  // dB = A^T . dC
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          const double a_ik = ai->data[i * K + k];
          if (a_ik == 0.0) continue;
          for (std::size_t j = 0; j < N; ++j) bi->grad[k * N + j] += a_ik * self.grad[i * N + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: rank-2 required, got " + shape_str(a.shape()));
  const std::size_t R = a.dim(0), C = a.dim(1);
  std::vector<double> out(R * C);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[j * R + i] = a.at(i, j);
  auto ai = a.impl_ptr();
  return Tensor::make_op({C, R}, std::move(out), {a}, [ai, R, C](detail::TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) ai->grad[i * C + j] += self.grad[j * R + i];
  });
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  if (n != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto ai = a.impl_ptr();
  return Tensor::make_op(std::move(shape), a.data(), {a},
                         [ai](detail::TensorImpl& self) { detail::accumulate(*ai, self.grad); });
}

// out[i] = indices[i] >= 0 ? a.flat[indices[i]] : pad_value.
// Backward scatter-adds into a; pad positions carry no gradient. This one op
// underlies slicing, shifting, im2col convolution and the CTC lattice moves.
inline Tensor gather_flat(const Tensor& a, const std::vector<std::int64_t>& indices,
                          std::vector<std::size_t> out_shape, double pad_value = 0.0) {
  std::size_t n = 1;
  for (auto d : out_shape) n *= d;
  if (n != indices.size()) throw DimensionError("gather_flat: index count vs out shape mismatch");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = indices[i];
    if (idx >= static_cast<std::int64_t>(a.size()))
      throw DimensionError("gather_flat: index out of range");
    out[i] = idx >= 0 ? a.at(static_cast<std::size_t>(idx)) : pad_value;
  }
  auto ai = a.impl_ptr();
  return Tensor::make_op(std::move(out_shape), std::move(out), {a},
                         [ai, indices](detail::TensorImpl& self) {
                           if (!ai->requires_grad) return;
                           ai->ensure_grad();
                           for (std::size_t i = 0; i < indices.size(); ++i)
                             if (indices[i] >= 0) ai->grad[indices[i]] += self.grad[i];
                         });
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  if (a.rank() != 2 || r1 > a.dim(0) || r0 > r1)
    throw DimensionError("slice_rows: bad range on " + shape_str(a.shape()));
  const std::size_t C = a.dim(1);
  std::vector<std::int64_t> idx((r1 - r0) * C);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(r0 * C + i);
  return gather_flat(a, idx, {r1 - r0, C});
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  if (a.rank() != 2 || c1 > a.dim(1) || c0 > c1)
    throw DimensionError("slice_cols: bad range on " + shape_str(a.shape()));
  const std::size_t R = a.dim(0), C = a.dim(1), W = c1 - c0;
  std::vector<std::int64_t> idx(R * W);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < W; ++j) idx[i * W + j] = static_cast<std::int64_t>(i * C + c0 + j);
  return gather_flat(a, idx, {R, W});
}

inline Tensor row(const Tensor& a, std::size_t r) {
  if (a.rank() != 2 || r >= a.dim(0)) throw DimensionError("row: out of range");
  const std::size_t C = a.dim(1);
  std::vector<std::int64_t> idx(C);
  for (std::size_t j = 0; j < C; ++j) idx[j] = static_cast<std::int64_t>(r * C + j);
  return gather_flat(a, idx, {C});
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty");
  const std::size_t R = parts[0].dim(0);
  std::size_t C = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != R) throw DimensionError("concat_cols: row mismatch");
    C += p.dim(1);
  }
  std::vector<double> out(R * C);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t W = p.dim(1);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < W; ++j) out[i * C + off + j] = p.at(i, j);
    off += W;
  }
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    impls.push_back(p.impl_ptr());
    widths.push_back(p.dim(1));
  }
  return Tensor::make_op({R, C}, std::move(out), parts,
                         [impls, widths, offsets, R, C](detail::TensorImpl& self) {
                           for (std::size_t k = 0; k < impls.size(); ++k) {
                             auto& p = *impls[k];
                             if (!p.requires_grad) continue;
                             p.ensure_grad();
                             const std::size_t W = widths[k], off = offsets[k];
                             for (std::size_t i = 0; i < R; ++i)
                               for (std::size_t j = 0; j < W; ++j)
                                 p.grad[i * W + j] += self.grad[i * C + off + j];
                           }
                         });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty");
  const std::size_t C = parts[0].rank() == 2 ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t R = 0;
  for (const auto& p : parts) R += p.rank() == 2 ? p.dim(0) : 1;
  std::vector<double> out;
  out.reserve(R * C);
  for (const auto& p : parts) {
    if (p.size() % C != 0) throw DimensionError("concat_rows: column mismatch");
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl_ptr());
  return Tensor::make_op({R, C}, std::move(out), parts, [impls](detail::TensorImpl& self) {
    std::size_t off = 0;
    for (auto& pi : impls) {
      if (pi->requires_grad) {
        pi->ensure_grad();
        for (std::size_t i = 0; i < pi->data.size(); ++i) pi->grad[i] += self.grad[off + i];
      }
      off += pi->data.size();
    }
  });
}

// repeat a length-D vector as n rows
inline Tensor expand_rows(const Tensor& v, std::size_t n) {
  if (v.rank() != 1) throw DimensionError("expand_rows: rank-1 required");
  const std::size_t D = v.dim(0);
  std::vector<std::int64_t> idx(n * D);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < D; ++j) idx[i * D + j] = static_cast<std::int64_t>(j);
  return gather_flat(v, idx, {n, D});
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  auto ai = a.impl_ptr();
  return Tensor::make_op(a.shape(), std::move(out), {a}, [ai](detail::TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (ai->data[i] > 0.0) ai->grad[i] += self.grad[i];
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  auto ai = a.impl_ptr();
  return Tensor::make_op({}, {s}, {a}, [ai](detail::TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (auto& g : ai->grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size())); }

// elementwise log(exp(a) + exp(b)); exact at -inf
inline Tensor logaddexp(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "logaddexp");
  detail::check_no_nan(a.data(), "logaddexp");
  detail::check_no_nan(b.data(), "logaddexp");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_add(a.at(i), b.at(i));
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [ai, bi](detail::TensorImpl& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double o = self.data[i];
      if (o == kNegInf) continue;
      if (ai->requires_grad) {
        ai->ensure_grad();
        if (ai->data[i] != kNegInf) ai->grad[i] += self.grad[i] * std::exp(ai->data[i] - o);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        if (bi->data[i] != kNegInf) bi->grad[i] += self.grad[i] * std::exp(bi->data[i] - o);
      }
    }
  });
}

namespace detail {
// rows = leading dims collapsed, cols = last dim
inline std::pair<std::size_t, std::size_t> row_view(const Tensor& t, const char* op) {
  if (t.rank() == 0) throw DimensionError(std::string(op) + ": scalar input");
  const std::size_t C = t.shape().back();
  return {t.size() / C, C};
}
}  // namespace detail

// softmax over the last axis
inline Tensor softmax(const Tensor& a) {
  detail::check_no_nan(a.data(), "softmax");
  auto [R, C] = detail::row_view(a, "softmax");
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = &a.data()[r * C];
    double m = kNegInf;
    for (std::size_t j = 0; j < C; ++j) m = std::max(m, x[j]);
    if (m == kNegInf) throw NumericError("softmax: all -inf row");
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += std::exp(x[j] - m);
    for (std::size_t j = 0; j < C; ++j) out[r * C + j] = std::exp(x[j] - m) / z;
  }
  auto ai = a.impl_ptr();
  const std::size_t Rc = R, Cc = C;
  return Tensor::make_op(a.shape(), std::move(out), {a}, [ai, Rc, Cc](detail::TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t r = 0; r < Rc; ++r) {
      const double* y = &self.data[r * Cc];
      const double* gy = &self.grad[r * Cc];
      double dot = 0.0;
      for (std::size_t j = 0; j < Cc; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < Cc; ++j) ai->grad[r * Cc + j] += y[j] * (gy[j] - dot);
    }
  });
}

// log-softmax over the last axis
inline Tensor log_softmax(const Tensor& a) {
  detail::check_no_nan(a.data(), "log_softmax");
  auto [R, C] = detail::row_view(a, "log_softmax");
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = &a.data()[r * C];
    double m = kNegInf;
    for (std::size_t j = 0; j < C; ++j) m = std::max(m, x[j]);
    if (m == kNegInf) throw NumericError("log_softmax: all -inf row");
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += std::exp(x[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < C; ++j) out[r * C + j] = x[j] - lse;
  }
  auto ai = a.impl_ptr();
  const std::size_t Rc = R, Cc = C;
  return Tensor::make_op(a.shape(), std::move(out), {a}, [ai, Rc, Cc](detail::TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t r = 0; r < Rc; ++r) {
      const double* y = &self.data[r * Cc];
      const double* gy = &self.grad[r * Cc];
      double gsum = 0.0;
      for (std::size_t j = 0; j < Cc; ++j) gsum += gy[j];
      for (std::size_t j = 0; j < Cc; ++j) ai->grad[r * Cc + j] += gy[j] - std::exp(y[j]) * gsum;
    }
  });
}

// log-sum-exp over the last axis; result drops that axis
inline Tensor log_sum_exp(const Tensor& a) {
  detail::check_no_nan(a.data(), "log_sum_exp");
  auto [R, C] = detail::row_view(a, "log_sum_exp");
  std::vector<double> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = &a.data()[r * C];
    double m = kNegInf;
    for (std::size_t j = 0; j < C; ++j) m = std::max(m, x[j]);
    if (m == kNegInf) {
      out[r] = kNegInf;
      continue;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += std::exp(x[j] - m);
    out[r] = m + std::log(z);
  }
  std::vector<std::size_t> oshape(a.shape().begin(), a.shape().end() - 1);
  auto ai = a.impl_ptr();
  const std::size_t Rc = R, Cc = C;
  return Tensor::make_op(std::move(oshape), std::move(out), {a},
                         [ai, Rc, Cc](detail::TensorImpl& self) {
                           if (!ai->requires_grad) return;
                           ai->ensure_grad();
                           for (std::size_t r = 0; r < Rc; ++r) {
                             if (self.data[r] == kNegInf) continue;
                             for (std::size_t j = 0; j < Cc; ++j)
                               ai->grad[r * Cc + j] +=
                                   self.grad[r] * std::exp(ai->data[r * Cc + j] - self.data[r]);
                           }
                         });
}

// layer normalization over the last axis: gamma * (x - mu)/sigma + beta
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  detail::check_no_nan(a.data(), "layer_norm");
  auto [R, C] = detail::row_view(a, "layer_norm");
  if (gamma.size() != C || beta.size() != C)
    throw DimensionError("layer_norm: gamma/beta size mismatch");
  std::vector<double> out(a.size());
  std::vector<double> inv_sigma(R), mu(R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = &a.data()[r * C];
    double m = 0.0;
    for (std::size_t j = 0; j < C; ++j) m += x[j];
    m /= static_cast<double>(C);
    double v = 0.0;
    for (std::size_t j = 0; j < C; ++j) v += (x[j] - m) * (x[j] - m);
    v /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(v + eps);
    mu[r] = m;
    inv_sigma[r] = is;
    for (std::size_t j = 0; j < C; ++j)
      out[r * C + j] = gamma.at(j) * (x[j] - m) * is + beta.at(j);
  }
  auto ai = a.impl_ptr();
  auto gi = gamma.impl_ptr();
  auto bi = beta.impl_ptr();
  const std::size_t Rc = R, Cc = C;
  return Tensor::make_op(
      a.shape(), std::move(out), {a, gamma, beta},
      [ai, gi, bi, mu, inv_sigma, Rc, Cc](detail::TensorImpl& self) {
        const double Cd = static_cast<double>(Cc);
        for (std::size_t r = 0; r < Rc; ++r) {
          const double* x = &ai->data[r * Cc];
          const double* gy = &self.grad[r * Cc];
          const double is = inv_sigma[r];
          if (ai->requires_grad) {
            ai->ensure_grad();
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < Cc; ++j) {
              const double xh = (x[j] - mu[r]) * is;
              const double g = gy[j] * gi->data[j];
              sum_g += g;
              sum_gx += g * xh;
            }
            for (std::size_t j = 0; j < Cc; ++j) {
              const double xh = (x[j] - mu[r]) * is;
              const double g = gy[j] * gi->data[j];
              ai->grad[r * Cc + j] += is * (g - sum_g / Cd - xh * sum_gx / Cd);
            }
          }
          if (gi->requires_grad) {
            gi->ensure_grad();
            for (std::size_t j = 0; j < Cc; ++j)
              gi->grad[j] += gy[j] * (x[j] - mu[r]) * is;
          }
          if (bi->requires_grad) {
            bi->ensure_grad();
            for (std::size_t j = 0; j < Cc; ++j) bi->grad[j] += gy[j];
          }
        }
      });
}

// Inverted dropout with a per-call seed; the caller supplies the seed from a
// counter-based stream so a forward pass is replayable.
inline Tensor dropout(const Tensor& a, double p, std::uint64_t seed, bool training) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0,1)");
  if (!training || p == 0.0) return a;  // identity; keeps graph linkage via caller
  Rng rng(seed);
  std::vector<double> mask(a.size());
  const double scale = 1.0 / (1.0 - p);
  for (auto& m : mask) m = rng.uniform() >= p ? scale : 0.0;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * mask[i];
  auto ai = a.impl_ptr();
  return Tensor::make_op(a.shape(), std::move(out), {a}, [ai, mask](detail::TensorImpl& self) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * mask[i];
  });
}

// rows of `table` (V x D) selected by ids
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be 2-D");
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<std::int64_t> idx(ids.size() * D);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
      throw DimensionError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range [0," +
                           std::to_string(V) + ")");
    for (std::size_t j = 0; j < D; ++j)
      idx[i * D + j] = static_cast<std::int64_t>(ids[i]) * D + j;
  }
  return gather_flat(table, idx, {ids.size(), D});
}

// Sum over rows of the label-smoothed negative log-likelihood.
// Target distribution: 1-eps at the gold id, eps/(V-1) elsewhere.
inline Tensor cross_entropy_label_smoothing(const Tensor& log_probs, const std::vector<int>& targets,
                                            double eps) {
  if (log_probs.rank() != 2 || log_probs.dim(0) != targets.size())
    throw DimensionError("cross_entropy: rows " + shape_str(log_probs.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  const std::size_t L = targets.size(), V = log_probs.dim(1);
  const double off = eps / static_cast<double>(V - 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= V) throw DimensionError("cross_entropy: target out of range");
    for (std::size_t v = 0; v < V; ++v) {
      const double w = static_cast<std::size_t>(t) == v ? 1.0 - eps : off;
      loss -= w * log_probs.at(i, v);
    }
  }
  auto li = log_probs.impl_ptr();
  return Tensor::make_op({}, {loss}, {log_probs}, [li, targets, V, eps, off](detail::TensorImpl& self) {
    if (!li->requires_grad) return;
    li->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < targets.size(); ++i)
      for (std::size_t v = 0; v < V; ++v) {
        const double w = static_cast<std::size_t>(targets[i]) == v ? 1.0 - eps : off;
        li->grad[i * V + v] -= g * w;
      }
  });
}

}  // namespace jcast
