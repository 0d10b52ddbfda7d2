#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "elisa/random.hpp"
#include "elisa/tensor.hpp"

namespace elisa {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape<T>* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  const Tensor<T>& value() const { return tape_->value(index_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Gradients keyed by parameter identity (the address of the parameter tensor).
template <typename T>
class GradientMap {
 public:
  const Tensor<T>* find(const Tensor<T>& param) const {
    auto it = grads_.find(&param);
    return it == grads_.end() ? nullptr : &it->second;
  }

  /// Gradient for `param`; zeros of the parameter's shape when it was not on any path to the loss.
  Tensor<T> operator[](const Tensor<T>& param) const {
    if (const Tensor<T>* g = find(param)) return *g;
    return Tensor<T>(param.shape());
  }

  void set(const Tensor<T>& param, Tensor<T> grad) {
    if (grad.shape() != param.shape()) {
      throw std::invalid_argument("gradient shape " + shape_string(grad.shape()) +
                                  " does not match parameter shape " + shape_string(param.shape()));
    }
    grads_[&param] = std::move(grad);
  }

  std::size_t size() const { return grads_.size(); }
  auto begin() { return grads_.begin(); }
  auto end() { return grads_.end(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::unordered_map<const Tensor<T>*, Tensor<T>> grads_;
};

/// Records operations for reverse-mode differentiation. With recording off the
/// tape only evaluates values, which is what inference uses.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Non-owning constant; `value` must outlive the tape.
  Var<T> ref(const Tensor<T>& value) {
    Node n;
    n.external = &value;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf for a trainable parameter. Repeated calls return the same node so
  /// that every use accumulates into one gradient.
  Var<T> param(const Tensor<T>& p) {
    if (auto it = param_index_.find(&p); it != param_index_.end()) return {this, it->second};
    Node n;
    n.external = &p;
    n.param = &p;
    nodes_.push_back(std::move(n));
    param_index_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  Var<T> push(Tensor<T> value, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    if (record_) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t i) const {
    const Node& n = nodes_[i];
    return n.external ? *n.external : n.owned;
  }

  Tensor<T>& grad(std::size_t i) {
    Node& n = nodes_[i];
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(i).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  GradientMap<T> backward(Var<T> loss) {
    if (!record_) throw std::logic_error("backward: tape was not recording");
    if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (value(loss.index()).size() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                  shape_string(value(loss.index()).shape()));
    }
    for (Node& n : nodes_) n.has_grad = false;
    visit_order_.clear();
    grad(loss.index())[0] = T{1};
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      visit_order_.push_back(i);
      n.backward(*this, i);
    }
    GradientMap<T> out;
    for (const auto& [param, idx] : param_index_) {
      Node& n = nodes_[idx];
      out.set(*param, n.has_grad ? std::move(n.grad) : Tensor<T>(param->shape()));
      n.has_grad = false;
    }
    return out;
  }

  /// Node indices whose backward functions ran during the last backward pass, in call order.
  const std::vector<std::size_t>& last_visit_order() const { return visit_order_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    const Tensor<T>* param = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_index_;
  std::vector<std::size_t> visit_order_;
  bool record_;
};

namespace detail {

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
  return *a.tape();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename T>
void require_vector(const Tensor<T>& t, const char* op) {
  require(t.rank() == 1, std::string(op) + ": expected a vector, got shape " + shape_string(t.shape()));
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv_from_output) {
  Tape<T>& tape = *a.tape();
  Tensor<T> out(a.shape());
  const Tensor<T>& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t ia = a.index();
  return tape.push(std::move(out), [ia, deriv_from_output](Tape<T>& t, std::size_t self) {
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * deriv_from_output(y[i]);
  });
}

}  // namespace detail

/// Numerically stable softmax over a nonempty finite vector.
template <typename T>
std::vector<T> softmax(std::span<const T> scores) {
  detail::require(!scores.empty(), "softmax: empty input");
  const T mx = *std::max_element(scores.begin(), scores.end());
  std::vector<T> out(scores.size());
  T total{0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    total += out[i];
  }
  for (T& v : out) v /= total;
  return out;
}

template <typename T>
std::vector<T> log_softmax(std::span<const T> scores) {
  detail::require(!scores.empty(), "log_softmax: empty input");
  const T mx = *std::max_element(scores.begin(), scores.end());
  T total{0};
  for (T s : scores) total += std::exp(s - mx);
  const T lse = mx + std::log(total);
  std::vector<T> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] - lse;
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                              shape_string(b.shape()));
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.index(), ib = b.index();
  return tape.push(std::move(out), [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    for (std::size_t idx : {ia, ib}) {
      Tensor<T>& gx = t.grad(idx);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.index(), ib = b.index();
  return tape.push(std::move(out), [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    Tensor<T>& gb = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

/// Hadamard product.
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.index(), ib = b.index();
  return tape.push(std::move(out), [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& bv = t.value(ib);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    Tensor<T>& gb = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tape<T>& tape = *a.tape();
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  const std::size_t ia = a.index();
  return tape.push(std::move(out), [ia, s](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(a, [](T x) { return detail::sigmoid(x); }, [](T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::tanh(x); }, [](T y) { return T{1} - y * y; });
}

/// (1 - z) * h + z * candidate, elementwise.
template <typename T>
Var<T> interpolate(const Var<T>& h, const Var<T>& candidate, const Var<T>& z) {
  Tape<T>& tape = detail::same_tape(h, candidate);
  detail::same_tape(h, z);
  detail::require(h.shape() == candidate.shape() && h.shape() == z.shape(), "interpolate: shape mismatch");
  const Tensor<T>& hv = h.value();
  const Tensor<T>& cv = candidate.value();
  const Tensor<T>& zv = z.value();
  Tensor<T> out(hv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (T{1} - zv[i]) * hv[i] + zv[i] * cv[i];
  const std::size_t ih = h.index(), ic = candidate.index(), iz = z.index();
  return tape.push(std::move(out), [ih, ic, iz](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& hv = t.value(ih);
    const Tensor<T>& cv = t.value(ic);
    const Tensor<T>& zv = t.value(iz);
    Tensor<T>& gh = t.grad(ih);
    for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i] * (T{1} - zv[i]);
    Tensor<T>& gc = t.grad(ic);
    for (std::size_t i = 0; i < g.size(); ++i) gc[i] += g[i] * zv[i];
    Tensor<T>& gz = t.grad(iz);
    for (std::size_t i = 0; i < g.size(); ++i) gz[i] += g[i] * (cv[i] - hv[i]);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// W x for W of shape (m, n) and x of length n.
template <typename T>
Var<T> matvec(const Var<T>& w, const Var<T>& x) {
  Tape<T>& tape = detail::same_tape(w, x);
  const Tensor<T>& W = w.value();
  const Tensor<T>& xv = x.value();
  detail::require_matrix(W, "matvec");
  detail::require_vector(xv, "matvec");
  detail::require(W.cols() == xv.size(), "matvec: " + shape_string(W.shape()) + " times " + shape_string(xv.shape()));
  const std::size_t m = W.rows(), n = W.cols();
  Tensor<T> out(Shape{m});
  for (std::size_t r = 0; r < m; ++r) {
    const T* wr = &W[r * n];
    T acc{0};
    for (std::size_t c = 0; c < n; ++c) acc += wr[c] * xv[c];
    out[r] = acc;
  }
  const std::size_t iw = w.index(), ix = x.index();
  return tape.push(std::move(out), [iw, ix, m, n](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& W = t.value(iw);
    const Tensor<T>& xv = t.value(ix);
    Tensor<T>& gw = t.grad(iw);
    for (std::size_t r = 0; r < m; ++r) {
      T* gr = &gw[r * n];
      for (std::size_t c = 0; c < n; ++c) gr[c] += g[r] * xv[c];
    }
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t r = 0; r < m; ++r) {
      const T* wr = &W[r * n];
      for (std::size_t c = 0; c < n; ++c) gx[c] += g[r] * wr[c];
    }
  });
}

/// Sum over terms W_k x_k plus bias, fused into one tape node.
template <typename T>
Var<T> affine(std::initializer_list<std::pair<Var<T>, Var<T>>> terms, const Var<T>& bias) {
  Tape<T>& tape = *bias.tape();
  const Tensor<T>& bv = bias.value();
  detail::require_vector(bv, "affine");
  const std::size_t m = bv.size();
  Tensor<T> out = bv;
  std::vector<std::pair<std::size_t, std::size_t>> idx;
  for (const auto& [w, x] : terms) {
    detail::same_tape(bias, w);
    detail::same_tape(bias, x);
    const Tensor<T>& W = w.value();
    const Tensor<T>& xv = x.value();
    detail::require_matrix(W, "affine");
    detail::require_vector(xv, "affine");
    detail::require(W.rows() == m && W.cols() == xv.size(),
                    "affine: " + shape_string(W.shape()) + " times " + shape_string(xv.shape()) + " plus " +
                        shape_string(bv.shape()));
    const std::size_t n = W.cols();
    for (std::size_t r = 0; r < m; ++r) {
      const T* wr = &W[r * n];
      T acc{0};
      for (std::size_t c = 0; c < n; ++c) acc += wr[c] * xv[c];
      out[r] += acc;
    }
    idx.emplace_back(w.index(), x.index());
  }
  const std::size_t ib = bias.index();
  return tape.push(std::move(out), [idx = std::move(idx), ib, m](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gb = t.grad(ib);
    for (std::size_t r = 0; r < m; ++r) gb[r] += g[r];
    for (const auto& [iw, ix] : idx) {
      const Tensor<T>& W = t.value(iw);
      const Tensor<T>& xv = t.value(ix);
      const std::size_t n = W.cols();
      Tensor<T>& gw = t.grad(iw);
      for (std::size_t r = 0; r < m; ++r) {
        T* gr = &gw[r * n];
        for (std::size_t c = 0; c < n; ++c) gr[c] += g[r] * xv[c];
      }
      Tensor<T>& gx = t.grad(ix);
      for (std::size_t r = 0; r < m; ++r) {
        const T* wr = &W[r * n];
        for (std::size_t c = 0; c < n; ++c) gx[c] += g[r] * wr[c];
      }
    }
  });
}

/// A W^T for A of shape (N, D) and W of shape (M, D); result (N, M).
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& w) {
  Tape<T>& tape = detail::same_tape(a, w);
  const Tensor<T>& A = a.value();
  const Tensor<T>& W = w.value();
  detail::require_matrix(A, "matmul_nt");
  detail::require_matrix(W, "matmul_nt");
  detail::require(A.cols() == W.cols(), "matmul_nt: " + shape_string(A.shape()) + " vs " + shape_string(W.shape()));
  const std::size_t N = A.rows(), D = A.cols(), M = W.rows();
  Tensor<T> out(Shape{N, M});
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      T acc{0};
      for (std::size_t k = 0; k < D; ++k) acc += A[i * D + k] * W[j * D + k];
      out[i * M + j] = acc;
    }
  }
  const std::size_t ia = a.index(), iw = w.index();
  return tape.push(std::move(out), [ia, iw, N, D, M](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& A = t.value(ia);
    const Tensor<T>& W = t.value(iw);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        const T gij = g[i * M + j];
        for (std::size_t k = 0; k < D; ++k) ga[i * D + k] += gij * W[j * D + k];
      }
    Tensor<T>& gw = t.grad(iw);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        const T gij = g[i * M + j];
        for (std::size_t k = 0; k < D; ++k) gw[j * D + k] += gij * A[i * D + k];
      }
  });
}

/// Adds vector v to every row of matrix m.
template <typename T>
Var<T> add_row(const Var<T>& m, const Var<T>& v) {
  Tape<T>& tape = detail::same_tape(m, v);
  const Tensor<T>& M = m.value();
  const Tensor<T>& vv = v.value();
  detail::require_matrix(M, "add_row");
  detail::require(vv.rank() == 1 && vv.size() == M.cols(), "add_row: width mismatch");
  Tensor<T> out = M;
  const std::size_t R = M.rows(), C = M.cols();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] += vv[c];
  const std::size_t im = m.index(), iv = v.index();
  return tape.push(std::move(out), [im, iv, R, C](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gm = t.grad(im);
    for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    Tensor<T>& gv = t.grad(iv);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) gv[c] += g[r * C + c];
  });
}

/// Sum_i w_i * A[i, :] for weights w of length N and A of shape (N, D).
template <typename T>
Var<T> weighted_rows(const Var<T>& w, const Var<T>& a) {
  Tape<T>& tape = detail::same_tape(w, a);
  const Tensor<T>& wv = w.value();
  const Tensor<T>& A = a.value();
  detail::require_vector(wv, "weighted_rows");
  detail::require_matrix(A, "weighted_rows");
  detail::require(wv.size() == A.rows(), "weighted_rows: row count mismatch");
  const std::size_t N = A.rows(), D = A.cols();
  Tensor<T> out(Shape{D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < D; ++k) out[k] += wv[i] * A[i * D + k];
  const std::size_t iw = w.index(), ia = a.index();
  return tape.push(std::move(out), [iw, ia, N, D](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& wv = t.value(iw);
    const Tensor<T>& A = t.value(ia);
    Tensor<T>& gw = t.grad(iw);
    for (std::size_t i = 0; i < N; ++i) {
      T acc{0};
      for (std::size_t k = 0; k < D; ++k) acc += g[k] * A[i * D + k];
      gw[i] += acc;
    }
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k < D; ++k) ga[i * D + k] += wv[i] * g[k];
  });
}

template <typename T>
Var<T> mean_rows(const Var<T>& a) {
  Tape<T>& tape = *a.tape();
  const Tensor<T>& A = a.value();
  detail::require_matrix(A, "mean_rows");
  const std::size_t N = A.rows(), D = A.cols();
  Tensor<T> out(Shape{D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < D; ++k) out[k] += A[i * D + k];
  for (std::size_t k = 0; k < D; ++k) out[k] /= static_cast<T>(N);
  const std::size_t ia = a.index();
  return tape.push(std::move(out), [ia, N, D](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    const T inv = T{1} / static_cast<T>(N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k < D; ++k) ga[i * D + k] += g[k] * inv;
  });
}

/// Stacks equal-length vectors into a (rows.size(), D) matrix.
template <typename T>
Var<T> stack_rows(std::span<const Var<T>> rows) {
  detail::require(!rows.empty(), "stack_rows: no rows");
  Tape<T>& tape = *rows[0].tape();
  const std::size_t D = rows[0].size();
  std::vector<std::size_t> idx;
  idx.reserve(rows.size());
  std::vector<T> data;
  data.reserve(rows.size() * D);
  for (const Var<T>& r : rows) {
    detail::same_tape(rows[0], r);
    detail::require(r.value().rank() == 1 && r.size() == D, "stack_rows: ragged rows");
    const Tensor<T>& v = r.value();
    data.insert(data.end(), v.values().begin(), v.values().end());
    idx.push_back(r.index());
  }
  Tensor<T> out(Shape{rows.size(), D}, std::move(data));
  return tape.push(std::move(out), [idx = std::move(idx), D](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Tensor<T>& gr = t.grad(idx[i]);
      for (std::size_t k = 0; k < D; ++k) gr[k] += g[i * D + k];
    }
  });
}

template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  detail::require_vector(a.value(), "concat");
  detail::require_vector(b.value(), "concat");
  const std::size_t na = a.size(), nb = b.size();
  std::vector<T> data(a.value().values().begin(), a.value().values().end());
  data.insert(data.end(), b.value().values().begin(), b.value().values().end());
  const std::size_t ia = a.index(), ib = b.index();
  return tape.push(Tensor<T>::vector(std::move(data)), [ia, ib, na, nb](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    Tensor<T>& gb = t.grad(ib);
    for (std::size_t i = 0; i < nb; ++i) gb[i] += g[na + i];
  });
}

/// Row `id` of an embedding table.
template <typename T>
Var<T> embedding(const Var<T>& table, std::size_t id) {
  Tape<T>& tape = *table.tape();
  const Tensor<T>& E = table.value();
  detail::require_matrix(E, "embedding");
  detail::require(id < E.rows(), "embedding: id " + std::to_string(id) + " out of range " + std::to_string(E.rows()));
  const std::size_t D = E.cols();
  auto r = E.row(id);
  const std::size_t ie = table.index();
  return tape.push(Tensor<T>::vector(std::vector<T>(r.begin(), r.end())), [ie, id, D](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ge = t.grad(ie);
    for (std::size_t k = 0; k < D; ++k) ge[id * D + k] += g[k];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename T>
Var<T> softmax(const Var<T>& a) {
  Tape<T>& tape = *a.tape();
  detail::require_vector(a.value(), "softmax");
  auto p = softmax<T>(a.value().values());
  const std::size_t ia = a.index();
  return tape.push(Tensor<T>::vector(std::move(p)), [ia](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    T dot{0};
    for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += y[i] * (g[i] - dot);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tape<T>& tape = *a.tape();
  T total{0};
  for (T v : a.value().values()) total += v;
  const std::size_t ia = a.index();
  return tape.push(Tensor<T>::scalar(total), [ia](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

/// Mean of scalar terms.
template <typename T>
Var<T> mean(std::span<const Var<T>> terms) {
  detail::require(!terms.empty(), "mean: no terms");
  Tape<T>& tape = *terms[0].tape();
  std::vector<std::size_t> idx;
  T total{0};
  for (const Var<T>& v : terms) {
    detail::same_tape(terms[0], v);
    detail::require(v.size() == 1, "mean: terms must be scalars");
    total += v.value()[0];
    idx.push_back(v.index());
  }
  const T inv = T{1} / static_cast<T>(terms.size());
  return tape.push(Tensor<T>::scalar(total * inv), [idx = std::move(idx), inv](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (std::size_t i : idx) t.grad(i)[0] += g * inv;
  });
}

/// -log softmax(logits)[target].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t target) {
  Tape<T>& tape = *logits.tape();
  detail::require_vector(logits.value(), "cross_entropy");
  detail::require(target < logits.size(), "cross_entropy: target out of range");
  const auto lp = log_softmax<T>(logits.value().values());
  const std::size_t il = logits.index();
  return tape.push(Tensor<T>::scalar(-lp[target]), [il, target](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    const auto p = softmax<T>(t.value(il).values());
    Tensor<T>& gl = t.grad(il);
    for (std::size_t i = 0; i < p.size(); ++i) gl[i] += g * (p[i] - (i == target ? T{1} : T{0}));
  });
}

/// Inverted dropout: in training mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Identity otherwise.
template <typename T>
Var<T> dropout(const Var<T>& a, double rate, bool training, Rng& rng) {
  detail::require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return a;
  Tape<T>& tape = *a.tape();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(a.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(rate) ? T{0} : keep_scale;
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ia = a.index();
  return tape.push(std::move(out), [ia, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

/// Tensor-level dropout without a tape.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  Tape<T> tape(false);
  return dropout(tape.ref(x), rate, training, rng).value();
}

}  // namespace elisa
