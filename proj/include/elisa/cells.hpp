#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "elisa/autodiff.hpp"
#include "elisa/random.hpp"
#include "elisa/tensor.hpp"

namespace elisa {

/// Uniform in [-k, k] with k = 1/sqrt(fan_in).
template <typename T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-k, k));
}

/// Gate convention: h' = (1 - z) * h + z * candidate.
template <typename T>
struct GruParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor<T> w_z, u_z, b_z;
  Tensor<T> w_r, u_r, b_r;
  Tensor<T> w_h, u_h, b_h;

  GruParams() = default;
  GruParams(std::size_t input, std::size_t hidden)
      : input_dim(input),
        hidden_dim(hidden),
        w_z(Shape{hidden, input}), u_z(Shape{hidden, hidden}), b_z(Shape{hidden}),
        w_r(Shape{hidden, input}), u_r(Shape{hidden, hidden}), b_r(Shape{hidden}),
        w_h(Shape{hidden, input}), u_h(Shape{hidden, hidden}), b_h(Shape{hidden}) {}

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "w_z", w_z); f(prefix + "u_z", u_z); f(prefix + "b_z", b_z);
    f(prefix + "w_r", w_r); f(prefix + "u_r", u_r); f(prefix + "b_r", b_r);
    f(prefix + "w_h", w_h); f(prefix + "u_h", u_h); f(prefix + "b_h", b_h);
  }

  void init(Rng& rng) {
    for_each("", [&](const std::string&, Tensor<T>& t) { init_uniform(t, hidden_dim, rng); });
  }
};

template <typename T>
struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor<T> w_i, u_i, b_i;  // input gate
  Tensor<T> w_f, u_f, b_f;  // forget gate
  Tensor<T> w_o, u_o, b_o;  // output gate
  Tensor<T> w_g, u_g, b_g;  // cell candidate

  LstmParams() = default;
  LstmParams(std::size_t input, std::size_t hidden)
      : input_dim(input),
        hidden_dim(hidden),
        w_i(Shape{hidden, input}), u_i(Shape{hidden, hidden}), b_i(Shape{hidden}),
        w_f(Shape{hidden, input}), u_f(Shape{hidden, hidden}), b_f(Shape{hidden}),
        w_o(Shape{hidden, input}), u_o(Shape{hidden, hidden}), b_o(Shape{hidden}),
        w_g(Shape{hidden, input}), u_g(Shape{hidden, hidden}), b_g(Shape{hidden}) {}

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "w_i", w_i); f(prefix + "u_i", u_i); f(prefix + "b_i", b_i);
    f(prefix + "w_f", w_f); f(prefix + "u_f", u_f); f(prefix + "b_f", b_f);
    f(prefix + "w_o", w_o); f(prefix + "u_o", u_o); f(prefix + "b_o", b_o);
    f(prefix + "w_g", w_g); f(prefix + "u_g", u_g); f(prefix + "b_g", b_g);
  }

  void init(Rng& rng) {
    for_each("", [&](const std::string&, Tensor<T>& t) { init_uniform(t, hidden_dim, rng); });
  }
};

/// score_i = v . tanh(W_h query + W_a a_i)
template <typename T>
struct AttentionParams {
  std::size_t query_dim = 0;
  std::size_t annotation_dim = 0;
  std::size_t attention_dim = 0;
  Tensor<T> w_query;       // (attention_dim, query_dim)
  Tensor<T> w_annotation;  // (attention_dim, annotation_dim)
  Tensor<T> v;             // (attention_dim)

  AttentionParams() = default;
  AttentionParams(std::size_t query, std::size_t annotation, std::size_t attention)
      : query_dim(query),
        annotation_dim(annotation),
        attention_dim(attention),
        w_query(Shape{attention, query}),
        w_annotation(Shape{attention, annotation}),
        v(Shape{attention}) {}

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "w_query", w_query);
    f(prefix + "w_annotation", w_annotation);
    f(prefix + "v", v);
  }

  void init(Rng& rng) {
    init_uniform(w_query, query_dim, rng);
    init_uniform(w_annotation, annotation_dim, rng);
    init_uniform(v, attention_dim, rng);
  }
};

namespace detail {

inline void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": expected dimension " + std::to_string(want) + ", got " +
                                std::to_string(got));
  }
}

}  // namespace detail

template <typename T>
Var<T> gru_step(const Var<T>& x, const Var<T>& h, const GruParams<T>& p) {
  detail::require_dim(x.size(), p.input_dim, "gru_step input");
  detail::require_dim(h.size(), p.hidden_dim, "gru_step hidden");
  Tape<T>& t = *x.tape();
  const Var<T> z = sigmoid(affine<T>({{t.param(p.w_z), x}, {t.param(p.u_z), h}}, t.param(p.b_z)));
  const Var<T> r = sigmoid(affine<T>({{t.param(p.w_r), x}, {t.param(p.u_r), h}}, t.param(p.b_r)));
  const Var<T> candidate = tanh(affine<T>({{t.param(p.w_h), x}, {t.param(p.u_h), r * h}}, t.param(p.b_h)));
  return interpolate(h, candidate, z);
}

template <typename T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

template <typename T>
LstmState<T> lstm_step(const Var<T>& x, const Var<T>& h, const Var<T>& c, const LstmParams<T>& p) {
  detail::require_dim(x.size(), p.input_dim, "lstm_step input");
  detail::require_dim(h.size(), p.hidden_dim, "lstm_step hidden");
  detail::require_dim(c.size(), p.hidden_dim, "lstm_step cell");
  Tape<T>& t = *x.tape();
  const Var<T> i = sigmoid(affine<T>({{t.param(p.w_i), x}, {t.param(p.u_i), h}}, t.param(p.b_i)));
  const Var<T> f = sigmoid(affine<T>({{t.param(p.w_f), x}, {t.param(p.u_f), h}}, t.param(p.b_f)));
  const Var<T> o = sigmoid(affine<T>({{t.param(p.w_o), x}, {t.param(p.u_o), h}}, t.param(p.b_o)));
  const Var<T> g = tanh(affine<T>({{t.param(p.w_g), x}, {t.param(p.u_g), h}}, t.param(p.b_g)));
  const Var<T> c_next = f * c + i * g;
  return {o * tanh(c_next), c_next};
}

template <typename T>
struct Attended {
  Var<T> weights;  // (N)
  Var<T> context;  // (D)
};

/// Annotation rows projected through W_a. Independent of the query, so a
/// decoder computes it once per sequence.
template <typename T>
Var<T> project_annotations(const Var<T>& annotations, const AttentionParams<T>& p) {
  detail::require_matrix(annotations.value(), "attention");
  detail::require(annotations.value().rows() >= 1, "attention: no annotations");
  detail::require_dim(annotations.value().cols(), p.annotation_dim, "attention annotation");
  return matmul_nt(annotations, annotations.tape()->param(p.w_annotation));
}

template <typename T>
Attended<T> additive_attention(const Var<T>& query, const Var<T>& annotations, const Var<T>& projected,
                               const AttentionParams<T>& p) {
  detail::require_dim(query.size(), p.query_dim, "attention query");
  Tape<T>& t = *query.tape();
  const Var<T> q = matvec(t.param(p.w_query), query);
  const Var<T> scores = matvec(tanh(add_row(projected, q)), t.param(p.v));
  const Var<T> weights = softmax(scores);
  return {weights, weighted_rows(weights, annotations)};
}

template <typename T>
Attended<T> additive_attention(const Var<T>& query, const Var<T>& annotations, const AttentionParams<T>& p) {
  return additive_attention(query, annotations, project_annotations(annotations, p), p);
}

}  // namespace elisa
