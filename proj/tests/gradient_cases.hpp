#pragma once

#include <string>
#include <vector>

#include "elisa/chatbot.hpp"
#include "elisa/vqg.hpp"
#include "support.hpp"

namespace elisa::testing {

struct NamedCheck {
  std::string name;
  GradCheckResult result;
};

/// Every differentiable tape operation on one random draw.
inline std::vector<NamedCheck> op_gradient_checks(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> a = random_tensor({4}, rng);
  Tensor<double> b = random_tensor({4}, rng);
  Tensor<double> m = random_tensor({3, 4}, rng);
  Tensor<double> n = random_tensor({2, 4}, rng);
  Tensor<double> bias = random_tensor({3}, rng);
  Tensor<double> table = random_tensor({5, 4}, rng);
  const Tensor<double> weights = random_tensor({4}, rng);
  std::vector<Tensor<double>*> params{&a, &b, &m, &n, &bias, &table};

  using Build = std::function<Var<double>(Tape<double>&)>;
  // Projection on fixed weights so that sum() does not hide errors that cancel.
  auto probe = [&](Tape<double>& t, const Var<double>& v) {
    if (v.value().rank() == 1 && v.size() == 4) return sum(v * t.ref(weights));
    return sum(tanh(v));
  };
  const std::vector<std::pair<std::string, Build>> ops{
      {"add", [&](Tape<double>& t) { return probe(t, t.param(a) + t.param(b)); }},
      {"sub", [&](Tape<double>& t) { return probe(t, t.param(a) - t.param(b)); }},
      {"mul", [&](Tape<double>& t) { return probe(t, t.param(a) * t.param(b)); }},
      {"scale", [&](Tape<double>& t) { return probe(t, scale(t.param(a), 1.7)); }},
      {"sigmoid", [&](Tape<double>& t) { return probe(t, sigmoid(t.param(a))); }},
      {"tanh", [&](Tape<double>& t) { return probe(t, tanh(t.param(a))); }},
      {"interpolate",
       [&](Tape<double>& t) { return probe(t, interpolate(t.param(a), t.param(b), sigmoid(t.param(a) * t.param(b)))); }},
      {"matvec", [&](Tape<double>& t) { return probe(t, matvec(t.param(m), t.param(a))); }},
      {"affine",
       [&](Tape<double>& t) {
         return probe(t, affine<double>({{t.param(m), t.param(a)}, {t.param(m), t.param(b)}}, t.param(bias)));
       }},
      {"matmul_nt", [&](Tape<double>& t) { return probe(t, matmul_nt(t.param(n), t.param(m))); }},
      {"add_row", [&](Tape<double>& t) { return probe(t, add_row(t.param(n), t.param(a))); }},
      {"weighted_rows",
       [&](Tape<double>& t) {
         return probe(t, weighted_rows(softmax(matvec(t.param(n), t.param(b))), t.param(n)));
       }},
      {"mean_rows", [&](Tape<double>& t) { return probe(t, mean_rows(t.param(m))); }},
      {"stack_rows",
       [&](Tape<double>& t) {
         const std::vector<Var<double>> rows{t.param(a), tanh(t.param(b))};
         return probe(t, matvec(stack_rows<double>(rows), t.param(a)));
       }},
      {"concat", [&](Tape<double>& t) { return probe(t, concat(t.param(a), t.param(b))); }},
      {"embedding", [&](Tape<double>& t) { return probe(t, embedding(t.param(table), 2) * t.param(a)); }},
      {"softmax", [&](Tape<double>& t) { return probe(t, softmax(t.param(a))); }},
      {"mean",
       [&](Tape<double>& t) {
         const std::vector<Var<double>> terms{sum(tanh(t.param(a))), sum(t.param(b) * t.param(b))};
         return mean<double>(terms);
       }},
      {"cross_entropy", [&](Tape<double>& t) { return cross_entropy(matvec(t.param(m), t.param(a)), 1); }},
      {"dropout",
       [&](Tape<double>& t) {
         Rng fixed(9);  // same mask on every evaluation
         return probe(t, dropout(t.param(a), 0.3, true, fixed));
       }},
  };
  std::vector<NamedCheck> out;
  for (const auto& [name, build] : ops) {
    // Only parameters that reach the loss are checked.
    Tape<double> tape;
    const auto grads = tape.backward(build(tape));
    std::vector<Tensor<double>*> used;
    for (auto* p : params) {
      if (grads.find(*p) != nullptr) used.push_back(p);
    }
    out.push_back({name, grad_check(used, build, rng)});
  }
  return out;
}

template <typename P>
std::vector<Tensor<double>*> tensors_of(P& p) {
  std::vector<Tensor<double>*> out;
  p.for_each("", [&](const std::string&, Tensor<double>& t) { out.push_back(&t); });
  return out;
}

/// Recurrent cells, attention and both full model losses on one random draw.
inline std::vector<NamedCheck> model_gradient_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedCheck> out;
  {
    GruParams<double> p(3, 4);
    p.init(rng);
    const Tensor<double> x = random_tensor({3}, rng);
    Tensor<double> h = random_tensor({4}, rng);
    auto params = tensors_of(p);
    params.push_back(&h);
    out.push_back(
        {"gru_step", grad_check(params, [&](Tape<double>& t) { return sum(gru_step(t.ref(x), t.param(h), p)); }, rng, 2)});
  }
  {
    LstmParams<double> p(3, 2);
    p.init(rng);
    const Tensor<double> x = random_tensor({3}, rng);
    Tensor<double> h = random_tensor({2}, rng);
    Tensor<double> c = random_tensor({2}, rng);
    auto params = tensors_of(p);
    params.push_back(&h);
    params.push_back(&c);
    out.push_back({"lstm_step", grad_check(
                                    params,
                                    [&](Tape<double>& t) {
                                      const auto s = lstm_step(t.ref(x), t.param(h), t.param(c), p);
                                      return sum(s.h) + sum(tanh(s.c));
                                    },
                                    rng, 2)});
  }
  {
    AttentionParams<double> p(3, 4, 5);
    p.init(rng);
    Tensor<double> q = random_tensor({3}, rng);
    Tensor<double> a = random_tensor({3, 4}, rng);
    auto params = tensors_of(p);
    params.push_back(&q);
    params.push_back(&a);
    const Tensor<double> w = random_tensor({4}, rng);
    out.push_back({"additive_attention", grad_check(
                                             params,
                                             [&](Tape<double>& t) {
                                               const auto att = additive_attention(t.param(q), t.param(a), p);
                                               return sum(att.context * t.ref(w));
                                             },
                                             rng, 2)});
  }
  Rng unused(0);
  {
    VqgConfig c;
    c.annotation_dim = 3;
    c.attention_dim = 4;
    c.embedding_dim = 3;
    c.lstm_dim = 5;
    c.dropout = 0.0;
    VqgModel<double> m(c, word_vocab(4), rng.next());
    const Tensor<double> grid = random_tensor({3, 3}, rng);
    const TokenSequence target{4, 6, 5, Vocabulary::end};
    std::vector<Tensor<double>*> params;
    m.for_each_parameter([&](const std::string&, Tensor<double>& t) { params.push_back(&t); });
    out.push_back({"vqg_loss", grad_check(
                                   params, [&](Tape<double>& t) { return vqg::loss(t, grid, target, m, unused, false); },
                                   rng, 2)});
  }
  {
    ChatbotConfig c;
    c.hidden_dim = 4;
    c.embedding_dim = 3;
    c.dropout = 0.0;
    ChatbotModel<double> m(c, word_vocab(4), rng.next());
    const EncodedPair pair{{4, 6, 5, Vocabulary::end}, {7, 4, Vocabulary::end}};
    std::vector<Tensor<double>*> params;
    m.for_each_parameter([&](const std::string&, Tensor<double>& t) { params.push_back(&t); });
    out.push_back({"chatbot_loss",
                   grad_check(params, [&](Tape<double>& t) { return chatbot::loss(t, pair, m, unused, false); }, rng, 2)});
  }
  return out;
}

}  // namespace elisa::testing
