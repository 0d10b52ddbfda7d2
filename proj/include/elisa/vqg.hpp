#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "elisa/autodiff.hpp"
#include "elisa/cells.hpp"
#include "elisa/data.hpp"
#include "elisa/decoding.hpp"
#include "elisa/random.hpp"
#include "elisa/vocab.hpp"

namespace elisa {

struct VqgConfig {
  std::size_t annotation_dim = 2048;
  std::size_t attention_dim = 512;
  std::size_t embedding_dim = 512;
  std::size_t lstm_dim = 512;
  double dropout = 0.5;
  std::size_t beam_width = 7;
  std::size_t outputs_per_image = 5;
  std::size_t max_question_len = 6;

  void validate() const {
    if (annotation_dim < 1 || attention_dim < 1 || embedding_dim < 1 || lstm_dim < 1 || beam_width < 1 ||
        outputs_per_image < 1 || max_question_len < 1) {
      throw std::invalid_argument("vqg config: dimensions must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("vqg config: dropout must be in [0, 1)");
    if (outputs_per_image > beam_width) throw std::invalid_argument("vqg config: outputs_per_image > beam_width");
  }

  friend bool operator==(const VqgConfig&, const VqgConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(VqgConfig, annotation_dim, attention_dim, embedding_dim, lstm_dim, dropout,
                                   beam_width, outputs_per_image, max_question_len)

template <typename T>
struct VqgParams {
  Tensor<T> embedding;  // (K, embedding_dim)
  LstmParams<T> lstm;   // input: embedding_dim + annotation_dim
  AttentionParams<T> attention;
  Tensor<T> init_h;  // (lstm_dim, annotation_dim)
  Tensor<T> init_c;  // (lstm_dim, annotation_dim)
  Tensor<T> out_w;   // (K, lstm_dim)
  Tensor<T> out_b;   // (K)

  VqgParams() = default;
  VqgParams(const VqgConfig& c, std::size_t vocab_size)
      : embedding(Shape{vocab_size, c.embedding_dim}),
        lstm(c.embedding_dim + c.annotation_dim, c.lstm_dim),
        attention(c.lstm_dim, c.annotation_dim, c.attention_dim),
        init_h(Shape{c.lstm_dim, c.annotation_dim}),
        init_c(Shape{c.lstm_dim, c.annotation_dim}),
        out_w(Shape{vocab_size, c.lstm_dim}),
        out_b(Shape{vocab_size}) {}

  template <typename F>
  void for_each(F&& f) {
    f("embedding", embedding);
    lstm.for_each("lstm.", f);
    attention.for_each("attention.", f);
    f("init_h", init_h);
    f("init_c", init_c);
    f("out_w", out_w);
    f("out_b", out_b);
  }

  void init(Rng& rng) {
    init_uniform(embedding, embedding.cols(), rng);
    lstm.init(rng);
    attention.init(rng);
    init_uniform(init_h, init_h.cols(), rng);
    init_uniform(init_c, init_c.cols(), rng);
    init_uniform(out_w, out_w.cols(), rng);
    init_uniform(out_b, out_w.cols(), rng);
  }
};

/// Attention-LSTM question generator bound to a vocabulary.
template <typename T>
class VqgModel {
 public:
  VqgModel(VqgConfig config, Vocabulary vocab)
      : config_(config), vocab_(std::move(vocab)), params_((config.validate(), config), vocab_.size()) {}

  VqgModel(VqgConfig config, Vocabulary vocab, std::uint64_t seed) : VqgModel(config, std::move(vocab)) {
    Rng rng(seed);
    params_.init(rng);
  }

  const VqgConfig& config() const { return config_; }
  VqgConfig& config() { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  VqgParams<T>& params() { return params_; }
  const VqgParams<T>& params() const { return params_; }
  std::size_t vocab_size() const { return vocab_.size(); }

  template <typename F>
  void for_each_parameter(F&& f) {
    params_.for_each(f);
  }

 private:
  VqgConfig config_;
  Vocabulary vocab_;
  VqgParams<T> params_;
};

namespace vqg {

/// h0 = tanh(W_h mean_row(grid)), c0 = tanh(W_c mean_row(grid)).
template <typename T>
LstmState<T> init_decoder_state(const Var<T>& grid, const VqgParams<T>& p) {
  detail::require_matrix(grid.value(), "init_decoder_state");
  detail::require_dim(grid.value().cols(), p.init_h.cols(), "init_decoder_state annotation");
  Tape<T>& t = *grid.tape();
  const Var<T> mean = mean_rows(grid);
  return {tanh(matvec(t.param(p.init_h), mean)), tanh(matvec(t.param(p.init_c), mean))};
}

template <typename T>
struct StepVars {
  Var<T> logits;
  LstmState<T> state;
  Var<T> attention;
};

/// One decoder step on a tape. Dropout acts on the hidden state fed to the
/// output projection only; the recurrent state is left intact.
template <typename T>
StepVars<T> decode_step(TokenId prev, const LstmState<T>& state, const Var<T>& grid, const Var<T>& projected,
                        const VqgParams<T>& p, double dropout_rate, bool training, Rng& rng) {
  Tape<T>& t = *grid.tape();
  if (prev >= p.embedding.rows()) {
    throw std::invalid_argument("vqg decode_step: token id " + std::to_string(prev) + " >= vocabulary size");
  }
  const Attended<T> att = additive_attention(state.h, grid, projected, p.attention);
  const Var<T> input = concat(embedding(t.param(p.embedding), prev), att.context);
  const LstmState<T> next = lstm_step(input, state.h, state.c, p.lstm);
  const Var<T> out = dropout(next.h, dropout_rate, training, rng);
  const Var<T> logits = affine<T>({{t.param(p.out_w), out}}, t.param(p.out_b));
  return {logits, next, att.weights};
}

template <typename T>
void check_target(const TokenSequence& target, const VqgModel<T>& model) {
  if (target.empty()) throw std::invalid_argument("vqg_loss: empty target");
  if (target.size() > model.config().max_question_len + 1) {
    throw std::invalid_argument("vqg_loss: target has " + std::to_string(target.size()) + " ids, limit is " +
                                std::to_string(model.config().max_question_len + 1));
  }
  for (TokenId id : target) {
    if (id >= model.vocab_size()) throw std::invalid_argument("vqg_loss: token id out of range");
  }
}

/// Mean token cross-entropy under teacher forcing.
template <typename T>
Var<T> loss(Tape<T>& tape, const Tensor<T>& grid, const TokenSequence& target, const VqgModel<T>& model, Rng& rng,
            bool training = true) {
  check_target(target, model);
  const VqgParams<T>& p = model.params();
  const Var<T> g = tape.ref(grid);
  const Var<T> projected = project_annotations(g, p.attention);
  LstmState<T> state = init_decoder_state(g, p);
  std::vector<Var<T>> terms;
  terms.reserve(target.size());
  TokenId prev = Vocabulary::start;
  for (TokenId y : target) {
    StepVars<T> step = decode_step(prev, state, g, projected, p, model.config().dropout, training, rng);
    terms.push_back(cross_entropy(step.logits, y));
    state = step.state;
    prev = y;
  }
  return mean<T>(terms);
}

template <typename T>
double loss_value(const Tensor<T>& grid, const TokenSequence& target, const VqgModel<T>& model) {
  Tape<T> tape(false);
  Rng rng(0);
  return static_cast<double>(loss(tape, grid, target, model, rng, false).value().item());
}

/// Grid and its attention projection, computed once per image for inference.
template <typename T>
struct InferenceContext {
  Tensor<T> grid;
  Tensor<T> projected;

  InferenceContext(const Tensor<T>& g, const VqgModel<T>& model) : grid(g) {
    Tape<T> tape(false);
    projected = project_annotations(tape.ref(grid), model.params().attention).value();
  }
};

template <typename T>
struct DecoderState {
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
DecoderState<T> initial_state(const InferenceContext<T>& ctx, const VqgModel<T>& model) {
  Tape<T> tape(false);
  const LstmState<T> s = init_decoder_state(tape.ref(ctx.grid), model.params());
  return {s.h.value(), s.c.value()};
}

template <typename T>
struct StepResult {
  Tensor<T> logits;
  DecoderState<T> state;
  Tensor<T> attention;
};

/// Inference step. With `mask_unk` the unk logit is set to -inf.
template <typename T>
StepResult<T> step(TokenId prev, const DecoderState<T>& state, const InferenceContext<T>& ctx,
                   const VqgModel<T>& model, bool mask_unk = true) {
  Tape<T> tape(false);
  Rng rng(0);
  const StepVars<T> s = decode_step(prev, LstmState<T>{tape.ref(state.h), tape.ref(state.c)}, tape.ref(ctx.grid),
                                    tape.ref(ctx.projected), model.params(), 0.0, false, rng);
  StepResult<T> out{s.logits.value(), {s.state.h.value(), s.state.c.value()}, s.attention.value()};
  if (mask_unk) out.logits[Vocabulary::unk] = -std::numeric_limits<T>::infinity();
  return out;
}

struct RankedQuestion {
  TokenSequence tokens;  // content ids followed by the end id
  std::string text;
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / tokens.size()
};

template <typename T>
struct BeamHypothesis {
  TokenSequence tokens;
  double log_prob = 0.0;
  bool complete = false;
  DecoderState<T> state;
};

/// Beam search in which completed hypotheses leave the beam and shrink it, so
/// exactly `beam_width` hypotheses complete (fewer when the vocabulary runs
/// out). Completed hypotheses are ranked by length-normalized log-probability.
template <typename T>
std::vector<RankedQuestion> beam_search(const Tensor<T>& grid, const VqgModel<T>& model, std::size_t beam_width,
                                        std::size_t outputs) {
  const std::size_t max_len = model.config().max_question_len;
  if (beam_width < 1) throw std::invalid_argument("beam_search: beam_width must be >= 1");
  const InferenceContext<T> ctx(grid, model);
  std::vector<BeamHypothesis<T>> live;
  live.push_back({{}, 0.0, false, initial_state(ctx, model)});
  std::vector<BeamHypothesis<T>> done;

  struct Candidate {
    std::size_t hyp;
    TokenId token;
    double token_lp;
    double total;
  };

  while (!live.empty()) {
    std::vector<Candidate> cands;
    std::vector<DecoderState<T>> next_states;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const BeamHypothesis<T>& hyp = live[h];
      const TokenId prev = hyp.tokens.empty() ? Vocabulary::start : hyp.tokens.back();
      StepResult<T> r = step(prev, hyp.state, ctx, model, false);
      const auto lp = inference_log_probs<T>(r.logits.values(), hyp.tokens.size() >= max_len);
      for (std::size_t k = 0; k < lp.size(); ++k) {
        if (std::isfinite(lp[k])) cands.push_back({h, static_cast<TokenId>(k), lp[k], hyp.log_prob + lp[k]});
      }
      next_states.push_back(std::move(r.state));
    }
    const std::size_t capacity = beam_width - done.size();
    const std::size_t take = std::min(capacity, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.total != b.total) return a.total > b.total;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        if (a.token_lp != b.token_lp) return a.token_lp > b.token_lp;
                        return a.token < b.token;
                      });
    std::vector<BeamHypothesis<T>> next;
    for (std::size_t i = 0; i < take; ++i) {
      const Candidate& c = cands[i];
      BeamHypothesis<T> hyp{live[c.hyp].tokens, c.total, c.token == Vocabulary::end, next_states[c.hyp]};
      hyp.tokens.push_back(c.token);
      (hyp.complete ? done : next).push_back(std::move(hyp));
    }
    live = std::move(next);
  }

  std::vector<RankedQuestion> ranked;
  for (const auto& hyp : done) {
    RankedQuestion q{hyp.tokens, decode_text(hyp.tokens, model.vocab()), hyp.log_prob, 0.0};
    q.score = q.log_prob / static_cast<double>(q.tokens.size());
    ranked.push_back(std::move(q));
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedQuestion& a, const RankedQuestion& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
  std::vector<RankedQuestion> out;
  std::set<std::string> seen;
  for (auto& q : ranked) {
    if (out.size() == outputs) break;
    if (seen.insert(q.text).second) out.push_back(std::move(q));
  }
  return out;
}

template <typename T>
std::vector<RankedQuestion> beam_search(const Tensor<T>& grid, const VqgModel<T>& model) {
  return beam_search(grid, model, model.config().beam_width, model.config().outputs_per_image);
}

template <typename T>
std::vector<std::string> generate_questions(const Tensor<T>& grid, const VqgModel<T>& model) {
  std::vector<std::string> out;
  for (auto& q : beam_search(grid, model)) out.push_back(std::move(q.text));
  return out;
}

/// Argmax decoding with the same masking and length cap as beam_search.
template <typename T>
RankedQuestion greedy_decode(const Tensor<T>& grid, const VqgModel<T>& model) {
  const std::size_t max_len = model.config().max_question_len;
  const InferenceContext<T> ctx(grid, model);
  DecoderState<T> state = initial_state(ctx, model);
  RankedQuestion out;
  TokenId prev = Vocabulary::start;
  while (true) {
    StepResult<T> r = step(prev, state, ctx, model, false);
    const auto lp = inference_log_probs<T>(r.logits.values(), out.tokens.size() >= max_len);
    const auto best = static_cast<TokenId>(argmax(lp));
    out.tokens.push_back(best);
    out.log_prob += lp[best];
    state = std::move(r.state);
    prev = best;
    if (best == Vocabulary::end) break;
  }
  out.text = decode_text(out.tokens, model.vocab());
  out.score = out.log_prob / static_cast<double>(out.tokens.size());
  return out;
}

}  // namespace vqg
}  // namespace elisa
