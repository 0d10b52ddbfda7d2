#pragma once

#include <cstdint>
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

struct ChatbotConfig {
  std::size_t hidden_dim = 500;
  std::size_t embedding_dim = 500;
  double dropout = 0.25;
  std::size_t max_reply_len = 12;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;

  void validate() const {
    if (hidden_dim < 1 || embedding_dim < 1 || max_reply_len < 1) {
      throw std::invalid_argument("chatbot config: dimensions must be >= 1");
    }
    if (encoder_layers != 1 || decoder_layers != 1) {
      throw std::invalid_argument("chatbot config: only single-layer encoder and decoder are supported");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("chatbot config: dropout must be in [0, 1)");
  }

  friend bool operator==(const ChatbotConfig&, const ChatbotConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ChatbotConfig, hidden_dim, embedding_dim, dropout, max_reply_len, encoder_layers,
                                   decoder_layers)

template <typename T>
struct ChatbotParams {
  Tensor<T> embedding;  // (K, embedding_dim), shared by encoder and decoder
  GruParams<T> forward;
  GruParams<T> backward;
  GruParams<T> decoder;  // input: embedding_dim + hidden_dim
  AttentionParams<T> attention;
  Tensor<T> out_w;  // (K, hidden_dim)
  Tensor<T> out_b;  // (K)

  ChatbotParams() = default;
  ChatbotParams(const ChatbotConfig& c, std::size_t vocab_size)
      : embedding(Shape{vocab_size, c.embedding_dim}),
        forward(c.embedding_dim, c.hidden_dim),
        backward(c.embedding_dim, c.hidden_dim),
        decoder(c.embedding_dim + c.hidden_dim, c.hidden_dim),
        attention(c.hidden_dim, c.hidden_dim, c.hidden_dim),
        out_w(Shape{vocab_size, c.hidden_dim}),
        out_b(Shape{vocab_size}) {}

  template <typename F>
  void for_each(F&& f) {
    f("embedding", embedding);
    forward.for_each("encoder.forward.", f);
    backward.for_each("encoder.backward.", f);
    decoder.for_each("decoder.", f);
    attention.for_each("attention.", f);
    f("out_w", out_w);
    f("out_b", out_b);
  }

  void init(Rng& rng) {
    init_uniform(embedding, embedding.cols(), rng);
    forward.init(rng);
    backward.init(rng);
    decoder.init(rng);
    attention.init(rng);
    init_uniform(out_w, out_w.cols(), rng);
    init_uniform(out_b, out_w.cols(), rng);
  }
};

/// Bidirectional-GRU encoder with summed directions and an attention GRU decoder.
template <typename T>
class ChatbotModel {
 public:
  ChatbotModel(ChatbotConfig config, Vocabulary vocab)
      : config_(config), vocab_(std::move(vocab)), params_((config.validate(), config), vocab_.size()) {}

  ChatbotModel(ChatbotConfig config, Vocabulary vocab, std::uint64_t seed) : ChatbotModel(config, std::move(vocab)) {
    Rng rng(seed);
    params_.init(rng);
  }

  const ChatbotConfig& config() const { return config_; }
  ChatbotConfig& config() { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ChatbotParams<T>& params() { return params_; }
  const ChatbotParams<T>& params() const { return params_; }
  std::size_t vocab_size() const { return vocab_.size(); }

  template <typename F>
  void for_each_parameter(F&& f) {
    params_.for_each(f);
  }

  /// Tokenizes and encodes text with this model's vocabulary and length cap.
  TokenSequence encode_text(const std::string& text) const {
    return elisa::encode(tokenize(text), vocab_, config_.max_reply_len);
  }

 private:
  ChatbotConfig config_;
  Vocabulary vocab_;
  ChatbotParams<T> params_;
};

/// A dialogue pair already mapped to ids.
struct EncodedPair {
  TokenSequence input;
  TokenSequence target;
};

template <typename T>
EncodedPair encode_pair(const DialoguePair& pair, const ChatbotModel<T>& model) {
  return {model.encode_text(pair.context), model.encode_text(pair.reply)};
}

namespace chatbot {

template <typename T>
struct EncoderOutputs {
  Var<T> outputs;  // (T, hidden_dim), forward + backward per step
  Var<T> final;    // (hidden_dim)
};

template <typename T>
EncoderOutputs<T> encode(Tape<T>& tape, const TokenSequence& input, const ChatbotParams<T>& p) {
  if (input.empty()) throw std::invalid_argument("chatbot encode: empty input");
  const std::size_t steps = input.size();
  const std::size_t hidden = p.forward.hidden_dim;
  const Var<T> table = tape.param(p.embedding);
  std::vector<Var<T>> embedded;
  embedded.reserve(steps);
  for (TokenId id : input) {
    if (id >= p.embedding.rows()) throw std::invalid_argument("chatbot encode: token id out of range");
    embedded.push_back(embedding(table, id));
  }
  std::vector<Var<T>> fwd(steps), bwd(steps);
  Var<T> h = tape.constant(Tensor<T>(Shape{hidden}));
  for (std::size_t t = 0; t < steps; ++t) fwd[t] = h = gru_step(embedded[t], h, p.forward);
  h = tape.constant(Tensor<T>(Shape{hidden}));
  for (std::size_t t = steps; t-- > 0;) bwd[t] = h = gru_step(embedded[t], h, p.backward);
  std::vector<Var<T>> summed(steps);
  for (std::size_t t = 0; t < steps; ++t) summed[t] = fwd[t] + bwd[t];
  return {stack_rows<T>(summed), fwd[steps - 1] + bwd[0]};
}

template <typename T>
struct StepVars {
  Var<T> logits;
  Var<T> hidden;
};

template <typename T>
StepVars<T> decode_step(TokenId prev, const Var<T>& hidden, const Var<T>& enc_outputs, const Var<T>& projected,
                        const ChatbotParams<T>& p, double dropout_rate, bool training, Rng& rng) {
  Tape<T>& t = *hidden.tape();
  if (prev >= p.embedding.rows()) throw std::invalid_argument("chatbot decode_step: token id out of range");
  const Attended<T> att = additive_attention(hidden, enc_outputs, projected, p.attention);
  const Var<T> input = concat(embedding(t.param(p.embedding), prev), att.context);
  const Var<T> next = gru_step(input, hidden, p.decoder);
  const Var<T> out = dropout(next, dropout_rate, training, rng);
  return {affine<T>({{t.param(p.out_w), out}}, t.param(p.out_b)), next};
}

/// Teacher-forced mean cross-entropy over the reply tokens (end included).
template <typename T>
Var<T> loss(Tape<T>& tape, const EncodedPair& pair, const ChatbotModel<T>& model, Rng& rng, bool training = true) {
  if (pair.target.empty()) throw std::invalid_argument("chatbot_loss: empty reply");
  const ChatbotParams<T>& p = model.params();
  const EncoderOutputs<T> enc = encode(tape, pair.input, p);
  const Var<T> projected = project_annotations(enc.outputs, p.attention);
  Var<T> hidden = enc.final;
  std::vector<Var<T>> terms;
  TokenId prev = Vocabulary::start;
  for (TokenId y : pair.target) {
    if (y >= model.vocab_size()) throw std::invalid_argument("chatbot_loss: token id out of range");
    const StepVars<T> s = decode_step(prev, hidden, enc.outputs, projected, p, model.config().dropout, training, rng);
    terms.push_back(cross_entropy(s.logits, y));
    hidden = s.hidden;
    prev = y;
  }
  return mean<T>(terms);
}

template <typename T>
Var<T> loss(Tape<T>& tape, const DialoguePair& pair, const ChatbotModel<T>& model, Rng& rng, bool training = true) {
  return loss(tape, encode_pair(pair, model), model, rng, training);
}

template <typename T>
double loss_value(const EncodedPair& pair, const ChatbotModel<T>& model) {
  Tape<T> tape(false);
  Rng rng(0);
  return static_cast<double>(loss(tape, pair, model, rng, false).value().item());
}

struct Reply {
  TokenSequence tokens;  // content ids followed by the end id
  std::string text;
};

/// Argmax decoding; pad/start/unk are masked and at most max_reply_len content
/// tokens are produced.
template <typename T>
Reply greedy_decode(const TokenSequence& input, const ChatbotModel<T>& model) {
  Tape<T> tape(false);
  Rng rng(0);
  const ChatbotParams<T>& p = model.params();
  const EncoderOutputs<T> enc = encode(tape, input, p);
  const Var<T> projected = project_annotations(enc.outputs, p.attention);
  const Tensor<T> outputs = enc.outputs.value();
  const Tensor<T> proj = projected.value();
  Tensor<T> hidden = enc.final.value();
  Reply out;
  TokenId prev = Vocabulary::start;
  while (true) {
    Tape<T> step_tape(false);
    const StepVars<T> s = decode_step(prev, step_tape.ref(hidden), step_tape.ref(outputs), step_tape.ref(proj), p,
                                      0.0, false, rng);
    const auto lp = inference_log_probs<T>(s.logits.value().values(), out.tokens.size() >= model.config().max_reply_len);
    const auto best = static_cast<TokenId>(argmax(lp));
    out.tokens.push_back(best);
    if (best == Vocabulary::end) break;
    hidden = s.hidden.value();
    prev = best;
  }
  out.text = decode_text(out.tokens, model.vocab());
  return out;
}

template <typename T>
std::string reply_to(const std::string& answer, const ChatbotModel<T>& model) {
  TokenSequence input = model.encode_text(answer);
  return greedy_decode(input, model).text;
}

}  // namespace chatbot
}  // namespace elisa
