#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "elisa/autodiff.hpp"
#include "elisa/chatbot.hpp"
#include "elisa/data.hpp"
#include "elisa/optim.hpp"
#include "elisa/random.hpp"
#include "elisa/vqg.hpp"

namespace elisa {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_steps = 1000;
  std::size_t max_epochs = 0;  // 0: bounded by max_steps only
  double clip_norm = 5.0;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("train config: clip_norm must be > 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
  }
};

struct TrainResult {
  std::vector<double> losses;  // one batch-mean loss per step
  std::size_t steps = 0;
  std::size_t epochs = 0;
};

template <typename M, typename T>
concept TrainableModel = requires(M& m) {
  m.for_each_parameter([](const std::string&, Tensor<T>&) {});
};

/// Seeded mini-batch Adam training. Each epoch visits a fresh permutation of
/// the data; each step does batch-mean loss, backward, clipping and an Adam
/// update. `loss_fn(tape, example, rng)` builds one example's loss.
template <typename T, typename Model, typename Example, typename LossFn>
  requires TrainableModel<Model, T>
TrainResult train(Model& model, std::span<const Example> data, const TrainConfig& config, LossFn&& loss_fn,
                  AdamState<T>* resume = nullptr,
                  const std::function<void(std::size_t, double)>& on_step = {}) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  AdamState<T> local;
  AdamState<T>& adam = resume ? *resume : local;
  adam.learning_rate = config.learning_rate;
  const auto params = parameters_of<T>(model);

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  while (result.steps < config.max_steps && (config.max_epochs == 0 || result.epochs < config.max_epochs)) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, result.epochs));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < order.size() && result.steps < config.max_steps; begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      Rng dropout_rng(derive_seed(config.seed ^ 0x5deece66dULL, result.steps));
      Tape<T> tape;
      std::vector<Var<T>> terms;
      terms.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) terms.push_back(loss_fn(tape, data[order[i]], dropout_rng));
      const Var<T> batch_loss = mean<T>(terms);
      GradientMap<T> grads = tape.backward(batch_loss);
      clip_gradients(grads, config.clip_norm);
      adam_step<T>(params, grads, adam);
      const double value = static_cast<double>(batch_loss.value().item());
      result.losses.push_back(value);
      ++result.steps;
      if (on_step) on_step(result.steps, value);
    }
    ++result.epochs;
  }
  return result;
}

// ---------------------------------------------------------------------------
// VQG recipe

template <typename T>
struct VqgExample {
  std::shared_ptr<const Tensor<T>> grid;
  TokenSequence target;
};

/// Tokenized questions of every record, for vocabulary construction.
inline std::vector<std::vector<std::string>> question_corpus(const std::vector<QuestionRecord>& records) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : records)
    for (const auto& q : r.questions) corpus.push_back(tokenize(q));
  return corpus;
}

/// One example per (image, reference question); grids are loaded from
/// paths relative to `base_dir`.
template <typename T>
std::vector<VqgExample<T>> make_vqg_examples(const std::vector<QuestionRecord>& records,
                                             const std::filesystem::path& base_dir, const VqgModel<T>& model) {
  std::vector<VqgExample<T>> out;
  for (const auto& r : records) {
    const FeatureGrid grid = load_feature_grid(base_dir / r.features);
    if (grid.cols != model.config().annotation_dim) {
      throw std::invalid_argument("feature grid for '" + r.image_id + "' has dimension " + std::to_string(grid.cols) +
                                  ", model expects " + std::to_string(model.config().annotation_dim));
    }
    auto shared = std::make_shared<const Tensor<T>>(grid.template to_tensor<T>());
    for (const auto& q : r.questions) {
      out.push_back({shared, encode(tokenize(q), model.vocab(), model.config().max_question_len)});
    }
  }
  return out;
}

template <typename T>
TrainResult train_vqg(VqgModel<T>& model, std::span<const VqgExample<T>> data, const TrainConfig& config,
                      AdamState<T>* resume = nullptr, const std::function<void(std::size_t, double)>& on_step = {}) {
  return train<T>(
      model, data, config,
      [&model](Tape<T>& tape, const VqgExample<T>& ex, Rng& rng) { return vqg::loss(tape, *ex.grid, ex.target, model, rng); },
      resume, on_step);
}

// ---------------------------------------------------------------------------
// Chatbot recipe

inline std::vector<std::vector<std::string>> dialogue_corpus(const std::vector<DialoguePair>& pairs) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& p : pairs) {
    corpus.push_back(tokenize(p.context));
    corpus.push_back(tokenize(p.reply));
  }
  return corpus;
}

template <typename T>
std::vector<EncodedPair> encode_pairs(const std::vector<DialoguePair>& pairs, const ChatbotModel<T>& model) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, model));
  return out;
}

template <typename T>
TrainResult train_chatbot(ChatbotModel<T>& model, std::span<const EncodedPair> data, const TrainConfig& config,
                          AdamState<T>* resume = nullptr,
                          const std::function<void(std::size_t, double)>& on_step = {}) {
  return train<T>(
      model, data, config,
      [&model](Tape<T>& tape, const EncodedPair& ex, Rng& rng) { return chatbot::loss(tape, ex, model, rng); }, resume,
      on_step);
}

/// Continues training on a second corpus. The vocabulary stays frozen, so
/// tokens unseen in the first corpus become unk.
template <typename T>
TrainResult fine_tune(ChatbotModel<T>& model, const std::vector<DialoguePair>& corpus_b, const TrainConfig& config,
                      const std::function<void(std::size_t, double)>& on_step = {}) {
  const auto encoded = encode_pairs(corpus_b, model);
  return train_chatbot<T>(model, encoded, config, nullptr, on_step);
}

/// Mean teacher-forced loss over a corpus with dropout off.
template <typename T>
double mean_loss(const ChatbotModel<T>& model, std::span<const EncodedPair> data) {
  double total = 0.0;
  for (const auto& ex : data) total += chatbot::loss_value(ex, model);
  return total / static_cast<double>(data.size());
}

template <typename T>
double mean_loss(const VqgModel<T>& model, std::span<const VqgExample<T>> data) {
  double total = 0.0;
  for (const auto& ex : data) total += vqg::loss_value(*ex.grid, ex.target, model);
  return total / static_cast<double>(data.size());
}

}  // namespace elisa
