#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "elisa/autodiff.hpp"
#include "elisa/chatbot.hpp"
#include "elisa/random.hpp"
#include "elisa/tensor.hpp"
#include "elisa/vqg.hpp"

namespace elisa::testing {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients with central differences on `draws`
/// randomly chosen coordinates of each parameter. `build` must record the
/// scalar loss on the given tape.
inline GradCheckResult grad_check(const std::vector<Tensor<double>*>& params,
                                  const std::function<Var<double>(Tape<double>&)>& build, Rng& rng,
                                  std::size_t draws = 20, double eps = 1e-5) {
  Tape<double> tape;
  const GradientMap<double> grads = tape.backward(build(tape));
  auto eval = [&] {
    Tape<double> t(false);
    return build(t).value().item();
  };
  GradCheckResult out;
  for (Tensor<double>* p : params) {
    const Tensor<double> g = grads[*p];
    for (std::size_t k = 0; k < draws; ++k) {
      const std::size_t i = rng.below(p->size());
      const double saved = (*p)[i];
      (*p)[i] = saved + eps;
      const double up = eval();
      (*p)[i] = saved - eps;
      const double down = eval();
      (*p)[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      out.max_relative_error = std::max(out.max_relative_error, relative_error(g[i], numeric));
      ++out.coordinates;
    }
  }
  return out;
}

inline Vocabulary word_vocab(std::size_t words) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < words; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocabulary(tokens, 1);
}

/// Small VQG model with random dimensions and weights scaled up so that
/// decoding varies between draws.
template <typename T = double>
VqgModel<T> random_vqg(Rng& rng, double spread = 3.0) {
  VqgConfig c;
  c.annotation_dim = 2 + rng.below(5);
  c.attention_dim = 2 + rng.below(4);
  c.embedding_dim = 2 + rng.below(4);
  c.lstm_dim = 2 + rng.below(5);
  c.dropout = 0.0;
  VqgModel<T> m(c, word_vocab(1 + rng.below(12)), rng.next());
  m.for_each_parameter([&](const std::string&, Tensor<T>& t) {
    for (auto& v : t.values()) v = static_cast<T>(v * spread);
  });
  return m;
}

template <typename T = double>
ChatbotModel<T> random_chatbot(Rng& rng, double spread = 3.0) {
  ChatbotConfig c;
  c.hidden_dim = 2 + rng.below(5);
  c.embedding_dim = 2 + rng.below(4);
  c.dropout = 0.0;
  ChatbotModel<T> m(c, word_vocab(1 + rng.below(12)), rng.next());
  m.for_each_parameter([&](const std::string&, Tensor<T>& t) {
    for (auto& v : t.values()) v = static_cast<T>(v * spread);
  });
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  std::random_device rd;
  auto dir = std::filesystem::temp_directory_path() / ("elisa-" + tag + "-" + std::to_string(rd()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace elisa::testing
