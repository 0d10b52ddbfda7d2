#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "elisa/autodiff.hpp"
#include "elisa/vocab.hpp"

namespace elisa {

/// Log-probabilities for inference. pad, start and unk are never emitted; when
/// `force_end` is set only the end token remains possible.
template <typename T>
std::vector<double> inference_log_probs(std::span<const T> logits, bool force_end) {
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> masked(logits.begin(), logits.end());
  masked[Vocabulary::pad] = neg_inf;
  masked[Vocabulary::start] = neg_inf;
  masked[Vocabulary::unk] = neg_inf;
  if (force_end) {
    for (std::size_t i = 0; i < masked.size(); ++i) {
      if (i != Vocabulary::end) masked[i] = neg_inf;
    }
  }
  return log_softmax<double>(masked);
}

/// Index of the largest finite entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace elisa
