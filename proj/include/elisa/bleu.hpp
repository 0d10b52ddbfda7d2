#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "elisa/vocab.hpp"

namespace elisa {

using Tokens = std::vector<std::string>;

struct BleuReport {
  static constexpr std::size_t max_order = 4;

  std::array<double, max_order> precisions{};  // modified n-gram precision, n = 1..4
  std::array<std::size_t, max_order> matches{};
  std::array<std::size_t, max_order> totals{};
  double brevity_penalty = 1.0;
  double score = 0.0;  // in [0, 1]
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  double score_x100() const { return 100.0 * score; }
};

inline void to_json(nlohmann::json& j, const BleuReport& r) {
  j = nlohmann::json{{"precisions", r.precisions},
                     {"matches", r.matches},
                     {"totals", r.totals},
                     {"brevity_penalty", r.brevity_penalty},
                     {"score", r.score},
                     {"score_x100", r.score_x100()},
                     {"candidate_length", r.candidate_length},
                     {"reference_length", r.reference_length}};
}

namespace bleu {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts count_ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

/// Clipped matches and candidate n-gram total for one sentence.
inline std::pair<std::size_t, std::size_t> clipped_counts(const Tokens& candidate, const std::vector<Tokens>& refs,
                                                          std::size_t n) {
  const NgramCounts cand = count_ngrams(candidate, n);
  NgramCounts max_ref;
  for (const auto& r : refs) {
    for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
  }
  std::size_t matched = 0, total = 0;
  for (const auto& [g, c] : cand) {
    total += c;
    auto it = max_ref.find(g);
    if (it != max_ref.end()) matched += std::min(c, it->second);
  }
  return {matched, total};
}

/// Reference length closest to `c`; ties go to the shorter reference.
inline std::size_t closest_ref_length(std::size_t c, const std::vector<Tokens>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = std::llabs(static_cast<long long>(r.size()) - static_cast<long long>(c));
    const auto bd = std::llabs(static_cast<long long>(best) - static_cast<long long>(c));
    if (d < bd || (d == bd && r.size() < best)) best = r.size();
  }
  return best;
}

inline void check_corpus(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& refs) {
  if (candidates.size() != refs.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(candidates.size()) + " candidates but " +
                                std::to_string(refs.size()) + " reference sets");
  }
  for (const auto& r : refs) {
    if (r.empty()) throw std::invalid_argument("bleu: candidate without references");
  }
}

}  // namespace bleu

/// Corpus-level modified n-gram precision (no smoothing; 0 when there are no
/// candidate n-grams).
inline double modified_precision(const std::vector<Tokens>& candidates,
                                 const std::vector<std::vector<Tokens>>& reference_sets, std::size_t n) {
  if (n < 1) throw std::invalid_argument("modified_precision: n must be >= 1");
  bleu::check_corpus(candidates, reference_sets);
  std::size_t matched = 0, total = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto [m, t] = bleu::clipped_counts(candidates[i], reference_sets[i], n);
    matched += m;
    total += t;
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

/// BLEU-4, uniform weights. A zero precision at n >= 2 is add-one smoothed to
/// 1/(total_n + 1); a zero unigram precision gives a score of 0.
inline BleuReport corpus_bleu(const std::vector<Tokens>& candidates,
                              const std::vector<std::vector<Tokens>>& reference_sets) {
  if (candidates.empty()) throw std::invalid_argument("corpus_bleu: empty candidate corpus");
  bleu::check_corpus(candidates, reference_sets);
  BleuReport r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    r.candidate_length += candidates[i].size();
    r.reference_length += bleu::closest_ref_length(candidates[i].size(), reference_sets[i]);
    for (std::size_t n = 1; n <= BleuReport::max_order; ++n) {
      const auto [m, t] = bleu::clipped_counts(candidates[i], reference_sets[i], n);
      r.matches[n - 1] += m;
      r.totals[n - 1] += t;
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= BleuReport::max_order; ++n) {
    const double m = static_cast<double>(r.matches[n - 1]);
    const double t = static_cast<double>(r.totals[n - 1]);
    double p;
    if (r.matches[n - 1] > 0) {
      p = m / t;
    } else if (n >= 2) {
      p = 1.0 / (t + 1.0);
    } else {
      p = 0.0;
      zero = true;
    }
    r.precisions[n - 1] = p;
    if (p > 0.0) log_sum += 0.25 * std::log(p);
  }
  const double c = static_cast<double>(r.candidate_length);
  const double ref = static_cast<double>(r.reference_length);
  r.brevity_penalty = c > ref ? 1.0 : (c == 0.0 ? 0.0 : std::exp(1.0 - ref / c));
  r.score = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum);
  return r;
}

/// String overload; every sentence is run through tokenize().
inline BleuReport corpus_bleu(const std::vector<std::string>& candidates,
                              const std::vector<std::vector<std::string>>& reference_sets) {
  std::vector<Tokens> c;
  std::vector<std::vector<Tokens>> r;
  for (const auto& s : candidates) c.push_back(tokenize(s));
  for (const auto& set : reference_sets) {
    auto& dst = r.emplace_back();
    for (const auto& s : set) dst.push_back(tokenize(s));
  }
  return corpus_bleu(c, r);
}

}  // namespace elisa
