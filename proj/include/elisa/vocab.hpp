#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace elisa {

using TokenId = std::uint32_t;

/// Token ids of one utterance; a complete sequence ends with Vocabulary::end.
using TokenSequence = std::vector<TokenId>;

/// Lowercases and splits on whitespace; each of . , ! ? ' " is its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  static constexpr std::string_view punctuation = ".,!?'\"";
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (punctuation.find(ch) != std::string_view::npos) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

class Vocabulary {
 public:
  static constexpr TokenId pad = 0;
  static constexpr TokenId start = 1;
  static constexpr TokenId end = 2;
  static constexpr TokenId unk = 3;
  static constexpr std::size_t reserved_count = 4;
  static constexpr std::array<std::string_view, reserved_count> reserved_tokens = {"<pad>", "<start>", "<end>",
                                                                                   "<unk>"};

  Vocabulary() : Vocabulary(std::vector<std::string>{}, 1) {}

  /// Builds from non-reserved tokens listed in id order (ids start at 4).
  Vocabulary(const std::vector<std::string>& tokens, std::size_t min_count) : min_count_(min_count) {
    for (auto t : reserved_tokens) add(std::string(t));
    for (const auto& t : tokens) {
      if (is_reserved_token(t)) throw std::invalid_argument("vocabulary: reserved token '" + t + "' in entries");
      if (ids_.count(t)) throw std::invalid_argument("vocabulary: duplicate token '" + t + "'");
      add(t);
    }
  }

  /// Full token list in id order, reserved tokens first.
  static Vocabulary from_id_order(const std::vector<std::string>& all_tokens, std::size_t min_count) {
    if (all_tokens.size() < reserved_count) throw std::invalid_argument("vocabulary: missing reserved tokens");
    for (std::size_t i = 0; i < reserved_count; ++i) {
      if (all_tokens[i] != reserved_tokens[i]) {
        throw std::invalid_argument("vocabulary: reserved id " + std::to_string(i) + " is '" + all_tokens[i] + "'");
      }
    }
    return Vocabulary(std::vector<std::string>(all_tokens.begin() + reserved_count, all_tokens.end()), min_count);
  }

  static bool is_reserved_token(std::string_view t) {
    return std::find(reserved_tokens.begin(), reserved_tokens.end(), t) != reserved_tokens.end();
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t min_count() const { return min_count_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id(std::string_view token) const { return find(token).value_or(unk); }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.min_count_ == b.min_count_;
  }

 private:
  void add(std::string t) {
    ids_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::size_t min_count_ = 1;
};

/// Keeps tokens seen at least `min_count` times; ids by descending frequency,
/// ties broken lexicographically.
inline Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count) {
  if (min_count < 1) throw std::invalid_argument("build_vocabulary: min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& tok : sentence) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= min_count && !Vocabulary::is_reserved_token(tok)) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(std::move(tok));
  return Vocabulary(tokens, min_count);
}

/// Maps tokens to ids (out-of-vocabulary -> unk), keeps at most `max_len`
/// content tokens and appends the end id.
inline TokenSequence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("encode: max_len must be >= 1");
  TokenSequence out;
  const std::size_t n = std::min(tokens.size(), max_len);
  out.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) out.push_back(vocab.id(tokens[i]));
  out.push_back(Vocabulary::end);
  return out;
}

/// Content tokens up to the first end id; pad and start are skipped.
inline std::vector<std::string> decode(const TokenSequence& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == Vocabulary::end) break;
    if (id == Vocabulary::pad || id == Vocabulary::start) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

inline std::string decode_text(const TokenSequence& ids, const Vocabulary& vocab) {
  return join_tokens(decode(ids, vocab));
}

}  // namespace elisa
