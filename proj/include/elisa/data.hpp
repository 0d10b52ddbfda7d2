#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "elisa/binary_io.hpp"
#include "elisa/random.hpp"
#include "elisa/tensor.hpp"
#include "elisa/vocab.hpp"

namespace elisa {

/// N annotation vectors of dimension D describing one image.
struct FeatureGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  FeatureGrid() = default;
  FeatureGrid(std::size_t n, std::size_t d, std::vector<float> v) : rows(n), cols(d), values(std::move(v)) {
    if (n == 0 || d == 0) throw std::invalid_argument("feature grid: rows and cols must be >= 1");
    if (values.size() != n * d) throw std::invalid_argument("feature grid: value count does not match shape");
    for (float x : values) {
      if (!std::isfinite(x)) throw std::invalid_argument("feature grid: non-finite value");
    }
  }

  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>(Shape{rows, cols}, std::vector<T>(values.begin(), values.end()));
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;
};

inline constexpr std::string_view feature_magic = "FEAT";
inline constexpr std::uint32_t feature_version = 1;

inline std::vector<std::uint8_t> serialize_feature_grid(const FeatureGrid& grid) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + 4 * grid.values.size());
  io::put_bytes(out, feature_magic);
  io::put_u32(out, feature_version);
  io::put_u32(out, static_cast<std::uint32_t>(grid.rows));
  io::put_u32(out, static_cast<std::uint32_t>(grid.cols));
  for (float v : grid.values) io::put_f32(out, v);
  return out;
}

inline FeatureGrid parse_feature_grid(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes);
  if (in.bytes(4, "magic") != feature_magic) throw FormatError("bad feature-grid magic", 0);
  const std::size_t version_at = in.offset();
  if (const auto v = in.u32("version"); v != feature_version) {
    throw FormatError("unsupported feature-grid version " + std::to_string(v), version_at);
  }
  const std::size_t dims_at = in.offset();
  const std::uint32_t rows = in.u32("rows");
  const std::uint32_t cols = in.u32("cols");
  if (rows == 0 || cols == 0) throw FormatError("feature grid with zero extent", dims_at);
  const std::size_t payload = std::size_t{4} * rows * cols;
  if (in.remaining() != payload) {
    throw FormatError("feature-grid payload size mismatch: expected " + std::to_string(payload) + " bytes, got " +
                          std::to_string(in.remaining()),
                      in.offset());
  }
  std::vector<float> values(std::size_t{rows} * cols);
  for (auto& v : values) {
    const std::size_t at = in.offset();
    v = in.f32("payload");
    if (!std::isfinite(v)) throw FormatError("non-finite feature value", at);
  }
  return FeatureGrid(rows, cols, std::move(values));
}

inline void save_feature_grid(const FeatureGrid& grid, const std::filesystem::path& path) {
  const auto bytes = serialize_feature_grid(grid);
  io::write_file_atomic(path, std::span<const std::uint8_t>(bytes));
}

inline FeatureGrid load_feature_grid(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_feature_grid(bytes);
}

/// Deterministic stand-in for CNN features: values in [-1, 1] drawn from a
/// stream seeded by a hash of the image id.
inline FeatureGrid pseudo_encoder(std::string_view image_id, std::size_t n, std::size_t d) {
  if (n == 0 || d == 0) throw std::invalid_argument("pseudo_encoder: n and d must be >= 1");
  std::uint64_t state = fnv1a64(image_id);
  std::vector<float> values(n * d);
  for (auto& v : values) {
    state = splitmix64(state);
    const double u = static_cast<double>(state >> 11) * 0x1.0p-53;
    v = static_cast<float>(2.0 * u - 1.0);
  }
  return FeatureGrid(n, d, std::move(values));
}

struct QuestionRecord {
  std::string image_id;
  std::string features;  // path, relative to the dataset file's directory
  std::vector<std::string> questions;
};

struct DialoguePair {
  std::string context;
  std::string reply;
};

/// Line-delimited record error; `line` is 1-based.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

template <typename F>
void for_each_record(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetError(std::string("malformed record: ") + e.what(), n);
    }
    if (!j.is_object()) throw DatasetError("record is not an object", n);
    f(j, n);
  }
}

inline std::string string_field(const nlohmann::json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw DatasetError(std::string("missing field '") + key + "'", line);
  if (!it->is_string()) throw DatasetError(std::string("field '") + key + "' is not a string", line);
  return it->get<std::string>();
}

}  // namespace detail

inline std::vector<QuestionRecord> load_question_dataset(const std::filesystem::path& path) {
  std::vector<QuestionRecord> out;
  detail::for_each_record(path, [&](const nlohmann::json& j, std::size_t line) {
    QuestionRecord r;
    r.image_id = detail::string_field(j, "image_id", line);
    r.features = detail::string_field(j, "features", line);
    auto q = j.find("questions");
    if (q == j.end()) throw DatasetError("missing field 'questions'", line);
    if (!q->is_array() || q->empty()) throw DatasetError("'questions' must be a nonempty array", line);
    for (const auto& s : *q) {
      if (!s.is_string()) throw DatasetError("'questions' entries must be strings", line);
      r.questions.push_back(s.get<std::string>());
    }
    out.push_back(std::move(r));
  });
  return out;
}

inline std::vector<DialoguePair> load_dialogue_pairs(const std::filesystem::path& path) {
  std::vector<DialoguePair> out;
  detail::for_each_record(path, [&](const nlohmann::json& j, std::size_t line) {
    DialoguePair p{detail::string_field(j, "context", line), detail::string_field(j, "reply", line)};
    if (tokenize(p.context).empty()) throw DatasetError("'context' has no tokens", line);
    if (tokenize(p.reply).empty()) throw DatasetError("'reply' has no tokens", line);
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace elisa
