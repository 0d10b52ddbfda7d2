#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "elisa/binary_io.hpp"
#include "elisa/chatbot.hpp"
#include "elisa/tensor.hpp"
#include "elisa/vocab.hpp"
#include "elisa/vqg.hpp"

namespace elisa {

enum class ModelKind { vqg, chatbot };

inline std::string to_string(ModelKind k) { return k == ModelKind::vqg ? "vqg" : "chatbot"; }

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  if (s == "vqg") return ModelKind::vqg;
  if (s == "chatbot") return ModelKind::chatbot;
  return std::nullopt;
}

class CheckpointError : public std::runtime_error {
 public:
  enum class Code { io, bad_magic, unsupported_version, bad_metadata, kind_mismatch, shape_mismatch, truncated };

  CheckpointError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct ModelCheckpoint {
  static constexpr std::uint32_t current_version = 1;

  std::uint32_t version = current_version;
  ModelKind kind = ModelKind::vqg;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::vector<std::string> vocabulary;  // every token in id order, reserved ones first
  std::size_t min_count = 1;
  std::vector<NamedTensor> tensors;

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

inline constexpr std::string_view checkpoint_magic = "ELSB";

inline std::vector<std::uint8_t> serialize_checkpoint(const ModelCheckpoint& ckpt) {
  nlohmann::json meta;
  meta["kind"] = to_string(ckpt.kind);
  meta["hyperparameters"] = ckpt.hyperparameters;
  meta["vocabulary"] = ckpt.vocabulary;
  meta["min_count"] = ckpt.min_count;
  const std::string meta_text = meta.dump();

  std::vector<std::uint8_t> out;
  io::put_bytes(out, checkpoint_magic);
  io::put_u32(out, ckpt.version);
  io::put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  io::put_bytes(out, meta_text);
  io::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    io::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    io::put_bytes(out, t.name);
    io::put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) io::put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.value.values()) io::put_f32(out, v);
  }
  return out;
}

/// Tensor shapes a checkpoint of this kind must contain, derived from its metadata.
inline std::map<std::string, Shape> expected_shapes(ModelKind kind, const nlohmann::json& hyper,
                                                    std::size_t vocab_size) {
  std::map<std::string, Shape> out;
  auto collect = [&](const std::string& name, Tensor<float>& t) { out[name] = t.shape(); };
  if (kind == ModelKind::vqg) {
    VqgParams<float> p(hyper.get<VqgConfig>(), vocab_size);
    p.for_each(collect);
  } else {
    ChatbotParams<float> p(hyper.get<ChatbotConfig>(), vocab_size);
    p.for_each(collect);
  }
  return out;
}

inline ModelCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes,
                                        std::optional<ModelKind> expected_kind = std::nullopt) {
  using Code = CheckpointError::Code;
  ModelCheckpoint ckpt;
  try {
    io::Reader in(bytes);
    if (in.remaining() < 4 || in.bytes(4, "magic") != checkpoint_magic) {
      throw CheckpointError(Code::bad_magic, "checkpoint: bad magic (expected \"ELSB\")");
    }
    ckpt.version = in.u32("version");
    if (ckpt.version != ModelCheckpoint::current_version) {
      throw CheckpointError(Code::unsupported_version,
                            "checkpoint: unsupported version " + std::to_string(ckpt.version));
    }
    const std::uint32_t meta_len = in.u32("metadata length");
    const std::string meta_text = in.bytes(meta_len, "metadata");
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(meta_text);
      const auto kind = parse_model_kind(meta.at("kind").get<std::string>());
      if (!kind) throw CheckpointError(Code::bad_metadata, "checkpoint: unknown model kind");
      ckpt.kind = *kind;
      ckpt.hyperparameters = meta.at("hyperparameters");
      ckpt.vocabulary = meta.at("vocabulary").get<std::vector<std::string>>();
      ckpt.min_count = meta.at("min_count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(Code::bad_metadata, std::string("checkpoint: bad metadata: ") + e.what());
    }
    if (expected_kind && *expected_kind != ckpt.kind) {
      throw CheckpointError(Code::kind_mismatch, "checkpoint: kind mismatch: file holds a " + to_string(ckpt.kind) +
                                                     " model, expected " + to_string(*expected_kind));
    }

    const std::uint32_t count = in.u32("tensor count");
    std::set<std::string> names;
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      t.name = in.bytes(in.u32("tensor name length"), "tensor name");
      if (!names.insert(t.name).second) {
        throw CheckpointError(Code::bad_metadata, "checkpoint: duplicate tensor '" + t.name + "'");
      }
      const std::uint32_t rank = in.u32("tensor rank");
      Shape shape;
      for (std::uint32_t r = 0; r < rank; ++r) {
        const std::uint32_t e = in.u32("tensor extent");
        if (e == 0) throw CheckpointError(Code::shape_mismatch, "checkpoint: zero extent in '" + t.name + "'");
        shape.push_back(e);
      }
      const std::size_t n = shape_size(shape);
      in.need(4 * n, "tensor payload");
      std::vector<float> values(n);
      for (auto& v : values) v = in.f32("tensor payload");
      t.value = Tensor<float>(std::move(shape), std::move(values));
      ckpt.tensors.push_back(std::move(t));
    }
    if (in.remaining() != 0) {
      throw CheckpointError(Code::truncated, "checkpoint: " + std::to_string(in.remaining()) + " trailing bytes");
    }
  } catch (const FormatError& e) {
    throw CheckpointError(Code::truncated, std::string("checkpoint: ") + e.what());
  }

  std::map<std::string, Shape> expected;
  try {
    Vocabulary::from_id_order(ckpt.vocabulary, ckpt.min_count);
    expected = expected_shapes(ckpt.kind, ckpt.hyperparameters, ckpt.vocabulary.size());
  } catch (const std::exception& e) {
    throw CheckpointError(Code::bad_metadata, std::string("checkpoint: bad metadata: ") + e.what());
  }
  if (expected.size() != ckpt.tensors.size()) {
    throw CheckpointError(Code::shape_mismatch, "checkpoint: expected " + std::to_string(expected.size()) +
                                                    " tensors, found " + std::to_string(ckpt.tensors.size()));
  }
  for (const auto& t : ckpt.tensors) {
    auto it = expected.find(t.name);
    if (it == expected.end()) throw CheckpointError(Code::shape_mismatch, "checkpoint: unexpected tensor '" + t.name + "'");
    if (it->second != t.value.shape()) {
      throw CheckpointError(Code::shape_mismatch, "checkpoint: tensor '" + t.name + "' has shape " +
                                                      shape_string(t.value.shape()) + ", metadata implies " +
                                                      shape_string(it->second));
    }
  }
  return ckpt;
}

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  try {
    io::write_file_atomic(path, std::span<const std::uint8_t>(bytes));
  } catch (const std::runtime_error& e) {
    throw CheckpointError(CheckpointError::Code::io, e.what());
  }
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path,
                                       std::optional<ModelKind> expected_kind = std::nullopt) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(CheckpointError::Code::io, e.what());
  }
  return parse_checkpoint(bytes, expected_kind);
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint

namespace detail {

template <typename Model>
std::vector<NamedTensor> collect_tensors(const Model& model) {
  std::vector<NamedTensor> out;
  // The visitor only reads.
  const_cast<Model&>(model).for_each_parameter([&](const std::string& name, auto& t) {
    out.push_back({name, t.template cast<float>()});
  });
  return out;
}

template <typename Model>
void assign_tensors(Model& model, const ModelCheckpoint& ckpt) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t.value;
  model.for_each_parameter([&](const std::string& name, auto& t) {
    using Scalar = typename std::decay_t<decltype(t)>::value_type;
    t = by_name.at(name)->template cast<Scalar>();
  });
}

}  // namespace detail

template <typename T>
ModelCheckpoint to_checkpoint(const VqgModel<T>& model) {
  ModelCheckpoint c;
  c.kind = ModelKind::vqg;
  c.hyperparameters = model.config();
  c.vocabulary = model.vocab().tokens();
  c.min_count = model.vocab().min_count();
  c.tensors = detail::collect_tensors(model);
  return c;
}

template <typename T>
ModelCheckpoint to_checkpoint(const ChatbotModel<T>& model) {
  ModelCheckpoint c;
  c.kind = ModelKind::chatbot;
  c.hyperparameters = model.config();
  c.vocabulary = model.vocab().tokens();
  c.min_count = model.vocab().min_count();
  c.tensors = detail::collect_tensors(model);
  return c;
}

template <typename T>
VqgModel<T> vqg_from_checkpoint(const ModelCheckpoint& ckpt) {
  if (ckpt.kind != ModelKind::vqg) {
    throw CheckpointError(CheckpointError::Code::kind_mismatch, "checkpoint: expected a vqg model, found " + to_string(ckpt.kind));
  }
  VqgModel<T> model(ckpt.hyperparameters.get<VqgConfig>(), Vocabulary::from_id_order(ckpt.vocabulary, ckpt.min_count));
  detail::assign_tensors(model, ckpt);
  return model;
}

template <typename T>
ChatbotModel<T> chatbot_from_checkpoint(const ModelCheckpoint& ckpt) {
  if (ckpt.kind != ModelKind::chatbot) {
    throw CheckpointError(CheckpointError::Code::kind_mismatch,
                          "checkpoint: expected a chatbot model, found " + to_string(ckpt.kind));
  }
  ChatbotModel<T> model(ckpt.hyperparameters.get<ChatbotConfig>(),
                        Vocabulary::from_id_order(ckpt.vocabulary, ckpt.min_count));
  detail::assign_tensors(model, ckpt);
  return model;
}

}  // namespace elisa
