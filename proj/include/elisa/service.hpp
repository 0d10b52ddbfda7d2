#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "elisa/binary_io.hpp"
#include "elisa/chatbot.hpp"
#include "elisa/checkpoint.hpp"
#include "elisa/data.hpp"
#include "elisa/dialogue.hpp"
#include "elisa/vqg.hpp"

namespace elisa::service {

using json = nlohmann::json;

struct ServiceConfig {
  std::string listen = "127.0.0.1:8080";  // host:port; port 0 picks a free port
  std::filesystem::path vqg_checkpoint;
  std::filesystem::path chatbot_checkpoint;
  std::filesystem::path photo_dir = "photos";
  std::filesystem::path transcript_dir = "transcripts";
  std::chrono::seconds idle_timeout{30 * 60};
};

/// Applies ELISA_LISTEN, ELISA_VQG_CHECKPOINT, ELISA_CHATBOT_CHECKPOINT,
/// ELISA_PHOTO_DIR, ELISA_TRANSCRIPT_DIR and ELISA_IDLE_TIMEOUT (seconds).
inline void apply_env_overrides(ServiceConfig& c, const std::function<const char*(const char*)>& getenv_fn = ::getenv) {
  if (const char* v = getenv_fn("ELISA_LISTEN")) c.listen = v;
  if (const char* v = getenv_fn("ELISA_VQG_CHECKPOINT")) c.vqg_checkpoint = v;
  if (const char* v = getenv_fn("ELISA_CHATBOT_CHECKPOINT")) c.chatbot_checkpoint = v;
  if (const char* v = getenv_fn("ELISA_PHOTO_DIR")) c.photo_dir = v;
  if (const char* v = getenv_fn("ELISA_TRANSCRIPT_DIR")) c.transcript_dir = v;
  if (const char* v = getenv_fn("ELISA_IDLE_TIMEOUT")) c.idle_timeout = std::chrono::seconds(std::stoll(v));
}

inline std::pair<std::string, int> split_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("listen address must be host:port, got " + listen);
  return {listen.substr(0, colon), std::stoi(listen.substr(colon + 1))};
}

/// Status code plus JSON body; errors carry {"code", "message"}.
struct Response {
  int status = 200;
  json body = json::object();

  static Response error(int status, std::string code, std::string message) {
    return {status, json{{"code", std::move(code)}, {"message", std::move(message)}}};
  }
};

inline json to_json(const dialogue::BotAction& a) {
  return json{{"kind", dialogue::to_string(a.kind)}, {"payload", a.payload}};
}

/// Builds the model hooks each new session uses.
using ModelFactory = std::function<dialogue::Models()>;

/// Question planning from uploaded features (or pseudo-encoder features when
/// a photo has none) and feedback from the chatbot, over shared immutable models.
inline ModelFactory neural_models(std::shared_ptr<const VqgModel<float>> vqg,
                                  std::shared_ptr<const ChatbotModel<float>> bot) {
  return [vqg, bot] {
    dialogue::Models m;
    m.plan_questions = [vqg](const dialogue::Photo& photo) {
      const FeatureGrid grid = photo.features_path.empty()
                                   ? pseudo_encoder(photo.id, 196, vqg->config().annotation_dim)
                                   : load_feature_grid(photo.features_path);
      return vqg::generate_questions(grid.to_tensor<float>(), *vqg);
    };
    m.feedback = [bot](const std::string& answer) { return chatbot::reply_to(answer, *bot); };
    return m;
  };
}

class ChatService {
 public:
  using Clock = std::chrono::steady_clock;

  ChatService(ServiceConfig config, ModelFactory models, std::size_t annotation_dim = 0)
      : config_(std::move(config)), models_(std::move(models)), annotation_dim_(annotation_dim) {
    std::filesystem::create_directories(config_.photo_dir);
    std::filesystem::create_directories(config_.transcript_dir);
  }

  const ServiceConfig& config() const { return config_; }

  /// Hook for tests: replaces the transcript writer.
  void set_transcript_writer(std::function<void(const std::filesystem::path&, const std::string&)> w) {
    writer_ = std::move(w);
  }

  std::filesystem::path transcript_path(const std::string& session_id) const {
    return config_.transcript_dir / (session_id + ".jsonl");
  }

  // POST /sessions {"photos": [...], "seed": optional}
  Response create_session(const json& body) {
    if (!body.is_object() || !body.contains("photos") || !body["photos"].is_array()) {
      return Response::error(400, "bad_request", "body must be an object with a 'photos' array");
    }
    std::vector<dialogue::Photo> photos;
    for (const auto& p : body["photos"]) {
      if (!p.is_string() || p.get<std::string>().empty()) {
        return Response::error(400, "bad_request", "photo ids must be nonempty strings");
      }
      photos.push_back({p.get<std::string>(), {}});
    }
    if (photos.empty()) return Response::error(400, "no_photos", "a session needs at least one photo");
    std::uint64_t seed;
    if (body.contains("seed") && body["seed"].is_number_unsigned()) {
      seed = body["seed"].get<std::uint64_t>();
    } else {
      std::random_device rd;
      seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    const std::string id = new_session_id();
    auto slot = std::make_shared<Slot>(dialogue::Session(id, std::move(photos), seed, models_()));
    slot->last_active = Clock::now();
    try {
      persist(slot->session);
    } catch (const std::exception& e) {
      return Response::error(503, "storage_unavailable", e.what());
    }
    {
      std::lock_guard lock(sessions_mu_);
      sessions_.emplace(id, slot);
    }
    return {201, json{{"session_id", id}}};
  }

  // POST /sessions/{id}/photos?photo_id=... with a FEAT body
  Response upload_photo(const std::string& session_id, std::string photo_id, const std::string& body) {
    auto slot = find(session_id);
    if (!slot) return Response::error(404, "unknown_session", "no session " + session_id);
    FeatureGrid grid;
    try {
      grid = parse_feature_grid(
          std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
    } catch (const FormatError& e) {
      if (body.size() < 4 || body.compare(0, 4, feature_magic) != 0) {
        return Response::error(415, "unsupported_media_type", "photo body must be a FEAT feature grid");
      }
      return Response::error(400, "bad_feature_grid", e.what());
    }
    if (annotation_dim_ != 0 && grid.cols != annotation_dim_) {
      return Response::error(422, "dimension_mismatch",
                             "feature dimension " + std::to_string(grid.cols) + ", model expects " +
                                 std::to_string(annotation_dim_));
    }
    std::lock_guard lock(slot->mu);
    if (slot->session.ended()) return Response::error(409, "session_ended", "session has ended");
    if (photo_id.empty()) photo_id = "photo-" + std::to_string(slot->session.photos().size() + 1);
    if (!valid_id(photo_id)) return Response::error(400, "bad_request", "invalid photo id");
    const auto path = config_.photo_dir / (session_id + "_" + photo_id + ".feat");
    try {
      save_feature_grid(grid, path);
    } catch (const std::exception& e) {
      return Response::error(503, "storage_unavailable", e.what());
    }
    const auto ev = dialogue::Event::add_photo({photo_id, path.string()}, now_ms());
    Response r = apply(*slot, ev);
    if (r.status != 200) return r;
    return {201, json{{"photo_id", photo_id}}};
  }

  // POST /sessions/{id}/events {"kind": "command"|"user_text", "payload": "..."}
  Response post_event(const std::string& session_id, const json& body) {
    auto slot = find(session_id);
    if (!slot) return Response::error(404, "unknown_session", "no session " + session_id);
    if (!body.is_object() || !body.contains("kind") || !body["kind"].is_string() || !body.contains("payload") ||
        !body["payload"].is_string()) {
      return Response::error(400, "bad_request", "event needs string fields 'kind' and 'payload'");
    }
    const auto kind = dialogue::parse_event_kind(body["kind"].get<std::string>());
    if (!kind || *kind == dialogue::EventKind::add_photo) {
      return Response::error(400, "bad_request", "event kind must be 'command' or 'user_text'");
    }
    dialogue::Event ev{*kind, body["payload"].get<std::string>(), now_ms(), {}};
    std::lock_guard lock(slot->mu);
    return apply(*slot, ev);
  }

  // GET /sessions/{id}/transcript
  Response get_transcript(const std::string& session_id) {
    std::vector<dialogue::TranscriptEntry> log;
    if (auto slot = find(session_id)) {
      std::lock_guard lock(slot->mu);
      log = slot->session.transcript();
    } else {
      if (!valid_id(session_id)) return Response::error(404, "unknown_session", "no session " + session_id);
      const auto path = transcript_path(session_id);
      if (!std::filesystem::exists(path)) return Response::error(404, "unknown_session", "no session " + session_id);
      const auto bytes = io::read_file(path);
      log = dialogue::parse_transcript(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    }
    json entries = json::array();
    for (const auto& e : log) entries.push_back(e);
    return {200, json{{"session_id", session_id}, {"entries", entries}}};
  }

  /// Ends sessions idle for longer than the configured timeout.
  std::size_t sweep_idle(Clock::time_point now) {
    std::vector<std::shared_ptr<Slot>> slots;
    {
      std::lock_guard lock(sessions_mu_);
      for (auto& [id, s] : sessions_) slots.push_back(s);
    }
    std::size_t expired = 0;
    for (auto& slot : slots) {
      std::lock_guard lock(slot->mu);
      if (slot->session.ended() || now - slot->last_active < config_.idle_timeout) continue;
      dialogue::Session next = slot->session;
      next.expire(now_ms());
      try {
        persist(next);
      } catch (const std::exception&) {
        continue;
      }
      slot->session = std::move(next);
      ++expired;
    }
    return expired;
  }

  void bind_routes(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_content(r.body.dump(), "application/json");
    };
    auto parse = [](const std::string& text, json& out) {
      try {
        out = json::parse(text);
        return true;
      } catch (const json::parse_error&) {
        return false;
      }
    };
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.Post("/sessions", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
      json body;
      if (!parse(req.body, body)) return send(res, Response::error(400, "bad_request", "body is not JSON"));
      send(res, create_session(body));
    });
    server.Post(R"(/sessions/([^/]+)/photos)", [this, send](const httplib::Request& req, httplib::Response& res) {
      const std::string photo_id = req.has_param("photo_id") ? req.get_param_value("photo_id") : "";
      send(res, upload_photo(req.matches[1], photo_id, req.body));
    });
    server.Post(R"(/sessions/([^/]+)/events)", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
      json body;
      if (!parse(req.body, body)) return send(res, Response::error(400, "bad_request", "body is not JSON"));
      send(res, post_event(req.matches[1], body));
    });
    server.Get(R"(/sessions/([^/]+)/transcript)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_transcript(req.matches[1]));
    });
  }

  /// Serves until stop() is called. `on_bound` receives the bound port.
  bool run(const std::function<void(int)>& on_bound = {}) {
    const auto [host, port] = split_listen(config_.listen);
    bind_routes(server_);
    int bound = port;
    if (port == 0) {
      bound = server_.bind_to_any_port(host);
      if (bound < 0) return false;
    } else if (!server_.bind_to_port(host, port)) {
      return false;
    }
    if (on_bound) on_bound(bound);
    std::thread sweeper([this] {
      std::unique_lock lock(stop_mu_);
      while (!stopping_) {
        stop_cv_.wait_for(lock, std::chrono::seconds(1));
        if (!stopping_) sweep_idle(Clock::now());
      }
    });
    const bool ok = server_.listen_after_bind();
    {
      std::lock_guard lock(stop_mu_);
      stopping_ = true;
    }
    stop_cv_.notify_all();
    sweeper.join();
    return ok;
  }

  void stop() { server_.stop(); }

 private:
  struct Slot {
    explicit Slot(dialogue::Session s) : session(std::move(s)) {}
    std::mutex mu;
    dialogue::Session session;
    Clock::time_point last_active;
  };

  static bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 128) return false;
    for (char c : id) {
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
    }
    return id != "." && id != "..";
  }

  static std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  std::string new_session_id() {
    std::random_device rd;
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llx%08x", static_cast<unsigned long long>(++counter_ & 0xffffff), rd());
    return buf;
  }

  std::shared_ptr<Slot> find(const std::string& id) {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  void persist(const dialogue::Session& s) {
    const std::string text = dialogue::serialize_transcript(s.transcript());
    if (writer_) {
      writer_(transcript_path(s.id()), text);
    } else {
      io::write_file_atomic(transcript_path(s.id()), text);
    }
  }

  // Applies an event to a copy of the session and commits it only after the
  // transcript is on disk. Caller holds slot.mu.
  Response apply(Slot& slot, const dialogue::Event& ev) {
    if (slot.session.ended()) return Response::error(409, "session_ended", "session has ended");
    dialogue::Session next = slot.session;
    std::vector<dialogue::BotAction> actions;
    try {
      actions = next.handle_event(ev);
    } catch (const dialogue::SessionEnded&) {
      return Response::error(409, "session_ended", "session has ended");
    } catch (const std::exception& e) {
      return Response::error(500, "internal_error", e.what());
    }
    try {
      persist(next);
    } catch (const std::exception& e) {
      return Response::error(503, "storage_unavailable", e.what());
    }
    slot.session = std::move(next);
    slot.last_active = Clock::now();
    json out = json::array();
    for (const auto& a : actions) out.push_back(to_json(a));
    return {200, json{{"actions", out}, {"state", dialogue::to_string(slot.session.state())}}};
  }

  ServiceConfig config_;
  ModelFactory models_;
  std::size_t annotation_dim_;
  std::function<void(const std::filesystem::path&, const std::string&)> writer_;
  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::atomic<std::uint64_t> counter_{0};
  httplib::Server server_;
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
};

}  // namespace elisa::service
