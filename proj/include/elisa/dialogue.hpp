#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "elisa/random.hpp"

namespace elisa::dialogue {

enum class State { awaiting_photos, photo_proposed, awaiting_answer, ended };
enum class EventKind { command, user_text, add_photo };
enum class ActionKind { show_photo, ask_question, feedback_comment, info_message, end_session };

inline constexpr std::string_view valid_commands[] = {"/start", "/yes", "/change", "/exit"};

inline std::string to_string(State s) {
  switch (s) {
    case State::awaiting_photos: return "awaiting_photos";
    case State::photo_proposed: return "photo_proposed";
    case State::awaiting_answer: return "awaiting_answer";
    case State::ended: return "ended";
  }
  return "?";
}

inline std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::command: return "command";
    case EventKind::user_text: return "user_text";
    case EventKind::add_photo: return "add_photo";
  }
  return "?";
}

inline std::string to_string(ActionKind k) {
  switch (k) {
    case ActionKind::show_photo: return "show_photo";
    case ActionKind::ask_question: return "ask_question";
    case ActionKind::feedback_comment: return "feedback_comment";
    case ActionKind::info_message: return "info_message";
    case ActionKind::end_session: return "end_session";
  }
  return "?";
}

inline std::optional<EventKind> parse_event_kind(std::string_view s) {
  if (s == "command") return EventKind::command;
  if (s == "user_text") return EventKind::user_text;
  if (s == "add_photo") return EventKind::add_photo;
  return std::nullopt;
}

struct Photo {
  std::string id;
  std::string features_path;  // empty: no uploaded features

  friend bool operator==(const Photo&, const Photo&) = default;
};

struct Event {
  EventKind kind = EventKind::user_text;
  std::string payload;  // command name, answer text, or photo id
  std::int64_t timestamp = 0;
  std::string features_path;  // add_photo only

  static Event command(std::string name, std::int64_t ts = 0) { return {EventKind::command, std::move(name), ts, {}}; }
  static Event text(std::string body, std::int64_t ts = 0) { return {EventKind::user_text, std::move(body), ts, {}}; }
  static Event add_photo(Photo p, std::int64_t ts = 0) {
    return {EventKind::add_photo, std::move(p.id), ts, std::move(p.features_path)};
  }
};

struct BotAction {
  ActionKind kind = ActionKind::info_message;
  std::string payload;  // question/comment text, or photo id for show_photo

  friend bool operator==(const BotAction&, const BotAction&) = default;
};

struct TranscriptEntry {
  std::size_t seq = 0;   // position in the log, strictly increasing
  std::size_t turn = 0;  // ordinal of the user event this entry belongs to
  std::string role;      // "user" | "bot"
  std::string kind;      // event kind or action kind
  std::string payload;
  std::int64_t timestamp = 0;

  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TranscriptEntry, seq, turn, role, kind, payload, timestamp)

/// One JSON record per line.
inline std::string serialize_transcript(const std::vector<TranscriptEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    out += nlohmann::json(e).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<TranscriptEntry> parse_transcript(std::string_view text) {
  std::vector<TranscriptEntry> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty()) out.push_back(nlohmann::json::parse(line).get<TranscriptEntry>());
    pos = nl + 1;
  }
  return out;
}

/// Model hooks used by a session. Question plans are requested lazily, once
/// per photo.
struct Models {
  std::function<std::vector<std::string>(const Photo&)> plan_questions;
  std::function<std::string(const std::string&)> feedback;
};

class SessionEnded : public std::logic_error {
 public:
  SessionEnded() : std::logic_error("session has ended") {}
};

/// Photo-therapy session state machine:
///   awaiting_photos --/start--> photo_proposed --/yes--> awaiting_answer
///   awaiting_answer --answer--> feedback + next question, or the next photo
///                                after the photo's turn budget
///   /change proposes another photo; /exit or running out of photos ends it.
class Session {
 public:
  static constexpr int min_turns = 4;
  static constexpr int max_turns = 6;

  Session(std::string id, std::vector<Photo> photos, std::uint64_t seed, Models models)
      : id_(std::move(id)), rng_(seed), photos_(std::move(photos)), models_(std::move(models)) {
    if (photos_.empty()) throw std::invalid_argument("session: at least one photo is required");
    if (!models_.plan_questions || !models_.feedback) throw std::invalid_argument("session: missing model hooks");
  }

  const std::string& id() const { return id_; }
  State state() const { return state_; }
  bool ended() const { return state_ == State::ended; }
  const std::vector<TranscriptEntry>& transcript() const { return log_; }
  const std::vector<Photo>& photos() const { return photos_; }
  std::optional<Photo> current_photo() const {
    if (!current_) return std::nullopt;
    return photos_[*current_];
  }
  int turn_budget() const { return budget_; }
  std::size_t questions_asked() const { return asked_; }

  std::vector<BotAction> handle_event(const Event& ev) {
    if (state_ == State::ended) throw SessionEnded();
    log_event(ev);
    std::vector<BotAction> actions = dispatch(ev);
    for (const auto& a : actions) log_action(a, ev.timestamp);
    ++turn_;
    return actions;
  }

  /// Ends an idle session; records an end_session entry.
  void expire(std::int64_t timestamp) {
    if (state_ == State::ended) return;
    state_ = State::ended;
    log_action({ActionKind::end_session, "session timed out"}, timestamp);
  }

 private:
  std::vector<BotAction> dispatch(const Event& ev) {
    if (ev.kind == EventKind::add_photo) {
      if (ev.payload.empty()) return {info("A photo needs an id.")};
      const bool known = std::any_of(photos_.begin(), photos_.end(), [&](const Photo& p) { return p.id == ev.payload; });
      if (known) {
        for (auto& p : photos_) {
          if (p.id == ev.payload && !ev.features_path.empty()) p.features_path = ev.features_path;
        }
        return {info("Photo " + ev.payload + " updated.")};
      }
      photos_.push_back({ev.payload, ev.features_path});
      return {info("Photo " + ev.payload + " added.")};
    }
    if (ev.kind == EventKind::command) return on_command(ev.payload);
    return on_text(ev.payload);
  }

  std::vector<BotAction> on_command(const std::string& cmd) {
    if (cmd == "/exit") {
      state_ = State::ended;
      return {{ActionKind::end_session, "Goodbye! Thank you for sharing your memories."}};
    }
    if (cmd == "/start") {
      if (state_ == State::awaiting_photos) return propose_next();
      return {info("The session has already started.")};
    }
    if (cmd == "/yes") {
      if (state_ == State::photo_proposed) return accept_photo();
      return {info("There is no photo waiting for confirmation.")};
    }
    if (cmd == "/change") {
      if (state_ == State::photo_proposed || state_ == State::awaiting_answer) return propose_next();
      return {info("Send /start to begin.")};
    }
    return {info("Unknown command " + cmd + ". Valid commands: /start, /yes, /change, /exit.")};
  }

  std::vector<BotAction> on_text(const std::string& text) {
    switch (state_) {
      case State::awaiting_photos:
        return {info("Send /start to begin.")};
      case State::photo_proposed:
        return {info("Do you want to talk about this photo? Answer /yes or /change.")};
      case State::awaiting_answer: {
        std::vector<BotAction> out{{ActionKind::feedback_comment, models_.feedback(text)}};
        ++asked_;
        const auto& plan = plans_.at(photos_[*current_].id);
        if (asked_ < static_cast<std::size_t>(budget_) && asked_ < plan.size()) {
          out.push_back({ActionKind::ask_question, plan[asked_]});
        } else {
          auto next = propose_next();
          out.insert(out.end(), next.begin(), next.end());
        }
        return out;
      }
      case State::ended:
        break;
    }
    throw SessionEnded();
  }

  std::vector<BotAction> propose_next() {
    std::vector<std::size_t> unseen;
    for (std::size_t i = 0; i < photos_.size(); ++i) {
      if (std::find(shown_.begin(), shown_.end(), i) == shown_.end()) unseen.push_back(i);
    }
    if (unseen.empty()) {
      state_ = State::ended;
      current_.reset();
      return {{ActionKind::end_session, "There are no more pictures to talk about. Goodbye!"}};
    }
    const std::size_t pick = unseen[rng_.below(unseen.size())];
    shown_.push_back(pick);
    current_ = pick;
    asked_ = 0;
    budget_ = 0;
    state_ = State::photo_proposed;
    return {{ActionKind::show_photo, photos_[pick].id},
            info("Do you want to talk about this photo? Answer /yes or /change.")};
  }

  std::vector<BotAction> accept_photo() {
    const Photo& photo = photos_[*current_];
    auto it = plans_.find(photo.id);
    if (it == plans_.end()) it = plans_.emplace(photo.id, models_.plan_questions(photo)).first;
    budget_ = min_turns + static_cast<int>(rng_.below(max_turns - min_turns + 1));
    asked_ = 0;
    if (it->second.empty()) {
      std::vector<BotAction> out{info("I have no questions about this photo.")};
      auto next = propose_next();
      out.insert(out.end(), next.begin(), next.end());
      return out;
    }
    state_ = State::awaiting_answer;
    return {{ActionKind::ask_question, it->second.front()}};
  }

  static BotAction info(std::string text) { return {ActionKind::info_message, std::move(text)}; }

  void log_event(const Event& ev) {
    log_.push_back({log_.size(), turn_, "user", to_string(ev.kind), ev.payload, ev.timestamp});
  }

  void log_action(const BotAction& a, std::int64_t ts) {
    log_.push_back({log_.size(), turn_, "bot", to_string(a.kind), a.payload, ts});
  }

  std::string id_;
  Rng rng_;
  std::vector<Photo> photos_;
  Models models_;
  State state_ = State::awaiting_photos;
  std::vector<std::size_t> shown_;
  std::optional<std::size_t> current_;
  std::map<std::string, std::vector<std::string>> plans_;
  int budget_ = 0;
  std::size_t asked_ = 0;
  std::size_t turn_ = 0;
  std::vector<TranscriptEntry> log_;
};

}  // namespace elisa::dialogue
