#pragma once

// Event-sourced dialogue state. A tracker is its event list; the slot map and
// the latest-message fields are derived by folding events in order. The
// session store journals every event to one JSON-lines file per session and
// rebuilds trackers from those files on first access.

#include "farmbot/error.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace farmbot {

struct EventEntity {
  std::string entity;
  std::string value;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const EventEntity&) const = default;
};

enum class EventType { UserMessage, SlotSet, ActionExecuted, BotUttered };

inline const char* event_type_name(EventType t) {
  switch (t) {
    case EventType::UserMessage: return "user_message";
    case EventType::SlotSet: return "slot_set";
    case EventType::ActionExecuted: return "action_executed";
    case EventType::BotUttered: return "bot_uttered";
  }
  return "";
}

struct Event {
  EventType type = EventType::UserMessage;
  std::string timestamp;
  // user_message
  std::string text;
  std::string intent;
  std::vector<EventEntity> entities;
  // slot_set
  std::string slot;
  std::optional<std::string> value;
  // action_executed
  std::string action;

  bool operator==(const Event&) const = default;

  static Event user(std::string text, std::string intent, std::vector<EventEntity> entities = {}) {
    Event e;
    e.type = EventType::UserMessage;
    e.text = std::move(text);
    e.intent = std::move(intent);
    e.entities = std::move(entities);
    return e;
  }
  static Event slot_set(std::string name, std::optional<std::string> value) {
    Event e;
    e.type = EventType::SlotSet;
    e.slot = std::move(name);
    e.value = std::move(value);
    return e;
  }
  static Event action_executed(std::string name) {
    Event e;
    e.type = EventType::ActionExecuted;
    e.action = std::move(name);
    return e;
  }
  static Event bot_uttered(std::string text) {
    Event e;
    e.type = EventType::BotUttered;
    e.text = std::move(text);
    return e;
  }

  nlohmann::json to_json() const {
    nlohmann::json payload;
    switch (type) {
      case EventType::UserMessage: {
        payload["text"] = text;
        payload["intent"] = intent;
        payload["entities"] = nlohmann::json::array();
        for (const auto& en : entities) {
          payload["entities"].push_back({{"entity", en.entity}, {"value", en.value}, {"start", en.start}, {"end", en.end}});
        }
        break;
      }
      case EventType::SlotSet:
        payload["name"] = slot;
        payload["value"] = value ? nlohmann::json(*value) : nlohmann::json(nullptr);
        break;
      case EventType::ActionExecuted:
        payload["name"] = action;
        break;
      case EventType::BotUttered:
        payload["text"] = text;
        break;
    }
    return {{"type", event_type_name(type)}, {"payload", payload}, {"timestamp", timestamp}};
  }

  /// Throws CorruptEvent carrying `index`.
  static Event from_json(const nlohmann::json& j, long index) {
    try {
      Event e;
      const std::string type = j.at("type").get<std::string>();
      const auto& p = j.at("payload");
      e.timestamp = j.at("timestamp").get<std::string>();
      if (type == "user_message") {
        e.type = EventType::UserMessage;
        e.text = p.at("text").get<std::string>();
        e.intent = p.at("intent").get<std::string>();
        for (const auto& en : p.at("entities")) {
          e.entities.push_back({en.at("entity").get<std::string>(), en.at("value").get<std::string>(),
                                en.at("start").get<std::size_t>(), en.at("end").get<std::size_t>()});
        }
      } else if (type == "slot_set") {
        e.type = EventType::SlotSet;
        e.slot = p.at("name").get<std::string>();
        if (!p.at("value").is_null()) e.value = p.at("value").get<std::string>();
      } else if (type == "action_executed") {
        e.type = EventType::ActionExecuted;
        e.action = p.at("name").get<std::string>();
      } else if (type == "bot_uttered") {
        e.type = EventType::BotUttered;
        e.text = p.at("text").get<std::string>();
      } else {
        throw Error(ErrorCode::CorruptEvent, "event " + std::to_string(index) + " has unknown type '" + type + "'", index);
      }
      return e;
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::CorruptEvent, "event " + std::to_string(index) + ": " + ex.what(), index);
    }
  }
};

/// UTC, millisecond precision, e.g. 2026-10-15T08:30:00.123Z.
inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

class DialogueTracker {
 public:
  DialogueTracker() = default;
  explicit DialogueTracker(std::string session_id) : session_id_(std::move(session_id)) {}

  const std::string& session_id() const { return session_id_; }
  const std::vector<Event>& events() const { return events_; }
  const std::map<std::string, std::optional<std::string>>& slots() const { return slots_; }

  std::optional<std::string> slot(const std::string& name) const {
    auto it = slots_.find(name);
    return it == slots_.end() ? std::nullopt : it->second;
  }

  /// Latest user message, if any.
  const Event* latest_message() const {
    for (auto it = events_.rbegin(); it != events_.rend(); ++it) {
      if (it->type == EventType::UserMessage) return &*it;
    }
    return nullptr;
  }

  std::optional<std::string> last_action() const {
    for (auto it = events_.rbegin(); it != events_.rend(); ++it) {
      if (it->type == EventType::ActionExecuted) return it->action;
    }
    return std::nullopt;
  }

  /// Appends and folds one event.
  void apply(Event e) {
    if (e.type == EventType::SlotSet) slots_[e.slot] = e.value;
    events_.push_back(std::move(e));
  }

 private:
  std::string session_id_;
  std::vector<Event> events_;
  std::map<std::string, std::optional<std::string>> slots_;
};

inline DialogueTracker replay_tracker(const std::string& session_id, const std::vector<Event>& events) {
  DialogueTracker t(session_id);
  for (const auto& e : events) t.apply(e);
  return t;
}

inline DialogueTracker replay_tracker(const std::string& session_id, const nlohmann::json& events) {
  DialogueTracker t(session_id);
  long i = 0;
  for (const auto& j : events) t.apply(Event::from_json(j, i++));
  return t;
}

/// Filesystem-safe encoding of a session id: [A-Za-z0-9_-] kept, other bytes
/// written as %XX.
inline std::string session_file_name(const std::string& id) {
  std::string out;
  for (unsigned char c : id) {
    if (std::isalnum(c) || c == '_' || c == '-') {
      out += static_cast<char>(c);
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out + ".jsonl";
}

/// Trackers by session id, each guarded by its own mutex. With a journal
/// directory every applied event is appended and flushed before returning.
class SessionStore {
 public:
  SessionStore() = default;
  explicit SessionStore(std::filesystem::path journal_dir) : dir_(std::move(journal_dir)) {
    std::filesystem::create_directories(*dir_);
  }

  /// Runs `fn` with exclusive access to the session's tracker. `record`
  /// timestamps, journals and applies one event.
  using Record = std::function<void(Event)>;
  template <typename Fn>
  auto with_session(const std::string& id, Fn&& fn) {
    Session& s = session(id);
    std::lock_guard lock(s.mutex);
    Record record = [&](Event e) {
      if (e.timestamp.empty()) e.timestamp = iso8601_now();
      if (s.journal) {
        *s.journal << e.to_json().dump() << '\n';
        s.journal->flush();
        if (!*s.journal) throw Error(ErrorCode::IoError, "cannot write session journal for " + id);
      }
      s.tracker.apply(std::move(e));
    };
    return fn(static_cast<const DialogueTracker&>(s.tracker), record);
  }

  /// Copy of the tracker for read-only inspection.
  DialogueTracker snapshot(const std::string& id) {
    Session& s = session(id);
    std::lock_guard lock(s.mutex);
    return s.tracker;
  }

  bool exists(const std::string& id) {
    std::lock_guard lock(map_mutex_);
    if (sessions_.count(id)) return true;
    return dir_ && std::filesystem::exists(*dir_ / session_file_name(id));
  }

  /// Reads a journal file back into a tracker.
  static DialogueTracker load_journal(const std::filesystem::path& file, const std::string& id) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::IoError, "cannot read journal " + file.string());
    std::vector<Event> events;
    std::string line;
    long i = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptEvent, "journal line " + std::to_string(i + 1) + ": " + e.what(), i);
      }
      events.push_back(Event::from_json(j, i++));
    }
    return replay_tracker(id, events);
  }

 private:
  struct Session {
    std::mutex mutex;
    DialogueTracker tracker;
    std::unique_ptr<std::ofstream> journal;
  };

  Session& session(const std::string& id) {
    std::lock_guard lock(map_mutex_);
    auto it = sessions_.find(id);
    if (it != sessions_.end()) return *it->second;
    auto s = std::make_unique<Session>();
    s->tracker = DialogueTracker(id);
    if (dir_) {
      const auto file = *dir_ / session_file_name(id);
      if (std::filesystem::exists(file)) s->tracker = load_journal(file, id);
      s->journal = std::make_unique<std::ofstream>(file, std::ios::app);
      if (!*s->journal) throw Error(ErrorCode::IoError, "cannot open journal " + file.string());
    }
    return *sessions_.emplace(id, std::move(s)).first->second;
  }

  std::optional<std::filesystem::path> dir_;
  std::mutex map_mutex_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
};

}  // namespace farmbot
