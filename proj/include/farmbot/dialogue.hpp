#pragma once

// The perceive-decide-act loop: NLU on the user text, slot filling from
// entities, then policy-chosen actions until the policy listens.

#include "farmbot/diet.hpp"
#include "farmbot/domain.hpp"
#include "farmbot/knowledge_base.hpp"
#include "farmbot/ted.hpp"
#include "farmbot/tracker.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cctype>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace farmbot {

inline constexpr const char* kQueryPlantProtection = "action_query_plant_protection";
inline constexpr const char* kQueryNutrient = "action_query_nutrient";
inline constexpr const char* kQueryOfficer = "action_query_officer";
inline constexpr const char* kDataUnavailableResponse = "utter_data_unavailable";
inline constexpr const char* kOfficerContactResponse = "utter_officer_contact";
inline constexpr std::size_t kMaxActionsPerTurn = 10;

/// Everything a conversation needs, read-only once loaded.
struct Engine {
  diet::DietModel diet;
  nlu::FeaturizerState featurizer;
  std::optional<nlu::EmbeddingTable> embeddings;
  std::map<std::string, std::string> synonyms;
  ted::TedModel ted;
  kb::KnowledgeBase kb;
  double fallback_threshold = 0.3;
  double ambiguity_threshold = 0.1;

  const DomainSpec& domain() const { return ted.domain; }
};

struct ActionOutcome {
  std::vector<Event> events;  // action_executed first, then any bot_uttered
  std::vector<std::string> texts;
};

/// Substitutes {name} placeholders from `values`; nullopt if any is unset.
inline std::optional<std::string> render_template(const std::string& tmpl,
                                                  const std::map<std::string, std::optional<std::string>>& values,
                                                  std::string* first_missing = nullptr) {
  static const std::regex placeholder(R"(\{([A-Za-z0-9_]+)\})");
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(tmpl.begin(), tmpl.end(), placeholder); it != std::sregex_iterator(); ++it) {
    const std::string name = (*it)[1].str();
    auto v = values.find(name);
    if (v == values.end() || !v->second) {
      if (first_missing) *first_missing = name;
      return std::nullopt;
    }
    out.append(tmpl, last, static_cast<std::size_t>(it->position()) - last);
    out += *v->second;
    last = static_cast<std::size_t>(it->position() + it->length());
  }
  out.append(tmpl, last);
  return out;
}

/// Question for a missing slot: the utter_ask_<slot> template if the domain
/// has one, else a generic prompt.
inline std::string clarification(const DomainSpec& domain, const std::string& slot,
                                 const std::map<std::string, std::optional<std::string>>& slots) {
  auto it = domain.responses.find("utter_ask_" + slot);
  if (it != domain.responses.end()) {
    for (const auto& t : it->second) {
      if (auto r = render_template(t, slots)) return *r;
    }
  }
  std::string readable = slot;
  for (char& c : readable) c = c == '_' ? ' ' : c;
  return "Could you tell me the " + readable + "?";
}

/// First renderable template of `response`, or nullopt if the domain lacks it
/// or every template needs a missing value.
inline std::optional<std::string> render_response(const DomainSpec& domain, const std::string& response,
                                                  const std::map<std::string, std::optional<std::string>>& values,
                                                  std::string* first_missing = nullptr) {
  auto it = domain.responses.find(response);
  if (it == domain.responses.end()) return std::nullopt;
  std::string missing;
  for (const auto& t : it->second) {
    std::string m;
    if (auto r = render_template(t, values, &m)) return r;
    if (missing.empty()) missing = m;
  }
  if (first_missing) *first_missing = missing;
  return std::nullopt;
}

inline std::string data_unavailable(const DomainSpec& domain, const std::map<std::string, std::optional<std::string>>& slots) {
  if (auto r = render_response(domain, kDataUnavailableResponse, slots)) return *r;
  return "Sorry, I don't have data for that yet.";
}

namespace detail {

/// Runs a KB lookup keyed by two slots, asking for the first missing one.
template <typename Lookup>
std::string query_two_slots(const DomainSpec& domain, const DialogueTracker& tracker, const char* a, const char* b,
                            Lookup&& lookup) {
  for (const char* slot : {a, b}) {
    if (!tracker.slot(slot)) return clarification(domain, slot, tracker.slots());
  }
  if (auto text = lookup(*tracker.slot(a), *tracker.slot(b))) return *text;
  return data_unavailable(domain, tracker.slots());
}

}  // namespace detail

/// Runs one action against the tracker's current state. The tracker is not
/// modified; the caller records the returned events.
inline ActionOutcome execute_action(const std::string& action, const DialogueTracker& tracker, const DomainSpec& domain,
                                    const kb::KnowledgeBase& kb) {
  if (!domain.has_action(action)) throw Error(ErrorCode::UndeclaredAction, "action '" + action + "' is not declared");
  ActionOutcome out;
  out.events.push_back(Event::action_executed(action));
  if (action == kActionListen) return out;

  std::string text;
  if (action == kQueryPlantProtection) {
    text = detail::query_two_slots(domain, tracker, "crop", "disease",
                                   [&](const std::string& c, const std::string& d) { return kb.query_plant_protection(c, d); });
  } else if (action == kQueryNutrient) {
    text = detail::query_two_slots(domain, tracker, "crop", "nutrient",
                                   [&](const std::string& c, const std::string& n) { return kb.query_nutrient(c, n); });
  } else if (action == kQueryOfficer) {
    text = detail::query_two_slots(domain, tracker, "role", "city", [&](const std::string& r, const std::string& c) {
      std::optional<std::string> reply;
      if (auto contact = kb.query_officer(r, c)) {
        auto values = tracker.slots();
        values["phone"] = contact->phone;
        values["mail"] = contact->mail.empty() ? std::optional<std::string>("not listed") : contact->mail;
        reply = render_response(domain, kOfficerContactResponse, values);
        if (!reply) reply = "Phone: " + contact->phone + (contact->mail.empty() ? "" : ", mail: " + contact->mail);
      }
      return reply;
    });
  } else if (action.rfind("utter_", 0) == 0) {
    std::string missing;
    auto r = render_response(domain, action, tracker.slots(), &missing);
    text = r ? *r : clarification(domain, missing, tracker.slots());
  } else {
    throw Error(ErrorCode::UndeclaredAction, "action '" + action + "' has no implementation");
  }
  out.texts.push_back(text);
  out.events.push_back(Event::bot_uttered(text));
  return out;
}

/// Whitespace tokens keep adjacent punctuation ("blast?"); entity values are
/// stripped of it before synonym mapping and slot filling.
inline std::string strip_punctuation(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::ispunct(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::ispunct(static_cast<unsigned char>(s[e - 1]))) --e;
  return b == e ? std::string(s) : std::string(s.substr(b, e - b));
}

struct TurnResult {
  std::vector<std::string> texts;
  std::string intent;  // after fallback
  std::vector<std::pair<std::string, double>> ranking;
  std::vector<diet::ExtractedEntity> entities;
  std::vector<std::string> actions;

  nlohmann::json debug_json() const {
    nlohmann::json j;
    j["intent"] = intent;
    j["intent_ranking"] = nlohmann::json::array();
    for (const auto& [name, conf] : ranking) j["intent_ranking"].push_back({{"name", name}, {"confidence", conf}});
    j["entities"] = nlohmann::json::array();
    for (const auto& e : entities) {
      j["entities"].push_back({{"entity", e.type}, {"value", e.value}, {"text", e.surface}, {"start", e.start}, {"end", e.end}});
    }
    j["actions"] = actions;
    return j;
  }
};

/// NLU, slot filling and the action loop for one user message. Holds the
/// session exclusively for the whole turn.
inline TurnResult handle_message(SessionStore& store, const std::string& session_id, const std::string& text, Engine& engine) {
  if (nlu::trim(text).empty()) throw Error(ErrorCode::EmptyMessage, "message is empty");
  const DomainSpec& domain = engine.domain();
  auto prediction = diet::predict(text, engine.diet, engine.featurizer, engine.embeddings ? &*engine.embeddings : nullptr);
  TurnResult result;
  result.ranking = prediction.ranking;
  result.intent = diet::apply_fallback(prediction.ranking, engine.fallback_threshold, engine.ambiguity_threshold);
  for (auto& e : prediction.entities) e.value = strip_punctuation(e.value);
  result.entities = diet::map_synonyms(prediction.entities, engine.synonyms);

  store.with_session(session_id, [&](const DialogueTracker& tracker, const SessionStore::Record& record) {
    std::vector<EventEntity> ents;
    for (const auto& e : result.entities) ents.push_back({e.type, e.value, e.start, e.end});
    record(Event::user(text, result.intent, ents));
    for (const auto& e : result.entities) {
      for (const auto& slot : domain.slots) {
        if (slot.from_entity == e.type) record(Event::slot_set(slot.name, nlu::to_lower(e.value)));
      }
    }

    auto run = [&](const std::string& action) {
      auto outcome = execute_action(action, tracker, domain, engine.kb);
      for (auto& ev : outcome.events) record(std::move(ev));
      for (auto& t : outcome.texts) result.texts.push_back(std::move(t));
      result.actions.push_back(action);
    };

    if (result.intent == diet::kFallbackIntent) {
      run(kUtterFallback);
      run(kActionListen);
      return;
    }
    for (std::size_t step = 0; step < kMaxActionsPerTurn; ++step) {
      const std::string next = ted::predict_next_action(tracker, engine.ted).action;
      run(next);
      if (next == kActionListen) return;
    }
    spdlog::warn("session {}: action loop guard hit after {} actions", session_id, kMaxActionsPerTurn);
    run(kUtterFallback);
    run(kActionListen);
  });
  return result;
}

}  // namespace farmbot
