#pragma once

#include "farmbot/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace farmbot {

inline constexpr const char* kActionListen = "action_listen";
inline constexpr const char* kUtterFallback = "utter_fallback";

struct SlotSpec {
  std::string name;
  std::string from_entity;
};

/// Intents, entities, slots, actions and response templates of the bot.
struct DomainSpec {
  std::vector<std::string> intents;
  std::vector<std::string> entity_types;
  std::vector<SlotSpec> slots;
  std::vector<std::string> actions;
  std::map<std::string, std::vector<std::string>> responses;

  bool has_intent(const std::string& n) const { return std::find(intents.begin(), intents.end(), n) != intents.end(); }
  bool has_entity(const std::string& n) const {
    return std::find(entity_types.begin(), entity_types.end(), n) != entity_types.end();
  }
  bool has_action(const std::string& n) const { return std::find(actions.begin(), actions.end(), n) != actions.end(); }

  std::size_t action_index(const std::string& n) const {
    auto it = std::find(actions.begin(), actions.end(), n);
    if (it == actions.end()) throw Error(ErrorCode::UndeclaredAction, "action '" + n + "' is not declared");
    return static_cast<std::size_t>(it - actions.begin());
  }

  std::vector<std::string> slot_names() const {
    std::vector<std::string> out;
    for (const auto& s : slots) out.push_back(s.name);
    return out;
  }

  void validate() const {
    auto unique = [](const std::vector<std::string>& v, const char* what) {
      std::set<std::string> s(v.begin(), v.end());
      if (s.size() != v.size()) throw Error(ErrorCode::InvalidData, std::string("duplicate ") + what + " names in domain");
    };
    unique(intents, "intent");
    unique(entity_types, "entity");
    unique(actions, "action");
    unique(slot_names(), "slot");
    for (const auto& s : slots) {
      if (!has_entity(s.from_entity)) {
        throw Error(ErrorCode::InvalidData, "slot '" + s.name + "' fills from undeclared entity '" + s.from_entity + "'");
      }
    }
    if (!has_action(kActionListen)) throw Error(ErrorCode::InvalidData, "domain must declare action_listen");
    for (const auto& a : actions) {
      if (a.rfind("utter_", 0) == 0) {
        auto it = responses.find(a);
        if (it == responses.end() || it->second.empty()) {
          throw Error(ErrorCode::InvalidData, "utterance action '" + a + "' has no response template");
        }
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["intents"] = intents;
    j["entities"] = entity_types;
    j["slots"] = nlohmann::json::array();
    for (const auto& s : slots) j["slots"].push_back({{"name", s.name}, {"from_entity", s.from_entity}});
    j["actions"] = actions;
    j["responses"] = responses;
    return j;
  }

  static DomainSpec from_json(const nlohmann::json& j) {
    DomainSpec d;
    try {
      d.intents = j.at("intents").get<std::vector<std::string>>();
      d.entity_types = j.value("entities", std::vector<std::string>{});
      for (const auto& s : j.value("slots", nlohmann::json::array())) {
        d.slots.push_back({s.at("name").get<std::string>(), s.at("from_entity").get<std::string>()});
      }
      d.actions = j.at("actions").get<std::vector<std::string>>();
      d.responses = j.value("responses", std::map<std::string, std::vector<std::string>>{});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidData, std::string("domain: ") + e.what());
    }
    d.validate();
    return d;
  }
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidData, path + ": " + e.what());
  }
}

inline DomainSpec load_domain(const std::string& path) { return DomainSpec::from_json(read_json_file(path)); }

struct StoryStep {
  // Exactly one of the two is set.
  std::optional<std::string> intent;
  std::map<std::string, std::string> entities;
  std::optional<std::string> action;

  bool is_user() const { return intent.has_value(); }
};

struct Story {
  std::string name;
  std::vector<StoryStep> steps;
};

/// Stories must reference declared intents, entities and actions, and end
/// with an action step.
inline std::vector<Story> parse_stories(const nlohmann::json& j, const DomainSpec& domain) {
  std::vector<Story> stories;
  for (const auto& js : j) {
    Story s;
    s.name = js.at("name").get<std::string>();
    const auto& steps = js.at("steps");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto& st = steps[i];
      auto bad = [&](const std::string& what) {
        throw Error(ErrorCode::UnknownDomainReference,
                    "story '" + s.name + "' step " + std::to_string(i) + ": " + what, static_cast<long>(i));
      };
      StoryStep step;
      if (st.contains("user")) {
        step.intent = st.at("user").at("intent").get<std::string>();
        if (!domain.has_intent(*step.intent)) bad("undeclared intent '" + *step.intent + "'");
        const nlohmann::json ents = st.at("user").value("entities", nlohmann::json::object());
        for (const auto& [k, v] : ents.items()) {
          if (!domain.has_entity(k)) bad("undeclared entity '" + k + "'");
          step.entities[k] = v.get<std::string>();
        }
      } else if (st.contains("action")) {
        step.action = st.at("action").get<std::string>();
        if (!domain.has_action(*step.action)) bad("undeclared action '" + *step.action + "'");
      } else {
        throw Error(ErrorCode::InvalidData, "story '" + s.name + "' step " + std::to_string(i) + " is neither user nor action");
      }
      s.steps.push_back(std::move(step));
    }
    if (s.steps.empty() || s.steps.back().is_user()) {
      throw Error(ErrorCode::InvalidData, "story '" + s.name + "' must end with an action step");
    }
    stories.push_back(std::move(s));
  }
  return stories;
}

inline std::vector<Story> load_stories(const std::string& path, const DomainSpec& domain) {
  auto j = read_json_file(path);
  try {
    return parse_stories(j, domain);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidData, path + ": " + e.what());
  }
}

}  // namespace farmbot
