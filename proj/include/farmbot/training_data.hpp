#pragma once

#include "farmbot/crf.hpp"
#include "farmbot/error.hpp"
#include "farmbot/nlu_pipeline.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace farmbot {

struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string entity;
  std::string value;

  bool operator==(const EntitySpan&) const = default;
};

struct Example {
  std::string id;
  std::string text;
  std::string intent;
  std::vector<EntitySpan> entities;
};

/// Parsed nlu.json: {version, examples, synonyms, regex_patterns}.
struct NluData {
  std::vector<Example> examples;
  std::map<std::string, std::string> synonyms;
  std::vector<nlu::RegexPattern> regex_patterns;

  std::vector<std::string> intents() const {
    std::set<std::string> s;
    for (const auto& e : examples) s.insert(e.intent);
    return {s.begin(), s.end()};
  }

  std::vector<std::string> entity_types() const {
    std::set<std::string> s;
    for (const auto& e : examples) {
      for (const auto& en : e.entities) s.insert(en.entity);
    }
    return {s.begin(), s.end()};
  }

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    for (const auto& e : examples) out.push_back(e.text);
    return out;
  }
};

/// BIO tags for an example. Entity spans must start and end exactly on
/// token boundaries.
inline std::vector<std::size_t> gold_tags(const Example& ex, const std::vector<nlu::Token>& tokens, const crf::TagSet& tags,
                                          long example_index = -1) {
  std::vector<std::size_t> out(tokens.size(), crf::TagSet::outside());
  for (const auto& en : ex.entities) {
    std::size_t first = tokens.size(), last = tokens.size();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].start == en.start) first = i;
      if (tokens[i].end == en.end) last = i;
    }
    if (first == tokens.size() || last == tokens.size() || last < first) {
      throw Error(ErrorCode::EntityAlignmentError,
                  "example '" + ex.id + "': entity span [" + std::to_string(en.start) + "," + std::to_string(en.end) +
                      ") does not align with token boundaries",
                  example_index);
    }
    const std::size_t type = tags.type_index(en.entity);
    for (std::size_t i = first; i <= last; ++i) {
      if (out[i] != crf::TagSet::outside()) {
        throw Error(ErrorCode::EntityAlignmentError, "example '" + ex.id + "': overlapping entities", example_index);
      }
      out[i] = i == first ? tags.begin_tag(type) : tags.inside_tag(type);
    }
  }
  return out;
}

inline NluData parse_nlu_data(const nlohmann::json& j) {
  NluData data;
  const auto& examples = j.at("examples");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    Example ex;
    ex.id = e.contains("id") ? e["id"].get<std::string>() : std::to_string(i);
    ex.text = e.at("text").get<std::string>();
    ex.intent = e.at("intent").get<std::string>();
    for (const auto& en : e.value("entities", nlohmann::json::array())) {
      EntitySpan s;
      s.start = en.at("start").get<std::size_t>();
      s.end = en.at("end").get<std::size_t>();
      s.entity = en.at("entity").get<std::string>();
      if (s.end <= s.start || s.end > ex.text.size()) {
        throw Error(ErrorCode::EntityAlignmentError, "example '" + ex.id + "': span outside text", static_cast<long>(i));
      }
      s.value = en.contains("value") ? en["value"].get<std::string>() : ex.text.substr(s.start, s.end - s.start);
      ex.entities.push_back(std::move(s));
    }
    data.examples.push_back(std::move(ex));
  }
  const nlohmann::json synonyms = j.value("synonyms", nlohmann::json::object());
  for (const auto& [k, v] : synonyms.items()) {
    data.synonyms[nlu::to_lower(k)] = v.get<std::string>();
  }
  for (const auto& p : j.value("regex_patterns", nlohmann::json::array())) {
    data.regex_patterns.push_back({p.at("name").get<std::string>(), p.at("pattern").get<std::string>()});
  }
  // Reject misaligned spans up front.
  crf::TagSet tags(data.entity_types());
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    gold_tags(data.examples[i], nlu::tokenize(data.examples[i].text), tags, static_cast<long>(i));
  }
  return data;
}

inline NluData load_nlu_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    return parse_nlu_data(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidData, path + ": " + e.what());
  }
}

}  // namespace farmbot
