#pragma once

// Scratch directories and a tiny, fast-to-train bot used by the integration
// tests.

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace farmbot::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "farmbot-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json toy_domain_json() {
  return nlohmann::json::parse(R"({
    "intents": ["greet", "goodbye", "ask_plant_protection", "ask_officer"],
    "entities": ["crop", "disease", "role", "city"],
    "slots": [{"name": "crop", "from_entity": "crop"}, {"name": "disease", "from_entity": "disease"},
              {"name": "role", "from_entity": "role"}, {"name": "city", "from_entity": "city"}],
    "actions": ["action_listen", "utter_greet", "utter_goodbye", "action_query_plant_protection",
                "action_query_officer", "utter_fallback"],
    "responses": {
      "utter_greet": ["Hello! Ask me about crop diseases."],
      "utter_goodbye": ["Goodbye."],
      "utter_fallback": ["Sorry, I did not understand that."],
      "utter_data_unavailable": ["I have no advice for {disease} on {crop} yet."],
      "utter_ask_crop": ["Which crop is affected?"],
      "utter_officer_contact": ["Call {phone} or write to {mail}."]
    }
  })");
}

/// Entity spans are located by substring search so the examples stay readable.
inline nlohmann::json toy_example(const std::string& text, const std::string& intent,
                                  std::initializer_list<std::pair<const char*, const char*>> ents = {}) {
  nlohmann::json j{{"text", text}, {"intent", intent}, {"entities", nlohmann::json::array()}};
  for (const auto& [type, surface] : ents) {
    const auto start = text.find(surface);
    if (start == std::string::npos) throw std::runtime_error("entity not in text");
    j["entities"].push_back({{"entity", type}, {"start", start}, {"end", start + std::string(surface).size()}});
  }
  return j;
}

inline nlohmann::json toy_nlu_json() {
  nlohmann::json ex = nlohmann::json::array();
  for (const char* t : {"hello", "hi there", "good morning", "hey", "hello friend", "hi"}) ex.push_back(toy_example(t, "greet"));
  for (const char* t : {"bye", "goodbye", "see you later", "bye bye", "good night", "see you"}) {
    ex.push_back(toy_example(t, "goodbye"));
  }
  ex.push_back(toy_example("my paddy has blast", "ask_plant_protection", {{"crop", "paddy"}, {"disease", "blast"}}));
  ex.push_back(toy_example("how to control blast in paddy", "ask_plant_protection", {{"disease", "blast"}, {"crop", "paddy"}}));
  ex.push_back(toy_example("my tomato has wilt", "ask_plant_protection", {{"crop", "tomato"}, {"disease", "wilt"}}));
  ex.push_back(toy_example("how to control wilt in tomato", "ask_plant_protection", {{"disease", "wilt"}, {"crop", "tomato"}}));
  ex.push_back(toy_example("my cotton has rust", "ask_plant_protection", {{"crop", "cotton"}, {"disease", "rust"}}));
  ex.push_back(toy_example("how to control rust in cotton", "ask_plant_protection", {{"disease", "rust"}, {"crop", "cotton"}}));
  ex.push_back(toy_example("who is the agriculture officer in madurai", "ask_officer", {{"role", "agriculture officer"}, {"city", "madurai"}}));
  ex.push_back(toy_example("contact of the horticulture officer in salem", "ask_officer", {{"role", "horticulture officer"}, {"city", "salem"}}));
  ex.push_back(toy_example("who is the horticulture officer in madurai", "ask_officer", {{"role", "horticulture officer"}, {"city", "madurai"}}));
  ex.push_back(toy_example("contact of the agriculture officer in salem", "ask_officer", {{"role", "agriculture officer"}, {"city", "salem"}}));
  return {{"version", 1}, {"examples", ex}, {"synonyms", {{"paddy rice", "paddy"}}}, {"regex_patterns", nlohmann::json::array()}};
}

inline nlohmann::json toy_stories_json() {
  return nlohmann::json::parse(R"([
    {"name": "greet", "steps": [{"user": {"intent": "greet"}}, {"action": "utter_greet"}]},
    {"name": "bye", "steps": [{"user": {"intent": "goodbye"}}, {"action": "utter_goodbye"}]},
    {"name": "pp", "steps": [{"user": {"intent": "ask_plant_protection", "entities": {"crop": "paddy", "disease": "blast"}}},
                             {"action": "action_query_plant_protection"}]},
    {"name": "officer", "steps": [{"user": {"intent": "ask_officer", "entities": {"role": "agriculture officer", "city": "salem"}}},
                                  {"action": "action_query_officer"}]},
    {"name": "greet then pp", "steps": [{"user": {"intent": "greet"}}, {"action": "utter_greet"},
                             {"user": {"intent": "ask_plant_protection", "entities": {"crop": "tomato", "disease": "wilt"}}},
                             {"action": "action_query_plant_protection"},
                             {"user": {"intent": "goodbye"}}, {"action": "utter_goodbye"}]}
  ])");
}

inline const char* kToyPaddyBlastRemedy = "Spray tricyclazole 75 WP at 0.6 g/l, twice at 10 day intervals";

inline void write_toy_kb(const std::filesystem::path& dir) {
  write_file(dir / "plant_protection.csv",
             std::string("crop,disease,remedy\n") + "Paddy,Blast,\"" + kToyPaddyBlastRemedy + "\"\n" +
                 "tomato,wilt,Drench copper oxychloride 3 g/l near the roots\n");
  write_file(dir / "nutrient.csv", "crop,nutrient,remedy\npaddy,zinc,Apply zinc sulphate 25 kg/ha\n");
  write_file(dir / "officers.csv", "role,city,phone,mail\nagriculture officer,salem,+91 427 2450000,ao.salem@example.org\n"
                                   "horticulture officer,salem,+91 427 2450001,\n");
}

inline void write_toy_table(const std::filesystem::path& file) {
  std::string text;
  const char* words[] = {"hello", "hi", "bye", "goodbye", "paddy", "tomato", "cotton", "blast", "wilt", "rust", "officer", "salem", "madurai"};
  for (std::size_t i = 0; i < std::size(words); ++i) {
    text += words[i];
    for (std::size_t d = 0; d < 4; ++d) text += " " + std::to_string(static_cast<double>((i * 7 + d * 3) % 11) / 10.0 - 0.5);
    text += "\n";
  }
  write_file(file, text);
}

/// Writes the toy bot under `dir` and returns the path of its config file.
inline std::filesystem::path write_toy_world(const std::filesystem::path& dir, bool dense = false) {
  write_file(dir / "nlu.json", toy_nlu_json().dump(2));
  write_file(dir / "domain.json", toy_domain_json().dump(2));
  write_file(dir / "stories.json", toy_stories_json().dump(2));
  write_toy_kb(dir / "kb");
  write_toy_table(dir / "table_a.txt");
  write_toy_table(dir / "table_b.txt");
  nlohmann::json pipeline = {
      {"diet",
       {{"epochs", 40}, {"num_transformer_layers", 1}, {"transformer_size", 16}, {"num_attention_heads", 2}, {"embedding_dim", 8},
        {"learning_rate", 0.01}}},
      {"ted", {{"epochs", 120}, {"transformer_size", 16}, {"num_heads", 2}, {"embedding_dim", 8}, {"learning_rate", 0.01}}},
      {"dense", dense ? nlohmann::json{{"table", "table_a.txt"}, {"pooling", "mean"}} : nlohmann::json(nullptr)}};
  nlohmann::json config = {{"pipeline", pipeline},
                           {"paths",
                            {{"nlu", "nlu.json"},
                             {"stories", "stories.json"},
                             {"domain", "domain.json"},
                             {"kb", "kb"},
                             {"model_out", "model"},
                             {"table_a", "table_a.txt"},
                             {"table_b", "table_b.txt"}}},
                           {"evaluation", {{"test_fraction", 0.2}, {"seed", 7}}}};
  write_file(dir / "config.json", config.dump(2));
  return dir / "config.json";
}

}  // namespace farmbot::testing
