#pragma once

// Training the full engine and the on-disk model bundle.
//
// Bundle directory:
//   config.json            format_version, model_version, pipeline, label sets, synonyms
//   featurizer_state.json  vocabularies and regex patterns
//   domain.json            the domain the policy was trained against
//   params.bin             every parameter tensor, DIET then TED
//   embeddings.txt         the dense table, only when the pipeline has one
//
// params.bin: "FBPARAMS", u32 version, u32 count, then per tensor u32 name
// length, name bytes, u64 rows, u64 cols, rows*cols little-endian doubles
// in row-major order.

#include "farmbot/config.hpp"
#include "farmbot/dialogue.hpp"
#include "farmbot/training_data.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace farmbot {

inline constexpr int kBundleFormatVersion = 1;

struct NluArtifacts {
  diet::DietModel model;
  nlu::FeaturizerState state;
  std::optional<nlu::EmbeddingTable> table;
  std::vector<diet::LossBreakdown> history;
};

inline std::optional<nlu::EmbeddingTable> load_dense(const PipelineConfig& p) {
  if (!p.dense) return std::nullopt;
  auto t = nlu::load_embedding_table(p.dense->table);
  t.pooling = p.dense->pooling;
  return t;
}

/// Fits featurizers on `train` and trains DIET.
inline NluArtifacts train_nlu(const std::vector<Example>& train, const std::vector<nlu::RegexPattern>& patterns,
                              const PipelineConfig& p, const diet::EpochCallback& on_epoch = {}) {
  if (train.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no NLU training examples");
  NluArtifacts a;
  std::vector<std::string> texts;
  for (const auto& e : train) texts.push_back(e.text);
  a.state = nlu::fit_featurizers(texts, p.featurizers, patterns);
  a.table = load_dense(p);
  auto r = diet::train(train, p.diet, a.state, a.table ? &*a.table : nullptr, on_epoch);
  a.model = std::move(r.model);
  a.history = std::move(r.history);
  return a;
}

struct TrainedEngine {
  Engine engine;
  std::vector<diet::LossBreakdown> diet_history;
  std::vector<double> ted_history;
};

inline TrainedEngine train_engine(const EngineConfig& config, const diet::EpochCallback& on_epoch = {}) {
  config.validate_paths();
  auto data = load_nlu_data(config.paths.nlu);
  auto domain = load_domain(config.paths.domain);
  auto stories = load_stories(config.paths.stories, domain);
  for (const auto& ex : data.examples) {
    if (!domain.has_intent(ex.intent)) {
      throw Error(ErrorCode::UnknownDomainReference, "nlu example '" + ex.id + "' uses undeclared intent '" + ex.intent + "'");
    }
  }
  TrainedEngine out;
  out.engine.kb = kb::load_kb(config.paths.kb);
  auto nlu = train_nlu(data.examples, data.regex_patterns, config.pipeline, on_epoch);
  out.engine.diet = std::move(nlu.model);
  out.engine.featurizer = std::move(nlu.state);
  out.engine.embeddings = std::move(nlu.table);
  out.engine.synonyms = data.synonyms;
  out.engine.fallback_threshold = config.pipeline.fallback_threshold;
  out.engine.ambiguity_threshold = config.pipeline.ambiguity_threshold;
  out.diet_history = std::move(nlu.history);
  out.engine.ted = ted::train(stories, domain, config.pipeline.ted, &out.ted_history);
  return out;
}

// ---- params.bin ---------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little, "params.bin writer assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& file) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(ErrorCode::InvalidData, file + ": truncated");
  return v;
}

}  // namespace detail

inline void write_params(const std::filesystem::path& file, const std::vector<const ParameterSet*>& sets) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + file.string());
  std::uint32_t count = 0;
  for (const auto* s : sets) count += static_cast<std::uint32_t>(s->size());
  out.write("FBPARAMS", 8);
  detail::put<std::uint32_t>(out, kBundleFormatVersion);
  detail::put<std::uint32_t>(out, count);
  for (const auto* s : sets) {
    for (std::size_t i = 0; i < s->size(); ++i) {
      const Parameter& p = (*s)[i];
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.rows()));
      detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.cols()));
      out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + file.string());
}

/// Overwrites every parameter of `sets` from the file; names and shapes must
/// match exactly and no tensor may be left over.
inline void read_params(const std::filesystem::path& file, const std::vector<ParameterSet*>& sets) {
  const std::string name = file.string();
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "missing " + name);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "FBPARAMS", 8) != 0) throw Error(ErrorCode::InvalidData, name + ": bad magic");
  const auto version = detail::get<std::uint32_t>(in, name);
  if (version != kBundleFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, name + ": format version " + std::to_string(version) + ", expected " +
                                                std::to_string(kBundleFormatVersion));
  }
  const auto count = detail::get<std::uint32_t>(in, name);
  std::size_t expected = 0;
  for (const auto* s : sets) expected += s->size();
  if (count != expected) throw Error(ErrorCode::ShapeMismatch, name + ": holds " + std::to_string(count) + " tensors, model has " + std::to_string(expected));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get<std::uint32_t>(in, name);
    std::string pname(len, '\0');
    if (!in.read(pname.data(), len)) throw Error(ErrorCode::InvalidData, name + ": truncated");
    const auto rows = detail::get<std::uint64_t>(in, name);
    const auto cols = detail::get<std::uint64_t>(in, name);
    Parameter* target = nullptr;
    for (auto* s : sets) {
      if (s->contains(pname)) target = &s->at(pname);
    }
    if (!target) throw Error(ErrorCode::ShapeMismatch, name + ": unexpected tensor " + pname);
    if (static_cast<std::uint64_t>(target->value.rows()) != rows || static_cast<std::uint64_t>(target->value.cols()) != cols) {
      throw Error(ErrorCode::ShapeMismatch, name + ": tensor " + pname + " has the wrong shape");
    }
    if (!in.read(reinterpret_cast<char*>(target->value.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols))) {
      throw Error(ErrorCode::InvalidData, name + ": truncated");
    }
  }
}

// ---- bundle -------------------------------------------------------------------

inline std::string file_digest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(nlu::fnv1a(ss.str())));
  return buf;
}

inline void write_json(const std::filesystem::path& file, const nlohmann::json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + file.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + file.string());
}

inline void write_embedding_table(const std::filesystem::path& file, const nlu::EmbeddingTable& t) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + file.string());
  std::map<std::string, const std::vector<double>*> sorted;
  for (const auto& [k, v] : t.vectors) sorted[k] = &v;
  char buf[40];
  for (const auto& [k, v] : sorted) {
    out << k;
    for (double x : *v) {
      std::snprintf(buf, sizeof buf, " %.17g", x);
      out << buf;
    }
    out << '\n';
  }
}

/// Writes the bundle and returns its model_version.
inline std::string save_bundle(const std::filesystem::path& dir, const Engine& e, const PipelineConfig& pipeline) {
  std::filesystem::create_directories(dir);
  write_params(dir / "params.bin", {&e.diet.params, &e.ted.params});
  const std::string version = std::to_string(kBundleFormatVersion) + "-" + file_digest(dir / "params.bin");
  EngineConfig c;
  c.pipeline = pipeline;
  nlohmann::json pj = c.pipeline_json();
  if (e.embeddings) pj["dense"]["table"] = "embeddings.txt";
  write_json(dir / "config.json", {{"format_version", kBundleFormatVersion},
                                   {"model_version", version},
                                   {"pipeline", pj},
                                   {"diet", e.diet.meta_json()},
                                   {"ted", e.ted.config.to_json()},
                                   {"synonyms", e.synonyms}});
  write_json(dir / "featurizer_state.json", e.featurizer.to_json());
  write_json(dir / "domain.json", e.domain().to_json());
  if (e.embeddings) write_embedding_table(dir / "embeddings.txt", *e.embeddings);
  return version;
}

struct LoadedBundle {
  Engine engine;
  std::string model_version;
};

inline LoadedBundle load_bundle(const std::filesystem::path& dir, const std::filesystem::path& kb_dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::MissingFile, "model bundle not found: " + dir.string());
  const auto config = read_json_file((dir / "config.json").string());
  const int version = config.value("format_version", -1);
  if (version != kBundleFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "bundle format_version " + std::to_string(version) + " is not supported (expected " +
                                                std::to_string(kBundleFormatVersion) + ")");
  }
  LoadedBundle b;
  Engine& e = b.engine;
  try {
    const PipelineConfig pipeline = EngineConfig::parse_pipeline(config.at("pipeline"), dir);
    e.featurizer = nlu::FeaturizerState::from_json(read_json_file((dir / "featurizer_state.json").string()));
    e.embeddings = load_dense(pipeline);
    e.diet = diet::DietModel::from_meta(config.at("diet"));
    e.ted = ted::TedModel(ted::TedConfig::from_json(config.at("ted")), load_domain((dir / "domain.json").string()));
    e.synonyms = config.at("synonyms").get<std::map<std::string, std::string>>();
    e.fallback_threshold = pipeline.fallback_threshold;
    e.ambiguity_threshold = pipeline.ambiguity_threshold;
    b.model_version = config.at("model_version").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::InvalidData, "bundle config: " + std::string(ex.what()));
  }
  // Shapes come from initialization; values are then overwritten.
  Rng scratch(0);
  e.diet.initialize(scratch);
  e.ted.initialize(scratch);
  read_params(dir / "params.bin", {&e.diet.params, &e.ted.params});
  e.kb = kb::load_kb(kb_dir);
  return b;
}

}  // namespace farmbot
