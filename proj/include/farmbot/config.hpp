#pragma once

// Engine-wide configuration file: the pipeline (featurizers, dense table,
// DIET, TED, fallback thresholds) and the data paths. Relative paths are
// resolved against the directory holding the config file.

#include "farmbot/diet.hpp"
#include "farmbot/domain.hpp"
#include "farmbot/nlu_pipeline.hpp"
#include "farmbot/ted.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace farmbot {

struct DenseConfig {
  std::string table;  // embedding table file
  nlu::Pooling pooling = nlu::Pooling::Mean;
};

struct PipelineConfig {
  nlu::FeaturizerConfig featurizers;
  std::optional<DenseConfig> dense;
  diet::DietConfig diet;
  ted::TedConfig ted;
  double fallback_threshold = 0.3;
  double ambiguity_threshold = 0.1;
};

struct DataPaths {
  std::string nlu;
  std::string stories;
  std::string domain;
  std::string kb;
  std::string model_out;
  // Dense tables used by the comparison presets.
  std::string table_a;
  std::string table_b;
};

struct EngineConfig {
  PipelineConfig pipeline;
  DataPaths paths;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 42;

  nlohmann::json pipeline_json() const {
    nlohmann::json j;
    j["featurizers"] = pipeline.featurizers.to_json();
    j["dense"] = pipeline.dense ? nlohmann::json{{"table", pipeline.dense->table}, {"pooling", nlu::to_string(pipeline.dense->pooling)}}
                                : nlohmann::json(nullptr);
    j["diet"] = pipeline.diet.to_json();
    j["ted"] = pipeline.ted.to_json();
    j["fallback"] = {{"threshold", pipeline.fallback_threshold}, {"ambiguity_threshold", pipeline.ambiguity_threshold}};
    return j;
  }

  static PipelineConfig parse_pipeline(const nlohmann::json& j, const std::filesystem::path& base) {
    PipelineConfig p;
    p.featurizers = nlu::FeaturizerConfig::from_json(j.value("featurizers", nlohmann::json::object()));
    if (j.contains("dense") && !j["dense"].is_null()) {
      const auto& d = j["dense"];
      p.dense = DenseConfig{resolve(base, d.at("table").get<std::string>()), nlu::pooling_from_string(d.value("pooling", "mean"))};
    }
    p.diet = diet::DietConfig::from_json(j.value("diet", nlohmann::json::object()));
    p.ted = ted::TedConfig::from_json(j.value("ted", nlohmann::json::object()));
    const auto fb = j.value("fallback", nlohmann::json::object());
    p.fallback_threshold = fb.value("threshold", p.fallback_threshold);
    p.ambiguity_threshold = fb.value("ambiguity_threshold", p.ambiguity_threshold);
    if (p.fallback_threshold < 0 || p.fallback_threshold > 1 || p.ambiguity_threshold < 0 || p.ambiguity_threshold > 1) {
      throw Error(ErrorCode::InvalidConfig, "fallback thresholds must lie in [0,1]");
    }
    return p;
  }

  static std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
  }

  static EngineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    EngineConfig c;
    try {
      c.pipeline = parse_pipeline(j.value("pipeline", nlohmann::json::object()), base);
      const auto& p = j.at("paths");
      c.paths.nlu = resolve(base, p.at("nlu").get<std::string>());
      c.paths.stories = resolve(base, p.at("stories").get<std::string>());
      c.paths.domain = resolve(base, p.at("domain").get<std::string>());
      c.paths.kb = resolve(base, p.at("kb").get<std::string>());
      c.paths.model_out = resolve(base, p.value("model_out", std::string("models/default")));
      c.paths.table_a = resolve(base, p.value("table_a", std::string()));
      c.paths.table_b = resolve(base, p.value("table_b", std::string()));
      const auto ev = j.value("evaluation", nlohmann::json::object());
      c.test_fraction = ev.value("test_fraction", c.test_fraction);
      c.split_seed = ev.value("seed", c.split_seed);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
    }
    if (!(c.test_fraction > 0 && c.test_fraction < 1)) throw Error(ErrorCode::InvalidConfig, "test_fraction must be in (0,1)");
    return c;
  }

  /// Every referenced input path must exist.
  void validate_paths() const {
    auto need = [](const std::string& p, const char* what) {
      if (p.empty() || !std::filesystem::exists(p)) throw Error(ErrorCode::MissingFile, std::string(what) + " not found: " + p);
    };
    need(paths.nlu, "nlu data");
    need(paths.stories, "stories file");
    need(paths.domain, "domain file");
    need(paths.kb, "knowledge-base directory");
    if (pipeline.dense) need(pipeline.dense->table, "embedding table");
  }
};

inline EngineConfig load_engine_config(const std::string& path) {
  auto j = read_json_file(path);
  return EngineConfig::from_json(j, std::filesystem::absolute(path).parent_path());
}

struct NamedPipeline {
  std::string name;
  PipelineConfig pipeline;
};

/// The four comparison configurations: sparse only; sparse + table A with
/// max pooling; sparse + table B with mean pooling; sparse + table B with a
/// deeper, wider transformer and the masked-token objective.
inline std::vector<NamedPipeline> builtin_presets(const EngineConfig& base) {
  if (base.paths.table_a.empty() || base.paths.table_b.empty()) {
    throw Error(ErrorCode::InvalidConfig, "presets need paths.table_a and paths.table_b");
  }
  PipelineConfig sparse = base.pipeline;
  sparse.dense.reset();
  PipelineConfig one = sparse;
  one.dense = DenseConfig{base.paths.table_a, nlu::Pooling::Max};
  PipelineConfig two = sparse;
  two.dense = DenseConfig{base.paths.table_b, nlu::Pooling::Mean};
  PipelineConfig three = two;
  three.diet.num_transformer_layers = 4;
  three.diet.transformer_size = 256;
  three.diet.use_masked_language_model = true;
  return {{"config", sparse}, {"config-1", one}, {"config-2", two}, {"config-3", three}};
}

}  // namespace farmbot
