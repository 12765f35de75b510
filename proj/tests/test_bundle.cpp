#include "farmbot/bundle.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

using namespace farmbot;
using farmbot::testing::TempDir;

namespace {

ErrorCode error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidData;
}

std::vector<std::string> replies(Engine& e, const std::vector<std::string>& messages) {
  SessionStore store;
  std::vector<std::string> out;
  for (const auto& m : messages) {
    auto r = handle_message(store, "s", m, e);
    out.push_back(r.intent);
    for (const auto& a : r.actions) out.push_back(a);
    for (const auto& t : r.texts) out.push_back(t);
  }
  return out;
}

}  // namespace

TEST(EngineConfig, ResolvesRelativeToConfigDir) {
  TempDir d;
  auto path = farmbot::testing::write_toy_world(d.path(), true);
  auto c = load_engine_config(path.string());
  EXPECT_EQ(c.paths.nlu, (d / "nlu.json").lexically_normal().string());
  ASSERT_TRUE(c.pipeline.dense);
  EXPECT_EQ(c.pipeline.dense->table, (d / "table_a.txt").lexically_normal().string());
  EXPECT_EQ(c.pipeline.diet.transformer_size, 16u);
  EXPECT_EQ(c.split_seed, 7u);
  EXPECT_NO_THROW(c.validate_paths());
}

TEST(EngineConfig, MissingPathNamed) {
  TempDir d;
  auto c = load_engine_config(farmbot::testing::write_toy_world(d.path()).string());
  std::filesystem::remove(d / "stories.json");
  try {
    c.validate_paths();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingFile);
    EXPECT_NE(std::string(e.what()).find("stories.json"), std::string::npos);
  }
}

TEST(EngineConfig, RejectsBadThresholds) {
  nlohmann::json j = {{"pipeline", {{"fallback", {{"threshold", 1.5}}}}},
                      {"paths", {{"nlu", "a"}, {"stories", "b"}, {"domain", "c"}, {"kb", "d"}}}};
  EXPECT_EQ(error_of([&] { EngineConfig::from_json(j, "."); }), ErrorCode::InvalidConfig);
}

TEST(EngineConfig, PresetsDifferOnlyWhereDocumented) {
  TempDir d;
  auto c = load_engine_config(farmbot::testing::write_toy_world(d.path(), true).string());
  auto presets = builtin_presets(c);
  ASSERT_EQ(presets.size(), 4u);
  EXPECT_EQ(presets[0].name, "config");
  EXPECT_FALSE(presets[0].pipeline.dense);
  EXPECT_EQ(presets[1].pipeline.dense->pooling, nlu::Pooling::Max);
  EXPECT_EQ(presets[1].pipeline.dense->table, c.paths.table_a);
  EXPECT_EQ(presets[2].pipeline.dense->pooling, nlu::Pooling::Mean);
  EXPECT_EQ(presets[2].pipeline.dense->table, c.paths.table_b);
  EXPECT_EQ(presets[3].pipeline.diet.num_transformer_layers, 4u);
  EXPECT_EQ(presets[3].pipeline.diet.transformer_size, 256u);
  EXPECT_TRUE(presets[3].pipeline.diet.use_masked_language_model);
  EXPECT_EQ(presets[0].pipeline.diet.epochs, c.pipeline.diet.epochs);
}

TEST(TrainEngine, UndeclaredIntentInNluData) {
  TempDir d;
  auto path = farmbot::testing::write_toy_world(d.path());
  auto nlu = farmbot::testing::toy_nlu_json();
  nlu["examples"].push_back(farmbot::testing::toy_example("what time is it", "ask_time"));
  farmbot::testing::write_file(d / "nlu.json", nlu.dump());
  auto c = load_engine_config(path.string());
  EXPECT_EQ(error_of([&] { train_engine(c); }), ErrorCode::UnknownDomainReference);
}

TEST(Bundle, SaveLoadReproducesConversation) {
  for (bool dense : {false, true}) {
    TempDir d;
    auto c = load_engine_config(farmbot::testing::write_toy_world(d.path(), dense).string());
    auto trained = train_engine(c);
    const auto version = save_bundle(d / "model", trained.engine, c.pipeline);
    EXPECT_EQ(version.rfind("1-", 0), 0u);
    EXPECT_EQ(std::filesystem::exists(d / "model" / "embeddings.txt"), dense);
    auto loaded = load_bundle(d / "model", c.paths.kb);
    EXPECT_EQ(loaded.model_version, version);
    const std::vector<std::string> msgs{"hello", "my paddy has blast", "who is the agriculture officer in salem", "bye"};
    EXPECT_EQ(replies(loaded.engine, msgs), replies(trained.engine, msgs)) << "dense=" << dense;
    for (const auto& m : msgs) {
      auto a = diet::predict(m, trained.engine.diet, trained.engine.featurizer,
                             trained.engine.embeddings ? &*trained.engine.embeddings : nullptr);
      auto b = diet::predict(m, loaded.engine.diet, loaded.engine.featurizer,
                             loaded.engine.embeddings ? &*loaded.engine.embeddings : nullptr);
      ASSERT_EQ(a.ranking.size(), b.ranking.size());
      for (std::size_t i = 0; i < a.ranking.size(); ++i) EXPECT_EQ(a.ranking[i], b.ranking[i]);
    }
  }
}

TEST(Bundle, SameSeedSameModelVersion) {
  TempDir d;
  auto c = load_engine_config(farmbot::testing::write_toy_world(d.path()).string());
  const auto a = save_bundle(d / "m1", train_engine(c).engine, c.pipeline);
  const auto b = save_bundle(d / "m2", train_engine(c).engine, c.pipeline);
  EXPECT_EQ(a, b);
  EXPECT_EQ(farmbot::testing::read_text(d / "m1" / "params.bin"), farmbot::testing::read_text(d / "m2" / "params.bin"));
}

TEST(Bundle, RejectsOtherFormatVersion) {
  TempDir d;
  auto c = load_engine_config(farmbot::testing::write_toy_world(d.path()).string());
  save_bundle(d / "model", train_engine(c).engine, c.pipeline);
  auto config = read_json_file((d / "model" / "config.json").string());
  config["format_version"] = 99;
  farmbot::testing::write_file(d / "model" / "config.json", config.dump());
  EXPECT_EQ(error_of([&] { load_bundle(d / "model", c.paths.kb); }), ErrorCode::VersionMismatch);
}

TEST(Bundle, RejectsTruncatedOrForeignParams) {
  TempDir d;
  auto c = load_engine_config(farmbot::testing::write_toy_world(d.path()).string());
  save_bundle(d / "model", train_engine(c).engine, c.pipeline);
  const auto params = farmbot::testing::read_text(d / "model" / "params.bin");
  farmbot::testing::write_file(d / "model" / "params.bin", params.substr(0, params.size() / 2));
  EXPECT_EQ(error_of([&] { load_bundle(d / "model", c.paths.kb); }), ErrorCode::InvalidData);
  farmbot::testing::write_file(d / "model" / "params.bin", "NOTPARAMS");
  EXPECT_EQ(error_of([&] { load_bundle(d / "model", c.paths.kb); }), ErrorCode::InvalidData);
}

TEST(Bundle, MissingDirectory) {
  EXPECT_EQ(error_of([] { load_bundle("/nonexistent/bundle", "/nonexistent/kb"); }), ErrorCode::MissingFile);
}
