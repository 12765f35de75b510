#include "farmbot/bundle.hpp"
#include "farmbot/dialogue.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

using namespace farmbot;
using farmbot::testing::TempDir;

namespace {

DomainSpec domain() { return DomainSpec::from_json(farmbot::testing::toy_domain_json()); }

kb::KnowledgeBase toy_kb() {
  TempDir d;
  farmbot::testing::write_toy_kb(d.path());
  return kb::load_kb(d.path());
}

DialogueTracker with_slots(std::initializer_list<std::pair<const char*, const char*>> slots) {
  DialogueTracker t("s");
  t.apply(Event::user("x", "ask_plant_protection"));
  for (const auto& [k, v] : slots) t.apply(Event::slot_set(k, v));
  return t;
}

std::string only_text(const ActionOutcome& o) {
  EXPECT_EQ(o.texts.size(), 1u);
  return o.texts.empty() ? "" : o.texts[0];
}

// One trained toy engine shared by the end-to-end tests.
class DialogueEndToEnd : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    auto config = load_engine_config(farmbot::testing::write_toy_world(dir_->path()).string());
    engine_ = new Engine(train_engine(config).engine);
  }
  static void TearDownTestSuite() {
    delete engine_;
    delete dir_;
  }
  static TempDir* dir_;
  static Engine* engine_;
};

TempDir* DialogueEndToEnd::dir_ = nullptr;
Engine* DialogueEndToEnd::engine_ = nullptr;

}  // namespace

TEST(RenderTemplate, SubstitutesAndReportsMissing) {
  std::map<std::string, std::optional<std::string>> v{{"crop", "paddy"}, {"disease", std::nullopt}};
  EXPECT_EQ(render_template("{crop} and {crop}", v), std::string("paddy and paddy"));
  std::string missing;
  EXPECT_FALSE(render_template("{crop} {disease}", v, &missing));
  EXPECT_EQ(missing, "disease");
  EXPECT_EQ(render_template("no placeholders", {}), std::string("no placeholders"));
}

TEST(ExecuteAction, ListenHasNoOutput) {
  auto o = execute_action(kActionListen, DialogueTracker("s"), domain(), toy_kb());
  ASSERT_EQ(o.events.size(), 1u);
  EXPECT_EQ(o.events[0].type, EventType::ActionExecuted);
  EXPECT_TRUE(o.texts.empty());
}

TEST(ExecuteAction, FoundKeyReturnsRemedyVerbatim) {
  auto o = execute_action(kQueryPlantProtection, with_slots({{"crop", "paddy"}, {"disease", "blast"}}), domain(), toy_kb());
  EXPECT_EQ(only_text(o), farmbot::testing::kToyPaddyBlastRemedy);
  ASSERT_EQ(o.events.size(), 2u);
  EXPECT_EQ(o.events[0].action, kQueryPlantProtection);
  EXPECT_EQ(o.events[1].type, EventType::BotUttered);
}

TEST(ExecuteAction, AbsentKeyGivesDataUnavailable) {
  auto o = execute_action(kQueryPlantProtection, with_slots({{"crop", "sugarcane"}, {"disease", "blast"}}), domain(), toy_kb());
  EXPECT_EQ(only_text(o), "I have no advice for blast on sugarcane yet.");
}

TEST(ExecuteAction, DataUnavailableDefaultWithoutTemplate) {
  auto d = domain();
  d.responses.erase(kDataUnavailableResponse);
  auto o = execute_action(kQueryPlantProtection, with_slots({{"crop", "sugarcane"}, {"disease", "blast"}}), d, toy_kb());
  EXPECT_EQ(only_text(o), "Sorry, I don't have data for that yet.");
}

TEST(ExecuteAction, MissingSlotAsksForIt) {
  EXPECT_EQ(only_text(execute_action(kQueryPlantProtection, with_slots({{"disease", "blast"}}), domain(), toy_kb())),
            "Which crop is affected?");
  EXPECT_EQ(only_text(execute_action(kQueryPlantProtection, with_slots({{"crop", "paddy"}}), domain(), toy_kb())),
            "Could you tell me the disease?");
}

TEST(ExecuteAction, OfficerContact) {
  auto o = execute_action(kQueryOfficer, with_slots({{"role", "agriculture officer"}, {"city", "salem"}}), domain(), toy_kb());
  EXPECT_EQ(only_text(o), "Call +91 427 2450000 or write to ao.salem@example.org.");
  o = execute_action(kQueryOfficer, with_slots({{"role", "horticulture officer"}, {"city", "salem"}}), domain(), toy_kb());
  EXPECT_EQ(only_text(o), "Call +91 427 2450001 or write to not listed.");
}

TEST(ExecuteAction, UtterRendersTemplate) {
  EXPECT_EQ(only_text(execute_action("utter_greet", DialogueTracker("s"), domain(), toy_kb())),
            "Hello! Ask me about crop diseases.");
}

TEST(ExecuteAction, UndeclaredActionThrows) {
  try {
    execute_action("action_launch_rocket", DialogueTracker("s"), domain(), toy_kb());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UndeclaredAction);
  }
}

TEST_F(DialogueEndToEnd, GreetingIsAnswered) {
  SessionStore store;
  auto r = handle_message(store, "a", "hello", *engine_);
  EXPECT_EQ(r.intent, "greet");
  ASSERT_FALSE(r.texts.empty());
  EXPECT_EQ(r.texts[0], "Hello! Ask me about crop diseases.");
  EXPECT_EQ(r.actions.back(), kActionListen);
}

TEST_F(DialogueEndToEnd, KbQueryFillsSlotsAndAnswers) {
  SessionStore store;
  auto r = handle_message(store, "a", "my Paddy has blast", *engine_);
  EXPECT_EQ(r.intent, "ask_plant_protection");
  ASSERT_FALSE(r.texts.empty());
  EXPECT_EQ(r.texts[0], farmbot::testing::kToyPaddyBlastRemedy);
  auto t = store.snapshot("a");
  EXPECT_EQ(t.slot("crop"), std::string("paddy"));
  EXPECT_EQ(t.slot("disease"), std::string("blast"));
}

TEST_F(DialogueEndToEnd, EveryTurnEndsListening) {
  SessionStore store;
  for (const char* msg : {"hi", "my tomato has wilt", "who is the agriculture officer in salem", "bye"}) {
    auto r = handle_message(store, "a", msg, *engine_);
    ASSERT_FALSE(r.actions.empty());
    EXPECT_EQ(r.actions.back(), kActionListen);
    EXPECT_LE(r.actions.size(), kMaxActionsPerTurn + 2);
  }
  EXPECT_EQ(store.snapshot("a").last_action(), std::string(kActionListen));
}

TEST_F(DialogueEndToEnd, FallbackShortcut) {
  const double saved = engine_->fallback_threshold;
  engine_->fallback_threshold = 1.0;  // no confidence reaches it
  SessionStore store;
  auto r = handle_message(store, "a", "hello", *engine_);
  engine_->fallback_threshold = saved;
  EXPECT_EQ(r.intent, diet::kFallbackIntent);
  EXPECT_EQ(r.actions, (std::vector<std::string>{kUtterFallback, kActionListen}));
  EXPECT_EQ(r.texts, (std::vector<std::string>{"Sorry, I did not understand that."}));
}

TEST_F(DialogueEndToEnd, EmptyMessageRejected) {
  SessionStore store;
  try {
    handle_message(store, "a", "   ", *engine_);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyMessage);
  }
  EXPECT_FALSE(store.exists("a"));
}

TEST_F(DialogueEndToEnd, JournalReplayMatchesLiveTracker) {
  TempDir journals;
  std::vector<Event> live;
  {
    SessionStore store(journals.path());
    handle_message(store, "user/1", "hi", *engine_);
    handle_message(store, "user/1", "my paddy has blast", *engine_);
    live = store.snapshot("user/1").events();
  }
  SessionStore reopened(journals.path());
  EXPECT_EQ(reopened.snapshot("user/1").events(), live);
}

TEST_F(DialogueEndToEnd, DebugJsonShape) {
  SessionStore store;
  auto j = handle_message(store, "a", "my paddy has blast", *engine_).debug_json();
  EXPECT_EQ(j["intent"], "ask_plant_protection");
  EXPECT_EQ(j["intent_ranking"].size(), 4u);
  ASSERT_EQ(j["entities"].size(), 2u);
  EXPECT_EQ(j["entities"][0]["entity"], "crop");
  EXPECT_EQ(j["entities"][0]["start"], 3);
}

TEST(StripPunctuation, OnlyAtTheEnds) {
  EXPECT_EQ(strip_punctuation("blast?"), "blast");
  EXPECT_EQ(strip_punctuation("\"paddy\","), "paddy");
  EXPECT_EQ(strip_punctuation("o'clock"), "o'clock");
  EXPECT_EQ(strip_punctuation("??"), "??");
}

TEST_F(DialogueEndToEnd, TrailingPunctuationStillFindsKbRow) {
  SessionStore store;
  handle_message(store, "a", "my paddy has blast?", *engine_);
  EXPECT_EQ(store.snapshot("a").slot("disease"), std::string("blast"));
}
