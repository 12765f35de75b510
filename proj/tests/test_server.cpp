#include "farmbot/bundle.hpp"
#include "farmbot/server.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace farmbot;
using farmbot::testing::TempDir;

namespace {

// One trained toy engine and one in-process server shared by all tests.
class Server : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    auto config = load_engine_config(farmbot::testing::write_toy_world(dir_->path()).string());
    engine_ = std::make_shared<Engine>(train_engine(config).engine);
    store_ = new SessionStore(dir_->path() / "sessions");
    server_ = new ChatServer(*store_, "http://localhost:3000");
    port_ = server_->bind("127.0.0.1", 0);
    ASSERT_GT(port_, 0);
    thread_ = new std::thread([] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }
  static void TearDownTestSuite() {
    server_->stop();
    thread_->join();
    delete thread_;
    delete server_;
    delete store_;
    engine_.reset();
    delete dir_;
  }
  void SetUp() override { server_->set_engine(engine_, "1-test"); }

  static httplib::Result post_chat(const std::string& body, const std::string& path = "/api/chat") {
    httplib::Client c("127.0.0.1", port_);
    return c.Post(path, body, "application/json");
  }
  static httplib::Result get(const std::string& path) {
    httplib::Client c("127.0.0.1", port_);
    return c.Get(path);
  }

  static TempDir* dir_;
  static std::shared_ptr<Engine> engine_;
  static SessionStore* store_;
  static ChatServer* server_;
  static std::thread* thread_;
  static int port_;
};

TempDir* Server::dir_ = nullptr;
std::shared_ptr<Engine> Server::engine_;
SessionStore* Server::store_ = nullptr;
ChatServer* Server::server_ = nullptr;
std::thread* Server::thread_ = nullptr;
int Server::port_ = 0;

nlohmann::json chat_body(const std::string& sender, const std::string& message) {
  return {{"sender", sender}, {"message", message}};
}

}  // namespace

TEST_F(Server, HealthReportsModelVersion) {
  auto r = get("/api/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  auto j = nlohmann::json::parse(r->body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["model_version"], "1-test");
}

TEST_F(Server, LoadingAnswers503) {
  server_->set_engine(nullptr, "");
  auto h = get("/api/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 503);
  EXPECT_EQ(nlohmann::json::parse(h->body)["status"], "loading");
  auto c = post_chat(chat_body("a", "hello").dump());
  ASSERT_TRUE(c);
  EXPECT_EQ(c->status, 503);
}

TEST_F(Server, ChatReturnsTexts) {
  auto r = post_chat(chat_body("s1", "my paddy has blast").dump());
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  auto j = nlohmann::json::parse(r->body);
  ASSERT_TRUE(j.is_array());
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["text"], farmbot::testing::kToyPaddyBlastRemedy);
}

TEST_F(Server, DebugAppendsTrailingElement) {
  auto r = post_chat(chat_body("s2", "hello").dump(), "/api/chat?debug=1");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  auto j = nlohmann::json::parse(r->body);
  ASSERT_GE(j.size(), 2u);
  EXPECT_TRUE(j[0].contains("text"));
  const auto& d = j.back()["debug"];
  EXPECT_EQ(d["intent"], "greet");
  EXPECT_EQ(d["actions"].back(), kActionListen);
}

TEST_F(Server, MalformedRequests) {
  for (const std::string body : {"not json", "[1,2]", R"({"message":"hi"})", R"({"sender":"","message":"hi"})",
                                 R"({"sender":7,"message":"hi"})", R"({"sender":"a"})", R"({"sender":"a","message":3})"}) {
    auto r = post_chat(body);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400) << body;
    EXPECT_TRUE(nlohmann::json::parse(r->body).contains("error")) << body;
  }
}

TEST_F(Server, EmptyMessageIs422AndNotJournaled) {
  auto r = post_chat(chat_body("s3", "   ").dump());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 422);
  EXPECT_EQ(get("/api/sessions/s3/events")->status, 404);
}

TEST_F(Server, CorsHeaders) {
  auto r = get("/api/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "http://localhost:3000");
  httplib::Client c("127.0.0.1", port_);
  auto pre = c.Options("/api/chat");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST_F(Server, SessionEvents) {
  ASSERT_EQ(post_chat(chat_body("s4", "hello").dump())->status, 200);
  ASSERT_EQ(post_chat(chat_body("s4", "bye").dump())->status, 200);
  auto r = get("/api/sessions/s4/events");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  auto j = nlohmann::json::parse(r->body);
  EXPECT_EQ(j["session_id"], "s4");
  nlohmann::json expected = nlohmann::json::array();
  const auto tracker = store_->snapshot("s4");
  for (const auto& e : tracker.events()) expected.push_back(e.to_json());
  EXPECT_EQ(j["events"], expected);
  EXPECT_EQ(j["events"][0]["type"], "user_message");
  EXPECT_EQ(get("/api/sessions/nobody/events")->status, 404);
}

TEST_F(Server, UnknownRouteIs404) {
  auto r = get("/api/nothing");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
}
