#pragma once

// HTTP chat API over cpp-httplib.
//
//   POST /api/chat                {"sender","message"} -> [{"text"}...]
//                                 ?debug=1 appends {"debug":{...}} as the last element
//   GET  /api/health              {"status":"ok","model_version"} or 503 while loading
//   GET  /api/sessions/{id}/events {"session_id","events":[...]}
//
// The engine is installed once loading finishes; until then chat and health
// answer 503. Internal failures answer 500 with an opaque id that is logged
// alongside the real cause.

#include "farmbot/dialogue.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdio>
#include <memory>
#include <mutex>
#include <random>
#include <string>

namespace farmbot {

class ChatServer {
 public:
  explicit ChatServer(SessionStore& store, std::string cors_origin = "*") : store_(store), cors_origin_(std::move(cors_origin)) {
    routes();
  }

  /// Marks the service ready. The engine is shared read-only by all requests.
  void set_engine(std::shared_ptr<Engine> engine, std::string model_version) {
    std::lock_guard lock(mutex_);
    engine_ = std::move(engine);
    model_version_ = std::move(model_version);
  }

  bool ready() const {
    std::lock_guard lock(mutex_);
    return engine_ != nullptr;
  }

  /// Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port) {
    if (port == 0) return http_.bind_to_any_port(host);
    return http_.bind_to_port(host, port) ? port : -1;
  }
  bool listen_after_bind() { return http_.listen_after_bind(); }
  void stop() { http_.stop(); }
  void wait_until_ready() const { http_.wait_until_ready(); }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static std::string opaque_id() {
    static std::mutex m;
    static std::mt19937_64 gen{std::random_device{}()};
    std::lock_guard lock(m);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(gen()));
    return buf;
  }

  static void internal_error(httplib::Response& res, const std::string& what) {
    const std::string id = opaque_id();
    spdlog::error("request failed [{}]: {}", id, what);
    send_json(res, 500, {{"error", "internal error"}, {"id", id}});
  }

  std::pair<std::shared_ptr<Engine>, std::string> engine() const {
    std::lock_guard lock(mutex_);
    return {engine_, model_version_};
  }

  void routes() {
    http_.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", cors_origin_);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    http_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        internal_error(res, e.what());
      } catch (...) {
        internal_error(res, "unknown exception");
      }
    });
    http_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    http_.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
      auto [e, version] = engine();
      if (!e) return send_json(res, 503, {{"status", "loading"}});
      send_json(res, 200, {{"status", "ok"}, {"model_version", version}});
    });

    http_.Post("/api/chat", [this](const httplib::Request& req, httplib::Response& res) { chat(req, res); });

    http_.Get(R"(/api/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!store_.exists(id)) return send_json(res, 404, {{"error", "unknown session"}});
      nlohmann::json events = nlohmann::json::array();
      const DialogueTracker tracker = store_.snapshot(id);
      for (const auto& e : tracker.events()) events.push_back(e.to_json());
      send_json(res, 200, {{"session_id", id}, {"events", events}});
    });
  }

  void chat(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return send_json(res, 400, {{"error", "request body is not valid JSON"}});
    }
    if (!body.is_object() || !body.contains("sender") || !body["sender"].is_string() || body["sender"].get<std::string>().empty()) {
      return send_json(res, 400, {{"error", "sender must be a non-empty string"}});
    }
    if (!body.contains("message") || !body["message"].is_string()) {
      return send_json(res, 400, {{"error", "message must be a string"}});
    }
    auto [e, _] = engine();
    if (!e) return send_json(res, 503, {{"error", "model is loading"}});
    const bool debug = req.has_param("debug") && req.get_param_value("debug") == "1";
    try {
      auto turn = handle_message(store_, body["sender"].get<std::string>(), body["message"].get<std::string>(), *e);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& t : turn.texts) out.push_back({{"text", t}});
      if (debug) out.push_back({{"debug", turn.debug_json()}});
      send_json(res, 200, out);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::EmptyMessage) return send_json(res, 422, {{"error", "message is empty"}});
      internal_error(res, err.what());
    }
  }

  SessionStore& store_;
  std::string cors_origin_;
  httplib::Server http_;
  mutable std::mutex mutex_;
  std::shared_ptr<Engine> engine_;
  std::string model_version_;
};

}  // namespace farmbot
