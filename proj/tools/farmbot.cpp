// farmbot: train, evaluate, compare, chat, serve, kb-check.
// Exit code 0 on success, 1 on any failure.

#include "farmbot/bundle.hpp"
#include "farmbot/eval.hpp"
#include "farmbot/server.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <thread>

using namespace farmbot;

namespace {

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("farmbot");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  const char* env = std::getenv("ASSISTANT_LOG_LEVEL");
  if (!env) return;
  const std::string level = env;
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::warn("ignoring ASSISTANT_LOG_LEVEL={}; expected error, warn, info or debug", level);
  }
}

void print_epoch(const char* label, std::size_t epoch, std::size_t total, const diet::LossBreakdown& l) {
  std::printf("%sepoch %zu/%zu total=%.6f intent=%.6f mask=%.6f entity=%.6f\n", label, epoch + 1, total, l.total, l.intent_loss,
              l.mask_loss, l.entity_loss);
  std::fflush(stdout);
}

void print_table(const eval::ComparisonReport& r) {
  std::printf("%-12s %10s %10s\n", "config", "intent_f1", "entity_f1");
  for (const auto& c : r.configs) {
    if (c.report) {
      std::printf("%-12s %10.2f %10.2f\n", c.name.c_str(), c.report->intent_macro.f1, c.report->entity_macro.f1);
    } else {
      std::printf("%-12s %10s %10s\n", c.name.c_str(), "FAILED", "-");
    }
  }
}

int cmd_train(const std::string& config_path, std::string out) {
  auto config = load_engine_config(config_path);
  if (out.empty()) out = config.paths.model_out;
  const std::size_t epochs = config.pipeline.diet.epochs;
  auto trained = train_engine(config, [&](std::size_t e, const diet::LossBreakdown& l) { print_epoch("diet ", e, epochs, l); });
  if (!trained.ted_history.empty()) std::printf("ted final loss=%.6f\n", trained.ted_history.back());
  const auto version = save_bundle(out, trained.engine, config.pipeline);
  std::printf("model %s written to %s\n", version.c_str(), out.c_str());
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& model, const std::string& out) {
  auto config = load_engine_config(config_path);
  auto data = load_nlu_data(config.paths.nlu);
  auto split = eval::split_dataset(data.examples, config.test_fraction, config.split_seed);
  eval::ComparisonReport report;
  report.seed = config.split_seed;
  report.test_size = split.test.size();
  eval::ConfigResult result;
  if (!model.empty()) {
    // A saved bundle was trained on every example; the held-out part is then
    // only a memorization check.
    auto bundle = load_bundle(model, config.paths.kb);
    Engine& e = bundle.engine;
    result.name = "model";
    result.dense = e.embeddings.has_value();
    result.report = eval::evaluate_nlu(e.diet, e.featurizer, e.embeddings ? &*e.embeddings : nullptr, split.test,
                                       e.fallback_threshold, e.ambiguity_threshold);
    report.train_size = data.examples.size();
  } else {
    config.validate_paths();
    auto nlu = train_nlu(split.train, data.regex_patterns, config.pipeline);
    result.name = "config";
    result.dense = config.pipeline.dense.has_value();
    result.report = eval::evaluate_nlu(nlu.model, nlu.state, nlu.table ? &*nlu.table : nullptr, split.test,
                                       config.pipeline.fallback_threshold, config.pipeline.ambiguity_threshold);
    report.train_size = split.train.size();
  }
  report.configs.push_back(std::move(result));
  eval::render_reports(report, out);
  print_table(report);
  return 0;
}

int cmd_compare(const std::string& config_path, const std::string& out) {
  auto config = load_engine_config(config_path);
  config.validate_paths();
  auto data = load_nlu_data(config.paths.nlu);
  const std::size_t epochs = config.pipeline.diet.epochs;
  auto report = eval::compare_configs(builtin_presets(config), data, config.test_fraction, config.split_seed,
                                      [&](const std::string& name, std::size_t e, const diet::LossBreakdown& l) {
                                        if ((e + 1) % 25 == 0 || e + 1 == epochs) print_epoch((name + " ").c_str(), e, epochs, l);
                                      });
  eval::render_reports(report, out);
  print_table(report);
  if (report.dense_observation) {
    std::printf("observation: %s: %s (%s)\n", report.dense_observation->statement.c_str(),
                report.dense_observation->holds ? "HOLDS" : "DOES NOT HOLD", report.dense_observation->detail.c_str());
  }
  if (!report.complete()) {
    std::fprintf(stderr, "partial report: some configs failed\n");
    return 1;
  }
  return 0;
}

int cmd_kb_check(const std::string& dir) {
  auto kb = kb::load_kb(dir);
  std::printf("plant_protection: %zu rows\nnutrient: %zu rows\nofficers: %zu rows\n", kb.plant_protection.size(),
              kb.nutrient.size(), kb.officers.size());
  return 0;
}

int cmd_chat(const std::string& model, const std::string& kb_dir, const std::string& session_dir) {
  auto bundle = load_bundle(model, kb_dir);
  std::unique_ptr<SessionStore> store = session_dir.empty() ? std::make_unique<SessionStore>()
                                                            : std::make_unique<SessionStore>(session_dir);
  const std::string session = "cli";
  bool debug = false;
  std::string line;
  while (std::getline(std::cin, line)) {
    const std::string cmd(nlu::trim(line));
    if (cmd == "/quit") break;
    if (cmd == "/debug on" || cmd == "/debug off") {
      debug = cmd == "/debug on";
      continue;
    }
    if (cmd.empty()) continue;
    auto turn = handle_message(*store, session, cmd, bundle.engine);
    if (debug) {
      std::printf("# intent: %s\n", turn.intent.c_str());
      for (const auto& [name, conf] : turn.ranking) std::printf("#   %s %.4f\n", name.c_str(), conf);
      for (const auto& e : turn.entities) std::printf("# entity: %s=%s\n", e.type.c_str(), e.value.c_str());
      for (const auto& a : turn.actions) std::printf("# action: %s\n", a.c_str());
    }
    for (const auto& t : turn.texts) std::printf("%s\n", t.c_str());
    std::fflush(stdout);
  }
  return 0;
}

ChatServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const std::string& model, const std::string& kb_dir, const std::string& host, int port,
              const std::string& session_dir, const std::string& cors_origin) {
  SessionStore store(session_dir);
  ChatServer server(store, cors_origin);
  const int bound = server.bind(host, port);
  if (bound < 0) {
    spdlog::error("cannot bind {}:{}", host, port);
    return 1;
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::printf("listening on http://%s:%d\n", host.c_str(), bound);
  std::fflush(stdout);

  std::atomic<bool> load_failed{false};
  std::thread loader([&] {
    try {
      auto bundle = load_bundle(model, kb_dir);
      const std::string version = bundle.model_version;
      server.set_engine(std::make_shared<Engine>(std::move(bundle.engine)), version);
      spdlog::info("model {} loaded", version);
    } catch (const std::exception& e) {
      spdlog::error("model load failed: {}", e.what());
      load_failed = true;
      server.wait_until_ready();
      server.stop();
    }
  });
  server.listen_after_bind();
  loader.join();
  g_server = nullptr;
  return load_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Agricultural advisory chatbot"};
  app.require_subcommand(1);

  std::string config, out, model, kb_dir, session_dir, host = "127.0.0.1", cors = "*";
  int port = 5005;

  auto* train = app.add_subcommand("train", "Train NLU and policy, write a model bundle");
  train->add_option("--config", config, "Engine config file")->required();
  train->add_option("--out", out, "Bundle directory (default: paths.model_out)");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate NLU on the held-out split");
  evaluate->add_option("--config", config, "Engine config file")->required();
  evaluate->add_option("--model", model, "Evaluate this bundle instead of training on the split");
  evaluate->add_option("--out", out, "Report directory")->required();

  auto* compare = app.add_subcommand("compare", "Compare the built-in pipeline presets");
  compare->add_option("--config", config, "Engine config file")->required();
  compare->add_option("--out", out, "Report directory")->required();

  auto* chat = app.add_subcommand("chat", "Interactive chat on standard input");
  chat->add_option("--model", model, "Model bundle directory")->required();
  chat->add_option("--kb", kb_dir, "Knowledge-base directory")->required();
  chat->add_option("--session-dir", session_dir, "Journal directory");

  auto* serve = app.add_subcommand("serve", "HTTP chat API");
  serve->add_option("--model", model, "Model bundle directory")->required();
  serve->add_option("--kb", kb_dir, "Knowledge-base directory")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port, 0 picks a free one");
  serve->add_option("--session-dir", session_dir, "Journal directory")->required();
  serve->add_option("--cors-origin", cors, "Allowed browser origin");

  auto* kb_check = app.add_subcommand("kb-check", "Validate the knowledge-base CSV files");
  kb_check->add_option("--kb", kb_dir, "Knowledge-base directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config, out);
    if (*evaluate) return cmd_evaluate(config, model, out);
    if (*compare) return cmd_compare(config, out);
    if (*chat) return cmd_chat(model, kb_dir, session_dir);
    if (*serve) return cmd_serve(model, kb_dir, host, port, session_dir, cors);
    if (*kb_check) return cmd_kb_check(kb_dir);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
