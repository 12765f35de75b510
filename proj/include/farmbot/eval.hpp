#pragma once

// Held-out NLU evaluation: stratified split, per-class precision/recall/F1,
// confusion matrices, the multi-configuration comparison and its CSV/text
// reports.

#include "farmbot/bundle.hpp"
#include "farmbot/config.hpp"
#include "farmbot/diet.hpp"
#include "farmbot/training_data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace farmbot::eval {

struct Split {
  std::vector<Example> train;
  std::vector<Example> test;
  std::vector<std::string> single_example_intents;  // kept in train only
};

/// Per intent (in sorted order): seeded shuffle, then round(n * fraction)
/// examples to test, at least one and at most n-1. Both halves keep the
/// original example order.
inline Split split_dataset(const std::vector<Example>& examples, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw Error(ErrorCode::InvalidConfig, "test_fraction must be in (0,1)");
  std::map<std::string, std::vector<std::size_t>> by_intent;
  for (std::size_t i = 0; i < examples.size(); ++i) by_intent[examples[i].intent].push_back(i);
  Rng rng(seed);
  std::vector<bool> in_test(examples.size(), false);
  Split s;
  for (auto& [intent, idx] : by_intent) {
    if (idx.size() == 1) {
      spdlog::warn("intent '{}' has a single example; kept in the training split", intent);
      s.single_example_intents.push_back(intent);
      continue;
    }
    rng.shuffle(idx);
    auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    for (std::size_t k = 0; k < n_test; ++k) in_test[idx[k]] = true;
  }
  for (std::size_t i = 0; i < examples.size(); ++i) (in_test[i] ? s.test : s.train).push_back(examples[i]);
  return s;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

inline ClassMetrics metrics_from_counts(long tp, long fp, long fn) {
  ClassMetrics m;
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.support = tp + fn;
  return m;
}

struct Span {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;

  auto operator<=>(const Span&) const = default;
};

/// Gold and predicted labels of one test example.
struct ScoredExample {
  std::string gold_intent;
  std::string predicted_intent;
  std::vector<Span> gold_spans;
  std::vector<Span> predicted_spans;
  std::vector<std::string> gold_token_types;  // entity type or "O" per token
  std::vector<std::string> predicted_token_types;
};

using Confusion = std::vector<std::vector<long>>;

struct NluReport {
  std::vector<std::string> intent_labels;  // trained intents, then nlu_fallback
  std::map<std::string, ClassMetrics> per_intent;
  ClassMetrics intent_macro, intent_micro;
  Confusion intent_confusion;  // [gold][predicted]

  std::vector<std::string> entity_types;
  std::map<std::string, ClassMetrics> per_entity;
  ClassMetrics entity_macro, entity_micro;
  std::vector<std::string> entity_labels;  // entity types, then O
  Confusion entity_confusion;              // token level, [gold][predicted]

  std::size_t examples = 0;
};

namespace detail {

inline std::size_t index_of(const std::vector<std::string>& labels, const std::string& l) {
  auto it = std::find(labels.begin(), labels.end(), l);
  if (it == labels.end()) throw Error(ErrorCode::InvalidData, "label '" + l + "' outside the report label set");
  return static_cast<std::size_t>(it - labels.begin());
}

/// Macro over classes with support; micro over all counts.
inline std::pair<ClassMetrics, ClassMetrics> aggregate(const std::map<std::string, ClassMetrics>& per_class, long tp, long fp,
                                                       long fn) {
  ClassMetrics macro;
  std::size_t n = 0;
  for (const auto& [_, m] : per_class) {
    if (m.support == 0) continue;
    macro.precision += m.precision;
    macro.recall += m.recall;
    macro.f1 += m.f1;
    macro.support += m.support;
    ++n;
  }
  if (n) {
    macro.precision /= static_cast<double>(n);
    macro.recall /= static_cast<double>(n);
    macro.f1 /= static_cast<double>(n);
  }
  return {macro, metrics_from_counts(tp, fp, fn)};
}

}  // namespace detail

/// Scores predictions. Intent labels: `intents` plus nlu_fallback as an extra
/// predicted-only class. Entities: exact (type, start, end) match.
inline NluReport score(const std::vector<ScoredExample>& results, std::vector<std::string> intents,
                       std::vector<std::string> entity_types) {
  if (results.empty()) throw Error(ErrorCode::EmptyTestSet, "test set is empty");
  NluReport r;
  r.examples = results.size();
  r.intent_labels = std::move(intents);
  r.intent_labels.push_back(diet::kFallbackIntent);
  const std::size_t ni = r.intent_labels.size();
  r.intent_confusion.assign(ni, std::vector<long>(ni, 0));
  for (const auto& ex : results) {
    ++r.intent_confusion[detail::index_of(r.intent_labels, ex.gold_intent)][detail::index_of(r.intent_labels, ex.predicted_intent)];
  }
  long tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t c = 0; c + 1 < ni; ++c) {
    long tp = r.intent_confusion[c][c], fp = 0, fn = 0;
    for (std::size_t k = 0; k < ni; ++k) {
      if (k == c) continue;
      fp += r.intent_confusion[k][c];
      fn += r.intent_confusion[c][k];
    }
    r.per_intent[r.intent_labels[c]] = metrics_from_counts(tp, fp, fn);
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  // Fallback predictions are false positives of no trained class but still
  // misses of the gold class; they are counted in fn above.
  std::tie(r.intent_macro, r.intent_micro) = detail::aggregate(r.per_intent, tp_all, fp_all, fn_all);

  r.entity_types = std::move(entity_types);
  r.entity_labels = r.entity_types;
  r.entity_labels.push_back("O");
  const std::size_t ne = r.entity_labels.size();
  r.entity_confusion.assign(ne, std::vector<long>(ne, 0));
  std::map<std::string, std::array<long, 3>> counts;  // tp, fp, fn
  for (const auto& t : r.entity_types) counts[t] = {0, 0, 0};
  for (const auto& ex : results) {
    if (ex.gold_token_types.size() != ex.predicted_token_types.size()) {
      throw Error(ErrorCode::ShapeMismatch, "gold and predicted token labels differ in length");
    }
    for (std::size_t i = 0; i < ex.gold_token_types.size(); ++i) {
      ++r.entity_confusion[detail::index_of(r.entity_labels, ex.gold_token_types[i])]
                          [detail::index_of(r.entity_labels, ex.predicted_token_types[i])];
    }
    std::set<Span> gold(ex.gold_spans.begin(), ex.gold_spans.end());
    std::set<Span> pred(ex.predicted_spans.begin(), ex.predicted_spans.end());
    for (const auto& s : pred) {
      detail::index_of(r.entity_labels, s.type);
      ++counts[s.type][gold.count(s) ? 0 : 1];
    }
    for (const auto& s : gold) {
      if (!pred.count(s)) ++counts[s.type][2];
    }
  }
  long etp = 0, efp = 0, efn = 0;
  for (const auto& [type, c] : counts) {
    r.per_entity[type] = metrics_from_counts(c[0], c[1], c[2]);
    etp += c[0];
    efp += c[1];
    efn += c[2];
  }
  std::tie(r.entity_macro, r.entity_micro) = detail::aggregate(r.per_entity, etp, efp, efn);
  return r;
}

/// Runs the model over `test` and scores it on post-fallback intents.
inline NluReport evaluate_nlu(diet::DietModel& model, const nlu::FeaturizerState& state, const nlu::EmbeddingTable* table,
                              const std::vector<Example>& test, double threshold, double ambiguity_threshold) {
  if (test.empty()) throw Error(ErrorCode::EmptyTestSet, "test set is empty");
  std::vector<ScoredExample> results;
  for (const auto& ex : test) {
    ScoredExample s;
    s.gold_intent = ex.intent;
    auto p = diet::predict(ex.text, model, state, table);
    s.predicted_intent = diet::apply_fallback(p.ranking, threshold, ambiguity_threshold);
    const auto tokens = nlu::tokenize(ex.text);
    s.gold_token_types.assign(tokens.size(), "O");
    s.predicted_token_types.assign(tokens.size(), "O");
    for (const auto& en : ex.entities) {
      s.gold_spans.push_back({en.entity, en.start, en.end});
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].start >= en.start && tokens[i].end <= en.end) s.gold_token_types[i] = en.entity;
      }
    }
    for (const auto& en : p.entities) {
      s.predicted_spans.push_back({en.type, en.start, en.end});
      for (std::size_t i = en.first_token; i <= en.last_token; ++i) s.predicted_token_types[i] = en.type;
    }
    results.push_back(std::move(s));
  }
  // Gold labels the model never saw still get a row.
  std::set<std::string> intent_set(model.intents.begin(), model.intents.end());
  std::set<std::string> type_set;
  for (const auto& t : model.tags.entity_types()) type_set.insert(t);
  for (const auto& ex : test) {
    intent_set.insert(ex.intent);
    for (const auto& en : ex.entities) type_set.insert(en.entity);
  }
  std::vector<std::string> intents(intent_set.begin(), intent_set.end());
  std::vector<std::string> types(type_set.begin(), type_set.end());
  return score(results, intents, types);
}

/// Training-set intent accuracy without fallback.
inline double intent_accuracy(diet::DietModel& model, const nlu::FeaturizerState& state, const nlu::EmbeddingTable* table,
                              const std::vector<Example>& examples) {
  if (examples.empty()) throw Error(ErrorCode::EmptyTestSet, "no examples");
  std::size_t hit = 0;
  for (const auto& ex : examples) hit += diet::predict(ex.text, model, state, table).ranking.front().first == ex.intent;
  return static_cast<double>(hit) / static_cast<double>(examples.size());
}

// ---- comparison ---------------------------------------------------------------

struct ConfigResult {
  std::string name;
  bool dense = false;
  std::optional<NluReport> report;
  std::string error;  // set when training or evaluation failed
};

struct Observation {
  std::string statement;
  bool holds = false;
  std::string detail;
};

struct ComparisonReport {
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::uint64_t seed = 0;
  std::vector<ConfigResult> configs;
  std::optional<Observation> dense_observation;
  std::vector<std::string> notes;

  bool complete() const {
    return std::all_of(configs.begin(), configs.end(), [](const ConfigResult& c) { return c.report.has_value(); });
  }
};

/// Best dense-augmented macro F1 against the sparse-only one, when both exist.
inline std::optional<Observation> dense_vs_sparse(const std::vector<ConfigResult>& configs) {
  const ConfigResult* sparse = nullptr;
  const ConfigResult* best_dense = nullptr;
  for (const auto& c : configs) {
    if (!c.report) continue;
    if (!c.dense) {
      if (!sparse) sparse = &c;
    } else if (!best_dense || c.report->intent_macro.f1 > best_dense->report->intent_macro.f1) {
      best_dense = &c;
    }
  }
  if (!sparse || !best_dense) return std::nullopt;
  Observation o;
  o.statement = "sparse+dense >= sparse-only intent macro F1";
  o.holds = best_dense->report->intent_macro.f1 >= sparse->report->intent_macro.f1;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %.6f vs %s %.6f", best_dense->name.c_str(), best_dense->report->intent_macro.f1,
                sparse->name.c_str(), sparse->report->intent_macro.f1);
  o.detail = buf;
  return o;
}

using ProgressCallback = std::function<void(const std::string& config, std::size_t epoch, const diet::LossBreakdown&)>;

/// Trains every pipeline on one seeded split of `data` and evaluates each on
/// the same held-out part. A failing config is recorded and skipped.
inline ComparisonReport compare_configs(const std::vector<NamedPipeline>& configs, const NluData& data, double test_fraction,
                                        std::uint64_t seed, const ProgressCallback& progress = {}) {
  if (configs.size() < 2) throw Error(ErrorCode::InvalidConfig, "comparison needs at least two configs");
  auto split = split_dataset(data.examples, test_fraction, seed);
  ComparisonReport report;
  report.train_size = split.train.size();
  report.test_size = split.test.size();
  report.seed = seed;
  for (const auto& named : configs) {
    ConfigResult result;
    result.name = named.name;
    result.dense = named.pipeline.dense.has_value();
    try {
      diet::EpochCallback cb;
      if (progress) cb = [&](std::size_t e, const diet::LossBreakdown& l) { progress(named.name, e, l); };
      auto nlu = train_nlu(split.train, data.regex_patterns, named.pipeline, cb);
      result.report = evaluate_nlu(nlu.model, nlu.state, nlu.table ? &*nlu.table : nullptr, split.test,
                                   named.pipeline.fallback_threshold, named.pipeline.ambiguity_threshold);
    } catch (const std::exception& e) {
      spdlog::error("config {} failed: {}", named.name, e.what());
      result.error = e.what();
    }
    report.configs.push_back(std::move(result));
  }
  report.dense_observation = dense_vs_sparse(report.configs);
  report.notes.push_back("dense presets load static embedding tables from disk; no pretrained language model is run");
  report.notes.push_back("the dense-vs-sparse observation depends on the corpus and seed");
  return report;
}

// ---- reports ------------------------------------------------------------------

inline std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Quotes a CSV field when it holds a comma, quote or line break.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline void metric_row(std::ostream& out, const std::string& config, const char* kind, const std::string& label,
                       const ClassMetrics& m) {
  out << csv_field(config) << ',' << kind << ',' << csv_field(label) << ',' << fixed6(m.precision) << ',' << fixed6(m.recall)
      << ',' << fixed6(m.f1) << ',' << m.support << '\n';
}

inline void confusion_rows(std::ostream& out, const std::string& config, const std::vector<std::string>& labels,
                           const Confusion& m) {
  for (std::size_t r = 0; r < labels.size(); ++r) {
    out << csv_field(config) << ',' << csv_field(labels[r]);
    for (long v : m[r]) out << ',' << v;
    out << '\n';
  }
}

inline std::string render_summary(const ComparisonReport& report) {
  std::ostringstream s;
  s << "NLU evaluation\n";
  s << "split: " << report.train_size << " train / " << report.test_size << " test, seed " << report.seed << "\n";
  for (const auto& n : report.notes) s << "note: " << n << "\n";
  s << "\n";
  char line[200];
  std::snprintf(line, sizeof line, "%-12s %10s %10s %10s %10s\n", "config", "intent_f1", "intent_acc", "entity_f1", "entity_mic");
  s << line;
  for (const auto& c : report.configs) {
    if (!c.report) {
      s << c.name << "  FAILED: " << c.error << "\n";
      continue;
    }
    std::snprintf(line, sizeof line, "%-12s %10.4f %10.4f %10.4f %10.4f\n", c.name.c_str(), c.report->intent_macro.f1,
                  c.report->intent_micro.recall, c.report->entity_macro.f1, c.report->entity_micro.f1);
    s << line;
  }
  if (!report.complete()) s << "\npartial report: some configs failed\n";
  if (report.dense_observation) {
    s << "\nobservation: " << report.dense_observation->statement << ": "
      << (report.dense_observation->holds ? "HOLDS" : "DOES NOT HOLD") << " (" << report.dense_observation->detail << ")\n";
  }
  return s.str();
}

/// metrics.csv, intent_confusion.csv, entity_confusion.csv, summary.txt.
/// Output depends only on the report.
inline void render_reports(const ComparisonReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
  std::ostringstream metrics, intents, entities;
  metrics << "config,kind,label,precision,recall,f1,support\n";
  bool intent_header = false, entity_header = false;
  for (const auto& c : report.configs) {
    if (!c.report) continue;
    const NluReport& r = *c.report;
    for (const auto& [label, m] : r.per_intent) metric_row(metrics, c.name, "intent", label, m);
    metric_row(metrics, c.name, "intent", "macro_avg", r.intent_macro);
    metric_row(metrics, c.name, "intent", "micro_avg", r.intent_micro);
    for (const auto& [label, m] : r.per_entity) metric_row(metrics, c.name, "entity", label, m);
    metric_row(metrics, c.name, "entity", "macro_avg", r.entity_macro);
    metric_row(metrics, c.name, "entity", "micro_avg", r.entity_micro);
    if (!intent_header) {
      intents << "config,gold";
      for (const auto& l : r.intent_labels) intents << ',' << csv_field(l);
      intents << '\n';
      intent_header = true;
    }
    confusion_rows(intents, c.name, r.intent_labels, r.intent_confusion);
    if (!entity_header) {
      entities << "config,gold";
      for (const auto& l : r.entity_labels) entities << ',' << csv_field(l);
      entities << '\n';
      entity_header = true;
    }
    confusion_rows(entities, c.name, r.entity_labels, r.entity_confusion);
  }
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (out_dir / name).string());
    out << text;
    if (!out) throw Error(ErrorCode::IoError, "failed writing " + (out_dir / name).string());
  };
  write("metrics.csv", metrics.str());
  write("intent_confusion.csv", intents.str());
  write("entity_confusion.csv", entities.str());
  write("summary.txt", render_summary(report));
}

}  // namespace farmbot::eval
