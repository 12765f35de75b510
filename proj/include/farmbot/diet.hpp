#pragma once

// Joint intent classification and entity extraction.
//
// Per message: sparse features go through a feed-forward layer (with input
// dropout while training), optional dense features through a linear
// projection, the two are summed and passed through a shared fully connected
// layer into a relative-position transformer. The CLS position scores
// intents by dot product against label embeddings; token positions emit
// per-tag scores for a linear-chain CRF. An optional masked-token objective
// reconstructs masked inputs against in-batch candidates.

#include "farmbot/autodiff.hpp"
#include "farmbot/crf.hpp"
#include "farmbot/error.hpp"
#include "farmbot/nlu_pipeline.hpp"
#include "farmbot/training_data.hpp"
#include "farmbot/transformer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace farmbot::diet {

struct DietConfig {
  std::size_t epochs = 145;
  std::size_t num_transformer_layers = 2;
  std::size_t transformer_size = 128;
  std::size_t num_attention_heads = 4;
  std::size_t embedding_dim = 20;
  bool use_masked_language_model = false;
  double sparse_input_dropout_rate = 0.8;
  double mask_fraction = 0.15;
  double learning_rate = 0.001;
  std::size_t relative_attention_max_distance = 5;
  std::size_t batch_size = 32;
  bool constrain_similarities = true;
  double similarity_limit = 20.0;
  std::uint64_t seed = 42;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, "diet: " + m); };
    if (epochs < 1) fail("epochs must be >= 1");
    if (sparse_input_dropout_rate < 0 || sparse_input_dropout_rate >= 1) fail("sparse_input_dropout_rate must be in [0,1)");
    if (mask_fraction < 0 || mask_fraction >= 1) fail("mask_fraction must be in [0,1)");
    if (num_attention_heads == 0 || transformer_size % num_attention_heads != 0) {
      fail("transformer_size must be divisible by num_attention_heads");
    }
    if (batch_size == 0 || embedding_dim == 0) fail("batch_size and embedding_dim must be positive");
  }

  EncoderShape encoder_shape() const {
    return {num_transformer_layers, transformer_size, num_attention_heads, relative_attention_max_distance, false};
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"num_transformer_layers", num_transformer_layers},
            {"transformer_size", transformer_size},
            {"num_attention_heads", num_attention_heads},
            {"embedding_dim", embedding_dim},
            {"use_masked_language_model", use_masked_language_model},
            {"sparse_input_dropout_rate", sparse_input_dropout_rate},
            {"mask_fraction", mask_fraction},
            {"learning_rate", learning_rate},
            {"relative_attention_max_distance", relative_attention_max_distance},
            {"batch_size", batch_size},
            {"constrain_similarities", constrain_similarities},
            {"similarity_limit", similarity_limit},
            {"seed", seed}};
  }

  static DietConfig from_json(const nlohmann::json& j) {
    DietConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.num_transformer_layers = j.value("num_transformer_layers", c.num_transformer_layers);
    c.transformer_size = j.value("transformer_size", c.transformer_size);
    c.num_attention_heads = j.value("num_attention_heads", c.num_attention_heads);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.use_masked_language_model = j.value("use_masked_language_model", c.use_masked_language_model);
    c.sparse_input_dropout_rate = j.value("sparse_input_dropout_rate", c.sparse_input_dropout_rate);
    c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.relative_attention_max_distance = j.value("relative_attention_max_distance", c.relative_attention_max_distance);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.constrain_similarities = j.value("constrain_similarities", c.constrain_similarities);
    c.similarity_limit = j.value("similarity_limit", c.similarity_limit);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct LossBreakdown {
  double intent_loss = 0.0;
  double mask_loss = 0.0;
  double entity_loss = 0.0;
  double total = 0.0;

  static LossBreakdown of(double intent, double mask, double entity) {
    return {intent, mask, entity, intent + mask + entity};
  }
};

struct ExtractedEntity {
  std::string type;
  std::string value;
  std::string surface;
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t first_token = 0;
  std::size_t last_token = 0;
};

struct IntentPrediction {
  std::vector<std::pair<std::string, double>> ranking;
  std::vector<ExtractedEntity> entities;
  std::vector<std::string> tags;
};

enum class Mode { Train, Infer };

inline constexpr const char* kFallbackIntent = "nlu_fallback";

/// Learned weights plus the label sets frozen at training time.
class DietModel {
 public:
  DietConfig config;
  std::vector<std::string> intents;
  crf::TagSet tags;
  std::size_t sparse_width = 0;
  std::size_t dense_dim = 0;
  ParameterSet params;

  DietModel() = default;

  DietModel(DietConfig cfg, std::vector<std::string> intent_labels, std::vector<std::string> entity_types,
            std::size_t sparse, std::size_t dense)
      : config(std::move(cfg)), intents(std::move(intent_labels)), tags(std::move(entity_types)), sparse_width(sparse),
        dense_dim(dense) {
    config.validate();
  }

  void initialize(Rng& rng) {
    const auto d = static_cast<Eigen::Index>(config.transformer_size);
    const auto e = static_cast<Eigen::Index>(config.embedding_dim);
    const auto sw = static_cast<Eigen::Index>(sparse_width);
    const auto nt = static_cast<Eigen::Index>(tags.size());
    params.add("diet/sparse_projection", glorot_uniform(sw, d, rng));
    params.add("diet/sparse_projection_bias", Matrix::Zero(1, d));
    if (dense_dim > 0) {
      params.add("diet/dense_projection", glorot_uniform(static_cast<Eigen::Index>(dense_dim), d, rng));
      params.add("diet/dense_projection_bias", Matrix::Zero(1, d));
    }
    params.add("diet/input", glorot_uniform(d, d, rng));
    params.add("diet/input_bias", Matrix::Zero(1, d));
    init_encoder(params, "diet/encoder/", config.encoder_shape(), rng);
    params.add("diet/intent_head", glorot_uniform(d, e, rng));
    params.add("diet/intent_labels", glorot_uniform(static_cast<Eigen::Index>(intents.size()), e, rng));
    params.add("diet/entity_head", glorot_uniform(d, nt, rng));
    params.add("diet/entity_head_bias", Matrix::Zero(1, nt));
    params.add("diet/crf_transitions", Matrix::Zero(nt, nt));
    if (config.use_masked_language_model) {
      params.add("diet/mask_token", glorot_uniform(1, d, rng));
      params.add("diet/mask_head", glorot_uniform(d, e, rng));
      params.add("diet/mask_target", glorot_uniform(sw, e, rng));
      if (dense_dim > 0) params.add("diet/mask_target_dense", glorot_uniform(static_cast<Eigen::Index>(dense_dim), e, rng));
    }
  }

  std::size_t intent_index(const std::string& name) const {
    auto it = std::find(intents.begin(), intents.end(), name);
    if (it == intents.end()) throw Error(ErrorCode::UnknownIntent, "intent '" + name + "' not in label set");
    return static_cast<std::size_t>(it - intents.begin());
  }

  nlohmann::json meta_json() const {
    return {{"config", config.to_json()},
            {"intents", intents},
            {"entity_types", tags.entity_types()},
            {"sparse_width", sparse_width},
            {"dense_dim", dense_dim}};
  }

  static DietModel from_meta(const nlohmann::json& j) {
    return DietModel(DietConfig::from_json(j.at("config")), j.at("intents").get<std::vector<std::string>>(),
                     j.at("entity_types").get<std::vector<std::string>>(), j.at("sparse_width").get<std::size_t>(),
                     j.at("dense_dim").get<std::size_t>());
  }
};

struct ForwardOutput {
  Var tokens;     // n x size
  Var cls;        // 1 x size
  Var emissions;  // n x tags
  Var sequence;   // (n+1) x size, including CLS
};

/// Inverted dropout over the stored entries of a sparse matrix.
inline std::shared_ptr<const SparseMatrix> sparse_dropout(const SparseMatrix& in, double rate, Rng& rng) {
  auto out = std::make_shared<SparseMatrix>(in.row_count(), in.cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t r = 0; r < in.row_count(); ++r) {
    for (const auto& e : in.rows[r]) {
      if (!rng.bernoulli(rate)) out->rows[r].push_back({e.col, e.value * keep_scale});
    }
  }
  return out;
}

/// `masked` lists token rows whose transformer input is replaced by the mask
/// vector. `rng` is required in train mode when dropout is active.
inline ForwardOutput forward(Tape& t, DietModel& m, const nlu::MessageFeatures& f, Mode mode, Rng* rng,
                             const std::vector<std::size_t>& masked = {}) {
  if (f.sparse->cols != m.sparse_width) throw Error(ErrorCode::ShapeMismatch, "sparse feature width differs from model");
  if (m.dense_dim > 0 && (!f.dense || static_cast<std::size_t>(f.dense->cols()) != m.dense_dim)) {
    throw Error(ErrorCode::ShapeMismatch, "dense features missing or of wrong width");
  }
  if (m.dense_dim == 0 && f.dense) throw Error(ErrorCode::ShapeMismatch, "model has no dense path");
  auto& P = m.params;
  std::shared_ptr<const SparseMatrix> sparse = f.sparse;
  if (mode == Mode::Train && m.config.sparse_input_dropout_rate > 0.0) {
    if (!rng) throw Error(ErrorCode::InvalidConfig, "train-mode dropout needs a generator");
    sparse = sparse_dropout(*f.sparse, m.config.sparse_input_dropout_rate, *rng);
  }
  Var x = t.gelu(t.add_row(t.sparse_matmul(sparse, t.param(P.at("diet/sparse_projection"))),
                           t.param(P.at("diet/sparse_projection_bias"))));
  if (m.dense_dim > 0) {
    Var dense = t.add_row(t.matmul(t.constant(*f.dense), t.param(P.at("diet/dense_projection"))),
                          t.param(P.at("diet/dense_projection_bias")));
    x = t.add(x, dense);
  }
  x = t.add_row(t.matmul(x, t.param(P.at("diet/input"))), t.param(P.at("diet/input_bias")));
  if (!masked.empty()) x = t.replace_rows(x, masked, t.param(P.at("diet/mask_token")));
  Var seq = encode(t, P, "diet/encoder/", x, m.config.encoder_shape());
  const std::size_t n = f.token_count();
  std::vector<std::size_t> token_rows(n);
  for (std::size_t i = 0; i < n; ++i) token_rows[i] = i;
  ForwardOutput out;
  out.sequence = seq;
  out.cls = t.gather_rows(seq, {n});
  if (n > 0) {
    out.tokens = t.gather_rows(seq, token_rows);
    out.emissions = t.add_row(t.matmul(out.tokens, t.param(P.at("diet/entity_head"))), t.param(P.at("diet/entity_head_bias")));
  }
  return out;
}

inline Var constrain(Tape& t, const DietModel& m, Var logits) {
  return m.config.constrain_similarities ? t.clamp(logits, -m.config.similarity_limit, m.config.similarity_limit) : logits;
}

/// 1 x n_intents similarity logits for a CLS encoding.
inline Var intent_similarities(Tape& t, DietModel& m, Var cls) {
  Var embedded = t.matmul(cls, t.param(m.params.at("diet/intent_head")));
  return constrain(t, m, t.matmul_bt(embedded, t.param(m.params.at("diet/intent_labels"))));
}

/// -log softmax(similarities)[gold].
inline Var intent_loss(Tape& t, DietModel& m, Var cls, const std::string& gold_intent) {
  const std::size_t gold = m.intent_index(gold_intent);
  return t.softmax_cross_entropy(intent_similarities(t, m, cls), {gold});
}

/// Tokens chosen for masking: each independently with probability
/// `fraction`, and one uniformly chosen token if none was.
inline std::vector<std::size_t> choose_masked(std::size_t n_tokens, double fraction, Rng& rng) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_tokens; ++i) {
    if (rng.bernoulli(fraction)) out.push_back(i);
  }
  if (out.empty() && n_tokens > 0) out.push_back(rng.below(n_tokens));
  return out;
}

/// One training item: features plus gold labels.
struct TrainItem {
  nlu::MessageFeatures features;
  std::vector<std::string> token_keys;  // lowercased token text, identity for mask candidates
  std::string intent;
  std::vector<std::size_t> tags;
};

struct BatchLoss {
  Var intent, mask, entity, total;
};

/// Masked-token loss over a batch. `outputs[i]` must come from a forward
/// pass of `items[i]` with `masked[i]` substituted.
inline Var mask_loss(Tape& t, DietModel& m, const std::vector<const TrainItem*>& items, const std::vector<ForwardOutput>& outputs,
                     const std::vector<std::vector<std::size_t>>& masked) {
  if (!m.config.use_masked_language_model) throw Error(ErrorCode::MaskingDisabled, "masked language model is off");
  std::vector<Var> reconstructions;
  std::map<std::string, std::size_t> candidate_index;
  std::vector<std::pair<std::size_t, std::size_t>> candidate_source;  // (item, token)
  std::vector<std::size_t> gold;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (masked[i].empty()) continue;
    reconstructions.push_back(t.gather_rows(outputs[i].sequence, masked[i]));
    for (std::size_t tok : masked[i]) {
      const std::string& key = items[i]->token_keys[tok];
      auto [it, inserted] = candidate_index.emplace(key, candidate_source.size());
      if (inserted) candidate_source.emplace_back(i, tok);
      gold.push_back(it->second);
    }
  }
  if (gold.empty()) throw Error(ErrorCode::EmptySequence, "no masked tokens in batch");
  auto candidates_sparse = std::make_shared<SparseMatrix>(candidate_source.size(), m.sparse_width);
  Matrix candidates_dense(static_cast<Eigen::Index>(candidate_source.size()), static_cast<Eigen::Index>(m.dense_dim));
  for (std::size_t c = 0; c < candidate_source.size(); ++c) {
    const auto [item, tok] = candidate_source[c];
    candidates_sparse->rows[c] = items[item]->features.sparse->rows[tok];
    if (m.dense_dim > 0) candidates_dense.row(c) = items[item]->features.dense->row(tok);
  }
  Var targets = t.sparse_matmul(candidates_sparse, t.param(m.params.at("diet/mask_target")));
  if (m.dense_dim > 0) targets = t.add(targets, t.matmul(t.constant(candidates_dense), t.param(m.params.at("diet/mask_target_dense"))));
  Var head = t.param(m.params.at("diet/mask_head"));
  std::vector<Var> losses;
  std::size_t offset = 0;
  for (Var r : reconstructions) {
    const auto rows = static_cast<std::size_t>(t.value(r).rows());
    Var logits = constrain(t, m, t.matmul_bt(t.matmul(r, head), targets));
    std::vector<std::size_t> g(gold.begin() + static_cast<long>(offset), gold.begin() + static_cast<long>(offset + rows));
    // softmax_cross_entropy averages over its rows; reweight to a mean over
    // every masked position in the batch.
    losses.push_back(t.scale(t.softmax_cross_entropy(logits, std::move(g)), static_cast<double>(rows) / static_cast<double>(gold.size())));
    offset += rows;
  }
  return t.sum(losses);
}

/// Full training objective for one batch. All randomness (dropout and mask
/// choice) is drawn from `rng`.
inline BatchLoss batch_loss(Tape& t, DietModel& m, const std::vector<const TrainItem*>& items, Mode mode, Rng& rng) {
  std::vector<ForwardOutput> outputs;
  std::vector<std::vector<std::size_t>> masked;
  std::vector<Var> intent_terms, entity_terms;
  const bool use_mask = m.config.use_masked_language_model && mode == Mode::Train;
  const double inv = 1.0 / static_cast<double>(items.size());
  for (const TrainItem* item : items) {
    masked.push_back(use_mask ? choose_masked(item->features.token_count(), m.config.mask_fraction, rng)
                              : std::vector<std::size_t>{});
    outputs.push_back(forward(t, m, item->features, mode, &rng, masked.back()));
    intent_terms.push_back(intent_loss(t, m, outputs.back().cls, item->intent));
    entity_terms.push_back(crf::negative_log_likelihood(t, outputs.back().emissions,
                                                        t.param(m.params.at("diet/crf_transitions")), item->tags));
  }
  BatchLoss b;
  b.intent = t.scale(t.sum(intent_terms), inv);
  b.entity = t.scale(t.sum(entity_terms), inv);
  b.mask = use_mask ? mask_loss(t, m, items, outputs, masked) : t.constant(Matrix::Zero(1, 1));
  b.total = t.sum({b.intent, b.mask, b.entity});
  return b;
}

// ---- training -----------------------------------------------------------------

struct TrainingResult {
  DietModel model;
  std::vector<LossBreakdown> history;
};

inline std::vector<TrainItem> make_items(const std::vector<Example>& examples, const nlu::FeaturizerState& state,
                                         const nlu::EmbeddingTable* table, const crf::TagSet& tags) {
  std::vector<TrainItem> items;
  items.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    auto tokens = nlu::tokenize(ex.text);
    if (tokens.empty()) throw Error(ErrorCode::EmptyMessage, "example '" + ex.id + "' has no tokens");
    TrainItem item;
    item.tags = gold_tags(ex, tokens, tags, static_cast<long>(i));
    item.features = nlu::featurize(ex.text, tokens, state, table);
    for (const auto& tok : tokens) item.token_keys.push_back(tok.lower);
    item.intent = ex.intent;
    items.push_back(std::move(item));
  }
  return items;
}

using EpochCallback = std::function<void(std::size_t epoch, const LossBreakdown&)>;

inline TrainingResult train(const std::vector<Example>& train_set, const DietConfig& config, const nlu::FeaturizerState& state,
                            const nlu::EmbeddingTable* table, const EpochCallback& on_epoch = {}) {
  if (train_set.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no DIET training examples");
  config.validate();
  std::set<std::string> intent_set, entity_set;
  for (const auto& ex : train_set) {
    intent_set.insert(ex.intent);
    for (const auto& en : ex.entities) entity_set.insert(en.entity);
  }
  TrainingResult r;
  r.model = DietModel(config, {intent_set.begin(), intent_set.end()}, {entity_set.begin(), entity_set.end()},
                      state.sparse_width(), table ? table->dim : 0);
  Rng rng(config.seed);
  r.model.initialize(rng);
  auto items = make_items(train_set, state, table, r.model.tags);

  Adam adam(config.learning_rate);
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double intent = 0, mask = 0, entity = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<const TrainItem*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&items[order[i]]);
      r.model.params.zero_grad();
      Tape tape;
      BatchLoss b = batch_loss(tape, r.model, batch, Mode::Train, rng);
      tape.backward(b.total);
      adam.step(r.model.params);
      const double w = static_cast<double>(batch.size());
      intent += w * tape.scalar(b.intent);
      mask += w * tape.scalar(b.mask);
      entity += w * tape.scalar(b.entity);
    }
    const double n = static_cast<double>(items.size());
    r.history.push_back(LossBreakdown::of(intent / n, mask / n, entity / n));
    if (on_epoch) on_epoch(epoch, r.history.back());
  }
  return r;
}

// ---- prediction ---------------------------------------------------------------

inline std::vector<std::pair<std::string, double>> rank(const std::vector<std::string>& labels, const Matrix& logits) {
  RowVector p = (logits.row(0).array() - logits.maxCoeff()).exp().matrix();
  p /= p.sum();
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.emplace_back(labels[i], p(static_cast<Eigen::Index>(i)));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

/// Converts a repaired BIO path into entity spans over `text`.
inline std::vector<ExtractedEntity> decode_entities(std::string_view text, const std::vector<nlu::Token>& tokens,
                                                    const std::vector<std::size_t>& path, const crf::TagSet& tags) {
  std::vector<ExtractedEntity> out;
  for (std::size_t i = 0; i < path.size();) {
    if (!tags.is_begin(path[i])) {
      ++i;
      continue;
    }
    const std::size_t type = tags.type_of(path[i]);
    std::size_t j = i + 1;
    while (j < path.size() && tags.is_inside(path[j]) && tags.type_of(path[j]) == type) ++j;
    ExtractedEntity e;
    e.type = tags.entity_types()[type];
    e.start = tokens[i].start;
    e.end = tokens[j - 1].end;
    e.surface = std::string(text.substr(e.start, e.end - e.start));
    e.value = e.surface;
    e.first_token = i;
    e.last_token = j - 1;
    out.push_back(std::move(e));
    i = j;
  }
  return out;
}

inline IntentPrediction predict(std::string_view text, DietModel& m, const nlu::FeaturizerState& state,
                                const nlu::EmbeddingTable* table) {
  auto tokens = nlu::tokenize(text);
  if (tokens.empty()) throw Error(ErrorCode::EmptyMessage, "message is empty");
  auto features = nlu::featurize(text, tokens, state, table);
  Tape t;
  ForwardOutput out = forward(t, m, features, Mode::Infer, nullptr);
  IntentPrediction p;
  p.ranking = rank(m.intents, t.value(intent_similarities(t, m, out.cls)));
  auto path = crf::viterbi(t.value(out.emissions), m.params.at("diet/crf_transitions").value);
  auto repaired = m.tags.repair(path.tags);
  for (std::size_t tag : repaired) p.tags.push_back(m.tags.name(tag));
  p.entities = decode_entities(text, tokens, repaired, m.tags);
  return p;
}

/// "nlu_fallback" when the top confidence is under `threshold` or within
/// `ambiguity_threshold` of the runner-up; otherwise the top intent.
inline std::string apply_fallback(const std::vector<std::pair<std::string, double>>& ranking, double threshold,
                                  double ambiguity_threshold) {
  if (ranking.empty()) throw Error(ErrorCode::InvalidData, "empty intent ranking");
  std::size_t top = 0;
  for (std::size_t i = 1; i < ranking.size(); ++i) {
    if (ranking[i].second > ranking[top].second) top = i;
  }
  if (ranking[top].second < threshold) return kFallbackIntent;
  if (ranking.size() > 1) {
    double second = -1.0;
    for (std::size_t i = 0; i < ranking.size(); ++i) {
      if (i != top) second = std::max(second, ranking[i].second);
    }
    if (ranking[top].second - second < ambiguity_threshold) return kFallbackIntent;
  }
  return ranking[top].first;
}

inline std::vector<ExtractedEntity> map_synonyms(std::vector<ExtractedEntity> entities,
                                                 const std::map<std::string, std::string>& synonyms) {
  for (auto& e : entities) {
    auto it = synonyms.find(nlu::to_lower(e.value));
    if (it != synonyms.end()) e.value = it->second;
  }
  return entities;
}

}  // namespace farmbot::diet
