#pragma once

// Next-action selection by similarity between an embedded dialogue state and
// jointly trained action embeddings. The dialogue state is a sequence of
// turn feature vectors read by a causal transformer; the last position is
// projected into the embedding space and scored against every action.

#include "farmbot/autodiff.hpp"
#include "farmbot/domain.hpp"
#include "farmbot/error.hpp"
#include "farmbot/tracker.hpp"
#include "farmbot/transformer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

namespace farmbot::ted {

struct TedConfig {
  std::size_t num_layers = 1;
  std::size_t transformer_size = 64;
  std::size_t num_heads = 4;
  std::size_t embedding_dim = 20;
  std::size_t max_history = 8;
  std::size_t epochs = 100;
  double learning_rate = 0.001;
  std::size_t relative_attention_max_distance = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  // Extra training stories per given story, each a random concatenation of
  // two to four given stories. 0 disables augmentation.
  std::size_t augmentation_factor = 0;

  void validate() const {
    if (max_history < 1) throw Error(ErrorCode::InvalidConfig, "ted: max_history must be >= 1");
    if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "ted: epochs must be >= 1");
    if (num_heads == 0 || transformer_size % num_heads != 0) {
      throw Error(ErrorCode::InvalidConfig, "ted: transformer_size must be divisible by num_heads");
    }
  }

  EncoderShape encoder_shape() const {
    return {num_layers, transformer_size, num_heads, relative_attention_max_distance, true};
  }

  nlohmann::json to_json() const {
    return {{"num_layers", num_layers},       {"transformer_size", transformer_size},
            {"num_heads", num_heads},         {"embedding_dim", embedding_dim},
            {"max_history", max_history},     {"epochs", epochs},
            {"learning_rate", learning_rate}, {"relative_attention_max_distance", relative_attention_max_distance},
            {"batch_size", batch_size},       {"seed", seed},
            {"augmentation_factor", augmentation_factor}};
  }

  static TedConfig from_json(const nlohmann::json& j) {
    TedConfig c;
    c.num_layers = j.value("num_layers", c.num_layers);
    c.transformer_size = j.value("transformer_size", c.transformer_size);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.max_history = j.value("max_history", c.max_history);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.relative_attention_max_distance = j.value("relative_attention_max_distance", c.relative_attention_max_distance);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.augmentation_factor = j.value("augmentation_factor", c.augmentation_factor);
    c.validate();
    return c;
  }
};

/// Column layout of a turn vector: intent one-hot, entity-presence,
/// slot-filled, previous action one-hot.
struct TurnLayout {
  std::size_t intents, entities, slots, actions;
  std::size_t width() const { return intents + entities + slots + actions; }

  static TurnLayout of(const DomainSpec& d) {
    return {d.intents.size(), d.entity_types.size(), d.slots.size(), d.actions.size()};
  }
};

namespace detail {

inline RowVector snapshot(const DomainSpec& d, const TurnLayout& L, const Event* user,
                          const std::map<std::string, std::optional<std::string>>& slots, const std::string& prev_action) {
  RowVector row = RowVector::Zero(static_cast<Eigen::Index>(L.width()));
  if (user) {
    auto it = std::find(d.intents.begin(), d.intents.end(), user->intent);
    if (it != d.intents.end()) row(it - d.intents.begin()) = 1.0;
    for (const auto& en : user->entities) {
      auto e = std::find(d.entity_types.begin(), d.entity_types.end(), en.entity);
      if (e != d.entity_types.end()) row(static_cast<Eigen::Index>(L.intents) + (e - d.entity_types.begin())) = 1.0;
    }
  }
  for (std::size_t s = 0; s < d.slots.size(); ++s) {
    auto it = slots.find(d.slots[s].name);
    if (it != slots.end() && it->second) row(static_cast<Eigen::Index>(L.intents + L.entities + s)) = 1.0;
  }
  auto a = std::find(d.actions.begin(), d.actions.end(), prev_action);
  if (a != d.actions.end()) row(static_cast<Eigen::Index>(L.intents + L.entities + L.slots) + (a - d.actions.begin())) = 1.0;
  return row;
}

}  // namespace detail

/// One row per decision point, oldest first, truncated to the last
/// `max_history`. A decision point is the state just before each executed
/// action, plus the current state when an action is pending (the last event
/// is not action_listen). Each row carries the latest user intent and
/// entities, the filled slots, and the previously executed action
/// (action_listen before the first).
inline Matrix featurize_tracker(const DialogueTracker& tracker, const DomainSpec& domain, std::size_t max_history) {
  const TurnLayout L = TurnLayout::of(domain);
  std::vector<RowVector> rows;
  std::map<std::string, std::optional<std::string>> slots;
  const Event* user = nullptr;
  std::string prev = kActionListen;
  bool pending = false;
  for (const auto& e : tracker.events()) {
    switch (e.type) {
      case EventType::UserMessage:
        user = &e;
        pending = true;
        break;
      case EventType::SlotSet: slots[e.slot] = e.value; break;
      case EventType::ActionExecuted:
        if (user) rows.push_back(detail::snapshot(domain, L, user, slots, prev));
        prev = e.action;
        pending = e.action != kActionListen;
        break;
      case EventType::BotUttered: break;
    }
  }
  if (user && pending) rows.push_back(detail::snapshot(domain, L, user, slots, prev));
  const std::size_t keep = std::min(rows.size(), max_history);
  Matrix m(static_cast<Eigen::Index>(keep), static_cast<Eigen::Index>(L.width()));
  for (std::size_t i = 0; i < keep; ++i) m.row(static_cast<Eigen::Index>(i)) = rows[rows.size() - keep + i];
  return m;
}

class TedModel {
 public:
  TedConfig config;
  DomainSpec domain;
  ParameterSet params;

  TedModel() = default;
  TedModel(TedConfig cfg, DomainSpec d) : config(std::move(cfg)), domain(std::move(d)) { config.validate(); }

  void initialize(Rng& rng) {
    const auto w = static_cast<Eigen::Index>(TurnLayout::of(domain).width());
    const auto d = static_cast<Eigen::Index>(config.transformer_size);
    const auto e = static_cast<Eigen::Index>(config.embedding_dim);
    params.add("ted/turn_projection", glorot_uniform(w, d, rng));
    params.add("ted/turn_projection_bias", Matrix::Zero(1, d));
    init_encoder(params, "ted/encoder/", config.encoder_shape(), rng);
    params.add("ted/state_head", glorot_uniform(d, e, rng));
    params.add("ted/action_embeddings", glorot_uniform(static_cast<Eigen::Index>(domain.actions.size()), e, rng));
  }

  /// Encoded sequence, one row per turn.
  Var encode_turns(Tape& t, const Matrix& turns) {
    Var x = t.add_row(t.matmul(t.constant(turns), t.param(params.at("ted/turn_projection"))),
                      t.param(params.at("ted/turn_projection_bias")));
    return encode(t, params, "ted/encoder/", x, config.encoder_shape());
  }

  /// 1 x n_actions similarity logits for the state ending at the last turn.
  Var similarities(Tape& t, const Matrix& turns) {
    if (turns.rows() == 0) throw Error(ErrorCode::EmptySequence, "dialogue state has no turns");
    Var seq = encode_turns(t, turns);
    Var state = t.matmul(t.gather_rows(seq, {static_cast<std::size_t>(turns.rows() - 1)}), t.param(params.at("ted/state_head")));
    return t.matmul_bt(state, t.param(params.at("ted/action_embeddings")));
  }

  nlohmann::json meta_json() const { return {{"config", config.to_json()}, {"domain", domain.to_json()}}; }
  static TedModel from_meta(const nlohmann::json& j) {
    return TedModel(TedConfig::from_json(j.at("config")), DomainSpec::from_json(j.at("domain")));
  }
};

struct ActionPrediction {
  std::string action;
  double confidence = 0.0;
  std::vector<double> confidences;
};

/// Softmax over action similarities; ties go to the lowest action index.
inline ActionPrediction predict_from_turns(TedModel& m, const Matrix& turns) {
  Tape t;
  const Matrix& z = t.value(m.similarities(t, turns));
  RowVector p = (z.row(0).array() - z.maxCoeff()).exp().matrix();
  p /= p.sum();
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < p.size(); ++i) {
    if (z(0, i) > z(0, static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  }
  ActionPrediction r;
  r.action = m.domain.actions[best];
  r.confidence = p(static_cast<Eigen::Index>(best));
  r.confidences.assign(p.data(), p.data() + p.size());
  return r;
}

inline ActionPrediction predict_next_action(const DialogueTracker& tracker, TedModel& m) {
  return predict_from_turns(m, featurize_tracker(tracker, m.domain, m.config.max_history));
}

/// Applies a story user step to a tracker: user event then slot fills.
inline void apply_user_step(DialogueTracker& tracker, const DomainSpec& domain, const std::string& intent,
                            const std::map<std::string, std::string>& entities) {
  std::vector<EventEntity> ents;
  for (const auto& [type, value] : entities) ents.push_back({type, value, 0, 0});
  tracker.apply(Event::user("", intent, ents));
  for (const auto& slot : domain.slots) {
    auto it = entities.find(slot.from_entity);
    if (it != entities.end()) {
      std::string v = it->second;
      for (char& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      tracker.apply(Event::slot_set(slot.name, v));
    }
  }
}

struct TrainingPair {
  Matrix turns;
  std::size_t action = 0;
  std::string story;
  std::size_t position = 0;
};

/// One pair per action decision in every story, including the implicit
/// action_listen closing each user turn.
inline std::vector<TrainingPair> unroll_stories(const std::vector<Story>& stories, const DomainSpec& domain,
                                                std::size_t max_history) {
  std::vector<TrainingPair> pairs;
  for (const auto& story : stories) {
    DialogueTracker tracker(story.name);
    std::size_t position = 0;
    auto decide = [&](const std::string& action) {
      pairs.push_back({featurize_tracker(tracker, domain, max_history), domain.action_index(action), story.name, position++});
      tracker.apply(Event::action_executed(action));
    };
    bool pending = false;
    for (const auto& step : story.steps) {
      if (step.is_user()) {
        if (pending) decide(kActionListen);
        apply_user_step(tracker, domain, *step.intent, step.entities);
        pending = true;
      } else {
        if (!tracker.latest_message()) {
          throw Error(ErrorCode::InvalidData, "story '" + story.name + "' starts with an action");
        }
        decide(*step.action);
        pending = *step.action != kActionListen;
      }
    }
    if (pending) decide(kActionListen);
  }
  return pairs;
}

/// The given stories followed by `factor * stories.size()` seeded
/// concatenations of two to four of them, so the policy sees turns after
/// varied histories and carried-over slots.
inline std::vector<Story> augment_stories(const std::vector<Story>& stories, std::size_t factor, std::uint64_t seed) {
  std::vector<Story> out = stories;
  if (stories.size() < 2) return out;
  Rng rng(seed ^ 0x5eed5eed5eed5eedULL);
  for (std::size_t k = 0; k < factor * stories.size(); ++k) {
    Story s;
    s.name = "augmented " + std::to_string(k);
    const std::size_t parts = 2 + rng.below(3);
    for (std::size_t p = 0; p < parts; ++p) {
      const auto& src = stories[rng.below(stories.size())];
      s.steps.insert(s.steps.end(), src.steps.begin(), src.steps.end());
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline Var batch_loss(Tape& t, TedModel& m, const std::vector<const TrainingPair*>& batch) {
  std::vector<Var> terms;
  for (const auto* p : batch) terms.push_back(t.softmax_cross_entropy(m.similarities(t, p->turns), {p->action}));
  return t.scale(t.sum(terms), 1.0 / static_cast<double>(batch.size()));
}

inline TedModel train(const std::vector<Story>& stories, const DomainSpec& domain, const TedConfig& config,
                      std::vector<double>* history = nullptr) {
  if (stories.empty()) throw Error(ErrorCode::EmptyStories, "no stories to train on");
  config.validate();
  TedModel m(config, domain);
  Rng rng(config.seed);
  m.initialize(rng);
  auto pairs = unroll_stories(augment_stories(stories, config.augmentation_factor, config.seed), domain, config.max_history);
  Adam adam(config.learning_rate);
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<const TrainingPair*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&pairs[order[i]]);
      m.params.zero_grad();
      Tape t;
      Var loss = batch_loss(t, m, batch);
      t.backward(loss);
      adam.step(m.params);
      total += t.scalar(loss) * static_cast<double>(batch.size());
    }
    if (history) history->push_back(total / static_cast<double>(pairs.size()));
  }
  return m;
}

}  // namespace farmbot::ted
