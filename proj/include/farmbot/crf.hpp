#pragma once

// Linear-chain CRF over per-token emission scores and a tag-to-tag
// transition matrix. A path y scores sum_t E[t, y_t] + sum_t T[y_{t-1}, y_t];
// there are no start/end transitions.

#include "farmbot/autodiff.hpp"
#include "farmbot/error.hpp"
#include "farmbot/tensor.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace farmbot::crf {

namespace detail {

inline double log_sum_exp(const RowVector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline void check_shapes(const Matrix& emissions, const Matrix& transitions) {
  if (emissions.rows() == 0) throw Error(ErrorCode::EmptySequence, "CRF input has no tokens");
  if (transitions.rows() != emissions.cols() || transitions.cols() != emissions.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "transition matrix does not match tag count");
  }
}

}  // namespace detail

inline double path_score(const Matrix& emissions, const Matrix& transitions, const std::vector<std::size_t>& tags) {
  double s = 0.0;
  for (std::size_t t = 0; t < tags.size(); ++t) {
    s += emissions(t, tags[t]);
    if (t > 0) s += transitions(tags[t - 1], tags[t]);
  }
  return s;
}

/// log Z via the forward algorithm in log space.
inline double log_partition(const Matrix& emissions, const Matrix& transitions) {
  detail::check_shapes(emissions, transitions);
  const Eigen::Index n = emissions.rows(), k = emissions.cols();
  RowVector alpha = emissions.row(0);
  RowVector next(k);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (Eigen::Index j = 0; j < k; ++j) {
      next(j) = detail::log_sum_exp(alpha + transitions.col(j).transpose()) + emissions(t, j);
    }
    alpha.swap(next);
  }
  return detail::log_sum_exp(alpha);
}

/// log p(gold | emissions, transitions) = score(gold) - log Z.
inline double log_likelihood(const Matrix& emissions, const Matrix& transitions, const std::vector<std::size_t>& gold) {
  detail::check_shapes(emissions, transitions);
  if (gold.size() != static_cast<std::size_t>(emissions.rows())) {
    throw Error(ErrorCode::ShapeMismatch, "gold tag count differs from token count");
  }
  for (std::size_t g : gold) {
    if (g >= static_cast<std::size_t>(emissions.cols())) throw Error(ErrorCode::ShapeMismatch, "gold tag out of range");
  }
  return path_score(emissions, transitions, gold) - log_partition(emissions, transitions);
}

struct Marginals {
  Matrix unary;     // n x k, p(y_t = j)
  Matrix pairwise;  // k x k, sum_t p(y_{t-1} = i, y_t = j)
  double log_z = 0.0;
};

/// Forward-backward node and edge marginals.
inline Marginals marginals(const Matrix& emissions, const Matrix& transitions) {
  detail::check_shapes(emissions, transitions);
  const Eigen::Index n = emissions.rows(), k = emissions.cols();
  Matrix alpha(n, k), beta(n, k);
  alpha.row(0) = emissions.row(0);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (Eigen::Index j = 0; j < k; ++j) {
      alpha(t, j) = detail::log_sum_exp(alpha.row(t - 1) + transitions.col(j).transpose()) + emissions(t, j);
    }
  }
  beta.row(n - 1).setZero();
  for (Eigen::Index t = n - 1; t-- > 0;) {
    for (Eigen::Index i = 0; i < k; ++i) {
      beta(t, i) = detail::log_sum_exp(transitions.row(i) + emissions.row(t + 1) + beta.row(t + 1));
    }
  }
  Marginals m;
  m.log_z = detail::log_sum_exp(alpha.row(n - 1));
  m.unary = ((alpha + beta).array() - m.log_z).exp().matrix();
  m.pairwise = Matrix::Zero(k, k);
  for (Eigen::Index t = 1; t < n; ++t) {
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        m.pairwise(i, j) +=
            std::exp(alpha(t - 1, i) + transitions(i, j) + emissions(t, j) + beta(t, j) - m.log_z);
      }
    }
  }
  return m;
}

struct ViterbiResult {
  std::vector<std::size_t> tags;
  double score = 0.0;
};

/// Highest-scoring path. Ties resolve to the lowest tag index, both for the
/// final tag and for every back-pointer.
inline ViterbiResult viterbi(const Matrix& emissions, const Matrix& transitions) {
  detail::check_shapes(emissions, transitions);
  const Eigen::Index n = emissions.rows(), k = emissions.cols();
  RowVector score = emissions.row(0);
  RowVector next(k);
  std::vector<std::vector<std::size_t>> back(static_cast<std::size_t>(n), std::vector<std::size_t>(k, 0));
  for (Eigen::Index t = 1; t < n; ++t) {
    for (Eigen::Index j = 0; j < k; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (Eigen::Index i = 0; i < k; ++i) {
        const double s = score(i) + transitions(i, j);
        if (s > best) {
          best = s;
          arg = static_cast<std::size_t>(i);
        }
      }
      next(j) = best + emissions(t, j);
      back[t][j] = arg;
    }
    score.swap(next);
  }
  ViterbiResult r;
  r.tags.resize(static_cast<std::size_t>(n));
  std::size_t last = 0;
  for (Eigen::Index j = 1; j < k; ++j) {
    if (score(j) > score(last)) last = static_cast<std::size_t>(j);
  }
  r.score = score(last);
  r.tags[n - 1] = last;
  for (Eigen::Index t = n - 1; t > 0; --t) r.tags[t - 1] = back[t][r.tags[t]];
  return r;
}

/// Negative log-likelihood of `gold` as a differentiable 1 x 1 node.
inline Var negative_log_likelihood(Tape& tape, Var emissions, Var transitions, std::vector<std::size_t> gold) {
  const Matrix& e = tape.value(emissions);
  const Matrix& tr = tape.value(transitions);
  const double ll = log_likelihood(e, tr, gold);
  Matrix out(1, 1);
  out(0, 0) = -ll;
  return tape.record(std::move(out), {emissions, transitions},
                     [&tape, emissions, transitions, gold = std::move(gold)](const Matrix& g) {
                       const Matrix& e = tape.value(emissions);
                       const Matrix& tr = tape.value(transitions);
                       Marginals m = marginals(e, tr);
                       const double s = g(0, 0);
                       if (tape.needs_grad(emissions)) {
                         Matrix d = m.unary;
                         for (std::size_t t = 0; t < gold.size(); ++t) d(t, gold[t]) -= 1.0;
                         tape.grad(emissions) += s * d;
                       }
                       if (tape.needs_grad(transitions)) {
                         Matrix d = m.pairwise;
                         for (std::size_t t = 1; t < gold.size(); ++t) d(gold[t - 1], gold[t]) -= 1.0;
                         tape.grad(transitions) += s * d;
                       }
                     });
}

/// BIO tag alphabet: index 0 is "O", then B-e, I-e for each entity type in
/// the given order.
class TagSet {
 public:
  TagSet() = default;
  explicit TagSet(std::vector<std::string> entity_types) : types_(std::move(entity_types)) {}

  std::size_t size() const { return 1 + 2 * types_.size(); }
  const std::vector<std::string>& entity_types() const { return types_; }

  static constexpr std::size_t outside() { return 0; }
  std::size_t begin_tag(std::size_t type) const { return 1 + 2 * type; }
  std::size_t inside_tag(std::size_t type) const { return 2 + 2 * type; }

  bool is_outside(std::size_t tag) const { return tag == 0; }
  bool is_begin(std::size_t tag) const { return tag != 0 && tag % 2 == 1; }
  bool is_inside(std::size_t tag) const { return tag != 0 && tag % 2 == 0; }
  std::size_t type_of(std::size_t tag) const { return (tag - 1) / 2; }

  std::string name(std::size_t tag) const {
    if (tag == 0) return "O";
    return (is_begin(tag) ? "B-" : "I-") + types_[type_of(tag)];
  }

  std::size_t type_index(const std::string& type) const {
    for (std::size_t i = 0; i < types_.size(); ++i) {
      if (types_[i] == type) return i;
    }
    throw Error(ErrorCode::InvalidData, "unknown entity type " + type);
  }

  /// An I-e that does not continue a B-e/I-e of the same type becomes B-e.
  std::vector<std::size_t> repair(std::vector<std::size_t> tags) const {
    for (std::size_t t = 0; t < tags.size(); ++t) {
      if (!is_inside(tags[t])) continue;
      const bool continues = t > 0 && !is_outside(tags[t - 1]) && type_of(tags[t - 1]) == type_of(tags[t]);
      if (!continues) tags[t] = begin_tag(type_of(tags[t]));
    }
    return tags;
  }

 private:
  std::vector<std::string> types_;
};

}  // namespace farmbot::crf
