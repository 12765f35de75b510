#pragma once

// Independent reference computations used only by the tests.

#include "farmbot/autodiff.hpp"
#include "farmbot/tensor.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace farmbot::testing {

/// Calls `visit(path)` for every tag sequence of length n over k tags.
inline void for_each_path(std::size_t n, std::size_t k, const std::function<void(const std::vector<std::size_t>&)>& visit) {
  std::vector<std::size_t> path(n, 0);
  while (true) {
    visit(path);
    std::size_t i = 0;
    while (i < n && ++path[i] == k) path[i++] = 0;
    if (i == n) return;
  }
}

inline double brute_score(const Matrix& e, const Matrix& tr, const std::vector<std::size_t>& path) {
  double s = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t) {
    s += e(t, path[t]);
    if (t) s += tr(path[t - 1], path[t]);
  }
  return s;
}

inline double brute_log_partition(const Matrix& e, const Matrix& tr) {
  std::vector<double> scores;
  for_each_path(e.rows(), e.cols(), [&](const auto& p) { scores.push_back(brute_score(e, tr, p)); });
  double m = -std::numeric_limits<double>::infinity();
  for (double s : scores) m = std::max(m, s);
  double acc = 0.0;
  for (double s : scores) acc += std::exp(s - m);
  return m + std::log(acc);
}

/// Highest-scoring path; the first one found in enumeration order wins ties
/// only when scores are exactly equal.
inline std::vector<std::size_t> brute_argmax(const Matrix& e, const Matrix& tr, double* best_score = nullptr) {
  std::vector<std::size_t> best;
  double bs = -std::numeric_limits<double>::infinity();
  for_each_path(e.rows(), e.cols(), [&](const auto& p) {
    const double s = brute_score(e, tr, p);
    if (s > bs) {
      bs = s;
      best = p;
    }
  });
  if (best_score) *best_score = bs;
  return best;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  double worst_norm = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences over every scalar of every parameter, compared
/// tensor-wise as ||analytic - numeric|| / max(||analytic||, ||numeric||).
/// `loss` must be deterministic; `analytic` fills ParameterSet::grad.
inline GradientCheck check_gradients(ParameterSet& params, const std::function<double()>& loss,
                                     const std::function<void()>& analytic, double h = 1e-5) {
  params.zero_grad();
  analytic();
  GradientCheck result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter& param = params[p];
    Matrix numeric(param.value.rows(), param.value.cols());
    for (Eigen::Index i = 0; i < param.value.size(); ++i) {
      const double saved = param.value.data()[i];
      param.value.data()[i] = saved + h;
      const double up = loss();
      param.value.data()[i] = saved - h;
      const double down = loss();
      param.value.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * h);
      ++result.checked;
    }
    const double denom = std::max(param.grad.norm(), numeric.norm());
    const double rel = denom < 1e-9 ? 0.0 : (param.grad - numeric).norm() / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_parameter = param.name;
      result.worst_norm = denom;
    }
  }
  return result;
}

}  // namespace farmbot::testing
