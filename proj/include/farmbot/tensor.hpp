#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace farmbot {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Row-compressed sparse matrix. Entries within a row are sorted by column
/// and unique.
struct SparseMatrix {
  struct Entry {
    std::size_t col;
    double value;
  };

  std::size_t cols = 0;
  std::vector<std::vector<Entry>> rows;

  SparseMatrix() = default;
  SparseMatrix(std::size_t n_rows, std::size_t n_cols) : cols(n_cols), rows(n_rows) {}

  std::size_t row_count() const { return rows.size(); }

  /// Adds `value` to (row, col), keeping the row sorted.
  void add(std::size_t row, std::size_t col, double value) {
    auto& r = rows[row];
    auto it = std::lower_bound(r.begin(), r.end(), col,
                               [](const Entry& e, std::size_t c) { return e.col < c; });
    if (it != r.end() && it->col == col) {
      it->value += value;
    } else {
      r.insert(it, Entry{col, value});
    }
  }

  double at(std::size_t row, std::size_t col) const {
    const auto& r = rows[row];
    auto it = std::lower_bound(r.begin(), r.end(), col,
                               [](const Entry& e, std::size_t c) { return e.col < c; });
    return (it != r.end() && it->col == col) ? it->value : 0.0;
  }

  Matrix to_dense() const {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (const auto& e : rows[i]) m(i, e.col) = e.value;
    }
    return m;
  }

  bool operator==(const SparseMatrix& other) const {
    if (cols != other.cols || rows.size() != other.rows.size()) return false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != other.rows[i].size()) return false;
      for (std::size_t k = 0; k < rows[i].size(); ++k) {
        if (rows[i][k].col != other.rows[i][k].col || rows[i][k].value != other.rows[i][k].value) {
          return false;
        }
      }
    }
    return true;
  }
};

/// Seeded generator with portable output. std distributions are
/// implementation-defined, so sampling is done by hand from raw 64-bit draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // splitmix64
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Glorot-uniform initialisation: U(-sqrt(6/(fan_in+fan_out)), +...).
inline Matrix glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

}  // namespace farmbot
