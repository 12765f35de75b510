#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass as a node. Nodes are
// created in topological order, so backward() walks them in reverse and each
// node pushes its output gradient into its inputs. Parameters are leaves that
// reference storage owned by a ParameterSet; their gradients accumulate
// straight into that storage.

#include "farmbot/error.hpp"
#include "farmbot/tensor.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace farmbot {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Named trainable tensors in insertion order.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Matrix value) {
    if (index_.count(name)) throw Error(ErrorCode::InvalidData, "duplicate parameter " + name);
    index_[name] = params_.size();
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->grad = Matrix::Zero(value.rows(), value.cols());
    p->value = std::move(value);
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::ShapeMismatch, "missing parameter " + name);
    return *params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& p : params_) out.add(p->name, p->value);
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(const Matrix& out_grad)>;

  Var constant(Matrix value) {
    Node n;
    n.own = std::move(value);
    return push(std::move(n));
  }

  Var param(Parameter& p) {
    Node n;
    n.ext = &p.value;
    n.ext_grad = &p.grad;
    n.needs_grad = true;
    return push(std::move(n));
  }

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ext ? *n.ext : n.own;
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient buffer of `v`; allocated on first use.
  Matrix& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.ext_grad) return *n.ext_grad;
    if (n.grad.size() == 0 && value(v).size() != 0) {
      n.grad = Matrix::Zero(value(v).rows(), value(v).cols());
    }
    return n.grad;
  }

  double scalar(Var v) const { return value(v)(0, 0); }

  /// Records a custom op. `back` is only kept when some input needs a
  /// gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward back) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
  }

  Var record(Matrix value, std::span<const Var> inputs, Backward back) {
    Node n;
    n.own = std::move(value);
    for (Var in : inputs) n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    return push(std::move(n));
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out) {
    if (value(out).size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward from non-scalar");
    grad(out)(0, 0) += 1.0;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.back || n.grad.size() == 0) continue;
      n.back(n.grad);
    }
  }

  // ---- differentiable ops -------------------------------------------------

  Var matmul(Var a, Var b) {
    check(value(a).cols() == value(b).rows(), "matmul");
    Matrix out = value(a) * value(b);
    return record(std::move(out), {a, b}, [this, a, b](const Matrix& g) {
      if (needs_grad(a)) grad(a).noalias() += g * value(b).transpose();
      if (needs_grad(b)) grad(b).noalias() += value(a).transpose() * g;
    });
  }

  /// a * b^T
  Var matmul_bt(Var a, Var b) {
    check(value(a).cols() == value(b).cols(), "matmul_bt");
    Matrix out = value(a) * value(b).transpose();
    return record(std::move(out), {a, b}, [this, a, b](const Matrix& g) {
      if (needs_grad(a)) grad(a).noalias() += g * value(b);
      if (needs_grad(b)) grad(b).noalias() += g.transpose() * value(a);
    });
  }

  /// Sparse constant input times dense weight.
  Var sparse_matmul(std::shared_ptr<const SparseMatrix> s, Var w) {
    const Matrix& wv = value(w);
    check(s->cols == static_cast<std::size_t>(wv.rows()), "sparse_matmul");
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(s->row_count()), wv.cols());
    for (std::size_t r = 0; r < s->row_count(); ++r) {
      for (const auto& e : s->rows[r]) out.row(r) += e.value * wv.row(e.col);
    }
    return record(std::move(out), {w}, [this, s, w](const Matrix& g) {
      Matrix& gw = grad(w);
      for (std::size_t r = 0; r < s->row_count(); ++r) {
        for (const auto& e : s->rows[r]) gw.row(e.col) += e.value * g.row(r);
      }
    });
  }

  Var add(Var a, Var b) {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add");
    Matrix out = value(a) + value(b);
    return record(std::move(out), {a, b}, [this, a, b](const Matrix& g) {
      if (needs_grad(a)) grad(a) += g;
      if (needs_grad(b)) grad(b) += g;
    });
  }

  /// Adds a 1 x c row to every row of a.
  Var add_row(Var a, Var row) {
    check(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row");
    Matrix out = value(a).rowwise() + value(row).row(0);
    return record(std::move(out), {a, row}, [this, a, row](const Matrix& g) {
      if (needs_grad(a)) grad(a) += g;
      if (needs_grad(row)) grad(row) += g.colwise().sum();
    });
  }

  Var add_constant(Var a, const Matrix& c) {
    check(value(a).rows() == c.rows() && value(a).cols() == c.cols(), "add_constant");
    Matrix out = value(a) + c;
    return record(std::move(out), {a}, [this, a](const Matrix& g) { grad(a) += g; });
  }

  Var scale(Var a, double s) {
    Matrix out = value(a) * s;
    return record(std::move(out), {a}, [this, a, s](const Matrix& g) { grad(a) += s * g; });
  }

  /// Tanh approximation of GELU.
  Var gelu(Var a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    const Matrix& x = value(a);
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      out.data()[i] = 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
    }
    return record(std::move(out), {a}, [this, a](const Matrix& g) {
      const Matrix& x = value(a);
      Matrix& gx = grad(a);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        const double t = std::tanh(c * (v + 0.044715 * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * v * v);
        gx.data()[i] += g.data()[i] * d;
      }
    });
  }

  /// Row-wise layer normalisation with learned gain and bias (both 1 x c).
  Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-3) {
    const Matrix& x = value(a);
    const Eigen::Index n = x.rows(), c = x.cols();
    auto xhat = std::make_shared<Matrix>(n, c);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mean = x.row(i).mean();
      const double var = (x.row(i).array() - mean).square().mean();
      (*inv_std)[i] = 1.0 / std::sqrt(var + eps);
      xhat->row(i) = (x.row(i).array() - mean) * (*inv_std)[i];
    }
    Matrix out = (xhat->array().rowwise() * value(gain).row(0).array()).rowwise() + value(bias).row(0).array();
    return record(std::move(out), {a, gain, bias}, [this, a, gain, bias, xhat, inv_std](const Matrix& g) {
      if (needs_grad(gain)) grad(gain) += (g.array() * xhat->array()).colwise().sum().matrix();
      if (needs_grad(bias)) grad(bias) += g.colwise().sum();
      if (!needs_grad(a)) return;
      Matrix& gx = grad(a);
      const double inv_c = 1.0 / static_cast<double>(g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        RowVector dxhat = (g.row(i).array() * value(gain).row(0).array()).matrix();
        const double m1 = dxhat.sum() * inv_c;
        const double m2 = dxhat.dot(xhat->row(i)) * inv_c;
        gx.row(i) += (*inv_std)[i] * (dxhat.array() - m1 - xhat->row(i).array() * m2).matrix();
      }
    });
  }

  Var softmax_rows(Var a) {
    const Matrix& x = value(a);
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double m = x.row(i).maxCoeff();
      out.row(i) = (x.row(i).array() - m).exp().matrix();
      out.row(i) /= out.row(i).sum();
    }
    Var res = record(std::move(out), {a}, nullptr);
    if (needs_grad(res)) {
      nodes_[res.id].back = [this, a, res](const Matrix& g) {
        const Matrix& p = value(res);
        Matrix& gx = grad(a);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
          const double dot = g.row(i).dot(p.row(i));
          gx.row(i) += (p.row(i).array() * (g.row(i).array() - dot)).matrix();
        }
      };
    }
    return res;
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index len) {
    check(start + len <= value(a).cols(), "slice_cols");
    Matrix out = value(a).middleCols(start, len);
    return record(std::move(out), {a}, [this, a, start, len](const Matrix& g) {
      grad(a).middleCols(start, len) += g;
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    Eigen::Index rows = value(parts.front()).rows(), cols = 0;
    for (Var p : parts) {
      check(value(p).rows() == rows, "concat_cols");
      cols += value(p).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index off = 0;
    for (Var p : parts) {
      out.middleCols(off, value(p).cols()) = value(p);
      off += value(p).cols();
    }
    return record(std::move(out), std::span<const Var>(parts), [this, parts](const Matrix& g) {
      Eigen::Index off = 0;
      for (Var p : parts) {
        const Eigen::Index w = value(p).cols();
        if (needs_grad(p)) grad(p) += g.middleCols(off, w);
        off += w;
      }
    });
  }

  Var gather_rows(Var a, std::vector<std::size_t> idx) {
    const Matrix& x = value(a);
    Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(r) = x.row(idx[r]);
    return record(std::move(out), {a}, [this, a, idx = std::move(idx)](const Matrix& g) {
      Matrix& gx = grad(a);
      for (std::size_t r = 0; r < idx.size(); ++r) gx.row(idx[r]) += g.row(r);
    });
  }

  /// Rows listed in `idx` are replaced by the 1 x c vector `v`.
  Var replace_rows(Var a, std::vector<std::size_t> idx, Var v) {
    Matrix out = value(a);
    for (std::size_t r : idx) out.row(r) = value(v).row(0);
    return record(std::move(out), {a, v}, [this, a, v, idx = std::move(idx)](const Matrix& g) {
      Matrix masked = g;
      for (std::size_t r : idx) {
        if (needs_grad(v)) grad(v).row(0) += g.row(r);
        masked.row(r).setZero();
      }
      if (needs_grad(a)) grad(a) += masked;
    });
  }

  /// out(i, j) = m(i, clip(j - i, -k, k) + k) for an n x (2k+1) input.
  Var relative_gather(Var m, Eigen::Index n, Eigen::Index k) {
    check(value(m).rows() == n && value(m).cols() == 2 * k + 1, "relative_gather");
    const Matrix& x = value(m);
    Matrix out(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) out(i, j) = x(i, std::clamp(j - i, -k, k) + k);
    }
    return record(std::move(out), {m}, [this, m, n, k](const Matrix& g) {
      Matrix& gx = grad(m);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) gx(i, std::clamp(j - i, -k, k) + k) += g(i, j);
      }
    });
  }

  /// Clamp into [lo, hi]; gradient passes only strictly inside the range.
  Var clamp(Var a, double lo, double hi) {
    Matrix out = value(a).cwiseMax(lo).cwiseMin(hi);
    return record(std::move(out), {a}, [this, a, lo, hi](const Matrix& g) {
      const Matrix& x = value(a);
      Matrix& gx = grad(a);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x.data()[i] > lo && x.data()[i] < hi) gx.data()[i] += g.data()[i];
      }
    });
  }

  /// Mean over rows of -log softmax(logits_r)[gold_r]. Returns 1 x 1.
  Var softmax_cross_entropy(Var logits, std::vector<std::size_t> gold) {
    const Matrix& z = value(logits);
    check(static_cast<std::size_t>(z.rows()) == gold.size() && !gold.empty(), "softmax_cross_entropy");
    auto probs = std::make_shared<Matrix>(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double m = z.row(i).maxCoeff();
      RowVector e = (z.row(i).array() - m).exp().matrix();
      const double s = e.sum();
      probs->row(i) = e / s;
      loss += (m + std::log(s)) - z(i, gold[i]);
    }
    const double inv = 1.0 / static_cast<double>(gold.size());
    Matrix out(1, 1);
    out(0, 0) = loss * inv;
    return record(std::move(out), {logits}, [this, logits, probs, inv, gold = std::move(gold)](const Matrix& g) {
      Matrix d = *probs;
      for (std::size_t i = 0; i < gold.size(); ++i) d(i, gold[i]) -= 1.0;
      grad(logits) += (g(0, 0) * inv) * d;
    });
  }

  Var sum(const std::vector<Var>& scalars) {
    Matrix out = Matrix::Zero(1, 1);
    for (Var s : scalars) out(0, 0) += scalar(s);
    return record(std::move(out), std::span<const Var>(scalars), [this, scalars](const Matrix& g) {
      for (Var s : scalars) {
        if (needs_grad(s)) grad(s)(0, 0) += g(0, 0);
      }
    });
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix* ext_grad = nullptr;
    Matrix grad;
    Backward back;
    bool needs_grad = false;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  static void check(bool ok, const char* op) {
    if (!ok) throw Error(ErrorCode::ShapeMismatch, std::string("shape mismatch in ") + op);
  }

  std::vector<Node> nodes_;
};

/// Adam with bias correction; one moment pair per parameter.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params) {
    if (m_.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
        v_.push_back(m_.back());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace farmbot
