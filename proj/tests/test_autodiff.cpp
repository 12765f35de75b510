#include "farmbot/autodiff.hpp"
#include "farmbot/transformer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace farmbot;
using farmbot::testing::check_gradients;
using farmbot::testing::random_matrix;

namespace {

// Reduces any matrix to a scalar through a fixed random projection so that
// every output entry carries a distinct weight.
Var project(Tape& t, Var x, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix& v = t.value(x);
  Matrix w = random_matrix(v.cols(), 1, rng);
  Matrix u = random_matrix(1, v.rows(), rng);
  return t.matmul(t.constant(u), t.matmul(x, t.constant(w)));
}

void expect_gradients(ParameterSet& params, const std::function<Var(Tape&)>& build, double tol = 1e-7) {
  auto loss = [&] {
    Tape t;
    return t.scalar(build(t));
  };
  auto analytic = [&] {
    Tape t;
    t.backward(build(t));
  };
  auto r = check_gradients(params, loss, analytic);
  EXPECT_LT(r.max_relative_error, tol) << r.worst_parameter;
}

}  // namespace

TEST(Autodiff, DenseOps) {
  Rng rng(1);
  ParameterSet p;
  p.add("a", random_matrix(3, 4, rng));
  p.add("b", random_matrix(4, 2, rng));
  p.add("c", random_matrix(5, 4, rng));
  p.add("row", random_matrix(1, 2, rng));
  expect_gradients(p, [&](Tape& t) {
    Var a = t.param(p.at("a"));
    Var ab = t.add_row(t.matmul(a, t.param(p.at("b"))), t.param(p.at("row")));
    Var ac = t.matmul_bt(a, t.param(p.at("c")));
    Var g = t.gelu(t.concat_cols({ab, t.scale(ac, 0.5)}));
    return project(t, t.softmax_rows(g), 9);
  });
}

TEST(Autodiff, LayerNormAndRowOps) {
  Rng rng(2);
  ParameterSet p;
  p.add("x", random_matrix(4, 6, rng));
  p.add("gain", random_matrix(1, 6, rng));
  p.add("bias", random_matrix(1, 6, rng));
  p.add("mask", random_matrix(1, 6, rng));
  expect_gradients(p, [&](Tape& t) {
    Var x = t.param(p.at("x"));
    Var n = t.layer_norm(x, t.param(p.at("gain")), t.param(p.at("bias")));
    Var r = t.replace_rows(n, {1, 3}, t.param(p.at("mask")));
    Var g = t.gather_rows(r, {3, 0, 0, 2});
    return project(t, t.slice_cols(g, 1, 4), 4);
  });
}

TEST(Autodiff, SparseMatmulAndCrossEntropy) {
  Rng rng(3);
  ParameterSet p;
  p.add("w", random_matrix(6, 3, rng));
  auto s = std::make_shared<SparseMatrix>(2, 6);
  s->add(0, 1, 2.0);
  s->add(0, 4, 1.0);
  s->add(1, 5, 3.0);
  expect_gradients(p, [&](Tape& t) {
    Var logits = t.sparse_matmul(s, t.param(p.at("w")));
    return t.softmax_cross_entropy(logits, {2, 0});
  });
}

TEST(Autodiff, RelativeGather) {
  Rng rng(4);
  ParameterSet p;
  p.add("m", random_matrix(4, 5, rng));
  expect_gradients(p, [&](Tape& t) { return project(t, t.relative_gather(t.param(p.at("m")), 4, 2), 5); });
}

TEST(Autodiff, RelativeGatherClipsDistances) {
  Tape t;
  Matrix m(3, 3);
  m << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  Var out = t.relative_gather(t.constant(m), 3, 1);
  Matrix expected(3, 3);
  // row i, col j -> m(i, clip(j - i, -1, 1) + 1)
  expected << 2, 3, 3, 4, 5, 6, 7, 7, 8;
  EXPECT_EQ(t.value(out), expected);
}

TEST(Autodiff, ClampBlocksGradientOutsideRange) {
  ParameterSet p;
  Matrix x(1, 3);
  x << -30.0, 0.5, 25.0;
  p.add("x", x);
  Tape t;
  Var y = t.clamp(t.param(p.at("x")), -20, 20);
  EXPECT_EQ(t.value(y)(0, 0), -20);
  EXPECT_EQ(t.value(y)(0, 2), 20);
  t.backward(t.sum({t.gather_rows(t.matmul_bt(y, t.constant(Matrix::Ones(1, 3))), {0})}));
  EXPECT_EQ(p.at("x").grad(0, 0), 0.0);
  EXPECT_EQ(p.at("x").grad(0, 1), 1.0);
  EXPECT_EQ(p.at("x").grad(0, 2), 0.0);
}

TEST(Autodiff, CausalEncoderGradients) {
  Rng rng(6);
  ParameterSet p;
  EncoderShape shape{1, 8, 2, 2, true};
  init_encoder(p, "enc/", shape, rng);
  p.add("x", random_matrix(4, 8, rng));
  // Perturb layer-norm parameters away from their identity initialisation.
  for (std::size_t i = 0; i < p.size(); ++i) p[i].value += 0.1 * random_matrix(p[i].value.rows(), p[i].value.cols(), rng);
  expect_gradients(p, [&](Tape& t) { return project(t, encode(t, p, "enc/", t.param(p.at("x")), shape), 8); }, 1e-6);
}

TEST(Autodiff, AdamMovesAgainstGradient) {
  ParameterSet p;
  p.add("w", Matrix::Constant(1, 1, 1.0));
  Adam adam(0.1);
  p.at("w").grad(0, 0) = 2.0;
  adam.step(p);
  EXPECT_NEAR(p.at("w").value(0, 0), 0.9, 1e-6);
}
