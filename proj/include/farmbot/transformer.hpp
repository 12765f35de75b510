#pragma once

// Pre-norm transformer encoder with relative position attention: each head
// adds q_i . r_{clip(j-i)} to its q_i . k_j logit, where r is a learned
// table of 2k+1 key embeddings shared by the heads of a layer.

#include "farmbot/autodiff.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace farmbot {

struct EncoderShape {
  std::size_t layers = 2;
  std::size_t size = 128;
  std::size_t heads = 4;
  std::size_t max_relative_distance = 5;
  bool causal = false;

  std::size_t head_size() const { return size / heads; }
  std::size_t ffn_size() const { return 2 * size; }
};

inline void init_encoder(ParameterSet& params, const std::string& prefix, const EncoderShape& s, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(s.size);
  const auto f = static_cast<Eigen::Index>(s.ffn_size());
  const auto r = static_cast<Eigen::Index>(2 * s.max_relative_distance + 1);
  const auto dh = static_cast<Eigen::Index>(s.head_size());
  for (std::size_t l = 0; l < s.layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + "/";
    params.add(p + "ln1_gain", Matrix::Ones(1, d));
    params.add(p + "ln1_bias", Matrix::Zero(1, d));
    params.add(p + "query", glorot_uniform(d, d, rng));
    params.add(p + "key", glorot_uniform(d, d, rng));
    params.add(p + "value", glorot_uniform(d, d, rng));
    params.add(p + "relative_key", glorot_uniform(r, dh, rng));
    params.add(p + "output", glorot_uniform(d, d, rng));
    params.add(p + "output_bias", Matrix::Zero(1, d));
    params.add(p + "ln2_gain", Matrix::Ones(1, d));
    params.add(p + "ln2_bias", Matrix::Zero(1, d));
    params.add(p + "ffn_in", glorot_uniform(d, f, rng));
    params.add(p + "ffn_in_bias", Matrix::Zero(1, f));
    params.add(p + "ffn_out", glorot_uniform(f, d, rng));
    params.add(p + "ffn_out_bias", Matrix::Zero(1, d));
  }
  params.add(prefix + "final_gain", Matrix::Ones(1, d));
  params.add(prefix + "final_bias", Matrix::Zero(1, d));
}

inline Var relative_attention(Tape& t, ParameterSet& params, const std::string& p, Var x, const EncoderShape& s) {
  const Eigen::Index n = t.value(x).rows();
  const auto dh = static_cast<Eigen::Index>(s.head_size());
  const auto k = static_cast<Eigen::Index>(s.max_relative_distance);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var q = t.matmul(x, t.param(params.at(p + "query")));
  Var key = t.matmul(x, t.param(params.at(p + "key")));
  Var v = t.matmul(x, t.param(params.at(p + "value")));
  Var rel = t.param(params.at(p + "relative_key"));

  Matrix causal_mask;
  if (s.causal) {
    causal_mask = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) causal_mask(i, j) = -1e9;
    }
  }

  std::vector<Var> heads;
  for (std::size_t h = 0; h < s.heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
    Var qh = t.slice_cols(q, off, dh);
    Var kh = t.slice_cols(key, off, dh);
    Var vh = t.slice_cols(v, off, dh);
    Var content = t.matmul_bt(qh, kh);
    Var position = t.relative_gather(t.matmul_bt(qh, rel), n, k);
    Var logits = t.scale(t.add(content, position), inv_sqrt);
    if (s.causal) logits = t.add_constant(logits, causal_mask);
    heads.push_back(t.matmul(t.softmax_rows(logits), vh));
  }
  Var merged = heads.size() == 1 ? heads.front() : t.concat_cols(heads);
  return t.add_row(t.matmul(merged, t.param(params.at(p + "output"))), t.param(params.at(p + "output_bias")));
}

/// x is n x size; returns n x size.
inline Var encode(Tape& t, ParameterSet& params, const std::string& prefix, Var x, const EncoderShape& s) {
  for (std::size_t l = 0; l < s.layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + "/";
    Var a = t.layer_norm(x, t.param(params.at(p + "ln1_gain")), t.param(params.at(p + "ln1_bias")));
    x = t.add(x, relative_attention(t, params, p, a, s));
    Var b = t.layer_norm(x, t.param(params.at(p + "ln2_gain")), t.param(params.at(p + "ln2_bias")));
    Var hidden = t.gelu(t.add_row(t.matmul(b, t.param(params.at(p + "ffn_in"))), t.param(params.at(p + "ffn_in_bias"))));
    x = t.add(x, t.add_row(t.matmul(hidden, t.param(params.at(p + "ffn_out"))), t.param(params.at(p + "ffn_out_bias"))));
  }
  return t.layer_norm(x, t.param(params.at(prefix + "final_gain")), t.param(params.at(prefix + "final_bias")));
}

}  // namespace farmbot
