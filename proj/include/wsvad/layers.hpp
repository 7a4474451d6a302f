#pragma once

#include <cmath>
#include <string>

#include "wsvad/autodiff.hpp"
#include "wsvad/rng.hpp"

namespace wsvad {

inline Mat random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  return m;
}

// Each parameter draws from its own named stream, so toggling one module on
// or off never changes another module's initialization.
inline ad::Parameter& add_param(ad::ParameterStore& store, std::uint64_t seed,
                                const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                double stddev) {
  Rng rng = named_rng(seed, name);
  return store.add(name, random_matrix(rng, rows, cols, stddev));
}

struct Linear {
  ad::Parameter* w = nullptr;  // in x out
  ad::Parameter* b = nullptr;  // 1 x out, optional

  ad::Var apply(ad::Tape& t, ad::Var x) const {
    ad::Var y = t.matmul(x, t.leaf(*w));
    if (b) y = t.add_row_broadcast(y, t.leaf(*b));
    return y;
  }
};

inline Linear make_linear(ad::ParameterStore& store, std::uint64_t seed, const std::string& name,
                          Eigen::Index in, Eigen::Index out, bool bias = true) {
  Linear l;
  l.w = &add_param(store, seed, name + ".w", in, out, 1.0 / std::sqrt(static_cast<double>(in)));
  if (bias) l.b = &store.add(name + ".b", Mat::Zero(1, out));
  return l;
}

// Transformer feed-forward: linear(d -> 4d), gelu, linear(4d -> d).
struct Ffn {
  Linear in, out;

  ad::Var apply(ad::Tape& t, ad::Var x) const { return out.apply(t, t.gelu(in.apply(t, x))); }
};

inline Ffn make_ffn(ad::ParameterStore& store, std::uint64_t seed, const std::string& name,
                    Eigen::Index dim) {
  Ffn f;
  f.in = make_linear(store, seed, name + ".in", dim, 4 * dim);
  f.out = make_linear(store, seed, name + ".out", 4 * dim, dim);
  return f;
}

struct AttentionWeights {
  ad::Parameter* wq = nullptr;
  ad::Parameter* wk = nullptr;
  ad::Parameter* wv = nullptr;
  ad::Parameter* wo = nullptr;
};

inline AttentionWeights make_attention(ad::ParameterStore& store, std::uint64_t seed,
                                       const std::string& name, Eigen::Index dim) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  AttentionWeights a;
  a.wq = &add_param(store, seed, name + ".wq", dim, dim, s);
  a.wk = &add_param(store, seed, name + ".wk", dim, dim, s);
  a.wv = &add_param(store, seed, name + ".wv", dim, dim, s);
  a.wo = &add_param(store, seed, name + ".wo", dim, dim, s);
  return a;
}

// Plain (frozen) single-head attention over constant weight matrices.
// Used by the frozen text encoder; gradients flow to the inputs only.
inline ad::Var frozen_attention(ad::Tape& t, ad::Var x, const Mat& wq, const Mat& wk,
                                const Mat& wv, const Mat& wo) {
  ad::Var q = t.matmul(x, t.constant(wq));
  ad::Var k = t.matmul(x, t.constant(wk));
  ad::Var v = t.matmul(x, t.constant(wv));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  ad::Var scores = t.scale(t.matmul(q, t.transpose(k)), inv_sqrt);
  ad::Var p = t.softmax_rows(scores);
  return t.matmul(t.matmul(p, v), t.constant(wo));
}

}  // namespace wsvad
