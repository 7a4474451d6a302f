#pragma once

#include <utility>
#include <vector>

#include "wsvad/autodiff.hpp"
#include "wsvad/layers.hpp"

namespace wsvad {

struct AdapterConfig {
  int window_length = 64;
  double window_overlap = 0.5;
  int attention_heads = 1;
  double sim_threshold = 0.7;  // cosine entries below this are masked out
  double sigma = 1.0;
  int dim = 512;
  bool use_local_attention = true;
  bool use_gcn = true;

  void validate() const;
};

// Both matrices post-softmax; every row sums to 1.
struct AdjacencyPair {
  Mat h_sim;
  Mat h_dis;
};

struct AdjacencyVars {
  ad::Var h_sim;
  ad::Var h_dis;
};

struct AdapterWeights {
  AttentionWeights attention;
  ad::Parameter* gcn_w = nullptr;  // 2d x d

  static AdapterWeights create(ad::ParameterStore& store, std::uint64_t seed,
                               const AdapterConfig& cfg);
};

// Half-open [start, end) windows of nominal length w, stride w*(1-overlap),
// clipped at n. Every frame is covered; frames under several windows are
// merged by arithmetic mean afterwards.
std::vector<std::pair<int, int>> attention_windows(int n, const AdapterConfig& cfg);

// Windowed self-attention with residual: x + mean-over-covering-windows of
// per-window attention outputs. Attention never crosses window boundaries.
ad::Var local_attention(ad::Tape& t, ad::Var x, const AdapterConfig& cfg,
                        const AttentionWeights& w);

// H_sim: row-softmax of frame cosine similarities, entries below the
// threshold masked to -inf first. H_dis: row-softmax of -|i-j|/sigma.
AdjacencyVars build_adjacency(ad::Tape& t, ad::Var x, const AdapterConfig& cfg);

// X_g = X_l + gelu([H_sim X_l ; H_dis X_l] W)
ad::Var gcn_forward(ad::Tape& t, ad::Var x, const AdjacencyVars& adj, ad::Var w);

ad::Var adapter_forward(ad::Tape& t, ad::Var x, const AdapterConfig& cfg,
                        const AdapterWeights& w);

// Plain-value wrappers for the same tape ops (single code path).
Mat local_attention_values(const Mat& x, const AdapterConfig& cfg, const Mat& wq, const Mat& wk,
                           const Mat& wv, const Mat& wo);
AdjacencyPair build_adjacency_values(const Mat& x, const AdapterConfig& cfg);
Mat gcn_forward_values(const Mat& x, const AdapterConfig& cfg, const Mat& w);

}  // namespace wsvad
