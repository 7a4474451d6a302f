#include "wsvad/adapter.hpp"

#include <cmath>
#include <limits>

namespace wsvad {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void AdapterConfig::validate() const {
  if (window_length < 1) throw Error(Errc::invalid_config, "window_length must be >= 1");
  if (window_overlap < 0.0 || window_overlap >= 1.0)
    throw Error(Errc::invalid_config, "window_overlap must be in [0, 1)");
  if (sigma <= 0.0) throw Error(Errc::invalid_config, "sigma must be > 0");
  if (sim_threshold < 0.0 || sim_threshold >= 1.0)
    throw Error(Errc::invalid_config, "sim_threshold must be in [0, 1)");
  if (attention_heads < 1) throw Error(Errc::invalid_config, "attention_heads must be >= 1");
  if (dim < 1) throw Error(Errc::invalid_config, "dim must be >= 1");
  if (dim % attention_heads != 0)
    throw Error(Errc::invalid_config, "dim must be divisible by attention_heads");
}

AdapterWeights AdapterWeights::create(ad::ParameterStore& store, std::uint64_t seed,
                                      const AdapterConfig& cfg) {
  AdapterWeights w;
  if (cfg.use_local_attention)
    w.attention = make_attention(store, seed, "adapter.attn", cfg.dim);
  if (cfg.use_gcn)
    w.gcn_w = &add_param(store, seed, "adapter.gcn.w", 2 * cfg.dim, cfg.dim,
                         1.0 / std::sqrt(2.0 * cfg.dim));
  return w;
}

std::vector<std::pair<int, int>> attention_windows(int n, const AdapterConfig& cfg) {
  const int w = cfg.window_length;
  if (w >= n) return {{0, n}};
  const int stride = std::max(1, static_cast<int>(std::llround(w * (1.0 - cfg.window_overlap))));
  std::vector<std::pair<int, int>> out;
  for (int s = 0; s < n; s += stride) out.emplace_back(s, std::min(s + w, n));
  return out;
}

ad::Var local_attention(ad::Tape& t, ad::Var x, const AdapterConfig& cfg,
                        const AttentionWeights& w) {
  const int n = static_cast<int>(t.value(x).rows());
  const int d = static_cast<int>(t.value(x).cols());
  if (d != cfg.dim) throw Error(Errc::dimension_mismatch, "local_attention: dim mismatch");
  const int heads = cfg.attention_heads;
  const int dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  const auto windows = attention_windows(n, cfg);
  Vec coverage = Vec::Zero(n);
  for (auto [s, e] : windows) coverage.segment(s, e - s).array() += 1.0;

  ad::Var merged;
  for (auto [s, e] : windows) {
    ad::Var xw = t.slice_rows(x, s, e - s);
    ad::Var q = t.matmul(xw, t.leaf(*w.wq));
    ad::Var k = t.matmul(xw, t.leaf(*w.wk));
    ad::Var v = t.matmul(xw, t.leaf(*w.wv));
    ad::Var heads_out;
    for (int h = 0; h < heads; ++h) {
      ad::Var qh = heads == 1 ? q : t.slice_cols(q, h * dk, dk);
      ad::Var kh = heads == 1 ? k : t.slice_cols(k, h * dk, dk);
      ad::Var vh = heads == 1 ? v : t.slice_cols(v, h * dk, dk);
      ad::Var p = t.softmax_rows(t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt));
      ad::Var oh = t.matmul(p, vh);
      heads_out = h == 0 ? oh : t.hconcat(heads_out, oh);
    }
    ad::Var out = t.matmul(heads_out, t.leaf(*w.wo));
    ad::Var placed = t.scatter_rows(out, n, s);
    merged = merged.valid() ? t.add(merged, placed) : placed;
  }
  merged = t.row_scale(merged, coverage.cwiseInverse());
  return t.add(x, merged);
}

AdjacencyVars build_adjacency(ad::Tape& t, ad::Var x, const AdapterConfig& cfg) {
  const int n = static_cast<int>(t.value(x).rows());

  ad::Var sim_raw = t.cosine_pairs(x, x, /*self_pairs=*/true);
  // Threshold as an additive mask so softmax keeps rows stochastic. The
  // diagonal is always 1 >= threshold, so no row masks out completely.
  Mat mask = Mat::Zero(n, n);
  const Mat& sim = t.value(sim_raw);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (sim(i, j) < cfg.sim_threshold) mask(i, j) = -kInf;
  ad::Var h_sim = t.softmax_rows(sim_raw, &mask);

  Mat dis_raw(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dis_raw(i, j) = -std::abs(i - j) / cfg.sigma;
  ad::Var h_dis = t.softmax_rows(t.constant(dis_raw));

  return {h_sim, h_dis};
}

ad::Var gcn_forward(ad::Tape& t, ad::Var x, const AdjacencyVars& adj, ad::Var w) {
  const auto d = t.value(x).cols();
  if (t.value(w).rows() != 2 * d || t.value(w).cols() != d)
    throw Error(Errc::shape_mismatch, "gcn_forward: W must be 2d x d");
  ad::Var agg = t.hconcat(t.matmul(adj.h_sim, x), t.matmul(adj.h_dis, x));
  return t.add(x, t.gelu(t.matmul(agg, w)));
}

ad::Var adapter_forward(ad::Tape& t, ad::Var x, const AdapterConfig& cfg,
                        const AdapterWeights& w) {
  cfg.validate();
  ad::Var h = x;
  if (cfg.use_local_attention) h = local_attention(t, h, cfg, w.attention);
  if (cfg.use_gcn) {
    AdjacencyVars adj = build_adjacency(t, h, cfg);
    h = gcn_forward(t, h, adj, t.leaf(*w.gcn_w));
  }
  return h;
}

Mat local_attention_values(const Mat& x, const AdapterConfig& cfg, const Mat& wq, const Mat& wk,
                           const Mat& wv, const Mat& wo) {
  ad::Tape t;
  ad::ParameterStore store;
  AttentionWeights w;
  w.wq = &store.add("wq", wq);
  w.wk = &store.add("wk", wk);
  w.wv = &store.add("wv", wv);
  w.wo = &store.add("wo", wo);
  return t.value(local_attention(t, t.constant(x), cfg, w));
}

AdjacencyPair build_adjacency_values(const Mat& x, const AdapterConfig& cfg) {
  ad::Tape t;
  AdjacencyVars adj = build_adjacency(t, t.constant(x), cfg);
  return {t.value(adj.h_sim), t.value(adj.h_dis)};
}

Mat gcn_forward_values(const Mat& x, const AdapterConfig& cfg, const Mat& w) {
  ad::Tape t;
  ad::Var xv = t.constant(x);
  AdjacencyVars adj = build_adjacency(t, xv, cfg);
  return t.value(gcn_forward(t, xv, adj, t.constant(w)));
}

}  // namespace wsvad
