#include "wsvad/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace wsvad {

ad::Var topk_bce(ad::Tape& t, ad::Var anomaly, int video_label, const LossConfig& cfg) {
  const int n = static_cast<int>(t.value(anomaly).rows());
  int k = cfg.k_for(n);
  if (k > n) {
    std::cerr << "[wsvad] top-K " << k << " exceeds " << n << " frames; clamping\n";
    k = n;
  }
  ad::Var pred = t.topk_mean_col(anomaly, 0, k, n);
  return t.bce(pred, video_label);
}

namespace {

// Literal reading of per-row top-K: keep each frame's K best classes, then
// average the surviving entries per class (falling back to the column
// maximum for classes no frame kept). Comparison toggle only.
std::vector<ad::Var> rowwise_literal_scores(ad::Tape& t, ad::Var m, const LossConfig& cfg) {
  const Mat& vm = t.value(m);
  const int n = static_cast<int>(vm.rows());
  const int cols = static_cast<int>(vm.cols());
  const int k = std::min(cfg.k_for(n), cols);

  std::vector<std::vector<std::pair<int, int>>> kept(cols);  // per class: (row, col)
  for (int i = 0; i < n; ++i) {
    std::vector<int> idx(cols);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return vm(i, a) > vm(i, b); });
    for (int r = 0; r < k; ++r) kept[idx[r]].emplace_back(i, idx[r]);
  }

  std::vector<ad::Var> scores;
  for (int j = 0; j < cols; ++j) {
    if (kept[j].empty()) {
      scores.push_back(t.topk_mean_col(m, j, 1, n));  // column max
      continue;
    }
    ad::Var acc;
    for (auto [i, jj] : kept[j]) {
      ad::Var e = t.entry(m, i, jj);
      acc = acc.valid() ? t.add(acc, e) : e;
    }
    scores.push_back(t.scale(acc, 1.0 / static_cast<double>(kept[j].size())));
  }
  return scores;
}

}  // namespace

std::vector<ad::Var> mil_align_scores(ad::Tape& t, ad::Var m, const LossConfig& cfg) {
  const Mat& vm = t.value(m);
  const int n = static_cast<int>(vm.rows());
  if (cfg.pooling == MilPooling::rowwise_literal) return rowwise_literal_scores(t, m, cfg);
  const int k = std::min(cfg.k_for(n), n);
  std::vector<ad::Var> scores;
  for (int j = 0; j < vm.cols(); ++j) scores.push_back(t.topk_mean_col(m, j, k, n));
  return scores;
}

ad::Var mil_align_loss(ad::Tape& t, const std::vector<ad::Var>& scores,
                       const std::vector<int>& target_classes, const LossConfig& cfg) {
  if (target_classes.empty())
    throw Error(Errc::invalid_config, "mil_align_loss: no target classes");
  ad::Var s = t.stack_scalars(scores);
  ad::Var logits = t.scale(t.transpose(s), 1.0 / cfg.tau);  // 1 x m
  ad::Var lse = t.logsumexp_row(logits);
  ad::Var acc;
  for (int target : target_classes) {
    if (target < 0 || target >= static_cast<int>(scores.size()))
      throw Error(Errc::invalid_config, "mil_align_loss: target out of range");
    ad::Var nll = t.sub(lse, t.entry(logits, 0, target));
    acc = acc.valid() ? t.add(acc, nll) : nll;
  }
  return t.scale(acc, 1.0 / static_cast<double>(target_classes.size()));
}

ad::Var contrastive_loss(ad::Tape& t, ad::Var class_embeddings, int normal_index) {
  const Mat& vt = t.value(class_embeddings);
  const int m = static_cast<int>(vt.rows());
  if (m < 2) throw Error(Errc::invalid_config, "contrastive_loss: needs m >= 2");
  if (normal_index < 0 || normal_index >= m)
    throw Error(Errc::invalid_config, "contrastive_loss: bad normal index");
  ad::Var normal = t.slice_rows(class_embeddings, normal_index, 1);
  ad::Var sims = t.cosine_pairs(normal, class_embeddings);  // 1 x m, includes self
  ad::Var acc;
  for (int j = 0; j < m; ++j) {
    if (j == normal_index) continue;
    ad::Var e = t.relu(t.entry(sims, 0, j));
    acc = acc.valid() ? t.add(acc, e) : e;
  }
  return acc;
}

ad::Var total_loss(ad::Tape& t, ad::Var bce, ad::Var nce, ad::Var cts, const LossConfig& cfg) {
  ad::Var sum = t.scalar(0.0);
  if (bce.valid()) sum = t.add(sum, bce);
  if (nce.valid()) sum = t.add(sum, nce);
  if (cts.valid() && cfg.lambda != 0.0) sum = t.add(sum, t.scale(cts, cfg.lambda));
  const double v = t.scalar_value(sum);
  if (!std::isfinite(v)) {
    auto part = [&](ad::Var x) { return x.valid() ? std::to_string(t.scalar_value(x)) : "off"; };
    throw Error(Errc::non_finite_loss, "non-finite total loss: bce=" + part(bce) +
                                           " nce=" + part(nce) + " cts=" + part(cts));
  }
  return sum;
}

Vec mil_align_probabilities(const Vec& scores, const LossConfig& cfg) {
  Vec e = (scores.array() / cfg.tau).exp();
  const double sum = e.sum();
  if (!std::isfinite(sum) || sum <= 0.0)
    throw Error(Errc::non_finite, "mil_align_probabilities overflow; scale the scores");
  return e / sum;
}

double topk_bce_value(const Vec& anomaly, int video_label, const LossConfig& cfg) {
  ad::Tape t;
  return t.scalar_value(topk_bce(t, t.constant(anomaly), video_label, cfg));
}

Vec mil_align_scores_value(const Mat& m, const LossConfig& cfg) {
  ad::Tape t;
  auto scores = mil_align_scores(t, t.constant(m), cfg);
  Vec out(static_cast<Eigen::Index>(scores.size()));
  for (std::size_t j = 0; j < scores.size(); ++j)
    out(static_cast<Eigen::Index>(j)) = t.scalar_value(scores[j]);
  return out;
}

double mil_align_loss_value(const Vec& scores, const std::vector<int>& targets,
                            const LossConfig& cfg) {
  ad::Tape t;
  std::vector<ad::Var> vars;
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    Mat e(1, 1);
    e(0, 0) = scores(j);
    vars.push_back(t.constant(e));
  }
  return t.scalar_value(mil_align_loss(t, vars, targets, cfg));
}

double contrastive_loss_value(const Mat& class_embeddings, int normal_index) {
  ad::Tape t;
  return t.scalar_value(contrastive_loss(t, t.constant(class_embeddings), normal_index));
}

}  // namespace wsvad
