#pragma once

#include <vector>

#include "wsvad/autodiff.hpp"

namespace wsvad {

enum class MilPooling {
  frames_per_class,  // top-K frames within each class column (default)
  rowwise_literal,   // per-frame top-K masking across classes, for comparison
};

struct LossConfig {
  int topk_divisor = 16;  // K = n / divisor + 1
  double tau = 0.07;
  double lambda = 1e-4;
  MilPooling pooling = MilPooling::frames_per_class;
  bool contrastive_on_final = true;  // use T (post visual prompt) rather than t_out

  int k_for(int n) const { return n / topk_divisor + 1; }

  void validate() const {
    if (topk_divisor < 1) throw Error(Errc::invalid_config, "topk_divisor must be >= 1");
    if (tau <= 0.0) throw Error(Errc::invalid_config, "tau must be > 0");
    if (lambda < 0.0) throw Error(Errc::invalid_config, "lambda must be >= 0");
  }
};

// Video-level prediction = mean of the K largest anomaly confidences, then
// binary cross-entropy against the video label. K is clamped to n.
ad::Var topk_bce(ad::Tape& t, ad::Var anomaly, int video_label, const LossConfig& cfg);

// s_j = mean of the K largest entries of column j of the alignment map.
std::vector<ad::Var> mil_align_scores(ad::Tape& t, ad::Var m, const LossConfig& cfg);

// -log softmax(S / tau)[target], averaged over targets for multi-label videos.
ad::Var mil_align_loss(ad::Tape& t, const std::vector<ad::Var>& scores,
                       const std::vector<int>& target_classes, const LossConfig& cfg);

// Multi-class prediction p_i = exp(s_i/tau) / sum_j exp(s_j/tau), written out
// directly; the loss itself goes through a stabilized logsumexp, so the two
// routes cross-check each other.
Vec mil_align_probabilities(const Vec& scores, const LossConfig& cfg);

// Sum over abnormal classes of max(0, cosine(t_normal, t_abnormal)).
ad::Var contrastive_loss(ad::Tape& t, ad::Var class_embeddings, int normal_index);

// L = L_bce + L_nce + lambda * L_cts; aborts on non-finite components.
ad::Var total_loss(ad::Tape& t, ad::Var bce, ad::Var nce, ad::Var cts, const LossConfig& cfg);

// Plain-value wrappers.
double topk_bce_value(const Vec& anomaly, int video_label, const LossConfig& cfg);
Vec mil_align_scores_value(const Mat& m, const LossConfig& cfg);
double mil_align_loss_value(const Vec& scores, const std::vector<int>& targets,
                            const LossConfig& cfg);
double contrastive_loss_value(const Mat& class_embeddings, int normal_index);

}  // namespace wsvad
