#include "wsvad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

namespace wsvad {

using nlohmann::json;

ScorePath score_path_from_string(const std::string& s) {
  if (s == "c_branch" || s == "c-branch") return ScorePath::c_branch;
  if (s == "a_branch" || s == "a-branch") return ScorePath::a_branch;
  throw Error(Errc::unknown_path, "unknown score path: " + s);
}

std::string to_string(ScorePath p) {
  return p == ScorePath::c_branch ? "c_branch" : "a_branch";
}

Vec coarse_scores(const ModelOutput& out, ScorePath path, int normal_index) {
  if (path == ScorePath::c_branch) {
    if (out.a.size() == 0) throw Error(Errc::invalid_flags, "c-branch scores need the C-branch");
    return out.a;
  }
  if (out.m.size() == 0) throw Error(Errc::invalid_flags, "a-branch scores need the A-branch");
  if (normal_index < 0 || normal_index >= out.m.cols())
    throw Error(Errc::invalid_config, "bad normal index");
  Vec scores(out.m.rows());
  for (Eigen::Index i = 0; i < out.m.rows(); ++i)
    scores(i) = 1.0 - (out.m(i, normal_index) + 1.0) / 2.0;
  return scores;
}

std::vector<DetectionSegment> extract_segments(const Mat& m, const LabelVocabulary& vocab,
                                               double raw_threshold, int min_length) {
  if (raw_threshold <= -1.0 || raw_threshold >= 1.0)
    throw Error(Errc::invalid_config, "segment threshold must be inside (-1, 1)");
  if (min_length < 1) throw Error(Errc::invalid_config, "min_length must be >= 1");
  if (m.cols() != vocab.size())
    throw Error(Errc::dimension_mismatch, "alignment map width does not match vocabulary");

  std::vector<DetectionSegment> out;
  const Eigen::Index n = m.rows();
  for (int j = 0; j < vocab.size(); ++j) {
    if (j == vocab.normal_index) continue;
    Eigen::Index i = 0;
    while (i < n) {
      if (m(i, j) < raw_threshold) {
        ++i;
        continue;
      }
      Eigen::Index start = i;
      double sum = 0.0;
      while (i < n && m(i, j) >= raw_threshold) sum += m(i++, j);
      if (i - start >= min_length) {
        DetectionSegment seg;
        seg.class_name = vocab.labels[j];
        seg.start = start;
        seg.end = i;
        seg.confidence = (sum / static_cast<double>(i - start) + 1.0) / 2.0;
        out.push_back(seg);
      }
    }
  }
  return out;
}

double frame_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw Error(Errc::shape_mismatch, "frame_ap: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::size_t total_pos = 0;
  for (int l : labels) total_pos += (l != 0);
  if (total_pos == 0) return 0.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0, recall_prev = 0.0;
  std::size_t tp = 0, seen = 0, i = 0;
  while (i < n) {
    // all items sharing a score enter as one PR step
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      tp += (labels[order[j]] != 0);
      ++seen;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return ap;
}

double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw Error(Errc::shape_mismatch, "frame_auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) pos += (l != 0);
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0)
    throw Error(Errc::single_class_labels, "AUC needs both classes present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks across ties, sum ranks of positives
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    std::size_t ties_pos = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      ties_pos += (labels[order[j]] != 0);
      ++j;
    }
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    rank_sum_pos += avg_rank * static_cast<double>(ties_pos);
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);
}

double ano_auc(const std::vector<VideoFrames>& videos) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& v : videos) {
    if (!v.abnormal) continue;
    scores.insert(scores.end(), v.scores.begin(), v.scores.end());
    labels.insert(labels.end(), v.labels.begin(), v.labels.end());
  }
  if (scores.empty())
    throw Error(Errc::single_class_labels, "AnoAUC needs at least one abnormal video");
  return frame_auc(scores, labels);
}

double interval_iou(std::int64_t s1, std::int64_t e1, std::int64_t s2, std::int64_t e2) {
  const std::int64_t inter = std::max<std::int64_t>(0, std::min(e1, e2) - std::max(s1, s2));
  const std::int64_t uni = (e1 - s1) + (e2 - s2) - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

namespace {

// AP over a ranked TP/FP sequence, total ground truth as recall denominator.
double detection_ap(const std::vector<int>& tp_sequence, std::size_t total_gt) {
  if (total_gt == 0) return 0.0;
  double ap = 0.0, recall_prev = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < tp_sequence.size(); ++k) {
    tp += (tp_sequence[k] != 0);
    const double recall = static_cast<double>(tp) / static_cast<double>(total_gt);
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
  }
  return ap;
}

}  // namespace

MapAtIouResult map_at_iou(const std::vector<SegmentPrediction>& predictions,
                          const std::vector<SegmentGroundTruth>& ground_truth,
                          const std::vector<double>& thresholds) {
  std::vector<std::string> classes;
  for (const auto& g : ground_truth)
    if (std::find(classes.begin(), classes.end(), g.segment.class_name) == classes.end())
      classes.push_back(g.segment.class_name);
  std::sort(classes.begin(), classes.end());

  MapAtIouResult result;
  for (double thr : thresholds) {
    double map_sum = 0.0;
    for (const auto& cls : classes) {
      std::vector<const SegmentPrediction*> preds;
      for (const auto& p : predictions)
        if (p.segment.class_name == cls) preds.push_back(&p);
      std::stable_sort(preds.begin(), preds.end(),
                       [](const SegmentPrediction* a, const SegmentPrediction* b) {
                         if (a->segment.confidence != b->segment.confidence)
                           return a->segment.confidence > b->segment.confidence;
                         if (a->video != b->video) return a->video < b->video;
                         if (a->segment.start != b->segment.start)
                           return a->segment.start < b->segment.start;
                         return a->segment.end < b->segment.end;
                       });

      std::vector<const SegmentGroundTruth*> gts;
      for (const auto& g : ground_truth)
        if (g.segment.class_name == cls) gts.push_back(&g);
      std::vector<bool> used(gts.size(), false);

      std::vector<int> tp_sequence;
      for (const auto* p : preds) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
          if (used[gi] || gts[gi]->video != p->video) continue;
          const double iou = interval_iou(p->segment.start, p->segment.end,
                                          gts[gi]->segment.start, gts[gi]->segment.end);
          if (iou >= thr && iou > best_iou) {
            best_iou = iou;
            best = static_cast<int>(gi);
          }
        }
        if (best >= 0) {
          used[static_cast<std::size_t>(best)] = true;
          tp_sequence.push_back(1);
        } else {
          tp_sequence.push_back(0);
        }
      }
      const double ap = detection_ap(tp_sequence, gts.size());
      result.per_class_ap[cls][thr] = ap;
      map_sum += ap;
    }
    result.map_at_iou[thr] = classes.empty() ? 0.0 : map_sum / static_cast<double>(classes.size());
  }

  double avg = 0.0;
  for (const auto& [thr, v] : result.map_at_iou) avg += v;
  result.avg = result.map_at_iou.empty() ? 0.0 : avg / static_cast<double>(result.map_at_iou.size());
  return result;
}

std::string EvaluationReport::to_json_string() const {
  json j;
  j["path"] = path;
  j["ap"] = ap;
  j["auc"] = auc;
  j["ano_auc"] = ano_auc;
  auto path_json = [](const PathMetrics& p) {
    return json{{"ap", p.ap}, {"auc", p.auc}, {"ano_auc", p.ano_auc}};
  };
  if (c_branch) j["c_branch"] = path_json(*c_branch);
  if (a_branch) j["a_branch"] = path_json(*a_branch);
  json miou = json::object();
  for (const auto& [thr, v] : map_at_iou) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.1f", thr);
    miou[key] = v;
  }
  j["map_at_iou"] = miou;
  j["avg_map"] = avg_map;
  json pc = json::object();
  for (const auto& [cls, per_thr] : per_class_ap) {
    json row = json::object();
    for (const auto& [thr, v] : per_thr) {
      char key[16];
      std::snprintf(key, sizeof(key), "%.1f", thr);
      row[key] = v;
    }
    pc[cls] = row;
  }
  j["per_class_ap"] = pc;
  return j.dump(2);
}

}  // namespace wsvad
