#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsvad/model.hpp"
#include "wsvad/types.hpp"

namespace wsvad {

enum class ScorePath { c_branch, a_branch };

ScorePath score_path_from_string(const std::string& s);
std::string to_string(ScorePath p);

// c-branch: the anomaly confidences as-is. a-branch: one minus the
// [0,1]-mapped similarity to the normal class, 1 - (cos + 1) / 2.
Vec coarse_scores(const ModelOutput& out, ScorePath path, int normal_index);

// Threshold (raw cosine) each abnormal class column of M; maximal runs of at
// least min_length frames become segments; confidence = mapped mean over the
// run. Segments are disjoint within a class and sorted by start.
std::vector<DetectionSegment> extract_segments(const Mat& m, const LabelVocabulary& vocab,
                                               double raw_threshold, int min_length);

// Step-wise PR integration with equal scores grouped into one step.
double frame_ap(const std::vector<double>& scores, const std::vector<int>& labels);

// Rank statistic (Mann-Whitney) with tie correction. Both classes required.
double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct VideoFrames {
  std::vector<double> scores;
  std::vector<int> labels;
  bool abnormal = false;
};

// frame_auc restricted to frames of abnormal videos.
double ano_auc(const std::vector<VideoFrames>& videos);

// IoU of half-open intervals.
double interval_iou(std::int64_t s1, std::int64_t e1, std::int64_t s2, std::int64_t e2);

struct SegmentPrediction {
  int video = 0;
  DetectionSegment segment;
};

struct SegmentGroundTruth {
  int video = 0;
  GtSegment segment;
};

struct MapAtIouResult {
  std::map<double, double> map_at_iou;
  double avg = 0.0;
  std::map<std::string, std::map<double, double>> per_class_ap;
};

// Per class and threshold: predictions sorted by confidence (ties: video,
// start, end ascending), greedily matched to the highest-IoU unmatched
// ground truth of the same class and video with IoU >= threshold; AP from
// the resulting PR curve with total ground truth as recall denominator.
MapAtIouResult map_at_iou(const std::vector<SegmentPrediction>& predictions,
                          const std::vector<SegmentGroundTruth>& ground_truth,
                          const std::vector<double>& thresholds);

inline std::vector<double> default_iou_thresholds() { return {0.1, 0.2, 0.3, 0.4, 0.5}; }

struct PathMetrics {
  double ap = 0.0;
  double auc = 0.0;
  double ano_auc = 0.0;
};

struct EvaluationReport {
  std::string path;  // which path the headline numbers use
  double ap = 0.0;
  double auc = 0.0;
  double ano_auc = 0.0;
  std::optional<PathMetrics> c_branch;
  std::optional<PathMetrics> a_branch;
  std::map<double, double> map_at_iou;
  double avg_map = 0.0;
  std::map<std::string, std::map<double, double>> per_class_ap;

  std::string to_json_string() const;
};

}  // namespace wsvad
