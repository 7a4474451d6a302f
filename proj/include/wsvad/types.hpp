#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wsvad/error.hpp"

namespace wsvad {

// Row-major so the in-memory layout matches the on-disk row-major payloads.
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Per-video frame-feature matrix (n x d). Stored as float32, matching the
// container format, so write/read round-trips are bit-exact. Immutable after
// construction by convention; safe to share across threads.
struct FeatureSequence {
  std::string video_id;
  MatF features;  // n x d

  Eigen::Index frames() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  void validate() const {
    if (features.rows() < 1 || features.cols() < 1)
      throw Error(Errc::invalid_config, "feature matrix must be at least 1x1");
    if (!features.allFinite())
      throw Error(Errc::non_finite, "feature matrix contains non-finite values");
  }

  Mat as_double() const { return features.cast<double>(); }
};

// Half-open [start, end) frame interval with a class label.
struct GtSegment {
  std::int64_t start = 0;
  std::int64_t end = 0;  // exclusive
  std::string class_name;
};

struct VideoAnnotation {
  std::string video_id;
  int video_label = 0;  // y in {0,1}
  std::vector<std::string> class_names;
  std::vector<GtSegment> gt_segments;

  void validate(std::int64_t n_frames = -1) const {
    if (video_label != 0 && video_label != 1)
      throw Error(Errc::bad_format, "video label must be 0 or 1: " + video_id);
    if ((video_label == 1) != !class_names.empty())
      throw Error(Errc::bad_format, "y=1 iff class_names non-empty: " + video_id);
    std::set<std::string> classes(class_names.begin(), class_names.end());
    for (const auto& seg : gt_segments) {
      if (seg.start >= seg.end)
        throw Error(Errc::bad_format, "segment start must precede end: " + video_id);
      if (seg.start < 0 || (n_frames >= 0 && seg.end > n_frames))
        throw Error(Errc::bad_format, "segment outside [0, n): " + video_id);
      if (!classes.count(seg.class_name))
        throw Error(Errc::bad_format, "segment class not in class_names: " + video_id);
    }
  }
};

// Ordered class labels, normal class at a fixed index (0 in every file this
// project writes). Token sequences come from tokenize() at load time.
struct LabelVocabulary {
  std::vector<std::string> labels;
  int normal_index = 0;
  std::vector<std::vector<int>> token_ids;
  int context_length = 20;

  int size() const { return static_cast<int>(labels.size()); }

  const std::string& normal_label() const { return labels.at(normal_index); }

  std::vector<int> abnormal_indices() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (i != normal_index) out.push_back(i);
    return out;
  }

  int index_of(const std::string& label) const {
    for (int i = 0; i < size(); ++i)
      if (labels[i] == label) return i;
    throw Error(Errc::bad_format, "label not in vocabulary: " + label);
  }

  void validate() const {
    if (size() < 2) throw Error(Errc::invalid_config, "vocabulary needs m >= 2 labels");
    if (normal_index < 0 || normal_index >= size())
      throw Error(Errc::invalid_config, "normal index out of range");
    std::set<std::string> uniq(labels.begin(), labels.end());
    if (static_cast<int>(uniq.size()) != size())
      throw Error(Errc::invalid_config, "duplicate labels in vocabulary");
    if (context_length < 0) throw Error(Errc::invalid_config, "context length must be >= 0");
  }
};

// Unit of fine-grained output: half-open frame interval, confidence in [0,1].
struct DetectionSegment {
  std::string class_name;
  std::int64_t start = 0;
  std::int64_t end = 0;  // exclusive
  double confidence = 0.0;
};

struct VideoRecord {
  FeatureSequence features;
  VideoAnnotation annotation;
};

struct Dataset {
  std::vector<VideoRecord> videos;
  LabelVocabulary vocabulary;
};

}  // namespace wsvad
