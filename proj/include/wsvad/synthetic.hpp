#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsvad/types.hpp"

namespace wsvad {

// Normal frames come from one seeded Gaussian cluster; each abnormal video is
// normal background with bursts drawn from a class-specific cluster centered
// margin away. Everything is a pure function of (spec, seed).
struct SyntheticSpec {
  int num_classes = 3;  // abnormal classes; the normal class is added on top
  int train_videos_per_class = 8;
  int test_videos_per_class = 4;
  int train_normal_videos = 24;
  int test_normal_videos = 12;
  int frames_per_video = 64;
  int dim = 32;
  int burst_min_length = 8;
  int burst_max_length = 16;
  int min_bursts = 1;
  int max_bursts = 2;
  double margin = 2.0;  // distance between the normal mean and each class mean
  double noise = 0.35;
  bool train_gt = true;  // also emit frame-level ground truth for the train split

  void validate() const;
};

struct SyntheticDataset {
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> test;
  LabelVocabulary vocabulary;
};

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// Writes <out_dir>/labels.json plus train/ and test/ split directories.
void write_synthetic_dataset(const SyntheticDataset& ds, const std::string& out_dir);

}  // namespace wsvad
