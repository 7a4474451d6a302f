#pragma once

#include <string>
#include <vector>

#include "wsvad/types.hpp"

namespace wsvad {

// Feature container, little-endian:
//   magic "VADF" | version u32 = 1 | n u32 | d u32 | dtype u8 = 1 (float32)
//   | reserved u8[3] = 0 | n*d float32 row-major
inline constexpr char kFeatureMagic[4] = {'V', 'A', 'D', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

FeatureSequence read_feature_file(const std::string& path);
void write_feature_file(const std::string& path, const FeatureSequence& seq);

// Annotation sidecar: UTF-8 JSON lines, one object per video with keys
// video_id, label (0/1), classes (list), segments (list of [start, end, class]).
std::vector<VideoAnnotation> read_annotations(const std::string& path);
void write_annotations(const std::string& path, const std::vector<VideoAnnotation>& annotations);

// Vocabulary file: JSON object {"labels": [...], "normal_index": k}.
// Token sequences are filled in from tokenize() on load.
LabelVocabulary read_vocabulary(const std::string& path, int context_length);
void write_vocabulary(const std::string& path, const LabelVocabulary& vocab);

// A dataset split directory: <dir>/features/<video_id>.vadf + <dir>/annotations.jsonl.
// The vocabulary lives one level up as labels.json (shared across splits).
Dataset load_split(const std::string& split_dir, const LabelVocabulary& vocab);
void save_split(const std::string& split_dir, const std::vector<VideoRecord>& videos);

}  // namespace wsvad
