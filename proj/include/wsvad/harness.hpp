#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "wsvad/losses.hpp"
#include "wsvad/metrics.hpp"
#include "wsvad/model.hpp"
#include "wsvad/synthetic.hpp"

namespace wsvad {

// Everything a run needs; serialized verbatim into the checkpoint.
struct RunConfig {
  std::string dataset_dir;                  // holds labels.json + train/ + test/
  std::optional<SyntheticSpec> synthetic;   // generated in memory when set
  AdapterConfig adapter;
  LossConfig loss;
  ModelFlags flags;
  int context_length = 20;
  int token_dim = 64;
  int input_cap = 256;
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  int batch_size = 8;
  int epochs = 20;
  std::uint64_t seed = 0;
  bool detach_visual_prompt = false;
  std::string class_embedding_file;
  std::string inference_path = "c_branch";
  double segment_threshold = 0.55;  // on [0,1]-mapped similarity
  int min_segment_length = 2;
  std::string init_checkpoint;  // resume parameters from a prior checkpoint

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

struct PaddedSequence {
  MatF features;                   // cap x d once padding/sampling applies
  std::vector<std::uint8_t> mask;  // 1 = valid, 0 = padded
  std::vector<std::int64_t> kept;  // original frame index per valid row
  int valid = 0;

  Mat valid_features() const {
    return features.topRows(valid).cast<double>();
  }
};

// n > cap: uniform temporal sampling down to cap rows. n < cap: zero-pad
// with an all-false tail mask. Masked frames never reach attention, Top-K,
// MIL-Align, or metrics (the pipeline operates on the valid prefix).
PaddedSequence pad_or_sample(const FeatureSequence& seq, int cap);

// --- checkpointing -------------------------------------------------------------

// Single container: magic "VADC", version, JSON manifest (config, vocabulary,
// epoch, encoder seed reference, tensor tab), float32 payloads in manifest
// order. Frozen encoder tensors are not stored; the seed regenerates them.
void save_checkpoint(const std::string& path, const DualBranchModel& model, const RunConfig& cfg,
                     int epoch);

struct Checkpoint {
  RunConfig config;
  LabelVocabulary vocabulary;
  int epoch = 0;
  std::unique_ptr<DualBranchModel> model;
};

Checkpoint load_checkpoint(const std::string& path);

// --- data ------------------------------------------------------------------------

struct LoadedData {
  Dataset train;
  Dataset test;
};

// Reads dataset_dir or generates the synthetic spec deterministically.
LoadedData load_data(const RunConfig& cfg);

// --- training -----------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double bce = 0.0;
  double nce = 0.0;
  double cts = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<double> step_losses;  // per optimizer step
  std::vector<EpochStats> epochs;
};

TrainResult train(const RunConfig& cfg, const std::string& out_dir);

// --- evaluation ------------------------------------------------------------------------

struct EvalOptions {
  int input_cap = 256;
  ScorePath path = ScorePath::c_branch;
  double segment_threshold = 0.55;  // mapped [0,1]
  int min_segment_length = 2;
  std::vector<double> iou_thresholds = default_iou_thresholds();
  std::string dump_dir;  // prediction dump + CSV artifacts when non-empty

  static EvalOptions from_config(const RunConfig& cfg);
};

EvaluationReport evaluate_model(const DualBranchModel& model,
                                const std::vector<VideoRecord>& videos, const EvalOptions& opts);

EvaluationReport evaluate_checkpoint(const std::string& checkpoint_path,
                                     const std::vector<VideoRecord>& videos,
                                     const EvalOptions& opts);

// --- gradient checking -----------------------------------------------------------------

struct GradCheckGroup {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double fd_norm = 0.0;
  bool no_gradient = false;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  bool all_pass = false;
  double seconds = 0.0;
};

// Central finite differences against analytic gradients on a tiny instance
// (2 videos, 6 frames, 3 classes, double precision), per parameter group.
GradCheckReport gradcheck(const RunConfig& cfg, double tolerance = 1e-4);

}  // namespace wsvad
