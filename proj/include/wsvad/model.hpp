#pragma once

#include <memory>
#include <optional>
#include <string>

#include "wsvad/adapter.hpp"
#include "wsvad/text.hpp"
#include "wsvad/types.hpp"

namespace wsvad {

struct ModelFlags {
  bool c_branch = true;
  bool a_branch = true;
  bool learnable_prompt = true;
  bool visual_prompt = true;

  void validate() const {
    if (visual_prompt && !c_branch)
      throw Error(Errc::invalid_flags, "visual prompt needs the C-branch anomaly attention");
    if (!a_branch && (learnable_prompt || visual_prompt))
      throw Error(Errc::invalid_flags, "prompts only apply when the A-branch is enabled");
    if (!c_branch && !a_branch)
      throw Error(Errc::invalid_flags, "at least one branch must be enabled");
  }
};

struct ModelConfig {
  AdapterConfig adapter;
  ModelFlags flags;
  int token_dim = 64;
  std::uint64_t seed = 0;
  bool detach_visual_prompt = false;
  // Optional precomputed class embeddings (VADF with m rows). Loading them
  // replaces the text encoder, so the learnable prompt must be off.
  std::string class_embedding_file;
};

struct ModelOutput {
  Vec a;  // n x 1 anomaly confidence, empty when the C-branch is off
  Mat m;  // n x m alignment map, empty when the A-branch is off
  Mat x;  // n x d final visual features
  Mat t;  // m x d final class embeddings
};

// Adapter -> FC -> {C-branch anomaly head, A-branch alignment map}.
class DualBranchModel {
 public:
  DualBranchModel(const ModelConfig& cfg, const LabelVocabulary& vocab);

  struct ForwardVars {
    ad::Var x;  // n x d
    ad::Var a;  // n x 1 (invalid when C-branch off)
    ad::Var m;  // n x m (invalid when A-branch off)
    ad::Var t;      // m x d final class embeddings (invalid when A-branch off)
    ad::Var t_out;  // m x d pre-visual-prompt embeddings
  };

  // x_clip holds only the valid frames of a video (padding stripped upstream).
  ForwardVars forward(ad::Tape& tape, const Mat& x_clip) const;
  ModelOutput run(const Mat& x_clip) const;

  ad::ParameterStore& params() { return *store_; }
  const ad::ParameterStore& params() const { return *store_; }
  const ModelConfig& config() const { return cfg_; }
  const LabelVocabulary& vocabulary() const { return vocab_; }
  const TextEncoderInterface* encoder() const { return encoder_.get(); }

 private:
  ModelConfig cfg_;
  LabelVocabulary vocab_;
  std::unique_ptr<ad::ParameterStore> store_;
  std::unique_ptr<StubTextEncoder> encoder_;
  std::optional<Mat> file_embeddings_;  // set when class_embedding_file is used

  AdapterWeights adapter_w_;
  Linear proj_fc_;   // d -> d after the adapter
  Ffn c_ffn_;        // C-branch FFN
  Linear c_fc_;      // d -> 1
  PromptBank prompt_;
  Ffn visual_ffn_;
};

// M(i, j) = cosine(X[i], T[j]); raw cosine, no temperature.
Mat alignment_similarity(const Mat& x, const Mat& t);

}  // namespace wsvad
