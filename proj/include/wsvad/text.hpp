#pragma once

#include <memory>
#include <string>
#include <vector>

#include "wsvad/autodiff.hpp"
#include "wsvad/layers.hpp"
#include "wsvad/types.hpp"

namespace wsvad {

// Byte-level word-piece scheme: each word maps to its byte values (offset by
// kByteOffset) followed by an end-of-word marker; a multi-word label is the
// concatenation of its per-word sequences. Injective on arbitrary strings.
namespace tokens {
inline constexpr int kEndOfWord = 1;
inline constexpr int kByteOffset = 2;
inline constexpr int kVocabSize = 2 + 256;
}  // namespace tokens

std::vector<int> tokenize(const std::string& label);

enum class PromptMode { learnable, hand_crafted };

// Fixed template wrapped around the class tokens in hand-crafted mode.
inline constexpr const char* kHandCraftedTemplate = "a video of";

// Frozen text encoder contract: parameters never update, outputs are
// deterministic, and encode() is differentiable with respect to its input
// rows so gradients reach the learnable context tokens.
class TextEncoderInterface {
 public:
  virtual ~TextEncoderInterface() = default;
  virtual int token_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual int max_sequence_length() const = 0;
  virtual Mat embed_tokens(const std::vector<int>& token_ids) const = 0;
  virtual Mat positional(int length) const = 0;
  // input_rows: (len x token_dim) with positional embeddings already added.
  // Returns 1 x output_dim.
  virtual ad::Var encode(ad::Tape& tape, ad::Var input_rows) const = 0;
  // Byte image of every frozen tensor, for frozen-contract checks.
  virtual std::vector<std::uint8_t> parameter_bytes() const = 0;
};

// Seeded, randomly initialized, permanently frozen 2-layer transformer
// encoder (pre-norm, single head) over token embeddings; mean-pooled output
// projected to output_dim. Checkpoints reference it by seed only.
class StubTextEncoder : public TextEncoderInterface {
 public:
  StubTextEncoder(std::uint64_t seed, int token_dim, int output_dim, int max_len = 128);

  int token_dim() const override { return token_dim_; }
  int output_dim() const override { return output_dim_; }
  int max_sequence_length() const override { return max_len_; }
  Mat embed_tokens(const std::vector<int>& token_ids) const override;
  Mat positional(int length) const override;
  ad::Var encode(ad::Tape& tape, ad::Var input_rows) const override;
  std::vector<std::uint8_t> parameter_bytes() const override;
  std::uint64_t seed() const { return seed_; }

 private:
  struct Layer {
    Mat wq, wk, wv, wo;
    Mat ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  std::uint64_t seed_;
  int token_dim_, output_dim_, max_len_;
  Mat embedding_;   // vocab x token_dim
  Mat positional_;  // max_len x token_dim
  Layer layers_[2];
  Mat out_proj_;  // token_dim x output_dim
};

// Learnable context tokens shared across labels plus per-label class tokens.
struct PromptBank {
  PromptMode mode = PromptMode::learnable;
  int context_length = 20;
  ad::Parameter* context = nullptr;            // l x token_dim; null in hand_crafted mode
  std::vector<std::vector<int>> class_tokens;  // t_init per label

  static PromptBank create(ad::ParameterStore& store, std::uint64_t seed,
                           const LabelVocabulary& vocab, int token_dim, PromptMode mode);
};

// Token-embedding sequence for one label: context split around the class
// tokens (extra context token in front for odd l), positions added last.
ad::Var build_prompted_sequence(ad::Tape& tape, const PromptBank& bank, int label_index,
                                const TextEncoderInterface& encoder);

// One encoder pass per label -> t_out (m x d).
ad::Var encode_classes(ad::Tape& tape, const PromptBank& bank, const TextEncoderInterface& encoder);

struct VisualPromptOptions {
  bool detach_attention = false;  // stop gradients flowing through A
  bool average_frame = false;     // replace A with uniform weights (ablation)
  double eps = 1e-8;
};

// V = l2(A^T X / (sum A + eps)), the anomaly-weighted video-level prompt.
ad::Var anomaly_weighted_pool(ad::Tape& tape, ad::Var anomaly, ad::Var features, double eps);

// T = FFN(t_out + V) + t_out with V broadcast onto every class row.
ad::Var visual_prompt(ad::Tape& tape, ad::Var anomaly, ad::Var features, ad::Var t_out,
                      const Ffn& ffn, const VisualPromptOptions& opts);

}  // namespace wsvad
