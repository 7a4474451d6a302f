#include "wsvad/model.hpp"

#include "wsvad/feature_io.hpp"

namespace wsvad {

DualBranchModel::DualBranchModel(const ModelConfig& cfg, const LabelVocabulary& vocab)
    : cfg_(cfg), vocab_(vocab), store_(std::make_unique<ad::ParameterStore>()) {
  cfg_.adapter.validate();
  cfg_.flags.validate();
  vocab_.validate();
  if (!cfg_.class_embedding_file.empty() && cfg_.flags.learnable_prompt)
    throw Error(Errc::invalid_config,
                "precomputed class embeddings exclude the learnable prompt; disable it");

  const std::uint64_t seed = cfg_.seed;
  const int d = cfg_.adapter.dim;

  adapter_w_ = AdapterWeights::create(*store_, seed, cfg_.adapter);
  proj_fc_ = make_linear(*store_, seed, "proj_fc", d, d);

  if (cfg_.flags.c_branch) {
    c_ffn_ = make_ffn(*store_, seed, "c_branch.ffn", d);
    c_fc_ = make_linear(*store_, seed, "c_branch.fc", d, 1);
  }

  if (cfg_.flags.a_branch) {
    if (!cfg_.class_embedding_file.empty()) {
      FeatureSequence emb = read_feature_file(cfg_.class_embedding_file);
      if (emb.frames() != vocab_.size() || emb.dim() != d)
        throw Error(Errc::dimension_mismatch,
                    "class embedding file must be m x d for this vocabulary and model");
      file_embeddings_ = emb.as_double();
    } else {
      encoder_ = std::make_unique<StubTextEncoder>(seed, cfg_.token_dim, d);
      prompt_ = PromptBank::create(
          *store_, seed, vocab_, cfg_.token_dim,
          cfg_.flags.learnable_prompt ? PromptMode::learnable : PromptMode::hand_crafted);
    }
    if (cfg_.flags.visual_prompt) visual_ffn_ = make_ffn(*store_, seed, "visual_prompt.ffn", d);
  }
}

DualBranchModel::ForwardVars DualBranchModel::forward(ad::Tape& t, const Mat& x_clip) const {
  if (x_clip.rows() < 1) throw Error(Errc::shape_mismatch, "forward: empty input");
  if (x_clip.cols() != cfg_.adapter.dim)
    throw Error(Errc::dimension_mismatch, "forward: feature dim does not match the model");
  if (!x_clip.allFinite()) throw Error(Errc::non_finite, "forward: non-finite input features");

  ForwardVars out;
  ad::Var h = adapter_forward(t, t.constant(x_clip), cfg_.adapter, adapter_w_);
  out.x = proj_fc_.apply(t, h);

  if (cfg_.flags.c_branch) {
    ad::Var z = t.add(c_ffn_.apply(t, out.x), out.x);
    out.a = t.sigmoid(c_fc_.apply(t, z));
  }

  if (cfg_.flags.a_branch) {
    out.t_out = file_embeddings_ ? t.constant(*file_embeddings_)
                                 : encode_classes(t, prompt_, *encoder_);
    if (cfg_.flags.visual_prompt) {
      VisualPromptOptions opts;
      opts.detach_attention = cfg_.detach_visual_prompt;
      out.t = visual_prompt(t, out.a, out.x, out.t_out, visual_ffn_, opts);
    } else {
      out.t = out.t_out;
    }
    out.m = t.cosine_pairs(out.x, out.t);
  }
  return out;
}

ModelOutput DualBranchModel::run(const Mat& x_clip) const {
  ad::Tape t;
  ForwardVars v = forward(t, x_clip);
  ModelOutput out;
  out.x = t.value(v.x);
  if (v.a.valid()) out.a = t.value(v.a).col(0);
  if (v.m.valid()) out.m = t.value(v.m);
  if (v.t.valid()) out.t = t.value(v.t);
  return out;
}

Mat alignment_similarity(const Mat& x, const Mat& t) {
  ad::Tape tape;
  return tape.value(tape.cosine_pairs(tape.constant(x), tape.constant(t)));
}

}  // namespace wsvad
