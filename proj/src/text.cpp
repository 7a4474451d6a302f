#include "wsvad/text.hpp"

#include <cstring>
#include <sstream>

namespace wsvad {

std::vector<int> tokenize(const std::string& label) {
  if (label.empty()) throw Error(Errc::empty_label, "cannot tokenize an empty label");
  std::vector<int> out;
  std::istringstream words(label);
  std::string word;
  bool any = false;
  while (words >> word) {
    any = true;
    for (unsigned char c : word) out.push_back(tokens::kByteOffset + static_cast<int>(c));
    out.push_back(tokens::kEndOfWord);
  }
  if (!any) throw Error(Errc::empty_label, "label has no words: '" + label + "'");
  return out;
}

// --- StubTextEncoder ----------------------------------------------------------

StubTextEncoder::StubTextEncoder(std::uint64_t seed, int token_dim, int output_dim, int max_len)
    : seed_(seed), token_dim_(token_dim), output_dim_(output_dim), max_len_(max_len) {
  if (token_dim < 1 || output_dim < 1 || max_len < 1)
    throw Error(Errc::invalid_config, "stub encoder dims must be positive");
  const double ws = 1.0 / std::sqrt(static_cast<double>(token_dim));
  auto mk = [&](const char* name, Eigen::Index r, Eigen::Index c, double stddev) {
    Rng rng = named_rng(seed, std::string("text_encoder.") + name);
    return random_matrix(rng, r, c, stddev);
  };
  embedding_ = mk("embedding", tokens::kVocabSize, token_dim, 0.02);
  positional_ = mk("positional", max_len, token_dim, 0.02);
  for (int l = 0; l < 2; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer& lay = layers_[l];
    lay.wq = mk((p + "wq").c_str(), token_dim, token_dim, ws);
    lay.wk = mk((p + "wk").c_str(), token_dim, token_dim, ws);
    lay.wv = mk((p + "wv").c_str(), token_dim, token_dim, ws);
    lay.wo = mk((p + "wo").c_str(), token_dim, token_dim, ws);
    lay.ffn_w1 = mk((p + "ffn_w1").c_str(), token_dim, 4 * token_dim, ws);
    lay.ffn_b1 = Mat::Zero(1, 4 * token_dim);
    lay.ffn_w2 = mk((p + "ffn_w2").c_str(), 4 * token_dim, token_dim,
                    1.0 / std::sqrt(4.0 * token_dim));
    lay.ffn_b2 = Mat::Zero(1, token_dim);
  }
  out_proj_ = mk("out_proj", token_dim, output_dim, ws);
}

Mat StubTextEncoder::embed_tokens(const std::vector<int>& token_ids) const {
  Mat out(static_cast<Eigen::Index>(token_ids.size()), token_dim_);
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    const int id = token_ids[i];
    if (id < 0 || id >= tokens::kVocabSize)
      throw Error(Errc::bad_format, "token id out of range: " + std::to_string(id));
    out.row(static_cast<Eigen::Index>(i)) = embedding_.row(id);
  }
  return out;
}

Mat StubTextEncoder::positional(int length) const {
  if (length > max_len_)
    throw Error(Errc::invalid_config,
                "prompted sequence longer than encoder maximum (" + std::to_string(length) + " > " +
                    std::to_string(max_len_) + ")");
  return positional_.topRows(length);
}

ad::Var StubTextEncoder::encode(ad::Tape& t, ad::Var input_rows) const {
  if (t.value(input_rows).cols() != token_dim_)
    throw Error(Errc::dimension_mismatch, "encoder input token dim mismatch");
  ad::Var h = input_rows;
  for (const Layer& lay : layers_) {
    ad::Var a = frozen_attention(t, t.layer_norm_rows(h), lay.wq, lay.wk, lay.wv, lay.wo);
    h = t.add(h, a);
    ad::Var z = t.layer_norm_rows(h);
    z = t.add_row_broadcast(t.matmul(z, t.constant(lay.ffn_w1)), t.constant(lay.ffn_b1));
    z = t.gelu(z);
    z = t.add_row_broadcast(t.matmul(z, t.constant(lay.ffn_w2)), t.constant(lay.ffn_b2));
    h = t.add(h, z);
  }
  return t.matmul(t.mean_rows(h), t.constant(out_proj_));
}

std::vector<std::uint8_t> StubTextEncoder::parameter_bytes() const {
  std::vector<std::uint8_t> out;
  auto append = [&](const Mat& m) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
    out.insert(out.end(), p, p + m.size() * sizeof(double));
  };
  append(embedding_);
  append(positional_);
  for (const Layer& lay : layers_) {
    append(lay.wq);
    append(lay.wk);
    append(lay.wv);
    append(lay.wo);
    append(lay.ffn_w1);
    append(lay.ffn_b1);
    append(lay.ffn_w2);
    append(lay.ffn_b2);
  }
  append(out_proj_);
  return out;
}

// --- prompting --------------------------------------------------------------

PromptBank PromptBank::create(ad::ParameterStore& store, std::uint64_t seed,
                              const LabelVocabulary& vocab, int token_dim, PromptMode mode) {
  PromptBank bank;
  bank.mode = mode;
  bank.context_length = mode == PromptMode::learnable ? vocab.context_length : 0;
  if (mode == PromptMode::learnable && bank.context_length > 0)
    bank.context = &add_param(store, seed, "prompt.context", bank.context_length, token_dim, 0.02);
  for (const auto& label : vocab.labels) bank.class_tokens.push_back(tokenize(label));
  return bank;
}

ad::Var build_prompted_sequence(ad::Tape& t, const PromptBank& bank, int label_index,
                                const TextEncoderInterface& encoder) {
  if (label_index < 0 || label_index >= static_cast<int>(bank.class_tokens.size()))
    throw Error(Errc::invalid_config, "label index out of range");

  std::vector<ad::Var> parts;
  int length = 0;
  if (bank.mode == PromptMode::hand_crafted) {
    std::vector<int> ids = tokenize(kHandCraftedTemplate);
    const auto& cls = bank.class_tokens[label_index];
    ids.insert(ids.end(), cls.begin(), cls.end());
    parts.push_back(t.constant(encoder.embed_tokens(ids)));
    length = static_cast<int>(ids.size());
  } else {
    const int l = bank.context_length;
    const int front = (l + 1) / 2;
    ad::Var ctx;
    if (l > 0) ctx = t.leaf(*bank.context);
    if (front > 0) parts.push_back(t.slice_rows(ctx, 0, front));
    parts.push_back(t.constant(encoder.embed_tokens(bank.class_tokens[label_index])));
    if (l - front > 0) parts.push_back(t.slice_rows(ctx, front, l - front));
    length = l + static_cast<int>(bank.class_tokens[label_index].size());
  }
  ad::Var seq = parts.size() == 1 ? parts[0] : t.vconcat(parts);
  return t.add(seq, t.constant(encoder.positional(length)));
}

ad::Var encode_classes(ad::Tape& t, const PromptBank& bank, const TextEncoderInterface& encoder) {
  std::vector<ad::Var> rows;
  for (std::size_t i = 0; i < bank.class_tokens.size(); ++i)
    rows.push_back(
        encoder.encode(t, build_prompted_sequence(t, bank, static_cast<int>(i), encoder)));
  return t.vconcat(rows);
}

ad::Var anomaly_weighted_pool(ad::Tape& t, ad::Var anomaly, ad::Var features, double eps) {
  const Eigen::Index n = t.value(features).rows();
  if (t.value(anomaly).rows() != n || t.value(anomaly).cols() != 1)
    throw Error(Errc::shape_mismatch, "anomaly_weighted_pool: attention must be n x 1");
  ad::Var pooled = t.matmul(t.transpose(anomaly), features);  // 1 x d
  ad::Var denom = t.add_const(t.sum_all(anomaly), eps);
  return t.l2_normalize_rows(t.div_by_scalar(pooled, denom));
}

ad::Var visual_prompt(ad::Tape& t, ad::Var anomaly, ad::Var features, ad::Var t_out,
                      const Ffn& ffn, const VisualPromptOptions& opts) {
  ad::Var att = anomaly;
  if (opts.average_frame) {
    const Eigen::Index n = t.value(features).rows();
    att = t.constant(Mat::Constant(n, 1, 1.0 / static_cast<double>(n)));
  } else if (opts.detach_attention) {
    att = t.stop_gradient(anomaly);
  }
  ad::Var v = anomaly_weighted_pool(t, att, features, opts.eps);
  ad::Var base = t.add_row_broadcast(t_out, v);
  return t.add(ffn.apply(t, base), t_out);
}

}  // namespace wsvad
