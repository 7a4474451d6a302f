#include <doctest.h>

#include "wsvad/rng.hpp"
#include "wsvad/text.hpp"

using namespace wsvad;

namespace {

LabelVocabulary small_vocab() {
  LabelVocabulary v;
  v.labels = {"normal", "fighting", "riot"};
  v.normal_index = 0;
  v.context_length = 4;
  for (const auto& l : v.labels) v.token_ids.push_back(tokenize(l));
  return v;
}

}  // namespace

TEST_CASE("tokenize: deterministic, injective, compositional") {
  CHECK(tokenize("fighting") == tokenize("fighting"));
  CHECK(tokenize("riot") != tokenize("abuse"));

  auto multi = tokenize("road accident");
  auto road = tokenize("road");
  auto accident = tokenize("accident");
  std::vector<int> joined = road;
  joined.insert(joined.end(), accident.begin(), accident.end());
  CHECK(multi == joined);

  CHECK_THROWS_AS(tokenize(""), Error);
  CHECK_THROWS_AS(tokenize("   "), Error);

  // end-of-word markers make the scheme injective across word boundaries
  CHECK(tokenize("roadaccident") != tokenize("road accident"));
}

TEST_CASE("stub encoder is deterministic per seed and frozen") {
  StubTextEncoder a(42, 16, 8), b(42, 16, 8), c(43, 16, 8);
  CHECK(a.parameter_bytes() == b.parameter_bytes());
  CHECK(a.parameter_bytes() != c.parameter_bytes());

  auto toks = tokenize("fighting");
  ad::Tape t;
  ad::Var in1 = t.add(t.constant(a.embed_tokens(toks)),
                      t.constant(a.positional(static_cast<int>(toks.size()))));
  ad::Var in2 = t.add(t.constant(b.embed_tokens(toks)),
                      t.constant(b.positional(static_cast<int>(toks.size()))));
  Mat o1 = t.value(a.encode(t, in1));
  Mat o2 = t.value(b.encode(t, in2));
  CHECK((o1 - o2).norm() == 0.0);
  CHECK(o1.cols() == 8);
}

TEST_CASE("prompted sequence splits context around the class tokens") {
  auto vocab = small_vocab();
  StubTextEncoder enc(1, 8, 6);
  ad::ParameterStore store;

  SUBCASE("even context length") {
    vocab.context_length = 2;
    PromptBank bank = PromptBank::create(store, 1, vocab, 8, PromptMode::learnable);
    ad::Tape t;
    ad::Var seq = build_prompted_sequence(t, bank, 1, enc);
    const auto& cls = bank.class_tokens[1];
    const int expected_len = 2 + static_cast<int>(cls.size());
    REQUIRE(t.value(seq).rows() == expected_len);
    // subtract positions: rows are [c1, t_init..., c2]
    Mat body = t.value(seq) - enc.positional(expected_len);
    CHECK((body.row(0) - bank.context->value.row(0)).norm() < 1e-12);
    CHECK((body.row(expected_len - 1) - bank.context->value.row(1)).norm() < 1e-12);
    Mat emb = enc.embed_tokens(cls);
    for (int i = 0; i < static_cast<int>(cls.size()); ++i)
      CHECK((body.row(1 + i) - emb.row(i)).norm() < 1e-12);
  }

  SUBCASE("odd context length puts the extra token in front") {
    vocab.context_length = 5;
    PromptBank bank = PromptBank::create(store, 1, vocab, 8, PromptMode::learnable);
    ad::Tape t;
    ad::Var seq = build_prompted_sequence(t, bank, 2, enc);
    const auto& cls = bank.class_tokens[2];
    const int len = 5 + static_cast<int>(cls.size());
    Mat body = t.value(seq) - enc.positional(len);
    for (int i = 0; i < 3; ++i)  // ceil(5/2) = 3 in front
      CHECK((body.row(i) - bank.context->value.row(i)).norm() < 1e-12);
    Mat emb = enc.embed_tokens(cls);
    CHECK((body.row(3) - emb.row(0)).norm() < 1e-12);
  }

  SUBCASE("hand-crafted mode wraps the fixed template") {
    PromptBank bank = PromptBank::create(store, 1, vocab, 8, PromptMode::hand_crafted);
    CHECK(bank.context == nullptr);
    ad::Tape t;
    ad::Var seq = build_prompted_sequence(t, bank, 1, enc);
    auto tmpl = tokenize(kHandCraftedTemplate);
    auto cls = bank.class_tokens[1];
    const int len = static_cast<int>(tmpl.size() + cls.size());
    REQUIRE(t.value(seq).rows() == len);
    Mat body = t.value(seq) - enc.positional(len);
    std::vector<int> all = tmpl;
    all.insert(all.end(), cls.begin(), cls.end());
    CHECK((body - enc.embed_tokens(all)).norm() < 1e-12);
  }
}

TEST_CASE("encode_classes: determinism and purity") {
  auto vocab = small_vocab();
  StubTextEncoder enc(9, 12, 8, 64);
  ad::ParameterStore s1, s2;
  PromptBank b1 = PromptBank::create(s1, 5, vocab, 12, PromptMode::learnable);
  PromptBank b2 = PromptBank::create(s2, 5, vocab, 12, PromptMode::learnable);

  ad::Tape t1, t2;
  Mat o1 = t1.value(encode_classes(t1, b1, enc));
  Mat o2 = t2.value(encode_classes(t2, b2, enc));
  CHECK((o1 - o2).norm() == 0.0);
  CHECK(o1.rows() == 3);
  CHECK(o1.cols() == 8);

  // identical token sequences with shared context give identical rows
  PromptBank dup = b1;
  dup.class_tokens.push_back(dup.class_tokens[1]);
  ad::Tape t3;
  Mat o3 = t3.value(encode_classes(t3, dup, enc));
  CHECK((o3.row(1) - o3.row(3)).norm() == 0.0);
}

TEST_CASE("perturbing a shared context token moves every class embedding") {
  auto vocab = small_vocab();
  StubTextEncoder enc(9, 12, 8, 64);
  ad::ParameterStore store;
  PromptBank bank = PromptBank::create(store, 5, vocab, 12, PromptMode::learnable);

  ad::Tape t;
  Mat base = t.value(encode_classes(t, bank, enc));
  bank.context->value(0, 3) += 0.05;
  ad::Tape t2;
  Mat moved = t2.value(encode_classes(t2, bank, enc));
  for (int r = 0; r < base.rows(); ++r) CHECK((base.row(r) - moved.row(r)).norm() > 1e-9);
}

TEST_CASE("gradients reach the context tokens through the frozen encoder") {
  auto vocab = small_vocab();
  StubTextEncoder enc(9, 12, 8, 64);
  ad::ParameterStore store;
  PromptBank bank = PromptBank::create(store, 5, vocab, 12, PromptMode::learnable);

  ad::Tape t;
  ad::Var t_out = encode_classes(t, bank, enc);
  ad::Var loss = t.sum_all(t.cwise_mul(t_out, t_out));
  store.zero_grad();
  t.backward(loss);
  CHECK(bank.context->grad.norm() > 0.0);

  // frozen bytes unchanged by the traversal
  StubTextEncoder fresh(9, 12, 8, 64);
  CHECK(enc.parameter_bytes() == fresh.parameter_bytes());
}

TEST_CASE("anomaly-weighted pool: guard, one-hot, uniform") {
  Rng rng = named_rng(31, "x");
  Mat x = random_matrix(rng, 5, 6, 1.0);

  SUBCASE("zero attention gives the zero vector") {
    ad::Tape t;
    ad::Var v = anomaly_weighted_pool(t, t.constant(Mat::Zero(5, 1)), t.constant(x), 1e-8);
    CHECK(t.value(v).norm() == 0.0);
  }
  SUBCASE("one-hot attention gives the normalized frame") {
    Mat a = Mat::Zero(5, 1);
    a(3, 0) = 1.0;
    ad::Tape t;
    ad::Var v = anomaly_weighted_pool(t, t.constant(a), t.constant(x), 1e-8);
    Mat expected = x.row(3) / x.row(3).norm();
    CHECK((t.value(v) - expected).norm() < 1e-7);
  }
  SUBCASE("uniform attention over identical rows gives the normalized row") {
    Mat same = x.row(0).replicate(5, 1);
    Mat a = Mat::Constant(5, 1, 1.0 / 5.0);
    ad::Tape t;
    ad::Var v = anomaly_weighted_pool(t, t.constant(a), t.constant(same), 1e-8);
    Mat expected = x.row(0) / x.row(0).norm();
    CHECK((t.value(v) - expected).norm() < 1e-7);
  }
}

TEST_CASE("visual prompt: zero attention reduces to FFN(t_out) + t_out") {
  Rng rng = named_rng(32, "x");
  const int d = 6, m = 3, n = 4;
  Mat x = random_matrix(rng, n, d, 1.0);
  Mat t_out_v = random_matrix(rng, m, d, 1.0);
  ad::ParameterStore store;
  Ffn ffn = make_ffn(store, 3, "vp", d);

  ad::Tape t;
  VisualPromptOptions opts;
  ad::Var got = visual_prompt(t, t.constant(Mat::Zero(n, 1)), t.constant(x),
                              t.constant(t_out_v), ffn, opts);
  ad::Var expected = t.add(ffn.apply(t, t.constant(t_out_v)), t.constant(t_out_v));
  CHECK((t.value(got) - t.value(expected)).norm() < 1e-12);
}

TEST_CASE("visual prompt is invariant to matched frame permutations") {
  Rng rng = named_rng(34, "x");
  const int d = 5, m = 2, n = 6;
  Mat x = random_matrix(rng, n, d, 1.0);
  Mat a(n, 1);
  for (int i = 0; i < n; ++i) a(i, 0) = rng.uniform();
  Mat t_out_v = random_matrix(rng, m, d, 1.0);
  ad::ParameterStore store;
  Ffn ffn = make_ffn(store, 4, "vp", d);

  std::vector<int> perm = {4, 2, 0, 5, 1, 3};
  Mat xp(n, d), ap(n, 1);
  for (int i = 0; i < n; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    ap(i, 0) = a(perm[static_cast<std::size_t>(i)], 0);
  }

  VisualPromptOptions opts;
  ad::Tape t;
  Mat t1 = t.value(
      visual_prompt(t, t.constant(a), t.constant(x), t.constant(t_out_v), ffn, opts));
  Mat t2 = t.value(
      visual_prompt(t, t.constant(ap), t.constant(xp), t.constant(t_out_v), ffn, opts));
  CHECK((t1 - t2).norm() < 1e-12);
}

TEST_CASE("average-frame ablation replaces attention with uniform weights") {
  Rng rng = named_rng(35, "x");
  const int d = 5, m = 2, n = 4;
  Mat x = random_matrix(rng, n, d, 1.0);
  Mat a(n, 1);
  for (int i = 0; i < n; ++i) a(i, 0) = rng.uniform();
  Mat t_out_v = random_matrix(rng, m, d, 1.0);
  ad::ParameterStore store;
  Ffn ffn = make_ffn(store, 6, "vp", d);

  VisualPromptOptions avg;
  avg.average_frame = true;
  ad::Tape t;
  Mat got = t.value(
      visual_prompt(t, t.constant(a), t.constant(x), t.constant(t_out_v), ffn, avg));
  Mat uniform = Mat::Constant(n, 1, 1.0 / n);
  VisualPromptOptions plain;
  Mat expected = t.value(
      visual_prompt(t, t.constant(uniform), t.constant(x), t.constant(t_out_v), ffn, plain));
  CHECK((got - expected).norm() == 0.0);
}

TEST_CASE("detach flag blocks gradients through the attention path") {
  Rng rng = named_rng(36, "x");
  const int d = 4, m = 2, n = 3;
  Mat x = random_matrix(rng, n, d, 1.0);
  Mat t_out_v = random_matrix(rng, m, d, 1.0);
  ad::ParameterStore store;
  Ffn ffn = make_ffn(store, 6, "vp", d);
  ad::Parameter& a_param = store.add("a", Mat::Constant(n, 1, 0.4));

  auto grad_norm = [&](bool detach) {
    VisualPromptOptions opts;
    opts.detach_attention = detach;
    ad::Tape t;
    ad::Var tv = visual_prompt(t, t.leaf(a_param), t.constant(x), t.constant(t_out_v), ffn, opts);
    store.zero_grad();
    t.backward(t.sum_all(t.cwise_mul(tv, tv)));
    return a_param.grad.norm();
  };
  CHECK(grad_norm(false) > 0.0);
  CHECK(grad_norm(true) == 0.0);
}

TEST_CASE("sequence length beyond the encoder maximum is rejected") {
  StubTextEncoder enc(1, 8, 4, /*max_len=*/10);
  CHECK_THROWS_AS(enc.positional(11), Error);
}
