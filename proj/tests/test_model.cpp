#include <doctest.h>

#include <filesystem>

#include "wsvad/feature_io.hpp"
#include "wsvad/model.hpp"
#include "wsvad/rng.hpp"

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

ModelConfig small_config(std::uint64_t seed = 5) {
  ModelConfig mc;
  mc.adapter.dim = 8;
  mc.adapter.window_length = 4;
  mc.token_dim = 12;
  mc.seed = seed;
  return mc;
}

Mat random_input(int n, int d, std::uint64_t seed = 50) {
  Rng rng = named_rng(seed, "input");
  return random_matrix(rng, n, d, 1.0);
}

}  // namespace

TEST_CASE("forward produces consistent shapes deterministically") {
  auto vocab = small_vocab();
  DualBranchModel m1(small_config(), vocab), m2(small_config(), vocab);
  Mat x = random_input(4, 8);

  ModelOutput o1 = m1.run(x), o2 = m2.run(x);
  CHECK(o1.a.size() == 4);
  CHECK(o1.m.rows() == 4);
  CHECK(o1.m.cols() == 3);
  CHECK(o1.x.rows() == 4);
  CHECK(o1.x.cols() == 8);
  CHECK(o1.t.rows() == 3);
  CHECK((o1.a - o2.a).norm() == 0.0);
  CHECK((o1.m - o2.m).norm() == 0.0);

  for (Eigen::Index i = 0; i < o1.a.size(); ++i) {
    CHECK(o1.a(i) >= 0.0);
    CHECK(o1.a(i) <= 1.0);
  }
  CHECK(o1.m.maxCoeff() <= 1.0 + 1e-12);
  CHECK(o1.m.minCoeff() >= -1.0 - 1e-12);
}

TEST_CASE("zeroed C-branch head gives 0.5 confidence everywhere") {
  auto vocab = small_vocab();
  DualBranchModel model(small_config(), vocab);
  auto& store = model.params();
  store.at("c_branch.fc.w").value.setZero();
  store.at("c_branch.fc.b").value.setZero();
  ModelOutput out = model.run(random_input(5, 8));
  for (Eigen::Index i = 0; i < out.a.size(); ++i) CHECK(out.a(i) == doctest::Approx(0.5));
}

TEST_CASE("duplicate frames produce equal alignment rows") {
  // The distance adjacency is position-dependent by construction, so equal
  // content only maps to equal rows when the GCN stage is off. Attention over
  // a shared window, the FC, and both heads are row-pure.
  auto vocab = small_vocab();
  ModelConfig mc = small_config();
  mc.adapter.window_length = 16;  // one window: rows i=j see identical context
  mc.adapter.use_gcn = false;
  DualBranchModel model(mc, vocab);
  Mat x = random_input(5, 8);
  x.row(2) = x.row(4);
  ModelOutput out = model.run(x);
  CHECK((out.m.row(2) - out.m.row(4)).norm() < 1e-12);
  CHECK(std::abs(out.a(2) - out.a(4)) < 1e-12);

  // full model: forward stays a pure function of its input
  DualBranchModel full(small_config(), vocab);
  ModelOutput o1 = full.run(x), o2 = full.run(x);
  CHECK((o1.m - o2.m).norm() == 0.0);
}

TEST_CASE("alignment similarity: cosine identities and brute-force oracle") {
  Mat x(2, 4), t(2, 4);
  x << 1, 0, 0, 0, 0, 1, 0, 0;
  t << 2, 0, 0, 0, 0, 0, 3, 0;
  Mat m = alignment_similarity(x, t);
  CHECK(m(0, 0) == doctest::Approx(1.0));  // parallel
  CHECK(m(0, 1) == doctest::Approx(0.0));  // orthogonal
  CHECK(m(1, 0) == doctest::Approx(0.0));

  Rng rng = named_rng(60, "oracle");
  Mat xr = random_matrix(rng, 5, 7, 1.0);
  Mat tr = random_matrix(rng, 2, 7, 1.0);
  Mat got = alignment_similarity(xr, tr);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 2; ++j) {
      const double expected = xr.row(i).dot(tr.row(j)) / (xr.row(i).norm() * tr.row(j).norm());
      CHECK(got(i, j) == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("A-branch off reproduces the C-only model bit for bit") {
  auto vocab = small_vocab();
  ModelConfig full = small_config(9);
  ModelConfig c_only = small_config(9);
  c_only.flags.a_branch = false;
  c_only.flags.learnable_prompt = false;
  c_only.flags.visual_prompt = false;

  DualBranchModel m_full(full, vocab), m_c(c_only, vocab);
  Mat x = random_input(6, 8);
  ModelOutput of = m_full.run(x), oc = m_c.run(x);
  CHECK((of.a - oc.a).norm() == 0.0);
  CHECK(oc.m.size() == 0);
}

TEST_CASE("flag combinations are validated") {
  ModelFlags f;
  f.c_branch = false;
  f.visual_prompt = true;
  CHECK_THROWS_AS(f.validate(), Error);

  f = ModelFlags{};
  f.a_branch = false;
  f.learnable_prompt = true;
  CHECK_THROWS_AS(f.validate(), Error);

  f = ModelFlags{};
  f.c_branch = false;
  f.a_branch = false;
  CHECK_THROWS_AS(f.validate(), Error);

  // A-branch alone (no prompts) is a legal Table-style ablation
  f = ModelFlags{};
  f.c_branch = false;
  f.learnable_prompt = false;
  f.visual_prompt = false;
  f.validate();
}

TEST_CASE("precomputed class embeddings replace the text encoder") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "wsvad_model_test";
  fs::create_directories(dir);
  const auto path = (dir / "класс.vadf").string();

  auto vocab = small_vocab();
  Rng rng = named_rng(70, "emb");
  FeatureSequence emb;
  emb.video_id = "emb";
  emb.features = random_matrix(rng, 3, 8, 1.0).cast<float>();
  write_feature_file(path, emb);

  ModelConfig mc = small_config();
  mc.class_embedding_file = path;
  mc.flags.learnable_prompt = true;
  CHECK_THROWS_AS(DualBranchModel(mc, vocab), Error);

  mc.flags.learnable_prompt = false;
  DualBranchModel model(mc, vocab);
  CHECK(model.encoder() == nullptr);
  ModelOutput out = model.run(random_input(4, 8));
  CHECK(out.m.cols() == 3);

  // wrong row count rejected
  emb.features = random_matrix(rng, 2, 8, 1.0).cast<float>();
  write_feature_file(path, emb);
  CHECK_THROWS_AS(DualBranchModel(mc, vocab), Error);
}

TEST_CASE("dimension and finiteness guards") {
  auto vocab = small_vocab();
  DualBranchModel model(small_config(), vocab);
  CHECK_THROWS_AS(model.run(random_input(4, 6)), Error);  // wrong d
  Mat bad = random_input(4, 8);
  bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(model.run(bad), Error);
}

TEST_CASE("visual prompt off makes T equal t_out") {
  auto vocab = small_vocab();
  ModelConfig mc = small_config();
  mc.flags.visual_prompt = false;
  DualBranchModel model(mc, vocab);
  Mat x = random_input(4, 8);
  ad::Tape t;
  auto vars = model.forward(t, x);
  CHECK((t.value(vars.t) - t.value(vars.t_out)).norm() == 0.0);
}
