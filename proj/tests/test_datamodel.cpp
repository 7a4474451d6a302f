#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "wsvad/feature_io.hpp"
#include "wsvad/rng.hpp"
#include "wsvad/synthetic.hpp"

using namespace wsvad;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "wsvad_datamodel_test";
  fs::create_directories(dir);
  return dir;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("feature file round-trips bit-exactly") {
  const auto path = temp_dir() / "roundtrip.vadf";
  FeatureSequence seq;
  seq.video_id = "roundtrip";
  seq.features = MatF::Constant(3, 4, 1.0f);
  write_feature_file(path.string(), seq);
  FeatureSequence back = read_feature_file(path.string());
  CHECK(back.features.rows() == 3);
  CHECK(back.features.cols() == 4);
  CHECK((back.features - seq.features).norm() == 0.0f);
}

TEST_CASE("degenerate 1 x 512 zero matrix round-trips") {
  const auto path = temp_dir() / "degenerate.vadf";
  FeatureSequence seq;
  seq.video_id = "degenerate";
  seq.features = MatF::Zero(1, 512);
  write_feature_file(path.string(), seq);
  FeatureSequence back = read_feature_file(path.string());
  CHECK(back.features.rows() == 1);
  CHECK(back.features.cols() == 512);
  CHECK(std::memcmp(back.features.data(), seq.features.data(), 512 * sizeof(float)) == 0);
}

TEST_CASE("random payloads round-trip bit-exactly") {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 40));
    const int d = 1 + static_cast<int>(rng.uniform_int(0, 40));
    FeatureSequence seq;
    seq.video_id = "fuzz";
    seq.features.resize(n, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) seq.features(i, j) = static_cast<float>(rng.normal(0, 10));
    const auto path = temp_dir() / "fuzz.vadf";
    write_feature_file(path.string(), seq);
    FeatureSequence back = read_feature_file(path.string());
    CHECK(std::memcmp(back.features.data(), seq.features.data(),
                      static_cast<std::size_t>(n) * d * sizeof(float)) == 0);
  }
}

TEST_CASE("write is deterministic: identical input gives identical bytes") {
  FeatureSequence seq;
  seq.video_id = "determinism";
  Rng rng(5);
  seq.features.resize(7, 9);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 9; ++j) seq.features(i, j) = static_cast<float>(rng.normal());
  const auto p1 = temp_dir() / "det1.vadf";
  const auto p2 = temp_dir() / "det2.vadf";
  write_feature_file(p1.string(), seq);
  write_feature_file(p2.string(), seq);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("file size is header plus payload") {
  const auto path = temp_dir() / "size.vadf";
  FeatureSequence seq;
  seq.video_id = "size";
  seq.features = MatF::Zero(256, 512);
  write_feature_file(path.string(), seq);
  CHECK(fs::file_size(path) == kFeatureHeaderBytes + 256ull * 512ull * 4ull);
}

TEST_CASE("reader rejects each corruption mode with its own error") {
  const auto path = temp_dir() / "corrupt.vadf";
  FeatureSequence seq;
  seq.video_id = "corrupt";
  seq.features = MatF::Constant(2, 3, 0.5f);
  write_feature_file(path.string(), seq);
  auto bytes = slurp(path);

  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    bad[1] = 'X';
    bad[2] = 'X';
    bad[3] = 'X';
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bad.data(), bad.size());
    try {
      read_feature_file(path.string());
      FAIL("expected bad_magic");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::bad_magic);
    }
  }
  SUBCASE("version mismatch") {
    auto bad = bytes;
    bad[4] = 9;  // version u32 little-endian
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bad.data(), bad.size());
    try {
      read_feature_file(path.string());
      FAIL("expected version_mismatch");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::version_mismatch);
    }
  }
  SUBCASE("truncated payload") {
    auto bad = bytes;
    bad.resize(bad.size() - 5);
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bad.data(), bad.size());
    try {
      read_feature_file(path.string());
      FAIL("expected truncated");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::truncated);
    }
  }
  SUBCASE("non-finite payload") {
    auto bad = bytes;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bad.data() + kFeatureHeaderBytes, &nan, sizeof(nan));
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bad.data(), bad.size());
    try {
      read_feature_file(path.string());
      FAIL("expected non_finite");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::non_finite);
    }
  }
}

TEST_CASE("writer rejects NaN before touching the file") {
  const auto path = temp_dir() / "nan.vadf";
  fs::remove(path);
  FeatureSequence seq;
  seq.video_id = "nan";
  seq.features = MatF::Constant(2, 2, 1.0f);
  seq.features(1, 1) = std::numeric_limits<float>::quiet_NaN();
  try {
    write_feature_file(path.string(), seq);
    FAIL("expected non_finite");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_finite);
  }
  CHECK(!fs::exists(path));
}

TEST_CASE("annotations round-trip through the sidecar format") {
  const auto path = temp_dir() / "annotations.jsonl";
  std::vector<VideoAnnotation> anns(2);
  anns[0].video_id = "v0";
  anns[0].video_label = 0;
  anns[1].video_id = "v1";
  anns[1].video_label = 1;
  anns[1].class_names = {"fighting"};
  anns[1].gt_segments = {{3, 9, "fighting"}, {20, 25, "fighting"}};
  write_annotations(path.string(), anns);
  auto back = read_annotations(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].video_id == "v0");
  CHECK(back[1].gt_segments.size() == 2);
  CHECK(back[1].gt_segments[1].start == 20);
  CHECK(back[1].gt_segments[1].class_name == "fighting");
}

TEST_CASE("annotation invariants are enforced") {
  VideoAnnotation a;
  a.video_id = "bad";
  a.video_label = 1;  // y=1 but no classes
  CHECK_THROWS_AS(a.validate(), Error);
  a.class_names = {"riot"};
  a.validate();
  a.gt_segments = {{5, 5, "riot"}};  // empty interval
  CHECK_THROWS_AS(a.validate(), Error);
  a.gt_segments = {{5, 8, "abuse"}};  // class not in class_names
  CHECK_THROWS_AS(a.validate(), Error);
}

TEST_CASE("synthetic generation is deterministic per seed") {
  SyntheticSpec spec;
  spec.train_videos_per_class = 2;
  spec.test_videos_per_class = 1;
  spec.train_normal_videos = 3;
  spec.test_normal_videos = 2;
  auto a = generate_synthetic_dataset(spec, 7);
  auto b = generate_synthetic_dataset(spec, 7);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].features.video_id == b.train[i].features.video_id);
    CHECK((a.train[i].features.features - b.train[i].features.features).norm() == 0.0f);
  }
  auto c = generate_synthetic_dataset(spec, 8);
  CHECK((a.train[0].features.features - c.train[0].features.features).norm() != 0.0f);
}

TEST_CASE("synthetic counts and ground truth by construction") {
  SyntheticSpec spec;  // m=3, 8 videos/class, n=64, d=32 defaults
  auto ds = generate_synthetic_dataset(spec, 1);
  int abnormal_train = 0;
  for (const auto& rec : ds.train) abnormal_train += rec.annotation.video_label;
  CHECK(abnormal_train == 24);
  CHECK(ds.train.size() == 24 + 24);
  CHECK(ds.vocabulary.size() == 4);
  CHECK(ds.vocabulary.normal_label() == "normal");

  for (const auto& rec : ds.test) {
    if (rec.annotation.video_label == 1) CHECK(rec.annotation.gt_segments.size() >= 1);
    rec.annotation.validate(rec.features.frames());
    // segments inside [0, n) and non-overlapping within the video
    std::vector<std::pair<std::int64_t, std::int64_t>> spans;
    for (const auto& seg : rec.annotation.gt_segments) {
      CHECK(seg.start >= 0);
      CHECK(seg.end <= rec.features.frames());
      spans.emplace_back(seg.start, seg.end);
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) CHECK(spans[i - 1].second <= spans[i].first);
  }
}

TEST_CASE("margin zero makes class clusters coincide with the background") {
  SyntheticSpec spec;
  spec.margin = 0.0;
  spec.train_videos_per_class = 1;
  spec.test_videos_per_class = 1;
  spec.train_normal_videos = 1;
  spec.test_normal_videos = 1;
  auto flat = generate_synthetic_dataset(spec, 3);
  spec.margin = 2.0;
  auto split = generate_synthetic_dataset(spec, 3);
  // identical noise background; only burst frames move, and only with margin > 0
  for (std::size_t v = 0; v < flat.test.size(); ++v) {
    const auto& fa = flat.test[v];
    const auto& fb = split.test[v];
    for (Eigen::Index i = 0; i < fa.features.frames(); ++i) {
      bool in_burst = false;
      for (const auto& seg : fb.annotation.gt_segments)
        if (i >= seg.start && i < seg.end) in_burst = true;
      const float diff = (fa.features.features.row(i) - fb.features.features.row(i)).norm();
      if (in_burst)
        CHECK(diff == doctest::Approx(2.0f).epsilon(1e-4));
      else
        CHECK(diff == 0.0f);
    }
  }
}

TEST_CASE("invalid synthetic specs are rejected") {
  SyntheticSpec spec;
  spec.num_classes = 0;
  CHECK_THROWS_AS(generate_synthetic_dataset(spec, 1), Error);
  spec = SyntheticSpec{};
  spec.frames_per_video = 4;
  spec.burst_min_length = 8;
  CHECK_THROWS_AS(generate_synthetic_dataset(spec, 1), Error);
}

TEST_CASE("dataset splits save and load through the directory layout") {
  SyntheticSpec spec;
  spec.train_videos_per_class = 1;
  spec.test_videos_per_class = 1;
  spec.train_normal_videos = 2;
  spec.test_normal_videos = 1;
  spec.frames_per_video = 16;
  spec.dim = 8;
  spec.burst_min_length = 4;
  spec.burst_max_length = 6;
  auto ds = generate_synthetic_dataset(spec, 11);
  const auto root = temp_dir() / "dataset";
  fs::remove_all(root);
  write_synthetic_dataset(ds, root.string());

  LabelVocabulary vocab = read_vocabulary((root / "labels.json").string(), 20);
  CHECK(vocab.size() == ds.vocabulary.size());
  CHECK(vocab.context_length == 20);
  Dataset train = load_split((root / "train").string(), vocab);
  CHECK(train.videos.size() == ds.train.size());
  // features round-trip through the container
  for (std::size_t i = 0; i < train.videos.size(); ++i) {
    const auto& got = train.videos[i];
    for (const auto& orig : ds.train)
      if (orig.features.video_id == got.features.video_id)
        CHECK((orig.features.features - got.features.features).norm() == 0.0f);
  }
}
