#include "wsvad/synthetic.hpp"

#include <algorithm>
#include <filesystem>

#include "wsvad/feature_io.hpp"
#include "wsvad/rng.hpp"
#include "wsvad/text.hpp"

namespace wsvad {

namespace fs = std::filesystem;

namespace {

const char* kClassNames[] = {"fighting", "shooting", "explosion",
                             "riot",     "abuse",    "road accident"};

std::string class_label(int index) {
  if (index < static_cast<int>(std::size(kClassNames))) return kClassNames[index];
  return "anomaly " + std::to_string(index);
}

Vec unit_direction(std::uint64_t seed, int class_index, int dim) {
  Rng rng = named_rng(seed, "class_dir." + std::to_string(class_index));
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  const double n = v.norm();
  return n > 0 ? Vec(v / n) : Vec(Vec::Unit(dim, 0));
}

MatF noise_frames(Rng& rng, int n, int dim, double noise) {
  Mat m(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = rng.normal(0.0, noise);
  return m.cast<float>();
}

// One burst per equal chunk of the video: non-overlapping by construction.
std::vector<GtSegment> place_bursts(Rng& rng, const SyntheticSpec& spec,
                                    const std::string& class_name) {
  const int n = spec.frames_per_video;
  const int count =
      static_cast<int>(rng.uniform_int(spec.min_bursts, spec.max_bursts));
  std::vector<GtSegment> out;
  const int chunk = n / count;
  for (int b = 0; b < count; ++b) {
    const int lo = b * chunk;
    const int hi = (b == count - 1) ? n : (b + 1) * chunk;
    const int max_len = std::min(spec.burst_max_length, hi - lo);
    const int min_len = std::min(spec.burst_min_length, max_len);
    const int len = static_cast<int>(rng.uniform_int(min_len, max_len));
    const int start = static_cast<int>(rng.uniform_int(lo, hi - len));
    out.push_back({start, start + len, class_name});
  }
  return out;
}

VideoRecord make_normal(const SyntheticSpec& spec, std::uint64_t seed, const std::string& id) {
  Rng rng = named_rng(seed, "video." + id);
  VideoRecord rec;
  rec.features.video_id = id;
  rec.features.features = noise_frames(rng, spec.frames_per_video, spec.dim, spec.noise);
  rec.annotation.video_id = id;
  rec.annotation.video_label = 0;
  return rec;
}

VideoRecord make_abnormal(const SyntheticSpec& spec, std::uint64_t seed, const std::string& id,
                          int class_index, const Vec& direction, bool with_gt) {
  Rng rng = named_rng(seed, "video." + id);
  VideoRecord rec;
  rec.features.video_id = id;
  rec.features.features = noise_frames(rng, spec.frames_per_video, spec.dim, spec.noise);
  const std::string label = class_label(class_index);
  auto segments = place_bursts(rng, spec, label);
  const Vec offset = spec.margin * direction;
  for (const auto& seg : segments)
    for (std::int64_t f = seg.start; f < seg.end; ++f)
      rec.features.features.row(f) += offset.cast<float>().transpose();
  rec.annotation.video_id = id;
  rec.annotation.video_label = 1;
  rec.annotation.class_names = {label};
  if (with_gt) rec.annotation.gt_segments = std::move(segments);
  return rec;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 1) throw Error(Errc::invalid_config, "synthetic spec needs >= 1 class");
  if (dim < 1 || frames_per_video < 1)
    throw Error(Errc::invalid_config, "synthetic spec needs positive dim and frame count");
  if (burst_min_length < 1 || burst_min_length > burst_max_length)
    throw Error(Errc::invalid_config, "bad burst length range");
  if (min_bursts < 1 || min_bursts > max_bursts)
    throw Error(Errc::invalid_config, "bad burst count range");
  if (frames_per_video / max_bursts < 1 || frames_per_video < burst_min_length)
    throw Error(Errc::invalid_config, "video too short for the requested bursts");
  if (margin < 0.0 || noise < 0.0) throw Error(Errc::invalid_config, "margin/noise must be >= 0");
  if (train_videos_per_class < 0 || test_videos_per_class < 0 || train_normal_videos < 0 ||
      test_normal_videos < 0)
    throw Error(Errc::invalid_config, "video counts must be >= 0");
}

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDataset ds;

  ds.vocabulary.labels.push_back("normal");
  ds.vocabulary.normal_index = 0;
  for (int c = 0; c < spec.num_classes; ++c) ds.vocabulary.labels.push_back(class_label(c));
  for (const auto& l : ds.vocabulary.labels) ds.vocabulary.token_ids.push_back(tokenize(l));
  ds.vocabulary.validate();

  std::vector<Vec> directions;
  for (int c = 0; c < spec.num_classes; ++c)
    directions.push_back(unit_direction(seed, c, spec.dim));

  char id[64];
  for (int v = 0; v < spec.train_normal_videos; ++v) {
    std::snprintf(id, sizeof(id), "train_nrm_%03d", v);
    ds.train.push_back(make_normal(spec, seed, id));
  }
  for (int c = 0; c < spec.num_classes; ++c)
    for (int v = 0; v < spec.train_videos_per_class; ++v) {
      std::snprintf(id, sizeof(id), "train_c%d_%03d", c, v);
      ds.train.push_back(make_abnormal(spec, seed, id, c, directions[c], spec.train_gt));
    }
  for (int v = 0; v < spec.test_normal_videos; ++v) {
    std::snprintf(id, sizeof(id), "test_nrm_%03d", v);
    ds.test.push_back(make_normal(spec, seed, id));
  }
  for (int c = 0; c < spec.num_classes; ++c)
    for (int v = 0; v < spec.test_videos_per_class; ++v) {
      std::snprintf(id, sizeof(id), "test_c%d_%03d", c, v);
      ds.test.push_back(make_abnormal(spec, seed, id, c, directions[c], /*with_gt=*/true));
    }
  return ds;
}

void write_synthetic_dataset(const SyntheticDataset& ds, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_vocabulary((fs::path(out_dir) / "labels.json").string(), ds.vocabulary);
  save_split((fs::path(out_dir) / "train").string(), ds.train);
  save_split((fs::path(out_dir) / "test").string(), ds.test);
}

}  // namespace wsvad
