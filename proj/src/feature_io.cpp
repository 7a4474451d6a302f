#include "wsvad/feature_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "wsvad/text.hpp"

namespace wsvad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// The format is little-endian; this codebase targets little-endian hosts and
// the writers/readers below assume it.
template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return is.gcount() == static_cast<std::streamsize>(sizeof(T));
}

}  // namespace

FeatureSequence read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io_failure, "cannot open feature file: " + path);

  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4) throw Error(Errc::truncated, "truncated header: " + path);
  if (std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw Error(Errc::bad_magic, "bad magic in feature file: " + path);

  std::uint32_t version = 0, n = 0, d = 0;
  std::uint8_t dtype = 0, reserved[3] = {0, 0, 0};
  if (!read_pod(is, version)) throw Error(Errc::truncated, "truncated header: " + path);
  if (version != kFeatureVersion)
    throw Error(Errc::version_mismatch,
                "unsupported feature file version " + std::to_string(version) + ": " + path);
  if (!read_pod(is, n) || !read_pod(is, d) || !read_pod(is, dtype) ||
      !read_pod(is, reserved[0]) || !read_pod(is, reserved[1]) || !read_pod(is, reserved[2]))
    throw Error(Errc::truncated, "truncated header: " + path);
  if (dtype != 1) throw Error(Errc::bad_format, "unsupported dtype in feature file: " + path);
  if (n < 1 || d < 1) throw Error(Errc::bad_format, "empty feature matrix in file: " + path);

  FeatureSequence seq;
  seq.video_id = fs::path(path).stem().string();
  seq.features.resize(n, d);
  const std::streamsize payload = static_cast<std::streamsize>(n) * d * sizeof(float);
  is.read(reinterpret_cast<char*>(seq.features.data()), payload);
  if (is.gcount() != payload) throw Error(Errc::truncated, "truncated payload: " + path);
  if (!seq.features.allFinite())
    throw Error(Errc::non_finite, "non-finite values in feature file: " + path);
  return seq;
}

void write_feature_file(const std::string& path, const FeatureSequence& seq) {
  seq.validate();  // rejects non-finite entries before any bytes hit disk
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::io_failure, "cannot open feature file for writing: " + path);

  os.write(kFeatureMagic, 4);
  write_pod(os, kFeatureVersion);
  write_pod(os, static_cast<std::uint32_t>(seq.features.rows()));
  write_pod(os, static_cast<std::uint32_t>(seq.features.cols()));
  write_pod(os, static_cast<std::uint8_t>(1));
  const std::uint8_t zero = 0;
  write_pod(os, zero);
  write_pod(os, zero);
  write_pod(os, zero);
  os.write(reinterpret_cast<const char*>(seq.features.data()),
           static_cast<std::streamsize>(seq.features.size()) * sizeof(float));
  if (!os) throw Error(Errc::io_failure, "write failed: " + path);
}

std::vector<VideoAnnotation> read_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::io_failure, "cannot open annotations: " + path);
  std::vector<VideoAnnotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::bad_format,
                  path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    VideoAnnotation a;
    a.video_id = j.at("video_id").get<std::string>();
    a.video_label = j.at("label").get<int>();
    for (const auto& c : j.at("classes")) a.class_names.push_back(c.get<std::string>());
    if (j.contains("segments")) {
      for (const auto& s : j.at("segments")) {
        GtSegment seg;
        seg.start = s.at(0).get<std::int64_t>();
        seg.end = s.at(1).get<std::int64_t>();
        seg.class_name = s.at(2).get<std::string>();
        a.gt_segments.push_back(seg);
      }
    }
    a.validate();
    out.push_back(std::move(a));
  }
  return out;
}

void write_annotations(const std::string& path, const std::vector<VideoAnnotation>& annotations) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(Errc::io_failure, "cannot open annotations for writing: " + path);
  for (const auto& a : annotations) {
    json j;
    j["video_id"] = a.video_id;
    j["label"] = a.video_label;
    j["classes"] = a.class_names;
    json segs = json::array();
    for (const auto& s : a.gt_segments) segs.push_back(json::array({s.start, s.end, s.class_name}));
    j["segments"] = segs;
    os << j.dump() << "\n";
  }
  if (!os) throw Error(Errc::io_failure, "write failed: " + path);
}

LabelVocabulary read_vocabulary(const std::string& path, int context_length) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::io_failure, "cannot open vocabulary: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, path + ": " + e.what());
  }
  LabelVocabulary v;
  for (const auto& l : j.at("labels")) v.labels.push_back(l.get<std::string>());
  v.normal_index = j.value("normal_index", 0);
  v.context_length = context_length;
  v.validate();
  for (const auto& l : v.labels) v.token_ids.push_back(tokenize(l));
  return v;
}

void write_vocabulary(const std::string& path, const LabelVocabulary& vocab) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(Errc::io_failure, "cannot open vocabulary for writing: " + path);
  json j;
  j["labels"] = vocab.labels;
  j["normal_index"] = vocab.normal_index;
  os << j.dump(2) << "\n";
  if (!os) throw Error(Errc::io_failure, "write failed: " + path);
}

Dataset load_split(const std::string& split_dir, const LabelVocabulary& vocab) {
  Dataset ds;
  ds.vocabulary = vocab;
  auto annotations = read_annotations((fs::path(split_dir) / "annotations.jsonl").string());

  Eigen::Index d = -1;
  for (const auto& ann : annotations) {
    VideoRecord rec;
    rec.annotation = ann;
    rec.features =
        read_feature_file((fs::path(split_dir) / "features" / (ann.video_id + ".vadf")).string());
    rec.features.video_id = ann.video_id;
    ann.validate(rec.features.frames());
    if (d < 0) d = rec.features.dim();
    if (rec.features.dim() != d)
      throw Error(Errc::dimension_mismatch,
                  "inconsistent feature dimension in split: " + ann.video_id);
    for (const auto& c : ann.class_names) vocab.index_of(c);  // unknown class -> throw
    ds.videos.push_back(std::move(rec));
  }
  return ds;
}

void save_split(const std::string& split_dir, const std::vector<VideoRecord>& videos) {
  fs::create_directories(fs::path(split_dir) / "features");
  std::vector<VideoAnnotation> annotations;
  for (const auto& rec : videos) {
    write_feature_file(
        (fs::path(split_dir) / "features" / (rec.features.video_id + ".vadf")).string(),
        rec.features);
    annotations.push_back(rec.annotation);
  }
  write_annotations((fs::path(split_dir) / "annotations.jsonl").string(), annotations);
}

}  // namespace wsvad
