#include "wsvad/harness.hpp"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "wsvad/feature_io.hpp"

namespace wsvad {

namespace fs = std::filesystem;
using nlohmann::json;

// --- RunConfig -------------------------------------------------------------------

void RunConfig::validate() const {
  adapter.validate();
  loss.validate();
  flags.validate();
  if (synthetic) synthetic->validate();
  if (dataset_dir.empty() && !synthetic)
    throw Error(Errc::invalid_config, "config needs dataset_dir or a synthetic spec");
  if (context_length < 0) throw Error(Errc::invalid_config, "context_length must be >= 0");
  if (token_dim < 1) throw Error(Errc::invalid_config, "token_dim must be >= 1");
  if (input_cap < 1) throw Error(Errc::invalid_config, "input_cap must be >= 1");
  if (learning_rate <= 0.0) throw Error(Errc::invalid_config, "learning_rate must be > 0");
  if (weight_decay < 0.0) throw Error(Errc::invalid_config, "weight_decay must be >= 0");
  if (batch_size < 1 || epochs < 0)
    throw Error(Errc::invalid_config, "batch_size must be >= 1 and epochs >= 0");
  if (segment_threshold <= 0.0 || segment_threshold >= 1.0)
    throw Error(Errc::invalid_config, "segment_threshold must be inside (0, 1)");
  if (min_segment_length < 1) throw Error(Errc::invalid_config, "min_segment_length must be >= 1");
  score_path_from_string(inference_path);
  if (!class_embedding_file.empty() && flags.learnable_prompt)
    throw Error(Errc::invalid_config,
                "class_embedding_file requires learnable_prompt = false");
}

namespace {

json synthetic_to_json(const SyntheticSpec& s) {
  return json{{"num_classes", s.num_classes},
              {"train_videos_per_class", s.train_videos_per_class},
              {"test_videos_per_class", s.test_videos_per_class},
              {"train_normal_videos", s.train_normal_videos},
              {"test_normal_videos", s.test_normal_videos},
              {"frames_per_video", s.frames_per_video},
              {"dim", s.dim},
              {"burst_min_length", s.burst_min_length},
              {"burst_max_length", s.burst_max_length},
              {"min_bursts", s.min_bursts},
              {"max_bursts", s.max_bursts},
              {"margin", s.margin},
              {"noise", s.noise},
              {"train_gt", s.train_gt}};
}

SyntheticSpec synthetic_from_json(const json& j) {
  SyntheticSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.train_videos_per_class = j.value("train_videos_per_class", s.train_videos_per_class);
  s.test_videos_per_class = j.value("test_videos_per_class", s.test_videos_per_class);
  s.train_normal_videos = j.value("train_normal_videos", s.train_normal_videos);
  s.test_normal_videos = j.value("test_normal_videos", s.test_normal_videos);
  s.frames_per_video = j.value("frames_per_video", s.frames_per_video);
  s.dim = j.value("dim", s.dim);
  s.burst_min_length = j.value("burst_min_length", s.burst_min_length);
  s.burst_max_length = j.value("burst_max_length", s.burst_max_length);
  s.min_bursts = j.value("min_bursts", s.min_bursts);
  s.max_bursts = j.value("max_bursts", s.max_bursts);
  s.margin = j.value("margin", s.margin);
  s.noise = j.value("noise", s.noise);
  s.train_gt = j.value("train_gt", s.train_gt);
  return s;
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["dataset_dir"] = dataset_dir;
  if (synthetic) j["synthetic"] = synthetic_to_json(*synthetic);
  j["adapter"] = json{{"window_length", adapter.window_length},
                      {"window_overlap", adapter.window_overlap},
                      {"attention_heads", adapter.attention_heads},
                      {"sim_threshold", adapter.sim_threshold},
                      {"sigma", adapter.sigma},
                      {"dim", adapter.dim},
                      {"use_local_attention", adapter.use_local_attention},
                      {"use_gcn", adapter.use_gcn}};
  j["loss"] = json{{"topk_divisor", loss.topk_divisor},
                   {"tau", loss.tau},
                   {"lambda", loss.lambda},
                   {"pooling", loss.pooling == MilPooling::frames_per_class ? "frames_per_class"
                                                                            : "rowwise_literal"},
                   {"contrastive_on_final", loss.contrastive_on_final}};
  j["flags"] = json{{"c_branch", flags.c_branch},
                    {"a_branch", flags.a_branch},
                    {"learnable_prompt", flags.learnable_prompt},
                    {"visual_prompt", flags.visual_prompt}};
  j["context_length"] = context_length;
  j["token_dim"] = token_dim;
  j["input_cap"] = input_cap;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["seed"] = seed;
  j["detach_visual_prompt"] = detach_visual_prompt;
  j["class_embedding_file"] = class_embedding_file;
  j["inference_path"] = inference_path;
  j["segment_threshold"] = segment_threshold;
  j["min_segment_length"] = min_segment_length;
  j["init_checkpoint"] = init_checkpoint;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.dataset_dir = j.value("dataset_dir", std::string());
  if (j.contains("synthetic")) c.synthetic = synthetic_from_json(j.at("synthetic"));
  if (j.contains("adapter")) {
    const json& a = j.at("adapter");
    c.adapter.window_length = a.value("window_length", c.adapter.window_length);
    c.adapter.window_overlap = a.value("window_overlap", c.adapter.window_overlap);
    c.adapter.attention_heads = a.value("attention_heads", c.adapter.attention_heads);
    c.adapter.sim_threshold = a.value("sim_threshold", c.adapter.sim_threshold);
    c.adapter.sigma = a.value("sigma", c.adapter.sigma);
    c.adapter.dim = a.value("dim", c.adapter.dim);
    c.adapter.use_local_attention = a.value("use_local_attention", c.adapter.use_local_attention);
    c.adapter.use_gcn = a.value("use_gcn", c.adapter.use_gcn);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    c.loss.topk_divisor = l.value("topk_divisor", c.loss.topk_divisor);
    c.loss.tau = l.value("tau", c.loss.tau);
    c.loss.lambda = l.value("lambda", c.loss.lambda);
    const std::string pooling = l.value("pooling", std::string("frames_per_class"));
    if (pooling == "frames_per_class")
      c.loss.pooling = MilPooling::frames_per_class;
    else if (pooling == "rowwise_literal")
      c.loss.pooling = MilPooling::rowwise_literal;
    else
      throw Error(Errc::invalid_config, "unknown MIL pooling: " + pooling);
    c.loss.contrastive_on_final = l.value("contrastive_on_final", c.loss.contrastive_on_final);
  }
  if (j.contains("flags")) {
    const json& f = j.at("flags");
    c.flags.c_branch = f.value("c_branch", c.flags.c_branch);
    c.flags.a_branch = f.value("a_branch", c.flags.a_branch);
    c.flags.learnable_prompt = f.value("learnable_prompt", c.flags.learnable_prompt);
    c.flags.visual_prompt = f.value("visual_prompt", c.flags.visual_prompt);
  }
  c.context_length = j.value("context_length", c.context_length);
  c.token_dim = j.value("token_dim", c.token_dim);
  c.input_cap = j.value("input_cap", c.input_cap);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.detach_visual_prompt = j.value("detach_visual_prompt", c.detach_visual_prompt);
  c.class_embedding_file = j.value("class_embedding_file", c.class_embedding_file);
  c.inference_path = j.value("inference_path", c.inference_path);
  c.segment_threshold = j.value("segment_threshold", c.segment_threshold);
  c.min_segment_length = j.value("min_segment_length", c.min_segment_length);
  c.init_checkpoint = j.value("init_checkpoint", c.init_checkpoint);
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::io_failure, "cannot open config: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, path + ": " + e.what());
  }
  return from_json(j);
}

// --- pad_or_sample --------------------------------------------------------------

PaddedSequence pad_or_sample(const FeatureSequence& seq, int cap) {
  if (cap < 1) throw Error(Errc::invalid_config, "input cap must be >= 1");
  const int n = static_cast<int>(seq.frames());
  const int d = static_cast<int>(seq.dim());
  PaddedSequence out;
  if (n > cap) {
    out.features.resize(cap, d);
    for (int i = 0; i < cap; ++i) {
      const auto src = static_cast<std::int64_t>(i) * n / cap;
      out.features.row(i) = seq.features.row(src);
      out.kept.push_back(src);
    }
    out.mask.assign(static_cast<std::size_t>(cap), 1);
    out.valid = cap;
  } else {
    out.features = MatF::Zero(cap, d);
    out.features.topRows(n) = seq.features;
    out.mask.assign(static_cast<std::size_t>(cap), 0);
    for (int i = 0; i < n; ++i) {
      out.mask[static_cast<std::size_t>(i)] = 1;
      out.kept.push_back(i);
    }
    out.valid = n;
  }
  return out;
}

// --- checkpointing -----------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'V', 'A', 'D', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const DualBranchModel& model, const RunConfig& cfg,
                     int epoch) {
  json manifest;
  manifest["config"] = cfg.to_json();
  manifest["epoch"] = epoch;
  manifest["encoder_seed"] = cfg.seed;  // frozen encoder stored by seed reference only
  manifest["vocabulary"] = json{{"labels", model.vocabulary().labels},
                                {"normal_index", model.vocabulary().normal_index}};
  json tensors = json::array();
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i)
    tensors.push_back(json{{"name", store[i].name},
                           {"rows", store[i].value.rows()},
                           {"cols", store[i].value.cols()}});
  manifest["tensors"] = tensors;
  const std::string mstr = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::io_failure, "cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  const std::uint32_t version = kCheckpointVersion;
  os.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t mlen = mstr.size();
  os.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const MatF payload = store[i].value.cast<float>();
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()) * sizeof(float));
  }
  if (!os) throw Error(Errc::io_failure, "checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io_failure, "cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw Error(Errc::bad_magic, "bad checkpoint magic: " + path);
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCheckpointVersion)
    throw Error(Errc::version_mismatch, "unsupported checkpoint version: " + path);
  std::uint64_t mlen = 0;
  is.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (is.gcount() != static_cast<std::streamsize>(mlen))
    throw Error(Errc::truncated, "truncated checkpoint manifest: " + path);
  json manifest;
  try {
    manifest = json::parse(mstr);
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, std::string("checkpoint manifest: ") + e.what());
  }

  Checkpoint out;
  out.config = RunConfig::from_json(manifest.at("config"));
  out.epoch = manifest.value("epoch", 0);
  for (const auto& l : manifest.at("vocabulary").at("labels"))
    out.vocabulary.labels.push_back(l.get<std::string>());
  out.vocabulary.normal_index = manifest.at("vocabulary").value("normal_index", 0);
  out.vocabulary.context_length = out.config.context_length;
  for (const auto& l : out.vocabulary.labels) out.vocabulary.token_ids.push_back(tokenize(l));

  ModelConfig mc;
  mc.adapter = out.config.adapter;
  mc.flags = out.config.flags;
  mc.token_dim = out.config.token_dim;
  mc.seed = out.config.seed;
  mc.detach_visual_prompt = out.config.detach_visual_prompt;
  mc.class_embedding_file = out.config.class_embedding_file;
  out.model = std::make_unique<DualBranchModel>(mc, out.vocabulary);

  auto& store = out.model->params();
  const json& tensors = manifest.at("tensors");
  if (tensors.size() != store.size())
    throw Error(Errc::bad_format, "checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < store.size(); ++i) {
    const json& t = tensors.at(i);
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    if (t.at("name").get<std::string>() != store[i].name ||
        rows != store[i].value.rows() || cols != store[i].value.cols())
      throw Error(Errc::bad_format, "checkpoint tensor mismatch at " + store[i].name);
    MatF payload(rows, cols);
    const std::streamsize bytes = static_cast<std::streamsize>(payload.size()) * sizeof(float);
    is.read(reinterpret_cast<char*>(payload.data()), bytes);
    if (is.gcount() != bytes) throw Error(Errc::truncated, "truncated checkpoint payload: " + path);
    if (!payload.allFinite())
      throw Error(Errc::non_finite, "non-finite checkpoint payload: " + store[i].name);
    store[i].value = payload.cast<double>();
  }
  return out;
}

// --- data ------------------------------------------------------------------------

LoadedData load_data(const RunConfig& cfg) {
  LoadedData data;
  if (cfg.synthetic) {
    SyntheticDataset ds = generate_synthetic_dataset(*cfg.synthetic, cfg.seed);
    ds.vocabulary.context_length = cfg.context_length;
    data.train.vocabulary = ds.vocabulary;
    data.train.videos = std::move(ds.train);
    data.test.vocabulary = ds.vocabulary;
    data.test.videos = std::move(ds.test);
    return data;
  }
  LabelVocabulary vocab =
      read_vocabulary((fs::path(cfg.dataset_dir) / "labels.json").string(), cfg.context_length);
  data.train = load_split((fs::path(cfg.dataset_dir) / "train").string(), vocab);
  data.test = load_split((fs::path(cfg.dataset_dir) / "test").string(), vocab);
  return data;
}

// --- training ---------------------------------------------------------------------

namespace {

std::vector<int> target_classes(const VideoAnnotation& ann, const LabelVocabulary& vocab) {
  if (ann.video_label == 0) return {vocab.normal_index};
  std::vector<int> targets;
  for (const auto& c : ann.class_names) targets.push_back(vocab.index_of(c));
  return targets;
}

struct BatchLoss {
  ad::Var total;
  double bce = 0.0, nce = 0.0, cts = 0.0;
};

// Mean over the batch of each loss component, combined per the total
// objective. One tape per batch; one backward pass.
BatchLoss batch_loss(ad::Tape& tape, const DualBranchModel& model,
                     const std::vector<const VideoRecord*>& batch,
                     const std::vector<const PaddedSequence*>& padded, const LossConfig& loss_cfg) {
  const auto& vocab = model.vocabulary();
  const ModelFlags& flags = model.config().flags;
  ad::Var bce_sum, nce_sum, cts_sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto vars = model.forward(tape, padded[i]->valid_features());
    if (flags.c_branch) {
      ad::Var l = topk_bce(tape, vars.a, batch[i]->annotation.video_label, loss_cfg);
      bce_sum = bce_sum.valid() ? tape.add(bce_sum, l) : l;
    }
    if (flags.a_branch) {
      auto scores = mil_align_scores(tape, vars.m, loss_cfg);
      ad::Var l =
          mil_align_loss(tape, scores, target_classes(batch[i]->annotation, vocab), loss_cfg);
      nce_sum = nce_sum.valid() ? tape.add(nce_sum, l) : l;
      ad::Var emb = loss_cfg.contrastive_on_final ? vars.t : vars.t_out;
      ad::Var c = contrastive_loss(tape, emb, vocab.normal_index);
      cts_sum = cts_sum.valid() ? tape.add(cts_sum, c) : c;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  if (bce_sum.valid()) bce_sum = tape.scale(bce_sum, inv);
  if (nce_sum.valid()) nce_sum = tape.scale(nce_sum, inv);
  if (cts_sum.valid()) cts_sum = tape.scale(cts_sum, inv);
  out.total = total_loss(tape, bce_sum, nce_sum, cts_sum, loss_cfg);
  out.bce = bce_sum.valid() ? tape.scalar_value(bce_sum) : 0.0;
  out.nce = nce_sum.valid() ? tape.scalar_value(nce_sum) : 0.0;
  out.cts = cts_sum.valid() ? tape.scalar_value(cts_sum) : 0.0;
  return out;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  LoadedData data = load_data(cfg);

  ModelConfig mc;
  mc.adapter = cfg.adapter;
  mc.flags = cfg.flags;
  mc.token_dim = cfg.token_dim;
  mc.seed = cfg.seed;
  mc.detach_visual_prompt = cfg.detach_visual_prompt;
  mc.class_embedding_file = cfg.class_embedding_file;

  std::unique_ptr<DualBranchModel> model;
  if (!cfg.init_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(cfg.init_checkpoint);
    model = std::move(ck.model);
  } else {
    model = std::make_unique<DualBranchModel>(mc, data.train.vocabulary);
  }
  if (model->config().adapter.dim != static_cast<int>(data.train.videos.at(0).features.dim()))
    throw Error(Errc::dimension_mismatch, "model dim does not match dataset features");

  std::vector<PaddedSequence> padded;
  for (const auto& rec : data.train.videos) padded.push_back(pad_or_sample(rec.features, cfg.input_cap));

  ad::AdamW::Config oc;
  oc.lr = cfg.learning_rate;
  oc.weight_decay = cfg.weight_decay;
  ad::AdamW optimizer(oc);

  TrainResult result;
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl", std::ios::trunc);
  const int n_videos = static_cast<int>(data.train.videos.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(n_videos);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = named_rng(cfg.seed, "batch_order.epoch" + std::to_string(epoch));
    for (int i = n_videos - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    EpochStats stats;
    stats.epoch = epoch;
    int batches = 0;
    for (int b = 0; b * cfg.batch_size < n_videos; ++b) {
      std::vector<const VideoRecord*> batch;
      std::vector<const PaddedSequence*> pads;
      for (int i = b * cfg.batch_size; i < std::min((b + 1) * cfg.batch_size, n_videos); ++i) {
        batch.push_back(&data.train.videos[static_cast<std::size_t>(order[i])]);
        pads.push_back(&padded[static_cast<std::size_t>(order[i])]);
      }
      ad::Tape tape;
      BatchLoss loss;
      try {
        loss = batch_loss(tape, *model, batch, pads, cfg.loss);
      } catch (const Error& e) {
        if (e.code() == Errc::non_finite_loss)
          throw Error(Errc::non_finite_loss, "epoch " + std::to_string(epoch) + " batch " +
                                                 std::to_string(b) + ": " + e.what());
        throw;
      }
      model->params().zero_grad();
      tape.backward(loss.total);
      optimizer.step(model->params());

      const double value = tape.scalar_value(loss.total);
      result.step_losses.push_back(value);
      stats.loss += value;
      stats.bce += loss.bce;
      stats.nce += loss.nce;
      stats.cts += loss.cts;
      ++batches;
    }
    if (batches > 0) {
      stats.loss /= batches;
      stats.bce /= batches;
      stats.nce /= batches;
      stats.cts /= batches;
    }
    result.epochs.push_back(stats);
    log << json{{"epoch", stats.epoch},
                {"loss", stats.loss},
                {"bce", stats.bce},
                {"nce", stats.nce},
                {"cts", stats.cts}}
               .dump()
        << "\n";
  }

  result.checkpoint_path = (fs::path(out_dir) / "checkpoint.vadc").string();
  save_checkpoint(result.checkpoint_path, *model, cfg, cfg.epochs);
  return result;
}

// --- evaluation ---------------------------------------------------------------------

EvalOptions EvalOptions::from_config(const RunConfig& cfg) {
  EvalOptions o;
  o.input_cap = cfg.input_cap;
  o.path = score_path_from_string(cfg.inference_path);
  o.segment_threshold = cfg.segment_threshold;
  o.min_segment_length = cfg.min_segment_length;
  return o;
}

namespace {

std::vector<int> frame_labels(const PaddedSequence& pad, const VideoAnnotation& ann) {
  std::vector<int> labels(static_cast<std::size_t>(pad.valid), 0);
  for (int i = 0; i < pad.valid; ++i) {
    const std::int64_t orig = pad.kept[static_cast<std::size_t>(i)];
    for (const auto& seg : ann.gt_segments)
      if (orig >= seg.start && orig < seg.end) {
        labels[static_cast<std::size_t>(i)] = 1;
        break;
      }
  }
  return labels;
}

// Map a ground-truth segment onto the evaluated (possibly sampled) frame grid.
std::optional<GtSegment> map_segment(const PaddedSequence& pad, const GtSegment& seg) {
  int lo = -1, hi = -1;
  for (int i = 0; i < pad.valid; ++i) {
    const std::int64_t orig = pad.kept[static_cast<std::size_t>(i)];
    if (orig >= seg.start && orig < seg.end) {
      if (lo < 0) lo = i;
      hi = i + 1;
    }
  }
  if (lo < 0) return std::nullopt;
  return GtSegment{lo, hi, seg.class_name};
}

std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

EvaluationReport evaluate_model(const DualBranchModel& model,
                                const std::vector<VideoRecord>& videos, const EvalOptions& opts) {
  if (videos.empty()) throw Error(Errc::invalid_config, "evaluate: empty dataset");
  const auto& vocab = model.vocabulary();
  const ModelFlags& flags = model.config().flags;
  const double raw_threshold = 2.0 * opts.segment_threshold - 1.0;

  std::vector<VideoFrames> c_frames, a_frames;
  std::vector<SegmentPrediction> predictions;
  std::vector<SegmentGroundTruth> gt;
  json dump = json::array();

  for (std::size_t vi = 0; vi < videos.size(); ++vi) {
    const auto& rec = videos[vi];
    if (static_cast<int>(rec.features.dim()) != model.config().adapter.dim)
      throw Error(Errc::dimension_mismatch, "evaluate: feature dim mismatch: " + rec.features.video_id);
    PaddedSequence pad = pad_or_sample(rec.features, opts.input_cap);
    ModelOutput out = model.run(pad.valid_features());

    VideoFrames vf;
    vf.labels = frame_labels(pad, rec.annotation);
    vf.abnormal = rec.annotation.video_label == 1;

    json rec_json;
    rec_json["video_id"] = rec.features.video_id;
    if (flags.c_branch) {
      vf.scores = to_std(coarse_scores(out, ScorePath::c_branch, vocab.normal_index));
      c_frames.push_back(vf);
      rec_json["c_scores"] = vf.scores;
    }
    if (flags.a_branch) {
      vf.scores = to_std(coarse_scores(out, ScorePath::a_branch, vocab.normal_index));
      a_frames.push_back(vf);
      rec_json["a_scores"] = vf.scores;

      if (vf.abnormal) {
        auto segs = extract_segments(out.m, vocab, raw_threshold, opts.min_segment_length);
        json segs_json = json::array();
        for (const auto& s : segs) {
          predictions.push_back({static_cast<int>(vi), s});
          segs_json.push_back(json::array({s.start, s.end, s.class_name, s.confidence}));
        }
        rec_json["segments"] = segs_json;
        for (const auto& g : rec.annotation.gt_segments)
          if (auto mapped = map_segment(pad, g))
            gt.push_back({static_cast<int>(vi), *mapped});
      }
    }
    dump.push_back(rec_json);
  }

  auto path_metrics = [](const std::vector<VideoFrames>& frames) {
    PathMetrics pm;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& v : frames) {
      scores.insert(scores.end(), v.scores.begin(), v.scores.end());
      labels.insert(labels.end(), v.labels.begin(), v.labels.end());
    }
    pm.ap = frame_ap(scores, labels);
    pm.auc = frame_auc(scores, labels);
    pm.ano_auc = ano_auc(frames);
    return pm;
  };

  EvaluationReport report;
  report.path = to_string(opts.path);
  if (flags.c_branch) report.c_branch = path_metrics(c_frames);
  if (flags.a_branch) report.a_branch = path_metrics(a_frames);
  const auto& primary = opts.path == ScorePath::c_branch ? report.c_branch : report.a_branch;
  if (!primary)
    throw Error(Errc::invalid_flags,
                "requested inference path is disabled by the model flags");
  report.ap = primary->ap;
  report.auc = primary->auc;
  report.ano_auc = primary->ano_auc;

  if (flags.a_branch) {
    MapAtIouResult mres = map_at_iou(predictions, gt, opts.iou_thresholds);
    report.map_at_iou = mres.map_at_iou;
    report.avg_map = mres.avg;
    report.per_class_ap = mres.per_class_ap;
  }

  if (!opts.dump_dir.empty()) {
    fs::create_directories(opts.dump_dir);
    std::ofstream ds(fs::path(opts.dump_dir) / "predictions.jsonl", std::ios::trunc);
    for (const auto& r : dump) ds << r.dump() << "\n";
    std::ofstream rs(fs::path(opts.dump_dir) / "report.json", std::ios::trunc);
    rs << report.to_json_string() << "\n";

    // CSV artifacts: per-video score curves + the primary-path PR curve
    fs::create_directories(fs::path(opts.dump_dir) / "plots");
    const auto& frames = opts.path == ScorePath::c_branch ? c_frames : a_frames;
    {
      std::ofstream cs(fs::path(opts.dump_dir) / "plots" / "score_curves.csv", std::ios::trunc);
      cs << "video_id,frame,score,label\n";
      for (std::size_t i = 0; i < frames.size(); ++i)
        for (std::size_t f = 0; f < frames[i].scores.size(); ++f)
          cs << dump[i]["video_id"].get<std::string>() << "," << f << "," << frames[i].scores[f]
             << "," << frames[i].labels[f] << "\n";
    }
    {
      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto& v : frames) {
        scores.insert(scores.end(), v.scores.begin(), v.scores.end());
        labels.insert(labels.end(), v.labels.begin(), v.labels.end());
      }
      std::vector<std::size_t> order(scores.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      std::size_t tp = 0, total_pos = 0;
      for (int l : labels) total_pos += (l != 0);
      std::ofstream ps(fs::path(opts.dump_dir) / "plots" / "pr_curve.csv", std::ios::trunc);
      ps << "recall,precision\n";
      for (std::size_t k = 0; k < order.size(); ++k) {
        tp += (labels[order[k]] != 0);
        if (total_pos > 0)
          ps << static_cast<double>(tp) / static_cast<double>(total_pos) << ","
             << static_cast<double>(tp) / static_cast<double>(k + 1) << "\n";
      }
    }
  }
  return report;
}

EvaluationReport evaluate_checkpoint(const std::string& checkpoint_path,
                                     const std::vector<VideoRecord>& videos,
                                     const EvalOptions& opts) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  return evaluate_model(*ck.model, videos, opts);
}

// --- gradient checking -----------------------------------------------------------------

namespace {

std::string group_of(const std::string& param_name) {
  if (param_name.rfind("adapter.attn.", 0) == 0) return "adapter_attention";
  if (param_name.rfind("adapter.gcn.", 0) == 0) return "gcn_weight";
  if (param_name.rfind("proj_fc.", 0) == 0) return "projection_fc";
  if (param_name.rfind("c_branch.", 0) == 0) return "c_branch_head";
  if (param_name.rfind("prompt.", 0) == 0) return "context_tokens";
  if (param_name.rfind("visual_prompt.", 0) == 0) return "visual_prompt_ffn";
  return "other";
}

struct TinyInstance {
  std::vector<VideoRecord> videos;
  LabelVocabulary vocab;
};

TinyInstance tiny_instance(std::uint64_t seed, int frames, int dim) {
  TinyInstance t;
  t.vocab.labels = {"normal", "fighting", "riot"};
  t.vocab.normal_index = 0;
  t.vocab.context_length = 4;
  for (const auto& l : t.vocab.labels) t.vocab.token_ids.push_back(tokenize(l));

  Rng rng = named_rng(seed, "gradcheck.data");
  for (int v = 0; v < 2; ++v) {
    VideoRecord rec;
    rec.features.video_id = "gradcheck_" + std::to_string(v);
    Mat m(frames, dim);
    for (int i = 0; i < frames; ++i)
      for (int j = 0; j < dim; ++j) m(i, j) = rng.normal();
    rec.features.features = m.cast<float>();
    rec.annotation.video_id = rec.features.video_id;
    if (v == 0) {
      rec.annotation.video_label = 1;
      rec.annotation.class_names = {"fighting"};
    } else {
      rec.annotation.video_label = 0;
    }
    t.videos.push_back(std::move(rec));
  }
  return t;
}

}  // namespace

GradCheckReport gradcheck(const RunConfig& cfg, double tolerance) {
  const auto start = std::chrono::steady_clock::now();
  constexpr int kFrames = 6, kDim = 8, kTokenDim = 16;

  ModelConfig mc;
  mc.adapter = cfg.adapter;
  mc.adapter.dim = kDim;
  mc.adapter.window_length = 4;  // exercise overlapping windows on 6 frames
  mc.adapter.attention_heads = 1;
  mc.flags = cfg.flags;
  mc.token_dim = kTokenDim;
  mc.seed = cfg.seed;
  mc.detach_visual_prompt = false;  // finite differences measure the full objective
  LossConfig loss_cfg = cfg.loss;

  TinyInstance inst = tiny_instance(cfg.seed, kFrames, kDim);
  DualBranchModel model(mc, inst.vocab);

  std::vector<PaddedSequence> padded;
  std::vector<const VideoRecord*> batch;
  std::vector<const PaddedSequence*> pads;
  for (const auto& rec : inst.videos) padded.push_back(pad_or_sample(rec.features, kFrames));
  for (std::size_t i = 0; i < inst.videos.size(); ++i) {
    batch.push_back(&inst.videos[i]);
    pads.push_back(&padded[i]);
  }

  auto eval_loss = [&]() {
    ad::Tape tape;
    return tape.scalar_value(batch_loss(tape, model, batch, pads, loss_cfg).total);
  };

  // analytic gradients
  {
    ad::Tape tape;
    BatchLoss loss = batch_loss(tape, model, batch, pads, loss_cfg);
    model.params().zero_grad();
    tape.backward(loss.total);
  }

  std::map<std::string, std::pair<double, double>> acc;  // group -> (sum dx^2 analytic, fd)
  std::map<std::string, double> diff2;
  auto& store = model.params();
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    ad::Parameter& p = store[pi];
    const std::string group = group_of(p.name);
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double theta = p.value(r, c);
        const double h = 1e-5 * std::max(1.0, std::abs(theta));
        p.value(r, c) = theta + h;
        const double f_plus = eval_loss();
        p.value(r, c) = theta - h;
        const double f_minus = eval_loss();
        p.value(r, c) = theta;
        const double fd = (f_plus - f_minus) / (2.0 * h);
        const double an = p.grad(r, c);
        acc[group].first += an * an;
        acc[group].second += fd * fd;
        diff2[group] += (an - fd) * (an - fd);
      }
  }

  GradCheckReport report;
  report.all_pass = true;
  for (const auto& [group, norms] : acc) {
    GradCheckGroup g;
    g.name = group;
    g.analytic_norm = std::sqrt(norms.first);
    g.fd_norm = std::sqrt(norms.second);
    const double denom = std::max({g.analytic_norm, g.fd_norm, 1e-12});
    g.rel_error = std::sqrt(diff2[group]) / denom;
    g.pass = g.rel_error < tolerance;
    report.all_pass = report.all_pass && g.pass;
    report.groups.push_back(g);
  }

  // the frozen encoder holds no trainable parameters by construction
  if (model.encoder() != nullptr) {
    GradCheckGroup frozen;
    frozen.name = "text_encoder_frozen";
    frozen.no_gradient = true;
    frozen.pass = true;
    report.groups.push_back(frozen);
  }

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace wsvad
