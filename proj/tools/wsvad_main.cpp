#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "wsvad/feature_io.hpp"
#include "wsvad/harness.hpp"

namespace fs = std::filesystem;
using namespace wsvad;

namespace {

std::string default_out_dir() {
  if (const char* env = std::getenv("WSVAD_OUT_DIR")) return env;
  return "./wsvad_out";
}

void print_report(const EvaluationReport& report) {
  std::cout << report.to_json_string() << "\n";
}

int cmd_gen_synthetic(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = RunConfig::load(config_path);
  if (!cfg.synthetic) {
    std::cerr << "config has no synthetic spec\n";
    return 1;
  }
  SyntheticDataset ds = generate_synthetic_dataset(*cfg.synthetic, cfg.seed);
  write_synthetic_dataset(ds, out_dir);
  std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size()
            << " test videos to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = RunConfig::load(config_path);
  TrainResult result = train(cfg, out_dir);
  std::cout << "checkpoint: " << result.checkpoint_path << "\n";
  if (!result.epochs.empty()) {
    const auto& last = result.epochs.back();
    std::cout << "final epoch " << last.epoch << ": loss=" << last.loss << " bce=" << last.bce
              << " nce=" << last.nce << " cts=" << last.cts << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data_dir,
                 const std::string& split, const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  RunConfig cfg = ck.config;
  if (!data_dir.empty()) {
    cfg.dataset_dir = data_dir;
    cfg.synthetic.reset();
  }
  LoadedData data = load_data(cfg);
  const auto& videos = split == "train" ? data.train.videos : data.test.videos;
  EvalOptions opts = EvalOptions::from_config(cfg);
  opts.dump_dir = out_dir;
  EvaluationReport report = evaluate_model(*ck.model, videos, opts);
  print_report(report);
  return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& features_path,
                const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  FeatureSequence seq = read_feature_file(features_path);
  PaddedSequence pad = pad_or_sample(seq, ck.config.input_cap);
  ModelOutput out = ck.model->run(pad.valid_features());

  const auto& vocab = ck.model->vocabulary();
  nlohmann::json j;
  j["video_id"] = seq.video_id;
  if (out.a.size() > 0) {
    std::vector<double> s(out.a.data(), out.a.data() + out.a.size());
    j["c_scores"] = s;
  }
  if (out.m.size() > 0) {
    Vec a_scores = coarse_scores(out, ScorePath::a_branch, vocab.normal_index);
    j["a_scores"] = std::vector<double>(a_scores.data(), a_scores.data() + a_scores.size());
    const double raw_thr = 2.0 * ck.config.segment_threshold - 1.0;
    auto segs = extract_segments(out.m, vocab, raw_thr, ck.config.min_segment_length);
    nlohmann::json sj = nlohmann::json::array();
    for (const auto& s : segs)
      sj.push_back(nlohmann::json::array({s.start, s.end, s.class_name, s.confidence}));
    j["segments"] = sj;
  }
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / (seq.video_id + ".pred.json")).string();
  std::ofstream os(path, std::ios::trunc);
  os << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path) {
  RunConfig cfg = RunConfig::load(config_path);
  GradCheckReport report = gradcheck(cfg);
  for (const auto& g : report.groups) {
    if (g.no_gradient) {
      std::cout << "  " << g.name << ": no gradient (frozen)\n";
      continue;
    }
    std::cout << "  " << g.name << ": rel_error=" << g.rel_error
              << (g.pass ? "  PASS" : "  FAIL") << "\n";
  }
  std::cout << (report.all_pass ? "gradcheck PASS" : "gradcheck FAIL") << " ("
            << report.seconds << "s)\n";
  return report.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch weakly supervised video anomaly detection"};
  app.require_subcommand(1);

  std::string config_path, out_dir = default_out_dir();
  std::string checkpoint_path, data_dir, split = "test", features_path;

  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic dataset");
  gen->add_option("--config", config_path, "Run config JSON")->required();
  gen->add_option("--out", out_dir, "Output directory");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config_path, "Run config JSON")->required();
  tr->add_option("--out", out_dir, "Output directory");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory (defaults to the checkpoint config)");
  ev->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--out", out_dir, "Output directory");

  auto* pr = app.add_subcommand("predict", "Score one feature file");
  pr->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  pr->add_option("--features", features_path, "VADF feature file")->required();
  pr->add_option("--out", out_dir, "Output directory");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gc->add_option("--config", config_path, "Run config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_synthetic(config_path, out_dir);
    if (tr->parsed()) return cmd_train(config_path, out_dir);
    if (ev->parsed()) return cmd_evaluate(checkpoint_path, data_dir, split, out_dir);
    if (pr->parsed()) return cmd_predict(checkpoint_path, features_path, out_dir);
    if (gc->parsed()) return cmd_gradcheck(config_path);
  } catch (const Error& e) {
    std::cerr << "error (" << errc_name(e.code()) << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
