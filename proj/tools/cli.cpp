// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gks/checkpoint.hpp"
#include "gks/error.hpp"
#include "gks/evaluate.hpp"
#include "gks/image.hpp"
#include "gks/pipeline.hpp"
#include "gks/preclassify.hpp"
#include "gks/rng.hpp"
#include "gks/synth.hpp"
#include "gks/train.hpp"

namespace gks {
namespace {

namespace fs = std::filesystem;

struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
};

std::string join_out(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("failed writing: " + path);
}

RunConfig resolved_config(const GlobalOpts& g, bool config_required) {
  RunConfig cfg;
  if (!g.config_path.empty()) {
    cfg = load_run_config(g.config_path);
  } else if (config_required) {
    throw ConfigError("this subcommand needs --config <json>");
  }
  if (g.seed_set) cfg.train.seed = g.seed;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  return cfg;
}

ImagePair load_dataset(const DatasetPaths& p, const std::string& which) {
  if (p.img1.empty() || p.img2.empty()) {
    throw ConfigError("config is missing " + which + " image paths");
  }
  return load_pair(p.img1, p.img2, p.ground_truth);
}

// Rebuilds the deterministic inference inputs (difference image,
// preclassification, support set) that predict needs alongside a checkpoint.
struct InferenceInputs {
  ImagePair target;
  DifferenceImage di;
  PreclassMap preclass;
  SupportSet support;
};

InferenceInputs build_inference_inputs(const RunConfig& cfg) {
  InferenceInputs in;
  in.target = load_dataset(cfg.target, "target");
  in.di = log_ratio_di(in.target, cfg.di_eps);
  in.preclass = hierarchical_preclassify(
      in.di, Rng::derive(cfg.train.seed, seed_stream::kTargetPreclass),
      nullptr);
  if (cfg.model.use_graph) {
    const ImagePair source = load_dataset(cfg.source, "source");
    const DifferenceImage sdi = log_ratio_di(source, cfg.di_eps);
    const PreclassMap spre = hierarchical_preclassify(
        sdi, Rng::derive(cfg.train.seed, seed_stream::kSourcePreclass),
        nullptr);
    const PatchDataset source_ds = build_patch_dataset(
        source, sdi, spre, cfg.sample_ratio, cfg.model.patch_side,
        Rng::derive(cfg.train.seed, seed_stream::kSourceSamples),
        source.ground_truth ? LabelSource::kGroundTruth
                            : LabelSource::kPseudo);
    const std::size_t k =
        std::min(cfg.support_size, source_ds.samples.size());
    in.support = build_support_set(
        source_ds, k, Rng::derive(cfg.train.seed, seed_stream::kSupport));
  }
  return in;
}

int cmd_gen_synth(const GlobalOpts& g, const SynthConfig& synth) {
  const std::string out = g.out_dir.empty() ? "." : g.out_dir;
  SynthConfig cfg = synth;
  if (g.seed_set) cfg.seed = g.seed;
  const ImagePair pair = generate_synthetic_pair(cfg);
  fs::create_directories(out);
  const std::string p1 = join_out(out, "img1.pgm");
  const std::string p2 = join_out(out, "img2.pgm");
  const std::string pg = join_out(out, "ground_truth.pgm");
  save_image(pair.img1, p1);
  save_image(pair.img2, p2);
  save_map(*pair.ground_truth, pg);
  std::cout << p1 << "\n" << p2 << "\n" << pg << "\n";
  return 0;
}

int cmd_preclassify(const GlobalOpts& g, const std::string& img1,
                    const std::string& img2, const std::string& gt,
                    double ratio, double eps) {
  const std::string out = g.out_dir.empty() ? "." : g.out_dir;
  const ImagePair pair = load_pair(img1, img2, gt);
  const DifferenceImage di = log_ratio_di(pair, eps);
  std::string warning;
  const PreclassMap map = hierarchical_preclassify(
      di, Rng::derive(g.seed, seed_stream::kTargetPreclass), &warning);
  if (!warning.empty()) std::cerr << "warning: " << warning << "\n";

  fs::create_directories(out);
  Image di_img;
  di_img.height = di.height;
  di_img.width = di.width;
  di_img.values = di.values;
  const std::string di_path = join_out(out, "di.pgm");
  save_image(di_img, di_path);

  // 3-level view: unchanged 0, uncertain mid-gray, changed white.
  Image pre_img;
  pre_img.height = map.height;
  pre_img.width = map.width;
  pre_img.values.resize(map.pixels());
  for (std::size_t i = 0; i < map.pixels(); ++i) {
    switch (map.labels[i]) {
      case PixelClass::kUnchanged: pre_img.values[i] = 0.0; break;
      case PixelClass::kUncertain: pre_img.values[i] = 0.5; break;
      case PixelClass::kChanged: pre_img.values[i] = 1.0; break;
    }
  }
  const std::string pre_path = join_out(out, "preclass.pgm");
  save_image(pre_img, pre_path, 8);

  const std::vector<SampleRef> samples = select_training_samples(
      map, ratio, Rng::derive(g.seed, seed_stream::kTargetSamples));
  std::string csv = "row,col,label\n";
  for (const SampleRef& s : samples) {
    csv += std::to_string(s.row) + "," + std::to_string(s.col) + "," +
           std::to_string(s.label) + "\n";
  }
  const std::string samples_path = join_out(out, "samples.csv");
  write_text(samples_path, csv);

  std::cout << di_path << "\n" << pre_path << "\n" << samples_path << "\n";
  return 0;
}

int cmd_train(const GlobalOpts& g, bool quiet) {
  const RunConfig cfg = resolved_config(g, true);
  const auto progress = [quiet](const EpochStats& s) {
    if (!quiet) std::cerr << history_line(s) << "\n";
  };
  const PipelineArtifacts a = run_pipeline(cfg, progress);
  if (!a.preclass_warning.empty()) {
    std::cerr << "warning: " << a.preclass_warning << "\n";
  }
  for (const std::string& path : write_pipeline_outputs(a, cfg)) {
    std::cout << path << "\n";
  }
  if (!a.metrics.empty()) std::cout << a.metrics << "\n";
  return 0;
}

int cmd_predict(const GlobalOpts& g, const std::string& checkpoint_path,
                const std::string& mode_name) {
  RunConfig cfg = resolved_config(g, true);
  if (!mode_name.empty()) {
    cfg.predict_mode = predict_mode_from_string(mode_name);
  }
  const ModelParams params = load_checkpoint(checkpoint_path, cfg.model);
  const InferenceInputs in = build_inference_inputs(cfg);
  const ChangeMap map = predict_change_map(in.target, in.di, in.preclass,
                                           params, in.support,
                                           cfg.predict_mode);
  fs::create_directories(cfg.out_dir);
  const std::string map_path = join_out(cfg.out_dir, "change_map.pgm");
  save_map(map, map_path);
  std::cout << map_path << "\n";
  return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& map_path,
                 const std::string& gt_path) {
  const ChangeMap cm = load_map(map_path);
  const ChangeMap gt = load_map(gt_path);
  const std::string metrics = metrics_json(confusion_counts(cm, gt));
  std::cout << metrics << "\n";
  if (!g.out_dir.empty()) {
    fs::create_directories(g.out_dir);
    write_text(join_out(g.out_dir, "metrics.json"), metrics + "\n");
  }
  return 0;
}

int cmd_sweep(const GlobalOpts& g, const std::string& axis,
              std::vector<double> values) {
  const RunConfig cfg = resolved_config(g, true);
  if (values.empty()) values = default_sweep_grid(axis);
  const ImagePair source = cfg.model.use_graph
                               ? load_dataset(cfg.source, "source")
                               : ImagePair{};
  const ImagePair target = load_dataset(cfg.target, "target");
  const SweepResult sweep = run_sweep(axis, values, source, target, cfg);
  const std::string path = join_out(cfg.out_dir, "sweep_" + axis + ".csv");
  fs::create_directories(cfg.out_dir);
  write_text(path, sweep.csv);
  std::cout << sweep.csv;
  std::cerr << "wrote " << path << "\n";
  return 0;
}

int cmd_ablate(const GlobalOpts& g, const std::vector<std::string>& variants,
               const std::vector<std::uint64_t>& seeds) {
  const RunConfig cfg = resolved_config(g, true);
  const ImagePair source = load_dataset(cfg.source, "source");
  const ImagePair target = load_dataset(cfg.target, "target");
  const AblationResult ablation =
      run_ablation(source, target, cfg, variants, seeds);
  const std::string path = join_out(cfg.out_dir, "ablation.csv");
  fs::create_directories(cfg.out_dir);
  write_text(path, ablation.csv);
  std::cout << ablation.csv;
  std::cerr << "wrote " << path << "\n";
  return 0;
}

int cmd_combine(const GlobalOpts& g, const std::vector<std::uint64_t>& seeds) {
  if (g.config_path.empty()) {
    throw ConfigError("combine needs --config <json> with a datasets array");
  }
  const RunConfig cfg = resolved_config(g, true);
  std::ifstream f(g.config_path);
  if (!f) throw IoError("cannot open config file: " + g.config_path);
  const std::string text((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
  std::vector<NamedDataset> datasets;
  for (const NamedDatasetPaths& d : parse_dataset_list(text)) {
    datasets.push_back({d.name, load_dataset(d.paths, d.name)});
  }
  const CombinationResult matrix = run_combination_matrix(datasets, cfg, seeds);
  const std::string path = join_out(cfg.out_dir, "combination.csv");
  fs::create_directories(cfg.out_dir);
  write_text(path, matrix.csv);
  std::cout << matrix.csv;
  std::cerr << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "Change detection for co-registered intensity image pairs: difference-"
      "image preclassification, graph-enhanced classification, and metric "
      "reporting."};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  CLI::Option* seed_opt =
      app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--out", g.out_dir, "Output directory");

  // gen-synth
  SynthConfig synth;
  CLI::App* gen = app.add_subcommand(
      "gen-synth", "Generate a speckled synthetic image pair with truth");
  gen->add_option("--height", synth.height, "Scene height (pixels)");
  gen->add_option("--width", synth.width, "Scene width (pixels)");
  gen->add_option("--regions", synth.n_regions, "Reflectance region count");
  gen->add_option("--change-fraction", synth.change_fraction,
                  "Target changed-pixel fraction (0, 0.5)");
  gen->add_option("--gain", synth.change_gain,
                  "Intensity gain inside changed regions");
  gen->add_option("--looks", synth.looks, "Speckle looks (L >= 1)");

  // preclassify
  std::string pc_img1, pc_img2, pc_gt;
  double pc_ratio = 0.03, pc_eps = 1e-6;
  CLI::App* pre = app.add_subcommand(
      "preclassify", "Difference image, three-way labels, training samples");
  pre->add_option("--img1", pc_img1, "First acquisition")->required();
  pre->add_option("--img2", pc_img2, "Second acquisition")->required();
  pre->add_option("--gt", pc_gt, "Optional ground-truth mask");
  pre->add_option("--ratio", pc_ratio, "Training sample ratio");
  pre->add_option("--eps", pc_eps, "Log-ratio stabilizer");

  // train
  bool train_quiet = false;
  CLI::App* tr = app.add_subcommand(
      "train", "Joint two-dataset training; writes checkpoint and history");
  tr->add_flag("--quiet", train_quiet, "Suppress per-epoch progress");

  // predict
  std::string ckpt_path, predict_mode;
  CLI::App* pr = app.add_subcommand(
      "predict", "Produce a change map from a checkpoint");
  pr->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  pr->add_option("--mode", predict_mode,
                 "uncertain_only (default) or full reclassification");

  // evaluate
  std::string ev_map, ev_gt;
  CLI::App* ev = app.add_subcommand(
      "evaluate", "Score a change map against ground truth");
  ev->add_option("--map", ev_map, "Predicted change map")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth mask")->required();

  // sweep
  std::string sweep_axis;
  std::vector<double> sweep_values;
  CLI::App* sw = app.add_subcommand(
      "sweep", "Sweep graph depth, patch side, or sample ratio");
  sw->add_option("--axis", sweep_axis, "n, r, or ratio")->required();
  sw->add_option("--values", sweep_values,
                 "Grid values (defaults to the standard grid)")
      ->delimiter(',');

  // ablate
  std::vector<std::string> ab_variants{"basic", "no_fusion", "gaussian",
                                       "full"};
  std::vector<std::uint64_t> ab_seeds{0, 1, 2, 3, 4};
  CLI::App* ab = app.add_subcommand(
      "ablate", "Train architecture variants and report PCC per seed");
  ab->add_option("--variants", ab_variants,
                 "Subset of basic,no_fusion,gaussian,full")
      ->delimiter(',');
  ab->add_option("--seeds", ab_seeds, "Seeds to average over")->delimiter(',');

  // combine
  std::vector<std::uint64_t> cb_seeds{0};
  CLI::App* cb = app.add_subcommand(
      "combine", "Source/target combination matrix over a dataset list");
  cb->add_option("--seeds", cb_seeds, "Seeds to average over")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen_synth(g, synth);
    if (pre->parsed()) {
      return cmd_preclassify(g, pc_img1, pc_img2, pc_gt, pc_ratio, pc_eps);
    }
    if (tr->parsed()) return cmd_train(g, train_quiet);
    if (pr->parsed()) return cmd_predict(g, ckpt_path, predict_mode);
    if (ev->parsed()) return cmd_evaluate(g, ev_map, ev_gt);
    if (sw->parsed()) return cmd_sweep(g, sweep_axis, sweep_values);
    if (ab->parsed()) return cmd_ablate(g, ab_variants, ab_seeds);
    if (cb->parsed()) return cmd_combine(g, cb_seeds);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace gks
