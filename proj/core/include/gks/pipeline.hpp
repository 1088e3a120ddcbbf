// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gks/evaluate.hpp"
#include "gks/image.hpp"
#include "gks/model.hpp"
#include "gks/preclassify.hpp"
#include "gks/train.hpp"

namespace gks {

struct DatasetPaths {
  std::string img1, img2, ground_truth;  // ground_truth may be empty
  bool has_ground_truth() const { return !ground_truth.empty(); }
};

// Everything one experiment needs: data locations, architecture, training
// schedule, sampling, and output placement. JSON-loadable; unknown keys are
// rejected.
struct RunConfig {
  DatasetPaths source, target;
  ModelConfig model;
  TrainConfig train;
  double sample_ratio = 0.03;
  double di_eps = 1e-6;
  std::size_t support_size = 64;
  PredictMode predict_mode = PredictMode::kUncertainOnly;
  std::string out_dir = ".";

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& config);

// The "datasets" array of a combine config: unique names plus image paths.
struct NamedDatasetPaths {
  std::string name;
  DatasetPaths paths;
};
std::vector<NamedDatasetPaths> parse_dataset_list(const std::string& json_text);

// End-to-end products of one run.
struct PipelineArtifacts {
  DifferenceImage target_di;
  PreclassMap target_preclass;
  std::string preclass_warning;  // nonempty if the DI was degenerate
  TrainResult trained;
  SupportSet support;
  ChangeMap map;
  std::optional<Confusion> confusion;  // present when the target has truth
  std::string metrics;                 // metrics_json, empty without truth
};

// Difference image -> preclassification -> patch datasets -> joint training
// -> change map -> metrics. Source labels come from its ground truth when the
// pair carries one, otherwise from its own preclassification. All random
// decisions derive from train.seed via fixed sub-streams.
PipelineArtifacts run_pipeline_memory(
    const ImagePair& source, const ImagePair& target, const RunConfig& config,
    const std::function<void(const EpochStats&)>& on_epoch = {});

// Loads the image pairs from config paths, then runs in memory.
PipelineArtifacts run_pipeline(
    const RunConfig& config,
    const std::function<void(const EpochStats&)>& on_epoch = {});

// Writes checkpoint.bin, change_map.pgm, history.jsonl, and (with ground
// truth) metrics.json into config.out_dir; returns the paths written.
std::vector<std::string> write_pipeline_outputs(const PipelineArtifacts& a,
                                                const RunConfig& config);

// One in-memory experiment scored against the target's ground truth.
struct CellResult {
  Confusion confusion;
  double pcc = 0.0;
  std::optional<double> kc, f1;
  std::string metrics;
};
CellResult run_cell(const ImagePair& source, const ImagePair& target,
                    const RunConfig& base, std::uint64_t seed);

// Architecture variants of the ablation study.
ModelConfig variant_config(const ModelConfig& base, const std::string& variant);

struct AblationCell {
  std::string variant;
  std::uint64_t seed = 0;
  double pcc = 0.0;
};
struct AblationResult {
  std::vector<AblationCell> cells;                    // per (variant, seed)
  std::vector<std::pair<std::string, double>> means;  // per variant
  std::string csv;
};
// Trains every requested variant under every seed. Cells fan out to
// worker threads under the GKS_THREADS cap; results are independent of the
// fan-out.
AblationResult run_ablation(const ImagePair& source, const ImagePair& target,
                            const RunConfig& base,
                            const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds);

struct NamedDataset {
  std::string name;
  ImagePair pair;
};
struct CombinationResult {
  std::vector<std::string> names;
  // mean_pcc[i][j]: dataset i as source, dataset j as target; empty on the
  // diagonal.
  std::vector<std::vector<std::optional<double>>> mean_pcc;
  std::string csv;
};
// Every ordered (source, target) pair of distinct datasets, averaged over
// seeds.
CombinationResult run_combination_matrix(
    const std::vector<NamedDataset>& datasets, const RunConfig& base,
    const std::vector<std::uint64_t>& seeds);

struct SweepPoint {
  double value = 0.0;
  double pcc = 0.0;
  std::optional<double> kc, f1;
};
struct SweepResult {
  std::string axis;
  std::vector<SweepPoint> points;
  std::string csv;
};
// Default grids: n -> {1..5}, r -> {3,5,7,9,11,13}, ratio -> {1%..5%}.
std::vector<double> default_sweep_grid(const std::string& axis);
SweepResult run_sweep(const std::string& axis,
                      const std::vector<double>& values,
                      const ImagePair& source, const ImagePair& target,
                      const RunConfig& base);

}  // namespace gks
