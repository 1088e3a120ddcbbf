// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gks/model.hpp"
#include "gks/preclassify.hpp"

namespace gks {

// Fixed sub-stream tags fed to Rng::derive so every random decision in the
// pipeline draws from its own independent stream of the one user seed.
namespace seed_stream {
constexpr std::uint64_t kSourcePreclass = 1;
constexpr std::uint64_t kTargetPreclass = 2;
constexpr std::uint64_t kSourceSamples = 3;
constexpr std::uint64_t kTargetSamples = 4;
constexpr std::uint64_t kModelInit = 5;
constexpr std::uint64_t kBatching = 6;
constexpr std::uint64_t kSupport = 7;
}  // namespace seed_stream

struct TrainConfig {
  std::size_t epochs = 300;
  double base_lr = 1e-4;
  double decay_factor = 0.5;
  std::size_t hold_epochs = 100;  // epochs kept at base_lr before decaying
  std::size_t decay_every = 50;   // epochs between decays after the hold
  std::size_t batch_size = 32;
  double loss_weight = 1.0;  // weight of the source loss term
  std::uint64_t seed = 0;

  void validate() const;
};

// Piecewise-constant decay: base_lr through the hold window, then multiplied
// by decay_factor at hold+1, hold+decay_every+1, ... (1-based epochs).
double lr_schedule(std::size_t epoch, const TrainConfig& config);

// Index-aligned joint batches for one epoch: both sides are freshly shuffled
// under derive(seed, epoch), the target list is covered exactly once, the
// source list is cycled to match, and sample i of the source batch partners
// sample i of the target batch. A trailing single-sample batch is merged
// into its predecessor.
struct BatchPair {
  std::vector<std::size_t> source;  // indices into the source dataset
  std::vector<std::size_t> target;  // indices into the target dataset
};
std::vector<BatchPair> pair_batches(std::size_t n_source, std::size_t n_target,
                                    std::size_t batch_size, std::uint64_t seed,
                                    std::size_t epoch);

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_target = 0.0;
  double loss_source = 0.0;
  double acc_target_train = 0.0;
};

// One JSON line per epoch: {"epoch":..,"lr":..,"loss_target":..,
// "loss_source":..,"acc_target_train":..}.
std::string history_line(const EpochStats& stats);
std::string history_jsonl(const std::vector<EpochStats>& history);

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
};

// Joint optimization of both branches. Per step: forward source and target,
// loss = CE(target logits, target labels) + loss_weight * CE(source logits,
// source labels), reverse sweep, Adam update under lr_schedule. With a
// graph-free config only the target branch exists and the source dataset is
// ignored. A non-finite loss or parameter aborts with a diagnostic naming
// the first offending tensor. Bit-reproducible under identical inputs.
TrainResult train(const PatchDataset& source_ds, const PatchDataset& target_ds,
                  const ModelConfig& model_config,
                  const TrainConfig& train_config,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

// Fixed inference-time cache of source patches, paired round-robin with
// target patches at prediction.
struct SupportSet {
  std::vector<PatchSample> samples;
};

// k samples drawn uniformly without replacement; k must not exceed the
// dataset size. Deterministic under seed.
SupportSet build_support_set(const PatchDataset& source_ds, std::size_t k,
                             std::uint64_t seed);

// Stacks the selected samples into a [B, r, r, 3] batch tensor.
Tensor stack_patches(const PatchDataset& ds,
                     const std::vector<std::size_t>& indices);
std::vector<int> gather_labels(const PatchDataset& ds,
                               const std::vector<std::size_t>& indices);

}  // namespace gks
