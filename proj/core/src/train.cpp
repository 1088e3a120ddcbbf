// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/train.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"

#include "gks/error.hpp"
#include "gks/optim.hpp"
#include "gks/rng.hpp"

namespace gks {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(base_lr > 0.0)) throw ConfigError("base learning rate must be positive");
  if (!(decay_factor > 0.0) || decay_factor > 1.0) {
    throw ConfigError("decay factor must lie in (0, 1]");
  }
  if (decay_every < 1) throw ConfigError("decay interval must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(loss_weight >= 0.0)) {
    throw ConfigError("source loss weight must be non-negative");
  }
}

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
  config.validate();
  if (epoch < 1) throw ConfigError("epochs are 1-based; got epoch 0");
  std::size_t decays = 0;
  if (epoch > config.hold_epochs) {
    decays = 1 + (epoch - config.hold_epochs - 1) / config.decay_every;
  }
  double lr = config.base_lr;
  for (std::size_t i = 0; i < decays; ++i) lr *= config.decay_factor;
  return lr;
}

std::vector<BatchPair> pair_batches(std::size_t n_source, std::size_t n_target,
                                    std::size_t batch_size, std::uint64_t seed,
                                    std::size_t epoch) {
  if (n_source < 1 || n_target < 1) {
    throw ConfigError("batch pairing requires nonempty datasets");
  }
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");

  Rng rng(Rng::derive(seed, epoch));
  std::vector<std::size_t> target_order(n_target), source_order(n_source);
  std::iota(target_order.begin(), target_order.end(), std::size_t{0});
  std::iota(source_order.begin(), source_order.end(), std::size_t{0});
  rng.shuffle(target_order);
  rng.shuffle(source_order);

  std::vector<BatchPair> batches;
  for (std::size_t start = 0; start < n_target; start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, n_target);
    BatchPair b;
    for (std::size_t p = start; p < stop; ++p) {
      b.target.push_back(target_order[p]);
      b.source.push_back(source_order[p % n_source]);
    }
    batches.push_back(std::move(b));
  }
  if (batches.size() > 1 && batches.back().target.size() == 1) {
    BatchPair tail = std::move(batches.back());
    batches.pop_back();
    batches.back().target.push_back(tail.target[0]);
    batches.back().source.push_back(tail.source[0]);
  }
  return batches;
}

std::string history_line(const EpochStats& stats) {
  nlohmann::ordered_json j;
  j["epoch"] = stats.epoch;
  j["lr"] = stats.lr;
  j["loss_target"] = stats.loss_target;
  j["loss_source"] = stats.loss_source;
  j["acc_target_train"] = stats.acc_target_train;
  return j.dump();
}

std::string history_jsonl(const std::vector<EpochStats>& history) {
  std::string out;
  for (const EpochStats& s : history) {
    out += history_line(s);
    out += '\n';
  }
  return out;
}

Tensor stack_patches(const PatchDataset& ds,
                     const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("cannot stack an empty batch");
  const std::size_t r = ds.patch_side;
  Tensor batch({indices.size(), r, r, 3});
  const std::size_t stride = r * r * 3;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const PatchSample& s = ds.samples.at(indices[i]);
    if (s.patch.numel() != stride) {
      throw ShapeError("patch sample does not match the dataset patch side");
    }
    std::copy(s.patch.data(), s.patch.data() + stride,
              batch.data() + i * stride);
  }
  return batch;
}

std::vector<int> gather_labels(const PatchDataset& ds,
                               const std::vector<std::size_t>& indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    const int label = ds.samples.at(idx).label;
    if (label != 0 && label != 1) {
      throw ConfigError("training sample carries label " +
                        std::to_string(label) + "; expected 0 or 1");
    }
    labels.push_back(label);
  }
  return labels;
}

namespace {

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z0 = logits.data()[i * 2];
    const double z1 = logits.data()[i * 2 + 1];
    const int pred = z1 > z0 ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  return correct;
}

[[noreturn]] void abort_non_finite(const Tape& tape, std::size_t epoch,
                                   std::size_t step) {
  const std::size_t idx = tape.first_non_finite();
  std::string culprit = idx < tape.size() ? tape.describe(idx)
                                          : "(all tape values finite)";
  throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                     ", step " + std::to_string(step) +
                     ": non-finite loss; first non-finite tensor: " + culprit);
}

}  // namespace

TrainResult train(const PatchDataset& source_ds, const PatchDataset& target_ds,
                  const ModelConfig& model_config,
                  const TrainConfig& train_config,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (target_ds.samples.size() < 2) {
    throw ConfigError("target dataset needs at least 2 samples");
  }
  if (target_ds.patch_side != model_config.patch_side) {
    throw ConfigError("target dataset patch side " +
                      std::to_string(target_ds.patch_side) +
                      " does not match the model patch side " +
                      std::to_string(model_config.patch_side));
  }
  if (model_config.use_graph) {
    if (source_ds.samples.empty()) {
      throw ConfigError("graph-enabled training needs a source dataset");
    }
    if (source_ds.patch_side != model_config.patch_side) {
      throw ConfigError("source dataset patch side " +
                        std::to_string(source_ds.patch_side) +
                        " does not match the model patch side " +
                        std::to_string(model_config.patch_side));
    }
  }

  TrainResult result;
  result.params =
      model_init(model_config,
                 Rng::derive(train_config.seed, seed_stream::kModelInit));
  const std::uint64_t batch_seed =
      Rng::derive(train_config.seed, seed_stream::kBatching);

  AdamState adam;
  const std::size_t n_source =
      model_config.use_graph ? source_ds.samples.size() : 1;

  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, train_config);
    const std::vector<BatchPair> batches =
        pair_batches(n_source, target_ds.samples.size(),
                     train_config.batch_size, batch_seed, epoch);

    double sum_loss_t = 0.0, sum_loss_s = 0.0;
    std::size_t n_seen = 0, n_correct = 0;

    for (std::size_t step = 0; step < batches.size(); ++step) {
      const BatchPair& batch = batches[step];
      Tape tape;
      std::vector<TrainableRef> refs;
      const ModelVars vars = register_model(tape, result.params, &refs);

      const Var target_batch =
          tape.leaf(stack_patches(target_ds, batch.target), "target_batch");
      const std::vector<int> target_labels =
          gather_labels(target_ds, batch.target);

      Var source_batch;  // invalid for graph-free configs
      std::vector<int> source_labels;
      if (model_config.use_graph) {
        source_batch =
            tape.leaf(stack_patches(source_ds, batch.source), "source_batch");
        source_labels = gather_labels(source_ds, batch.source);
      }

      const ForwardOutput out = model_forward(
          tape, target_batch, source_batch, vars, model_config, Mode::kTrain);
      const Var loss_t =
          cross_entropy(tape, out.target_logits, target_labels);
      Var loss = loss_t;
      double batch_loss_s = 0.0;
      if (model_config.use_graph) {
        const Var loss_s =
            cross_entropy(tape, out.source_logits, source_labels);
        batch_loss_s = tape.value(loss_s).item();
        // The source term rides along even at weight zero so its gradient
        // path stays on the tape and scales to exact zeros.
        loss = add_scaled(tape, loss_t, loss_s, train_config.loss_weight);
      }

      const double loss_value = tape.value(loss).item();
      if (!std::isfinite(loss_value)) abort_non_finite(tape, epoch, step);

      tape.backward(loss);

      std::vector<Tensor*> param_ptrs;
      std::vector<const Tensor*> grad_ptrs;
      param_ptrs.reserve(refs.size());
      grad_ptrs.reserve(refs.size());
      for (TrainableRef& ref : refs) {
        param_ptrs.push_back(ref.tensor);
        grad_ptrs.push_back(&tape.grad(ref.var));
      }
      adam_step(param_ptrs, grad_ptrs, lr, adam);

      for (const TrainableRef& ref : refs) {
        if (!ref.tensor->all_finite()) {
          throw NumericError("training aborted at epoch " +
                             std::to_string(epoch) + ", step " +
                             std::to_string(step) +
                             ": parameter became non-finite: " + ref.name);
        }
      }

      const std::size_t b = batch.target.size();
      sum_loss_t += tape.value(loss_t).item() * static_cast<double>(b);
      sum_loss_s += batch_loss_s * static_cast<double>(b);
      n_correct += count_correct(tape.value(out.target_logits), target_labels);
      n_seen += b;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.loss_target = sum_loss_t / static_cast<double>(n_seen);
    stats.loss_source = sum_loss_s / static_cast<double>(n_seen);
    stats.acc_target_train =
        static_cast<double>(n_correct) / static_cast<double>(n_seen);
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

SupportSet build_support_set(const PatchDataset& source_ds, std::size_t k,
                             std::uint64_t seed) {
  if (k < 1) throw ConfigError("support set size must be at least 1");
  if (k > source_ds.samples.size()) {
    throw ConfigError("support set size " + std::to_string(k) +
                      " exceeds the source dataset size " +
                      std::to_string(source_ds.samples.size()));
  }
  std::vector<std::size_t> order(source_ds.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.partial_shuffle(order, k);
  SupportSet support;
  support.samples.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    support.samples.push_back(source_ds.samples[order[i]]);
  }
  return support;
}

}  // namespace gks
