// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "gks/image.hpp"
#include "gks/model.hpp"
#include "gks/preclassify.hpp"
#include "gks/train.hpp"

namespace gks {

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t oe() const { return fp + fn; }
  std::size_t total() const { return tp + tn + fp + fn; }
  std::size_t n_changed() const { return tp + fn; }    // ground-truth changed
  std::size_t n_unchanged() const { return tn + fp; }  // ground-truth unchanged
};

// Per-pixel counts; extents must match.
Confusion confusion_counts(const ChangeMap& cm, const ChangeMap& gt);

// Percentage of correctly classified pixels: (N_c + N_u - OE)/(N_c + N_u).
double pcc_percent(const Confusion& c);
// Same, from error counts alone (for published-table checks).
double pcc_from_errors(std::size_t fp, std::size_t fn, std::size_t total);

// Chance-corrected agreement in percent; empty when expected agreement PRE
// equals 1 (single-class ground truth matched exactly).
std::optional<double> kc_percent(const Confusion& c);

// 2TP/(2TP+FP+FN) as a fraction; empty when TP, FP, FN are all zero.
std::optional<double> f1_fraction(const Confusion& c);

// {"fp":..,"fn":..,"tp":..,"tn":..,"oe":..,"pcc":..,"kc":..,"f1":..} with
// pcc/kc rounded to 2 decimals and undefined metrics emitted as null.
std::string metrics_json(const Confusion& c);

enum class PredictMode { kUncertainOnly, kFull };
PredictMode predict_mode_from_string(const std::string& s);
const char* to_string(PredictMode m);

// Assembles the binary change map. uncertain_only keeps the preclassified
// changed/unchanged labels and runs the network only on uncertain pixels;
// full classifies every pixel. Target patches are paired round-robin with
// the support set. Deterministic; rejects non-finite parameters.
ChangeMap predict_change_map(const ImagePair& pair, const DifferenceImage& di,
                             const PreclassMap& preclass,
                             const ModelParams& params,
                             const SupportSet& support,
                             PredictMode mode = PredictMode::kUncertainOnly);

}  // namespace gks
