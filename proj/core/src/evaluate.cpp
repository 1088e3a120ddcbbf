// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/evaluate.hpp"

#include <cmath>

#include "json.hpp"

#include "gks/error.hpp"

namespace gks {

Confusion confusion_counts(const ChangeMap& cm, const ChangeMap& gt) {
  if (cm.height != gt.height || cm.width != gt.width) {
    throw ShapeError("change map is " + std::to_string(cm.height) + "x" +
                     std::to_string(cm.width) + " but ground truth is " +
                     std::to_string(gt.height) + "x" +
                     std::to_string(gt.width));
  }
  Confusion c;
  for (std::size_t i = 0; i < cm.pixels(); ++i) {
    const bool pred = cm.labels[i] != 0;
    const bool truth = gt.labels[i] != 0;
    if (pred && truth) {
      ++c.tp;
    } else if (pred && !truth) {
      ++c.fp;
    } else if (!pred && truth) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double pcc_percent(const Confusion& c) {
  return pcc_from_errors(c.fp, c.fn, c.total());
}

double pcc_from_errors(std::size_t fp, std::size_t fn, std::size_t total) {
  if (total == 0) throw ConfigError("PCC needs a nonempty image");
  const double oe = static_cast<double>(fp) + static_cast<double>(fn);
  return (static_cast<double>(total) - oe) / static_cast<double>(total) *
         100.0;
}

std::optional<double> kc_percent(const Confusion& c) {
  if (c.total() == 0) throw ConfigError("KC needs a nonempty image");
  const double nc = static_cast<double>(c.n_changed());
  const double nu = static_cast<double>(c.n_unchanged());
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);
  const double total = nc + nu;
  const double pre = ((nc + fp - fn) * nc + (nu + fn - fp) * nu) / (total * total);
  if (pre >= 1.0) return std::nullopt;
  const double pcc_fraction =
      (static_cast<double>(c.tp) + static_cast<double>(c.tn)) / total;
  return (pcc_fraction - pre) / (1.0 - pre) * 100.0;
}

std::optional<double> f1_fraction(const Confusion& c) {
  const double denom = 2.0 * static_cast<double>(c.tp) +
                       static_cast<double>(c.fp) + static_cast<double>(c.fn);
  if (denom == 0.0) return std::nullopt;
  return 2.0 * static_cast<double>(c.tp) / denom;
}

namespace {
double round2(double v) { return std::round(v * 100.0) / 100.0; }
}  // namespace

std::string metrics_json(const Confusion& c) {
  nlohmann::ordered_json j;
  j["fp"] = c.fp;
  j["fn"] = c.fn;
  j["tp"] = c.tp;
  j["tn"] = c.tn;
  j["oe"] = c.oe();
  j["pcc"] = round2(pcc_percent(c));
  const std::optional<double> kc = kc_percent(c);
  if (kc) {
    j["kc"] = round2(*kc);
  } else {
    j["kc"] = nullptr;
  }
  const std::optional<double> f1 = f1_fraction(c);
  if (f1) {
    j["f1"] = *f1;
  } else {
    j["f1"] = nullptr;
  }
  return j.dump();
}

PredictMode predict_mode_from_string(const std::string& s) {
  if (s == "uncertain_only") return PredictMode::kUncertainOnly;
  if (s == "full") return PredictMode::kFull;
  throw ConfigError("unknown predict mode '" + s +
                    "' (expected uncertain_only or full)");
}

const char* to_string(PredictMode m) {
  return m == PredictMode::kUncertainOnly ? "uncertain_only" : "full";
}

ChangeMap predict_change_map(const ImagePair& pair, const DifferenceImage& di,
                             const PreclassMap& preclass,
                             const ModelParams& params,
                             const SupportSet& support, PredictMode mode) {
  params.config.validate();
  if (!params.all_finite()) {
    throw ConfigError(
        "model parameters contain non-finite values; refusing to predict");
  }
  if (preclass.height != pair.height() || preclass.width != pair.width()) {
    throw ShapeError("preclassification extents do not match the image pair");
  }
  const std::size_t r = params.config.patch_side;
  if (params.config.use_graph) {
    if (support.samples.empty()) {
      throw ConfigError("graph-enabled prediction needs a nonempty support set");
    }
    for (const PatchSample& s : support.samples) {
      if (s.patch.numel() != r * r * 3) {
        throw ShapeError("support patch does not match the model patch side");
      }
    }
  }

  ChangeMap map;
  map.height = pair.height();
  map.width = pair.width();
  map.labels.assign(map.pixels(), 0);

  std::vector<std::size_t> queue;  // flat pixel indices routed to the network
  for (std::size_t i = 0; i < map.pixels(); ++i) {
    switch (preclass.labels[i]) {
      case PixelClass::kChanged:
        map.labels[i] = 1;
        break;
      case PixelClass::kUnchanged:
        map.labels[i] = 0;
        break;
      case PixelClass::kUncertain:
        break;
    }
    if (mode == PredictMode::kFull || preclass.labels[i] == PixelClass::kUncertain) {
      queue.push_back(i);
    }
  }
  if (queue.empty()) return map;

  const PatchExtractor extractor(pair, di);
  // The registered tape needs mutable access to batch-norm state even though
  // inference never writes it; work on a private copy.
  ModelParams local = params;

  constexpr std::size_t kBatch = 256;
  const std::size_t patch_elems = r * r * 3;
  for (std::size_t start = 0; start < queue.size(); start += kBatch) {
    const std::size_t stop = std::min(start + kBatch, queue.size());
    const std::size_t b = stop - start;

    Tensor target_batch({b, r, r, 3});
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t flat = queue[start + i];
      const Tensor patch =
          extractor.extract(flat / map.width, flat % map.width, r);
      std::copy(patch.data(), patch.data() + patch_elems,
                target_batch.data() + i * patch_elems);
    }

    Tape tape;
    const ModelVars vars = register_model(tape, local, nullptr);
    const Var target_var = tape.leaf(std::move(target_batch), "predict_batch");
    Var source_var;
    if (params.config.use_graph) {
      Tensor source_batch({b, r, r, 3});
      for (std::size_t i = 0; i < b; ++i) {
        // Round-robin pairing by global queue position, so results do not
        // depend on the internal batch size.
        const PatchSample& s =
            support.samples[(start + i) % support.samples.size()];
        std::copy(s.patch.data(), s.patch.data() + patch_elems,
                  source_batch.data() + i * patch_elems);
      }
      source_var = tape.leaf(std::move(source_batch), "support_batch");
    }

    const ForwardOutput out = model_forward(tape, target_var, source_var, vars,
                                            params.config, Mode::kInfer);
    const Tensor& logits = tape.value(out.target_logits);
    for (std::size_t i = 0; i < b; ++i) {
      const double z0 = logits.data()[i * 2];
      const double z1 = logits.data()[i * 2 + 1];
      map.labels[queue[start + i]] = z1 > z0 ? 1 : 0;
    }
  }
  return map;
}

}  // namespace gks
