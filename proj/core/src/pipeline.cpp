// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

#include "gks/checkpoint.hpp"
#include "gks/error.hpp"
#include "gks/rng.hpp"
#include "gks/threads.hpp"

namespace gks {
namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::string& scope,
                         const std::set<std::string>& allowed) {
  for (const auto& item : obj.items()) {
    if (allowed.count(item.key()) == 0) {
      throw ConfigError("unknown config key '" +
                        (scope.empty() ? item.key() : scope + "." + item.key()) +
                        "'");
    }
  }
}

template <typename T>
void read_into(const json& obj, const std::string& scope,
               const std::string& key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + (scope.empty() ? key : scope + "." + key) +
                      "' has the wrong type: " + e.what());
  }
}

DatasetPaths parse_dataset(const json& obj, const std::string& scope) {
  reject_unknown_keys(obj, scope, {"img1", "img2", "ground_truth"});
  DatasetPaths p;
  read_into(obj, scope, "img1", p.img1);
  read_into(obj, scope, "img2", p.img2);
  read_into(obj, scope, "ground_truth", p.ground_truth);
  return p;
}

ModelConfig parse_model(const json& obj) {
  reject_unknown_keys(obj, "model",
                      {"patch_side", "channels", "graph_dim", "graph_layers",
                       "similarity", "fusion", "hidden", "use_graph"});
  ModelConfig m;
  read_into(obj, "model", "patch_side", m.patch_side);
  read_into(obj, "model", "channels", m.channels);
  read_into(obj, "model", "graph_dim", m.graph_dim);
  read_into(obj, "model", "graph_layers", m.graph_layers);
  if (obj.contains("similarity")) {
    m.similarity =
        similarity_from_string(obj.at("similarity").get<std::string>());
  }
  if (obj.contains("fusion")) {
    m.fusion = fusion_from_string(obj.at("fusion").get<std::string>());
  }
  read_into(obj, "model", "hidden", m.hidden);
  read_into(obj, "model", "use_graph", m.use_graph);
  return m;
}

TrainConfig parse_train(const json& obj) {
  reject_unknown_keys(obj, "train",
                      {"epochs", "base_lr", "decay_factor", "hold_epochs",
                       "decay_every", "batch_size", "loss_weight", "seed"});
  TrainConfig t;
  read_into(obj, "train", "epochs", t.epochs);
  read_into(obj, "train", "base_lr", t.base_lr);
  read_into(obj, "train", "decay_factor", t.decay_factor);
  read_into(obj, "train", "hold_epochs", t.hold_epochs);
  read_into(obj, "train", "decay_every", t.decay_every);
  read_into(obj, "train", "batch_size", t.batch_size);
  read_into(obj, "train", "loss_weight", t.loss_weight);
  read_into(obj, "train", "seed", t.seed);
  return t;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (!(sample_ratio > 0.0) || sample_ratio >= 1.0) {
    throw ConfigError("sample_ratio must lie in (0, 1)");
  }
  if (!(di_eps > 0.0)) throw ConfigError("di_eps must be positive");
  if (support_size < 1) throw ConfigError("support_size must be at least 1");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

RunConfig parse_run_config(const std::string& json_text) {
  json obj;
  try {
    obj = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ConfigError("config root must be a JSON object");
  reject_unknown_keys(obj, "",
                      {"source", "target", "model", "train", "sample_ratio",
                       "di_eps", "support_size", "predict_mode", "out_dir",
                       "datasets"});
  RunConfig c;
  if (obj.contains("source")) c.source = parse_dataset(obj.at("source"), "source");
  if (obj.contains("target")) c.target = parse_dataset(obj.at("target"), "target");
  if (obj.contains("model")) c.model = parse_model(obj.at("model"));
  if (obj.contains("train")) c.train = parse_train(obj.at("train"));
  read_into(obj, "", "sample_ratio", c.sample_ratio);
  read_into(obj, "", "di_eps", c.di_eps);
  read_into(obj, "", "support_size", c.support_size);
  if (obj.contains("predict_mode")) {
    c.predict_mode =
        predict_mode_from_string(obj.at("predict_mode").get<std::string>());
  }
  read_into(obj, "", "out_dir", c.out_dir);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::vector<NamedDatasetPaths> parse_dataset_list(const std::string& json_text) {
  json obj;
  try {
    obj = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!obj.is_object() || !obj.contains("datasets")) {
    throw ConfigError("config has no 'datasets' array");
  }
  const json& list = obj.at("datasets");
  if (!list.is_array() || list.size() < 2) {
    throw ConfigError("'datasets' must be an array of at least 2 entries");
  }
  std::vector<NamedDatasetPaths> out;
  std::set<std::string> seen;
  for (const json& entry : list) {
    if (!entry.is_object()) {
      throw ConfigError("'datasets' entries must be objects");
    }
    reject_unknown_keys(entry, "datasets[]",
                        {"name", "img1", "img2", "ground_truth"});
    NamedDatasetPaths d;
    read_into(entry, "datasets[]", "name", d.name);
    read_into(entry, "datasets[]", "img1", d.paths.img1);
    read_into(entry, "datasets[]", "img2", d.paths.img2);
    read_into(entry, "datasets[]", "ground_truth", d.paths.ground_truth);
    if (d.name.empty()) throw ConfigError("dataset entry needs a name");
    if (d.paths.img1.empty() || d.paths.img2.empty()) {
      throw ConfigError("dataset '" + d.name + "' needs img1 and img2 paths");
    }
    if (!seen.insert(d.name).second) {
      throw ConfigError("duplicate dataset name '" + d.name + "'");
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::string run_config_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["source"] = {{"img1", c.source.img1},
                 {"img2", c.source.img2},
                 {"ground_truth", c.source.ground_truth}};
  j["target"] = {{"img1", c.target.img1},
                 {"img2", c.target.img2},
                 {"ground_truth", c.target.ground_truth}};
  j["model"] = {{"patch_side", c.model.patch_side},
                {"channels", c.model.channels},
                {"graph_dim", c.model.graph_dim},
                {"graph_layers", c.model.graph_layers},
                {"similarity", to_string(c.model.similarity)},
                {"fusion", to_string(c.model.fusion)},
                {"hidden", c.model.hidden},
                {"use_graph", c.model.use_graph}};
  j["train"] = {{"epochs", c.train.epochs},
                {"base_lr", c.train.base_lr},
                {"decay_factor", c.train.decay_factor},
                {"hold_epochs", c.train.hold_epochs},
                {"decay_every", c.train.decay_every},
                {"batch_size", c.train.batch_size},
                {"loss_weight", c.train.loss_weight},
                {"seed", c.train.seed}};
  j["sample_ratio"] = c.sample_ratio;
  j["di_eps"] = c.di_eps;
  j["support_size"] = c.support_size;
  j["predict_mode"] = to_string(c.predict_mode);
  j["out_dir"] = c.out_dir;
  return j.dump(2);
}

PipelineArtifacts run_pipeline_memory(
    const ImagePair& source, const ImagePair& target, const RunConfig& config,
    const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  const std::uint64_t seed = config.train.seed;
  PipelineArtifacts a;

  a.target_di = log_ratio_di(target, config.di_eps);
  a.target_preclass = hierarchical_preclassify(
      a.target_di, Rng::derive(seed, seed_stream::kTargetPreclass),
      &a.preclass_warning);
  const PatchDataset target_ds = build_patch_dataset(
      target, a.target_di, a.target_preclass, config.sample_ratio,
      config.model.patch_side, Rng::derive(seed, seed_stream::kTargetSamples),
      LabelSource::kPseudo);

  PatchDataset source_ds;
  source_ds.patch_side = config.model.patch_side;
  if (config.model.use_graph) {
    const DifferenceImage source_di = log_ratio_di(source, config.di_eps);
    const PreclassMap source_preclass = hierarchical_preclassify(
        source_di, Rng::derive(seed, seed_stream::kSourcePreclass), nullptr);
    source_ds = build_patch_dataset(
        source, source_di, source_preclass, config.sample_ratio,
        config.model.patch_side,
        Rng::derive(seed, seed_stream::kSourceSamples),
        source.ground_truth ? LabelSource::kGroundTruth
                            : LabelSource::kPseudo);
  }

  a.trained = train(source_ds, target_ds, config.model, config.train, on_epoch);

  if (config.model.use_graph) {
    // Small runs may select fewer source samples than the configured support
    // size; the pipeline clamps rather than failing the whole run.
    const std::size_t k =
        std::min(config.support_size, source_ds.samples.size());
    a.support =
        build_support_set(source_ds, k, Rng::derive(seed, seed_stream::kSupport));
  }

  a.map = predict_change_map(target, a.target_di, a.target_preclass,
                             a.trained.params, a.support, config.predict_mode);

  if (target.ground_truth) {
    a.confusion = confusion_counts(a.map, *target.ground_truth);
    a.metrics = metrics_json(*a.confusion);
  }
  return a;
}

PipelineArtifacts run_pipeline(
    const RunConfig& config,
    const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  const ImagePair target = load_pair(config.target.img1, config.target.img2,
                                     config.target.ground_truth);
  ImagePair source;
  if (config.model.use_graph) {
    source = load_pair(config.source.img1, config.source.img2,
                       config.source.ground_truth);
  }
  return run_pipeline_memory(source, target, config, on_epoch);
}

std::vector<std::string> write_pipeline_outputs(const PipelineArtifacts& a,
                                                const RunConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);
  std::vector<std::string> written;
  const auto out = [&](const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
  };

  const std::string ckpt = out("checkpoint.bin");
  save_checkpoint(a.trained.params, ckpt);
  written.push_back(ckpt);

  const std::string map_path = out("change_map.pgm");
  save_map(a.map, map_path);
  written.push_back(map_path);

  const std::string hist = out("history.jsonl");
  {
    std::ofstream f(hist, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + hist);
    const std::string text = history_jsonl(a.trained.history);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
  }
  written.push_back(hist);

  if (!a.metrics.empty()) {
    const std::string met = out("metrics.json");
    std::ofstream f(met, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + met);
    f << a.metrics << '\n';
    written.push_back(met);
  }
  return written;
}

CellResult run_cell(const ImagePair& source, const ImagePair& target,
                    const RunConfig& base, std::uint64_t seed) {
  if (!target.ground_truth) {
    throw ConfigError(
        "experiment cells need target ground truth to score PCC");
  }
  RunConfig config = base;
  config.train.seed = seed;
  const PipelineArtifacts a = run_pipeline_memory(source, target, config);
  CellResult r;
  r.confusion = *a.confusion;
  r.pcc = pcc_percent(r.confusion);
  r.kc = kc_percent(r.confusion);
  r.f1 = f1_fraction(r.confusion);
  r.metrics = a.metrics;
  return r;
}

ModelConfig variant_config(const ModelConfig& base, const std::string& variant) {
  ModelConfig m = base;
  if (variant == "basic") {
    m.use_graph = false;
  } else if (variant == "no_fusion") {
    m.use_graph = true;
    m.fusion = Fusion::kNone;
  } else if (variant == "gaussian") {
    m.use_graph = true;
    m.fusion = Fusion::kFull;
    m.similarity = Similarity::kGaussian;
  } else if (variant == "full") {
    m.use_graph = true;
    m.fusion = Fusion::kFull;
    m.similarity = Similarity::kCosine;
  } else {
    throw ConfigError("unknown ablation variant '" + variant +
                      "' (expected basic, no_fusion, gaussian, or full)");
  }
  return m;
}

namespace {
std::string format2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}
}  // namespace

AblationResult run_ablation(const ImagePair& source, const ImagePair& target,
                            const RunConfig& base,
                            const std::vector<std::string>& variants,
                            const std::vector<std::uint64_t>& seeds) {
  if (variants.empty()) throw ConfigError("ablation needs at least one variant");
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  for (const std::string& v : variants) variant_config(base.model, v);

  AblationResult result;
  result.cells.resize(variants.size() * seeds.size());
  parallel_cells(result.cells.size(), [&](std::size_t job) {
    const std::size_t vi = job / seeds.size();
    const std::size_t si = job % seeds.size();
    RunConfig config = base;
    config.model = variant_config(base.model, variants[vi]);
    const CellResult cell = run_cell(source, target, config, seeds[si]);
    result.cells[job] = {variants[vi], seeds[si], cell.pcc};
  });

  std::string csv = "variant,seed,pcc\n";
  for (const AblationCell& c : result.cells) {
    csv += c.variant + "," + std::to_string(c.seed) + "," + format2(c.pcc) + "\n";
  }
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    double sum = 0.0;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      sum += result.cells[vi * seeds.size() + si].pcc;
    }
    const double mean = sum / static_cast<double>(seeds.size());
    result.means.emplace_back(variants[vi], mean);
    csv += variants[vi] + ",mean," + format2(mean) + "\n";
  }
  result.csv = std::move(csv);
  return result;
}

CombinationResult run_combination_matrix(
    const std::vector<NamedDataset>& datasets, const RunConfig& base,
    const std::vector<std::uint64_t>& seeds) {
  if (datasets.size() < 2) {
    throw ConfigError("combination matrix needs at least 2 datasets");
  }
  if (seeds.empty()) throw ConfigError("combination matrix needs at least one seed");

  const std::size_t n = datasets.size();
  CombinationResult result;
  result.names.reserve(n);
  for (const NamedDataset& d : datasets) result.names.push_back(d.name);
  result.mean_pcc.assign(n, std::vector<std::optional<double>>(n));

  struct Job {
    std::size_t si, ti;
  };
  std::vector<Job> jobs;
  for (std::size_t si = 0; si < n; ++si) {
    for (std::size_t ti = 0; ti < n; ++ti) {
      if (si != ti) jobs.push_back({si, ti});
    }
  }
  std::vector<double> cell_pcc(jobs.size() * seeds.size(), 0.0);
  parallel_cells(cell_pcc.size(), [&](std::size_t k) {
    const Job& job = jobs[k / seeds.size()];
    const std::uint64_t seed = seeds[k % seeds.size()];
    const CellResult cell =
        run_cell(datasets[job.si].pair, datasets[job.ti].pair, base, seed);
    cell_pcc[k] = cell.pcc;
  });
  for (std::size_t jrow = 0; jrow < jobs.size(); ++jrow) {
    double sum = 0.0;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      sum += cell_pcc[jrow * seeds.size() + si];
    }
    result.mean_pcc[jobs[jrow].si][jobs[jrow].ti] =
        sum / static_cast<double>(seeds.size());
  }

  std::string csv = "source\\target";
  for (const std::string& name : result.names) csv += "," + name;
  csv += "\n";
  for (std::size_t si = 0; si < n; ++si) {
    csv += result.names[si];
    for (std::size_t ti = 0; ti < n; ++ti) {
      csv += ",";
      csv += result.mean_pcc[si][ti] ? format2(*result.mean_pcc[si][ti]) : "---";
    }
    csv += "\n";
  }
  result.csv = std::move(csv);
  return result;
}

std::vector<double> default_sweep_grid(const std::string& axis) {
  if (axis == "n") return {1, 2, 3, 4, 5};
  if (axis == "r") return {3, 5, 7, 9, 11, 13};
  if (axis == "ratio") return {0.01, 0.02, 0.03, 0.04, 0.05};
  throw ConfigError("unknown sweep axis '" + axis +
                    "' (expected n, r, or ratio)");
}

SweepResult run_sweep(const std::string& axis,
                      const std::vector<double>& values,
                      const ImagePair& source, const ImagePair& target,
                      const RunConfig& base) {
  default_sweep_grid(axis);  // validates the axis name
  if (values.empty()) throw ConfigError("sweep needs at least one value");

  const auto apply = [&](double v) {
    RunConfig config = base;
    if (axis == "n") {
      const auto n = static_cast<std::size_t>(std::llround(v));
      if (n < 1 || static_cast<double>(n) != v) {
        throw ConfigError("sweep over n needs positive integers");
      }
      config.model.graph_layers = n;
    } else if (axis == "r") {
      const auto r = static_cast<std::size_t>(std::llround(v));
      if (static_cast<double>(r) != v || r < 3 || r % 2 == 0) {
        throw ConfigError("sweep over r needs odd integers of at least 3");
      }
      config.model.patch_side = r;
    } else {
      config.sample_ratio = v;
    }
    return config;
  };
  for (double v : values) apply(v).validate();

  SweepResult result;
  result.axis = axis;
  result.points.resize(values.size());
  parallel_cells(values.size(), [&](std::size_t i) {
    const RunConfig config = apply(values[i]);
    const CellResult cell = run_cell(source, target, config, config.train.seed);
    result.points[i] = {values[i], cell.pcc, cell.kc, cell.f1};
  });

  std::string csv = axis + ",pcc,kc,f1\n";
  for (const SweepPoint& p : result.points) {
    const bool integral = axis != "ratio";
    csv += integral ? std::to_string(static_cast<long long>(p.value))
                    : format2(p.value * 100.0) + "%";
    csv += "," + format2(p.pcc);
    csv += ",";
    csv += p.kc ? format2(*p.kc) : "undefined";
    csv += ",";
    csv += p.f1 ? format2(*p.f1) : "undefined";
    csv += "\n";
  }
  result.csv = std::move(csv);
  return result;
}

}  // namespace gks
