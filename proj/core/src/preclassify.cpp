// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/preclassify.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gks/error.hpp"
#include "gks/rng.hpp"

namespace gks {

std::size_t PreclassMap::count(PixelClass k) const {
  std::size_t n = 0;
  for (PixelClass v : labels) {
    if (v == k) ++n;
  }
  return n;
}

DifferenceImage log_ratio_di(const ImagePair& pair, double eps) {
  if (!(eps > 0.0)) throw ConfigError("log_ratio_di: eps must be positive");
  pair.validate();
  DifferenceImage di;
  di.height = pair.height();
  di.width = pair.width();
  di.values.resize(di.pixels());
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < di.values.size(); ++i) {
    const double raw = std::fabs(std::log((pair.img2.values[i] + eps) /
                                          (pair.img1.values[i] + eps)));
    di.values[i] = raw;
    lo = std::min(lo, raw);
    hi = std::max(hi, raw);
  }
  if (hi > lo) {
    const double inv = 1.0 / (hi - lo);
    for (double& v : di.values) v = (v - lo) * inv;
  } else {
    for (double& v : di.values) v = 0.0;
  }
  return di;
}

FcmResult fcm(const std::vector<double>& values, std::size_t clusters,
              double fuzzifier, double tol, std::size_t max_iter,
              std::uint64_t seed) {
  (void)seed;  // reserved: initialization is quantile-based, no random draws
  if (clusters < 2) throw ConfigError("fcm: need at least 2 clusters");
  if (!(fuzzifier > 1.0)) throw ConfigError("fcm: fuzzifier must exceed 1");
  if (!(tol > 0.0)) throw ConfigError("fcm: tol must be positive");
  if (max_iter < 1) throw ConfigError("fcm: max_iter must be at least 1");
  const std::size_t n = values.size();
  std::vector<double> uniq(values);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < clusters) {
    throw ConfigError("fcm: " + std::to_string(uniq.size()) +
                      " distinct values cannot support " +
                      std::to_string(clusters) + " clusters");
  }

  FcmResult res;
  res.centers.resize(clusters);
  // Evenly spread quantiles of the distinct values: deterministic, distinct
  // by construction, and invariant under duplicating the dataset.
  for (std::size_t k = 0; k < clusters; ++k) {
    const std::size_t pos = ((2 * k + 1) * uniq.size()) / (2 * clusters);
    res.centers[k] = uniq[std::min(pos, uniq.size() - 1)];
  }

  res.memberships.assign(n * clusters, 0.0);
  const double expo = 2.0 / (fuzzifier - 1.0);
  std::vector<double> num(clusters), den(clusters);
  double prev_objective = 1e300;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    // Membership update for fixed centers.
    for (std::size_t i = 0; i < n; ++i) {
      double* urow = res.memberships.data() + i * clusters;
      std::size_t zeros = 0;
      for (std::size_t k = 0; k < clusters; ++k) {
        if (values[i] == res.centers[k]) ++zeros;
      }
      if (zeros > 0) {
        for (std::size_t k = 0; k < clusters; ++k) {
          urow[k] = values[i] == res.centers[k]
                        ? 1.0 / static_cast<double>(zeros)
                        : 0.0;
        }
        continue;
      }
      double total = 0.0;
      for (std::size_t k = 0; k < clusters; ++k) {
        const double d = std::fabs(values[i] - res.centers[k]);
        urow[k] = std::pow(1.0 / d, expo);
        total += urow[k];
      }
      const double inv = 1.0 / total;
      for (std::size_t k = 0; k < clusters; ++k) urow[k] *= inv;
    }
    // Center update for fixed memberships.
    std::fill(num.begin(), num.end(), 0.0);
    std::fill(den.begin(), den.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* urow = res.memberships.data() + i * clusters;
      for (std::size_t k = 0; k < clusters; ++k) {
        const double um = std::pow(urow[k], fuzzifier);
        num[k] += um * values[i];
        den[k] += um;
      }
    }
    double movement = 0.0;
    for (std::size_t k = 0; k < clusters; ++k) {
      const double next = den[k] > 0.0 ? num[k] / den[k] : res.centers[k];
      movement = std::max(movement, std::fabs(next - res.centers[k]));
      res.centers[k] = next;
    }
    // Objective after both half-steps; alternating minimization makes the
    // sequence non-increasing (checked with a small relative slack for
    // floating-point plateau wiggle).
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* urow = res.memberships.data() + i * clusters;
      for (std::size_t k = 0; k < clusters; ++k) {
        const double d = values[i] - res.centers[k];
        objective += std::pow(urow[k], fuzzifier) * d * d;
      }
    }
    if (objective > prev_objective + 1e-10 * std::max(1.0, prev_objective)) {
      throw NumericError("fcm: objective increased between iterations");
    }
    prev_objective = objective;
    res.objective.push_back(objective);
    res.iterations = iter + 1;
    if (movement < tol) break;
  }
  return res;
}

PreclassMap hierarchical_preclassify(const DifferenceImage& di,
                                     std::uint64_t seed,
                                     std::string* warning) {
  if (warning) warning->clear();
  if (di.values.size() != di.pixels() || di.pixels() == 0) {
    throw ShapeError("difference image buffer does not match extents");
  }
  PreclassMap map;
  map.height = di.height;
  map.width = di.width;

  std::set<double> distinct(di.values.begin(), di.values.end());
  if (distinct.size() == 1) {
    map.labels.assign(di.pixels(), PixelClass::kUnchanged);
    if (warning) {
      *warning = "difference image is constant; labeling every pixel "
                 "unchanged";
    }
    return map;
  }
  if (distinct.size() < 5) {
    throw ConfigError("hierarchical preclassification needs at least 5 "
                      "distinct difference values, got " +
                      std::to_string(distinct.size()));
  }

  const FcmResult stage1 = fcm(di.values, 2, 2.0, 1e-5, 100, seed);
  const double m_low = std::min(stage1.centers[0], stage1.centers[1]);
  const double m_high = std::max(stage1.centers[0], stage1.centers[1]);

  const FcmResult stage2 = fcm(di.values, 5, 2.0, 1e-5, 100, seed);
  std::vector<PixelClass> cluster_label(5);
  for (std::size_t k = 0; k < 5; ++k) {
    if (stage2.centers[k] >= m_high) {
      cluster_label[k] = PixelClass::kChanged;
    } else if (stage2.centers[k] <= m_low) {
      cluster_label[k] = PixelClass::kUnchanged;
    } else {
      cluster_label[k] = PixelClass::kUncertain;
    }
  }
  map.labels.resize(di.pixels());
  for (std::size_t i = 0; i < di.pixels(); ++i) {
    const double* urow = stage2.memberships.data() + i * 5;
    std::size_t best = 0;
    for (std::size_t k = 1; k < 5; ++k) {
      if (urow[k] > urow[best]) best = k;
    }
    map.labels[i] = cluster_label[best];
  }

  // Changed pixels must sit above unchanged pixels on the DI, on average.
  double sum_c = 0.0, sum_u = 0.0;
  std::size_t n_c = 0, n_u = 0;
  for (std::size_t i = 0; i < di.pixels(); ++i) {
    if (map.labels[i] == PixelClass::kChanged) {
      sum_c += di.values[i];
      ++n_c;
    } else if (map.labels[i] == PixelClass::kUnchanged) {
      sum_u += di.values[i];
      ++n_u;
    }
  }
  if (n_c > 0 && n_u > 0 && !(sum_c / n_c > sum_u / n_u)) {
    throw NumericError(
        "preclassification produced changed pixels with mean difference not "
        "above the unchanged mean");
  }
  return map;
}

std::vector<SampleRef> select_training_samples(const PreclassMap& map,
                                               double ratio,
                                               std::uint64_t seed) {
  if (!(ratio > 0.0)) throw ConfigError("sample ratio must be positive");
  std::vector<SampleRef> changed, unchanged;
  for (std::size_t r = 0; r < map.height; ++r) {
    for (std::size_t c = 0; c < map.width; ++c) {
      const PixelClass k = map.at(r, c);
      if (k == PixelClass::kChanged) {
        changed.push_back({r, c, 1});
      } else if (k == PixelClass::kUnchanged) {
        unchanged.push_back({r, c, 0});
      }
    }
  }
  if (changed.empty()) {
    throw ConfigError(
        "no changed pixels in the preclassification map; cannot train a "
        "2-class model");
  }
  if (unchanged.empty()) {
    throw ConfigError(
        "no unchanged pixels in the preclassification map; cannot train a "
        "2-class model");
  }
  const std::size_t n_total = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(map.pixels())));
  if (n_total == 0) {
    throw ConfigError("sample ratio draws zero samples on this image");
  }
  const std::size_t pool = changed.size() + unchanged.size();
  if (n_total > pool) {
    throw ConfigError("sample ratio requests " + std::to_string(n_total) +
                      " samples but only " + std::to_string(pool) +
                      " changed/unchanged pixels exist");
  }

  // Proportional split with largest-remainder rounding.
  const double qc = static_cast<double>(n_total) *
                    static_cast<double>(changed.size()) /
                    static_cast<double>(pool);
  std::size_t draw_c = static_cast<std::size_t>(qc);
  std::size_t draw_u = n_total - draw_c;
  if (qc - static_cast<double>(draw_c) >= 0.5 && draw_u > 0) {
    ++draw_c;
    --draw_u;
  }
  // Minority floor: lift the smaller class to >= 20% of the draw when it has
  // enough pixels.
  const std::size_t floor_k =
      (n_total + 4) / 5;  // ceil(0.2 * n_total)
  const bool changed_minor = changed.size() <= unchanged.size();
  std::size_t& minor_draw = changed_minor ? draw_c : draw_u;
  const std::size_t minor_size =
      changed_minor ? changed.size() : unchanged.size();
  if (minor_draw < floor_k) {
    minor_draw = std::min(floor_k, minor_size);
    (changed_minor ? draw_u : draw_c) = n_total - minor_draw;
  }
  // Cap each class at its population, spilling to the other (total fits the
  // pool by the check above).
  if (draw_c > changed.size()) {
    draw_u += draw_c - changed.size();
    draw_c = changed.size();
  }
  if (draw_u > unchanged.size()) {
    draw_c += draw_u - unchanged.size();
    draw_u = unchanged.size();
  }

  Rng rng(Rng::derive(seed, 0x5a3));
  rng.partial_shuffle(changed, draw_c);
  rng.partial_shuffle(unchanged, draw_u);
  std::vector<SampleRef> out;
  out.reserve(n_total);
  out.insert(out.end(), changed.begin(), changed.begin() + draw_c);
  out.insert(out.end(), unchanged.begin(), unchanged.begin() + draw_u);
  return out;
}

namespace {

// Image-wide min-max normalization to [0, 1]; constant planes become zeros.
std::vector<double> normalize_plane(const std::vector<double>& v) {
  double lo = 1e300, hi = -1e300;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::vector<double> out(v.size());
  if (hi > lo) {
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) * inv;
  }
  return out;
}

// Mirror reflection with edge duplication: -1 -> 0, n -> n-1, iterated for
// far offsets.
std::size_t reflect(long long t, std::size_t n) {
  const long long nn = static_cast<long long>(n);
  while (t < 0 || t >= nn) {
    if (t < 0) t = -1 - t;
    if (t >= nn) t = 2 * nn - 1 - t;
  }
  return static_cast<std::size_t>(t);
}

}  // namespace

PatchExtractor::PatchExtractor(const ImagePair& pair,
                               const DifferenceImage& di) {
  pair.validate();
  if (di.height != pair.height() || di.width != pair.width()) {
    throw ShapeError("difference image extents do not match the image pair");
  }
  height_ = pair.height();
  width_ = pair.width();
  plane1_ = normalize_plane(pair.img1.values);
  plane2_ = normalize_plane(pair.img2.values);
  plane_di_ = normalize_plane(di.values);
}

Tensor PatchExtractor::extract(std::size_t row, std::size_t col,
                               std::size_t r) const {
  if (r < 3 || r % 2 == 0) {
    throw ConfigError("patch side must be odd and at least 3, got " +
                      std::to_string(r));
  }
  if (row >= height_ || col >= width_) {
    throw ConfigError("patch center (" + std::to_string(row) + ", " +
                      std::to_string(col) + ") lies outside the image");
  }
  Tensor patch({r, r, 3});
  const long long half = static_cast<long long>(r / 2);
  for (std::size_t pr = 0; pr < r; ++pr) {
    const std::size_t sr = reflect(
        static_cast<long long>(row) + static_cast<long long>(pr) - half,
        height_);
    for (std::size_t pc = 0; pc < r; ++pc) {
      const std::size_t sc = reflect(
          static_cast<long long>(col) + static_cast<long long>(pc) - half,
          width_);
      const std::size_t src = sr * width_ + sc;
      double* cell = patch.data() + (pr * r + pc) * 3;
      cell[0] = plane1_[src];
      cell[1] = plane2_[src];
      cell[2] = plane_di_[src];
    }
  }
  return patch;
}

PatchSample extract_patch(const ImagePair& pair, const DifferenceImage& di,
                          std::size_t row, std::size_t col, std::size_t r,
                          int label) {
  PatchExtractor extractor(pair, di);
  PatchSample sample;
  sample.row = row;
  sample.col = col;
  sample.label = label;
  sample.patch = extractor.extract(row, col, r);
  return sample;
}

PatchDataset build_patch_dataset(const ImagePair& pair,
                                 const DifferenceImage& di,
                                 const PreclassMap& map, double ratio,
                                 std::size_t r, std::uint64_t seed,
                                 LabelSource label_source) {
  if (map.height != pair.height() || map.width != pair.width()) {
    throw ShapeError("preclassification map extents do not match the pair");
  }
  if (label_source == LabelSource::kGroundTruth && !pair.ground_truth) {
    throw ConfigError(
        "ground-truth labeling requested but the pair has no ground truth");
  }
  const std::vector<SampleRef> refs = select_training_samples(map, ratio, seed);
  PatchExtractor extractor(pair, di);
  PatchDataset ds;
  ds.patch_side = r;
  ds.samples.reserve(refs.size());
  for (const SampleRef& ref : refs) {
    PatchSample s;
    s.row = ref.row;
    s.col = ref.col;
    s.label = label_source == LabelSource::kGroundTruth
                  ? static_cast<int>(pair.ground_truth->at(ref.row, ref.col))
                  : ref.label;
    s.patch = extractor.extract(ref.row, ref.col, r);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace gks
