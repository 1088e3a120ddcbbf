// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gks/image.hpp"
#include "gks/tensor.hpp"

namespace gks {

// Normalized per-pixel dissimilarity map in [0, 1].
struct DifferenceImage {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const {
    return values[r * width + c];
  }
  std::size_t pixels() const { return height * width; }
};

enum class PixelClass : std::uint8_t {
  kUnchanged = 0,
  kUncertain = 1,
  kChanged = 2,
};

// Three-way pseudo-label map from hierarchical clustering of the DI.
struct PreclassMap {
  std::size_t height = 0, width = 0;
  std::vector<PixelClass> labels;  // row-major

  PixelClass at(std::size_t r, std::size_t c) const {
    return labels[r * width + c];
  }
  std::size_t pixels() const { return height * width; }
  std::size_t count(PixelClass k) const;
};

// Absolute log-ratio |log((img2+eps)/(img1+eps))| min-max normalized over
// the image; a constant raw map yields all zeros.
DifferenceImage log_ratio_di(const ImagePair& pair, double eps = 1e-6);

struct FcmResult {
  std::vector<double> centers;      // c values, in initialization order
  std::vector<double> memberships;  // n x c row-major, rows sum to 1
  std::vector<double> objective;    // per-iteration objective (non-increasing)
  std::size_t iterations = 0;
};

// Fuzzy c-means on scalars. Centers start at evenly spread quantiles of the
// sorted values (deterministic; the seed parameter is reserved — no
// stochastic choice remains). Alternates membership and center updates until
// max center movement < tol or max_iter.
FcmResult fcm(const std::vector<double>& values, std::size_t clusters,
              double fuzzifier, double tol, std::size_t max_iter,
              std::uint64_t seed);

// Two-stage clustering of the DI: stage 1 (c=2) fixes thresholds m_low <
// m_high; stage 2 (c=5) hard-assigns pixels by maximum membership; clusters
// with center >= m_high become CHANGED, <= m_low UNCHANGED, the rest
// UNCERTAIN. A constant DI yields all-UNCHANGED and sets *warning. Fewer
// than 5 distinct DI values (but more than 1) is an error.
PreclassMap hierarchical_preclassify(const DifferenceImage& di,
                                     std::uint64_t seed,
                                     std::string* warning = nullptr);

// One training-sample coordinate: center pixel and binary label
// (1 = changed).
struct SampleRef {
  std::size_t row = 0, col = 0;
  int label = 0;
};

// Draws round(ratio * pixels) centers from CHANGED and UNCHANGED pixels
// without replacement, proportionally to class sizes but lifting the
// minority class to at least 20% of the draw when it has enough pixels.
// CHANGED samples come first in the returned list. Deterministic under seed.
std::vector<SampleRef> select_training_samples(const PreclassMap& map,
                                               double ratio,
                                               std::uint64_t seed);

// One network input: r x r x 3 patch (I1, I2, DI channels) centered at a
// pixel, with its label.
struct PatchSample {
  std::size_t row = 0, col = 0;
  int label = -1;  // 0/1; -1 when the label is not yet assigned
  Tensor patch;    // [r, r, 3]
};

// Precomputes the image-wide min-max normalized planes once so repeated
// patch extraction is cheap. Out-of-range offsets mirror across the border.
class PatchExtractor {
 public:
  PatchExtractor(const ImagePair& pair, const DifferenceImage& di);
  Tensor extract(std::size_t row, std::size_t col, std::size_t r) const;
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

 private:
  std::size_t height_ = 0, width_ = 0;
  std::vector<double> plane1_, plane2_, plane_di_;
};

// Single-patch convenience over PatchExtractor; label is attached verbatim.
PatchSample extract_patch(const ImagePair& pair, const DifferenceImage& di,
                          std::size_t row, std::size_t col, std::size_t r,
                          int label = -1);

// A set of patches sharing one patch side.
struct PatchDataset {
  std::size_t patch_side = 0;
  std::vector<PatchSample> samples;
};

enum class LabelSource {
  kPseudo,       // labels from the preclassification map
  kGroundTruth,  // labels read off pair.ground_truth at the sample centers
};

// Sample selection + patch extraction in one step. kGroundTruth requires
// pair.ground_truth and relabels the selected centers from it.
PatchDataset build_patch_dataset(const ImagePair& pair,
                                 const DifferenceImage& di,
                                 const PreclassMap& map, double ratio,
                                 std::size_t r, std::uint64_t seed,
                                 LabelSource label_source);

}  // namespace gks
