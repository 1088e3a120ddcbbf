// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "gks/image.hpp"

namespace gks {

// Parameters of the synthetic speckled scene generator.
struct SynthConfig {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t n_regions = 6;      // piecewise-constant reflectance cells
  double change_fraction = 0.15;  // target fraction of changed pixels
  double change_gain = 3.0;       // reflectance multiplier inside changes
  int looks = 4;                  // speckle looks L (variance 1/L)
  std::uint64_t seed = 0;

  void validate() const;
};

// Builds a co-registered pair: a piecewise-constant reflectance field
// (Voronoi cells of n_regions random sites), a change mask of random disks
// whose global radius scale is bisected until coverage lies within
// change_fraction +/- 0.03, gain applied inside the mask for the second
// acquisition, and independent per-pixel Gamma(L, 1/L) speckle on both.
// Output intensities are jointly quantized to 16-bit levels in [0, 1], so a
// PGM round-trip is lossless. ground_truth is the mask. Deterministic under
// the seed.
ImagePair generate_synthetic_pair(const SynthConfig& config);

}  // namespace gks
