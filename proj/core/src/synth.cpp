// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/synth.hpp"

#include <cmath>
#include <vector>

#include "gks/error.hpp"
#include "gks/rng.hpp"

namespace gks {

void SynthConfig::validate() const {
  if (height < 16 || width < 16) {
    throw ConfigError("synthetic scene must be at least 16x16");
  }
  if (n_regions < 2) throw ConfigError("n_regions must be at least 2");
  if (!(change_fraction > 0.0 && change_fraction < 0.5)) {
    throw ConfigError("change_fraction must lie in (0, 0.5)");
  }
  if (change_gain == 1.0) {
    throw ConfigError("change_gain must differ from 1");
  }
  if (!(change_gain > 0.0)) {
    throw ConfigError("change_gain must be positive");
  }
  if (looks < 1) throw ConfigError("looks must be at least 1");
}

namespace {

struct Disk {
  double row, col, radius;
};

double mask_coverage(const std::vector<Disk>& disks, double scale,
                     std::size_t h, std::size_t w,
                     std::vector<std::uint8_t>* out) {
  std::size_t count = 0;
  if (out) out->assign(h * w, 0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      bool inside = false;
      for (const Disk& d : disks) {
        const double dr = static_cast<double>(r) - d.row;
        const double dc = static_cast<double>(c) - d.col;
        const double rad = d.radius * scale;
        if (dr * dr + dc * dc <= rad * rad) {
          inside = true;
          break;
        }
      }
      if (inside) {
        ++count;
        if (out) (*out)[r * w + c] = 1;
      }
    }
  }
  return static_cast<double>(count) / static_cast<double>(h * w);
}

}  // namespace

ImagePair generate_synthetic_pair(const SynthConfig& config) {
  config.validate();
  const std::size_t h = config.height, w = config.width;
  Rng rng(config.seed);

  // Piecewise-constant reflectance: nearest-site (Voronoi) cells.
  std::vector<double> site_r(config.n_regions), site_c(config.n_regions),
      site_level(config.n_regions);
  for (std::size_t i = 0; i < config.n_regions; ++i) {
    site_r[i] = rng.uniform(0.0, static_cast<double>(h));
    site_c[i] = rng.uniform(0.0, static_cast<double>(w));
    site_level[i] = rng.uniform(0.2, 1.0);
  }
  std::vector<double> reflectance(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double best = 1e300;
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < config.n_regions; ++i) {
        const double dr = static_cast<double>(r) - site_r[i];
        const double dc = static_cast<double>(c) - site_c[i];
        const double d2 = dr * dr + dc * dc;
        if (d2 < best) {
          best = d2;
          best_i = i;
        }
      }
      reflectance[r * w + c] = site_level[best_i];
    }
  }

  // Change mask: random disks, global radius scale bisected until coverage
  // lands inside the tolerance band.
  const double lo_band = config.change_fraction - 0.03;
  const double hi_band = config.change_fraction + 0.03;
  std::vector<std::uint8_t> mask;
  bool placed = false;
  const int max_layouts = 16;
  for (int attempt = 0; attempt < max_layouts && !placed; ++attempt) {
    std::vector<Disk> disks(3);
    const double min_extent = static_cast<double>(h < w ? h : w);
    for (Disk& d : disks) {
      d.row = rng.uniform(0.0, static_cast<double>(h));
      d.col = rng.uniform(0.0, static_cast<double>(w));
      d.radius = rng.uniform(0.10, 0.25) * min_extent;
    }
    double lo = 0.0, hi = 4.0;
    if (mask_coverage(disks, hi, h, w, nullptr) < lo_band) continue;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double cov = mask_coverage(disks, mid, h, w, nullptr);
      if (cov >= lo_band && cov <= hi_band) {
        mask_coverage(disks, mid, h, w, &mask);
        placed = true;
        break;
      }
      if (cov < config.change_fraction) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
  }
  if (!placed) {
    throw ConfigError(
        "could not place a change mask within change_fraction +/- 0.03 after "
        "bounded retries");
  }

  // Speckled acquisitions: I = reflectance * Gamma(L, 1/L) per pixel.
  const double L = static_cast<double>(config.looks);
  std::vector<double> i1(h * w), i2(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    i1[p] = reflectance[p] * (rng.gamma(L) / L);
  }
  for (std::size_t p = 0; p < h * w; ++p) {
    const double refl =
        mask[p] ? reflectance[p] * config.change_gain : reflectance[p];
    i2[p] = refl * (rng.gamma(L) / L);
  }

  // Joint 16-bit quantization: one shared scale keeps the intensity ratio
  // structure and makes PGM round-trips lossless.
  double peak = 0.0;
  for (double v : i1) peak = std::max(peak, v);
  for (double v : i2) peak = std::max(peak, v);
  if (peak <= 0.0) peak = 1.0;
  auto quantize = [peak](double v) {
    const double unit = v / peak;
    return std::llround(unit * 65535.0) / 65535.0;
  };
  ImagePair pair;
  pair.img1.height = pair.img2.height = h;
  pair.img1.width = pair.img2.width = w;
  pair.img1.values.resize(h * w);
  pair.img2.values.resize(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    pair.img1.values[p] = quantize(i1[p]);
    pair.img2.values[p] = quantize(i2[p]);
  }
  ChangeMap gt;
  gt.height = h;
  gt.width = w;
  gt.labels = std::move(mask);
  pair.ground_truth = std::move(gt);
  pair.validate();
  return pair;
}

}  // namespace gks
