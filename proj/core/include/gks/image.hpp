// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gks {

// Single-channel intensity image with values in linear [0, 1].
struct Image {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const {
    return values[r * width + c];
  }
  double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  std::size_t pixels() const { return height * width; }
};

// Binary change map (1 = changed).
struct ChangeMap {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> labels;  // row-major, values 0/1

  std::uint8_t at(std::size_t r, std::size_t c) const {
    return labels[r * width + c];
  }
  std::size_t pixels() const { return height * width; }
  bool operator==(const ChangeMap& other) const {
    return height == other.height && width == other.width &&
           labels == other.labels;
  }
};

// Two co-registered intensity images plus optional ground truth.
struct ImagePair {
  Image img1, img2;
  std::optional<ChangeMap> ground_truth;

  std::size_t height() const { return img1.height; }
  std::size_t width() const { return img1.width; }
  // Throws unless extents agree and all intensities are >= 0.
  void validate() const;
};

// Grayscale image loaders/savers. The format is sniffed from the file
// content on load (PGM "P5" or PNG signature) and chosen by extension on
// save (".pgm" or ".png"). 8-bit and 16-bit grayscale are accepted; color
// images, other bit depths, and truncated files raise IoError with distinct
// messages. Pixel values scale linearly so maxval loads as 1.0.
Image load_image(const std::string& path);

// bit_depth is 8 or 16 (default 16, the canonical interchange depth).
// Values are clamped to [0, 1] and quantized.
void save_image(const Image& img, const std::string& path, int bit_depth = 16);

// Binary masks: nonzero (>= half of maxval) loads as 1. Saved as 0/255 8-bit.
ChangeMap load_map(const std::string& path);
void save_map(const ChangeMap& map, const std::string& path);

// Loads img1/img2 and optional ground truth, validating extents.
ImagePair load_pair(const std::string& img1_path, const std::string& img2_path,
                    const std::string& gt_path = "");

}  // namespace gks
