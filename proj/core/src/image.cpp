// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "gks/error.hpp"

namespace gks {

void ImagePair::validate() const {
  if (img1.height != img2.height || img1.width != img2.width) {
    throw ShapeError("image pair extents differ: " +
                     std::to_string(img1.height) + "x" +
                     std::to_string(img1.width) + " vs " +
                     std::to_string(img2.height) + "x" +
                     std::to_string(img2.width));
  }
  if (img1.values.size() != img1.pixels() ||
      img2.values.size() != img2.pixels()) {
    throw ShapeError("image buffer size does not match extents");
  }
  for (double v : img1.values) {
    if (!(v >= 0.0)) throw ConfigError("img1 holds a negative intensity");
  }
  for (double v : img2.values) {
    if (!(v >= 0.0)) throw ConfigError("img2 holds a negative intensity");
  }
  if (ground_truth &&
      (ground_truth->height != img1.height ||
       ground_truth->width != img1.width)) {
    throw ShapeError("ground truth extents do not match the image pair");
  }
}

namespace {

// ---- PGM (P5) --------------------------------------------------------------

// Reads the next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) {
    throw IoError("truncated PGM header in " + path);
  }
  return tok;
}

std::size_t pgm_number(std::istream& in, const std::string& path,
                       const char* what) {
  const std::string tok = pgm_token(in, path);
  std::size_t value = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') {
      throw IoError(std::string("malformed PGM ") + what + " in " + path);
    }
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  return value;
}

Image load_pgm(std::istream& in, const std::string& path) {
  // "P5" was already consumed by the sniffer caller; header continues with
  // width, height, maxval, then one whitespace byte and the raw payload.
  const std::size_t width = pgm_number(in, path, "width");
  const std::size_t height = pgm_number(in, path, "height");
  const std::size_t maxval = pgm_number(in, path, "maxval");
  if (width == 0 || height == 0) {
    throw IoError("PGM with zero extent in " + path);
  }
  if (maxval == 0 || maxval > 65535) {
    throw IoError("unsupported bit depth (maxval " + std::to_string(maxval) +
                  ") in " + path);
  }
  Image img;
  img.height = height;
  img.width = width;
  img.values.resize(height * width);
  const bool wide = maxval > 255;
  const std::size_t bytes = height * width * (wide ? 2 : 1);
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw IoError("truncated PGM payload in " + path);
  }
  const double scale = 1.0 / static_cast<double>(maxval);
  if (wide) {
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      const std::size_t raw =
          (static_cast<std::size_t>(buf[2 * i]) << 8) | buf[2 * i + 1];
      img.values[i] = static_cast<double>(raw) * scale;
    }
  } else {
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      img.values[i] = static_cast<double>(buf[i]) * scale;
    }
  }
  return img;
}

void save_pgm(const Image& img, const std::string& path, int bit_depth) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const std::size_t maxval = bit_depth == 8 ? 255 : 65535;
  out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
  std::vector<unsigned char> buf;
  buf.reserve(img.pixels() * (bit_depth == 8 ? 1 : 2));
  for (double v : img.values) {
    const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    const std::size_t raw = static_cast<std::size_t>(
        std::llround(clamped * static_cast<double>(maxval)));
    if (bit_depth == 8) {
      buf.push_back(static_cast<unsigned char>(raw));
    } else {
      buf.push_back(static_cast<unsigned char>(raw >> 8));
      buf.push_back(static_cast<unsigned char>(raw & 0xff));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path);
}

// ---- PNG -------------------------------------------------------------------

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

Image load_png(const std::string& path) {
  FileHandle file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> data;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("truncated or corrupt PNG in " + path);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (color_type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("grayscale required: " + path + " is not single-channel");
  }
  if (bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported bit depth (" + std::to_string(bit_depth) +
                  ") in " + path);
  }
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  data.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = data.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img;
  img.height = height;
  img.width = width;
  img.values.resize(static_cast<std::size_t>(height) * width);
  if (bit_depth == 8) {
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      img.values[i] = static_cast<double>(data[i]) / 255.0;
    }
  } else {
    // PNG stores 16-bit samples big-endian.
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      const std::size_t raw =
          (static_cast<std::size_t>(data[2 * i]) << 8) | data[2 * i + 1];
      img.values[i] = static_cast<double>(raw) / 65535.0;
    }
  }
  return img;
}

void save_png(const Image& img, const std::string& path, int bit_depth) {
  FileHandle file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t maxval = bit_depth == 8 ? 255 : 65535;
  const std::size_t stride = img.width * (bit_depth == 8 ? 1 : 2);
  std::vector<unsigned char> row(stride);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      double v = img.values[r * img.width + c];
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      const std::size_t raw = static_cast<std::size_t>(
          std::llround(v * static_cast<double>(maxval)));
      if (bit_depth == 8) {
        row[c] = static_cast<unsigned char>(raw);
      } else {
        row[2 * c] = static_cast<unsigned char>(raw >> 8);
        row[2 * c + 1] = static_cast<unsigned char>(raw & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  unsigned char magic[8] = {0};
  in.read(reinterpret_cast<char*>(magic), 8);
  const std::streamsize got = in.gcount();
  static const unsigned char png_sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (got >= 2 && magic[0] == 'P' && magic[1] == '5') {
    in.clear();
    in.seekg(2);
    return load_pgm(in, path);
  }
  if (got == 8 && std::memcmp(magic, png_sig, 8) == 0) {
    in.close();
    return load_png(path);
  }
  throw IoError(path + " is neither a P5 PGM nor a PNG (unknown signature)");
}

void save_image(const Image& img, const std::string& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) {
    throw ConfigError("save_image: bit depth must be 8 or 16");
  }
  if (img.values.size() != img.pixels() || img.pixels() == 0) {
    throw ShapeError("save_image: image buffer does not match extents");
  }
  if (has_suffix(path, ".png")) {
    save_png(img, path, bit_depth);
  } else if (has_suffix(path, ".pgm")) {
    save_pgm(img, path, bit_depth);
  } else {
    throw ConfigError("save_image: unknown extension (want .pgm or .png): " +
                      path);
  }
}

ChangeMap load_map(const std::string& path) {
  const Image img = load_image(path);
  ChangeMap map;
  map.height = img.height;
  map.width = img.width;
  map.labels.resize(img.pixels());
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    map.labels[i] = img.values[i] >= 0.5 ? 1 : 0;
  }
  return map;
}

void save_map(const ChangeMap& map, const std::string& path) {
  if (map.labels.size() != map.pixels() || map.pixels() == 0) {
    throw ShapeError("save_map: map buffer does not match extents");
  }
  Image img;
  img.height = map.height;
  img.width = map.width;
  img.values.resize(map.pixels());
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    img.values[i] = map.labels[i] ? 1.0 : 0.0;
  }
  save_image(img, path, 8);
}

ImagePair load_pair(const std::string& img1_path, const std::string& img2_path,
                    const std::string& gt_path) {
  ImagePair pair;
  pair.img1 = load_image(img1_path);
  pair.img2 = load_image(img2_path);
  if (!gt_path.empty()) pair.ground_truth = load_map(gt_path);
  pair.validate();
  return pair;
}

}  // namespace gks
