// Small helpers shared by the test binaries: random tensor filling, tensor
// comparison with useful failure output, and a self-cleaning temp directory.
#pragma once

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gks/rng.hpp"
#include "gks/tensor.hpp"

namespace testutil {

inline void fill_uniform(gks::Tensor& t, gks::Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
}

inline gks::Tensor rand_tensor(const std::vector<std::size_t>& shape,
                               gks::Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
  gks::Tensor t(shape);
  fill_uniform(t, rng, lo, hi);
  return t;
}

// Largest elementwise |a-b|; infinity when shapes differ so comparisons fail
// loudly instead of silently truncating.
inline double max_abs_diff(const gks::Tensor& a, const gks::Tensor& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

inline bool bitwise_equal(const gks::Tensor& a, const gks::Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    // Compare representations, not values, so -0.0 vs 0.0 and NaN are caught.
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0)
      return false;
  }
  return true;
}

// Unique scratch directory removed (recursively) when the test scope exits.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "gks_test") {
    std::string tmpl =
        (std::filesystem::temp_directory_path() / (tag + ".XXXXXX")).string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (::mkdtemp(buf.data()) == nullptr)
      throw std::runtime_error("mkdtemp failed for " + tmpl);
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

}  // namespace testutil
