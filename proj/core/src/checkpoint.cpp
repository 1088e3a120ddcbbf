// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "gks/error.hpp"

namespace gks {
namespace {

constexpr char kMagic[8] = {'G', 'K', 'S', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kVersion = 1;

void put_u8(std::string& out, std::uint8_t v) {
  out.push_back(static_cast<char>(v));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(out, (v >> (8 * i)) & 0xff);
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) put_u8(out, (v >> (8 * i)) & 0xff);
}
void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("truncated checkpoint");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

void put_config(std::string& out, const ModelConfig& c) {
  put_u64(out, c.patch_side);
  put_u64(out, c.channels);
  put_u64(out, c.graph_dim);
  put_u64(out, c.graph_layers);
  put_u8(out, c.similarity == Similarity::kCosine ? 0 : 1);
  put_u8(out, c.fusion == Fusion::kFull ? 0 : 1);
  put_u64(out, c.hidden);
  put_u8(out, c.use_graph ? 1 : 0);
}

ModelConfig get_config(Reader& r) {
  ModelConfig c;
  c.patch_side = r.u64();
  c.channels = r.u64();
  c.graph_dim = r.u64();
  c.graph_layers = r.u64();
  const std::uint8_t sim = r.u8();
  if (sim > 1) throw IoError("checkpoint holds an unknown similarity code");
  c.similarity = sim == 0 ? Similarity::kCosine : Similarity::kGaussian;
  const std::uint8_t fus = r.u8();
  if (fus > 1) throw IoError("checkpoint holds an unknown fusion code");
  c.fusion = fus == 0 ? Fusion::kFull : Fusion::kNone;
  c.hidden = r.u64();
  c.use_graph = r.u8() != 0;
  return c;
}

void check_config_match(const ModelConfig& got, const ModelConfig& want) {
  const auto fail = [](const std::string& field, const std::string& got_v,
                       const std::string& want_v) {
    throw ConfigError("checkpoint config mismatch on " + field + ": file has " +
                      got_v + ", expected " + want_v);
  };
  const auto num = [&](const std::string& field, std::size_t g, std::size_t w) {
    if (g != w) fail(field, std::to_string(g), std::to_string(w));
  };
  num("patch_side", got.patch_side, want.patch_side);
  num("channels", got.channels, want.channels);
  num("graph_dim", got.graph_dim, want.graph_dim);
  num("graph_layers", got.graph_layers, want.graph_layers);
  if (got.similarity != want.similarity) {
    fail("similarity", to_string(got.similarity), to_string(want.similarity));
  }
  if (got.fusion != want.fusion) {
    fail("fusion", to_string(got.fusion), to_string(want.fusion));
  }
  num("hidden", got.hidden, want.hidden);
  if (got.use_graph != want.use_graph) {
    fail("use_graph", got.use_graph ? "true" : "false",
         want.use_graph ? "true" : "false");
  }
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  params.config.validate();
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_config(out, params.config);

  std::size_t count = 0;
  params.visit_state(
      [&count](const std::string&, const Tensor&) { ++count; });
  put_u64(out, count);
  params.visit_state([&out](const std::string& name, const Tensor& t) {
    put_u64(out, name.size());
    out.append(name);
    put_u64(out, t.rank());
    for (std::size_t a = 0; a < t.rank(); ++a) put_u64(out, t.dim(a));
    for (std::size_t i = 0; i < t.numel(); ++i) put_f64(out, t.data()[i]);
  });

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));

  const std::string magic = r.str(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file: " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("checkpoint format version " + std::to_string(version) +
                  " is not supported (expected " + std::to_string(kVersion) +
                  ")");
  }
  const ModelConfig config = get_config(r);
  config.validate();

  // Build a parameter skeleton with the right shapes, then overwrite every
  // tensor from the file in the same fixed order it was written.
  ModelParams params = model_init(config, 0);
  std::vector<std::pair<std::string, Tensor*>> slots;
  params.visit_state([&slots](const std::string& name, Tensor& t) {
    slots.emplace_back(name, &t);
  });

  const std::uint64_t count = r.u64();
  if (count != slots.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) +
                  " tensors; this config expects " +
                  std::to_string(slots.size()));
  }
  for (auto& [name, tensor] : slots) {
    const std::uint64_t name_len = r.u64();
    const std::string got_name = r.str(name_len);
    if (got_name != name) {
      throw IoError("checkpoint tensor order mismatch: found '" + got_name +
                    "', expected '" + name + "'");
    }
    const std::uint64_t rank = r.u64();
    std::vector<std::size_t> shape(rank);
    for (std::uint64_t a = 0; a < rank; ++a) shape[a] = r.u64();
    if (shape != tensor->shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " +
                    shape_string(shape) + "; this config expects " +
                    shape_string(tensor->shape()));
    }
    for (std::size_t i = 0; i < tensor->numel(); ++i) {
      tensor->data()[i] = r.f64();
    }
  }
  if (!r.exhausted()) {
    throw IoError("checkpoint has trailing bytes: " + path);
  }
  return params;
}

ModelParams load_checkpoint(const std::string& path,
                            const ModelConfig& expected) {
  ModelParams params = load_checkpoint(path);
  check_config_match(params.config, expected);
  return params;
}

}  // namespace gks
