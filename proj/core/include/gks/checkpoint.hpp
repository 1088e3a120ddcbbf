// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "gks/model.hpp"

namespace gks {

// Versioned little-endian binary snapshot: magic, format version, config
// echo, then every named state tensor (shape + row-major payload) in the
// fixed visit_state order. Byte-for-byte reproducible for equal params.
void save_checkpoint(const ModelParams& params, const std::string& path);

// Rebuilds the full parameter set. Corrupt, truncated, or version-mismatched
// files throw IoError without returning partial state.
ModelParams load_checkpoint(const std::string& path);

// Same, but additionally requires the stored config to equal `expected`
// (throws ConfigError naming the first differing field otherwise).
ModelParams load_checkpoint(const std::string& path,
                            const ModelConfig& expected);

}  // namespace gks
