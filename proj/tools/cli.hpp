// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace gks {

// Full command-line surface of the `gks` tool. Returns the process exit
// code; every failure path prints a single-line diagnostic to stderr.
int run_cli(int argc, const char* const* argv);

}  // namespace gks
