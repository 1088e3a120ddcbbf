// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gks/tape.hpp"
#include "gks/tensor.hpp"

namespace gks {

// A differentiable program under test: given a tape and leaves created from
// the parameter list (same order), records a computation and returns its
// scalar loss node. The program must be a pure function of the leaf values;
// it is re-executed many times with perturbed parameters.
using TapeProgram =
    std::function<Var(Tape& tape, const std::vector<Var>& params)>;

struct GradCheckParam {
  std::string name;
  double max_rel_err = 0.0;   // over compared coordinates
  double max_abs_err = 0.0;
  std::size_t compared = 0;
  std::size_t excluded = 0;   // coordinates straddling a branch decision
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckParam> params;
  double max_rel_err = 0.0;
  std::size_t total_compared = 0;
  std::size_t total_excluded = 0;
  bool pass = true;

  std::string to_string() const;
};

// Central-difference validation of reverse-mode gradients: for every
// coordinate of every parameter, compares the tape gradient against
// (f(x+step) - f(x-step)) / (2 step). A coordinate passes when the absolute
// difference is <= tol or the relative error (against the larger magnitude)
// is <= tol.
//
// Coordinates whose two perturbed evaluations take different branches
// (detected by the tape's branch fingerprint, e.g. a ReLU input crossing 0)
// sit on a non-differentiable point; they are excluded from the comparison
// and counted in the report.
//
// When max_coords > 0, at most that many evenly spread coordinates per
// parameter are probed. `names` (optional) labels report entries.
GradCheckReport grad_check(const TapeProgram& program,
                           const std::vector<Tensor>& params, double step,
                           double tol,
                           const std::vector<std::string>& names = {},
                           std::size_t max_coords = 0);

}  // namespace gks
