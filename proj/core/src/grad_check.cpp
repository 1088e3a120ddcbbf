// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gks/error.hpp"

namespace gks {

namespace {

struct Eval {
  double loss;
  std::uint64_t fingerprint;
};

Eval evaluate(const TapeProgram& program, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  Var loss = program(tape, leaves);
  const Tensor& v = tape.value(loss);
  if (v.numel() != 1) {
    throw ShapeError("grad_check: program must return a scalar, got shape " +
                     shape_string(v.shape()));
  }
  return {v[0], tape.branch_fingerprint()};
}

}  // namespace

GradCheckReport grad_check(const TapeProgram& program,
                           const std::vector<Tensor>& params, double step,
                           double tol, const std::vector<std::string>& names,
                           std::size_t max_coords) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  if (!(tol > 0.0)) throw ConfigError("grad_check: tol must be positive");

  // Analytic gradients from one recorded backward pass.
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  Var loss = program(tape, leaves);
  if (tape.value(loss).numel() != 1) {
    throw ShapeError("grad_check: program must return a scalar");
  }
  tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Var v : leaves) analytic.push_back(tape.grad(v));

  GradCheckReport report;
  std::vector<Tensor> work = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckParam entry;
    entry.name = pi < names.size() ? names[pi] : "param" + std::to_string(pi);
    const std::size_t n = params[pi].numel();
    std::size_t probes = (max_coords == 0) ? n : std::min(n, max_coords);
    for (std::size_t s = 0; s < probes; ++s) {
      // Evenly spread probe coordinates (all of them when probes == n).
      const std::size_t k = (probes == n) ? s : (s * n) / probes;
      const double saved = work[pi][k];
      work[pi][k] = saved + step;
      const Eval hi = evaluate(program, work);
      work[pi][k] = saved - step;
      const Eval lo = evaluate(program, work);
      work[pi][k] = saved;
      if (hi.fingerprint != lo.fingerprint) {
        entry.excluded += 1;
        continue;
      }
      const double fd = (hi.loss - lo.loss) / (2.0 * step);
      const double an = analytic[pi][k];
      const double abs_err = std::fabs(fd - an);
      const double denom = std::max(std::fabs(fd), std::fabs(an));
      const double rel = denom > 0.0 ? abs_err / denom : 0.0;
      entry.compared += 1;
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      // Differences this small are below what central differences can
      // resolve at this step size (rounding of the two loss evaluations).
      const double fd_noise =
          4096.0 * 2.220446049250313e-16 *
          std::max({1.0, std::fabs(hi.loss), std::fabs(lo.loss)}) /
          (2.0 * step);
      if (abs_err <= fd_noise) continue;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      if (rel > tol) entry.pass = false;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.total_compared += entry.compared;
    report.total_excluded += entry.excluded;
    report.pass = report.pass && entry.pass;
    report.params.push_back(std::move(entry));
  }
  return report;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err
     << " compared=" << total_compared << " excluded=" << total_excluded
     << "\n";
  for (const GradCheckParam& p : params) {
    os << "  " << (p.pass ? "ok  " : "FAIL") << " " << p.name
       << " max_rel_err=" << p.max_rel_err << " compared=" << p.compared;
    if (p.excluded > 0) os << " excluded=" << p.excluded;
    os << "\n";
  }
  return os.str();
}

}  // namespace gks
