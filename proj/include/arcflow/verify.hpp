#pragma once

// Invariant suites run by `arcflow verify` and the acceptance binary. Each
// suite reports its worst measured value against a fixed tolerance.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "arcflow/analytic_solver.hpp"
#include "arcflow/teacher.hpp"

namespace arcflow {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Passed to the coefficient; 0 removes the linear branch (negative control).
  double branch_epsilon = kLinearBranchEpsilon;
};

/// |C(1 + delta) - (t_s - t_e)| <= 10 |delta| over 1e4 intervals and
/// delta in {+-1e-7, +-1e-5, 0}. Measured value is the worst error / bound.
SuiteResult suite_continuity(const VerifyOptions &opts);
/// Closed-form displacement vs adaptive quadrature (tol 1e-12) on 1000 mixtures.
SuiteResult suite_quadrature(const VerifyOptions &opts);
/// Phi(a, c) vs Phi(a, b) + Phi(b, c) over 1e4 splits.
SuiteResult suite_additivity(const VerifyOptions &opts);
/// Exact fit of N = K targets for K in {2, 4, 8}, 1000 trials.
SuiteResult suite_exact_fit(const VerifyOptions &opts);
/// Non-singularity of the basis matrix on the same 1000 trial layouts.
SuiteResult suite_haar(const VerifyOptions &opts);
/// Central differences (h = 1e-5) of the distillation loss at 100 probes.
SuiteResult suite_gradients(const VerifyOptions &opts);
/// lambda = 0 equals composed teacher Euler steps, lambda = 1 the analytic
/// step, over 1000 random shelves.
SuiteResult suite_degenerate(const VerifyOptions &opts);
/// gmm_velocity vs a self-normalized importance-sampling estimate of
/// E[x1 - x0 | x_t] at 20 probes; worst |z| over coordinates.
SuiteResult suite_teacher_mc(const VerifyOptions &opts);
/// Energy distance of 200-step Euler samples to fresh data against the
/// data-vs-data self-distance + 3 sigma.
SuiteResult suite_teacher_transport(const VerifyOptions &opts);

std::vector<SuiteResult> run_all_suites(const VerifyOptions &opts);

void print_suite(std::ostream &out, const SuiteResult &r);
void print_tolerance_table(std::ostream &out, const std::vector<SuiteResult> &results);

} // namespace arcflow
