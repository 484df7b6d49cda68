#pragma once

// Exact interpolation of N target velocities with K >= N momentum modes.
//
// With the momentum factors held fixed, matching targets u_n at times t_n
// reduces to the linear system M c = b with M_nk = gamma_k^(1 - t_n) and
// composite weights c_k = pi_k v_k. Distinct gammas make the exponentials a
// Chebyshev system, so M is non-singular for distinct times.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "arcflow/momentum.hpp"

namespace arcflow {

struct InterpolationProblem {
  Vec timesteps;           // N distinct values in (0, 1]
  std::vector<Vec> targets; // N vectors in R^D
  Vec gammas;              // K distinct positive values, K >= N
};

struct InterpolationSolution {
  std::vector<Vec> weights; // K composite weights in R^D
  double residual_norm = 0.0;
  double condition_estimate = 0.0;
  bool ill_conditioned = false;
};

struct HaarReport {
  bool nonsingular = false;
  double condition_estimate = 0.0;
  double determinant = 0.0;
};

inline constexpr double kDefaultConditionCap = 1e12;

/// N x K matrix with entry (n, k) = gamma_k^(1 - t_n).
Eigen::MatrixXd build_basis_matrix(const Vec &gammas, const Vec &timesteps);

/// Solves M c = b per dimension. K = N is an exact solve; K > N returns the
/// minimum-norm solution. Conditioning above `condition_cap` sets
/// `ill_conditioned` but is not an error.
InterpolationSolution solve_exact_fit(const InterpolationProblem &problem,
                                      double condition_cap = kDefaultConditionCap);

/// Uniform gating with v_k = K * w_k, so pi_k v_k reproduces w_k.
MomentumParams to_momentum_params(const InterpolationSolution &solution, const Vec &gammas);

/// Numerical non-singularity check of the square basis matrix.
HaarReport verify_haar(const Vec &gammas, const Vec &timesteps);

/// Ratio of extreme singular values (infinity when rank deficient).
double condition_number(const Eigen::MatrixXd &m);

} // namespace arcflow
