#pragma once

// Closed-form integration of the momentum mixture.
//
// Over [t_e, t_s] a single mode integrates to v * C(gamma, t_s, t_e) with
//
//   C(gamma, t_s, t_e) = (gamma^(1-t_e) - gamma^(1-t_s)) / ln(gamma)
//
// which tends to t_s - t_e as gamma -> 1. The mixture displacement
// Phi = sum_k pi_k v_k C(gamma_k, t_s, t_e) is subtracted from the latent when
// stepping from t_s down to t_e.

#include <cstddef>
#include <span>

#include "arcflow/momentum.hpp"

namespace arcflow {

/// Below this |ln gamma| the coefficient falls back to t_s - t_e.
inline constexpr double kLinearBranchEpsilon = 1e-6;

struct LatentState {
  Vec x;
  double t = 1.0;
};

struct TransitionRequest {
  const MomentumParams &theta;
  double t_s;
  double t_e;
};

/// Momentum integral coefficient. Accepts either time ordering
/// (C(g, a, b) = -C(g, b, a)); `branch_epsilon` exists as a test hook.
double momentum_coefficient(double gamma, double t_s, double t_e,
                            double branch_epsilon = kLinearBranchEpsilon);

/// Same as above with the factor given as ln(gamma).
double momentum_coefficient_log(double log_gamma, double t_s, double t_e,
                                double branch_epsilon = kLinearBranchEpsilon);

/// Phi(t_s, t_e): integral of the mixture velocity over [t_e, t_s].
Vec transition(const TransitionRequest &req);
Vec transition(const MomentumParams &theta, double t_s, double t_e);
void transition_into(const MomentumParams &theta, double t_s, double t_e, std::span<double> out);

/// x_{t_e} = x_{t_s} - Phi(t_s, t_e).
LatentState step(const LatentState &x, const MomentumParams &theta, double t_e);

/// Displacement over [t_b, t_a] as Phi(1, t_b) - Phi(1, t_a).
Vec sub_interval_displacement(const MomentumParams &theta, double t_a, double t_b);
void sub_interval_displacement_into(const MomentumParams &theta, double t_a, double t_b,
                                    std::span<double> out);

/// Adaptive Gauss-Kronrod (7/15) integration of eval_velocity over
/// [t_e, t_s] with absolute error <= tol per coordinate. Test oracle.
Vec quadrature_displacement(const MomentumParams &theta, double t_s, double t_e, double tol,
                            std::size_t max_intervals = 200000);

} // namespace arcflow
