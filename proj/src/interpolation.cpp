#include "arcflow/interpolation.hpp"

#include <cmath>
#include <limits>

#include "arcflow/error.hpp"

namespace arcflow {
namespace {

void require_distinct(const Vec &values, const char *what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = i + 1; j < values.size(); ++j) {
      if (values[i] == values[j]) {
        throw InvalidProblem(std::string("duplicate ") + what);
      }
    }
  }
}

} // namespace

Eigen::MatrixXd build_basis_matrix(const Vec &gammas, const Vec &timesteps) {
  if (gammas.empty() || timesteps.empty()) {
    throw InvalidProblem("basis matrix needs at least one gamma and one timestep");
  }
  for (double g : gammas) {
    if (!(g > 0.0) || !std::isfinite(g)) {
      throw InvalidProblem("momentum factors must be positive");
    }
  }
  require_distinct(gammas, "momentum factor");
  require_distinct(timesteps, "timestep");

  Eigen::MatrixXd m(static_cast<Eigen::Index>(timesteps.size()),
                    static_cast<Eigen::Index>(gammas.size()));
  for (std::size_t n = 0; n < timesteps.size(); ++n) {
    for (std::size_t k = 0; k < gammas.size(); ++k) {
      m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) =
          std::pow(gammas[k], 1.0 - timesteps[n]);
    }
  }
  return m;
}

double condition_number(const Eigen::MatrixXd &m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto &s = svd.singularValues();
  if (s.size() == 0 || s(s.size() - 1) == 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return s(0) / s(s.size() - 1);
}

InterpolationSolution solve_exact_fit(const InterpolationProblem &problem, double condition_cap) {
  const std::size_t n = problem.timesteps.size();
  const std::size_t k = problem.gammas.size();
  if (problem.targets.size() != n) {
    throw InvalidProblem("one target per timestep is required");
  }
  if (k < n) {
    throw InvalidProblem("exact fit needs at least as many modes as timesteps");
  }
  for (double t : problem.timesteps) {
    if (!(t > 0.0 && t <= 1.0)) {
      throw InvalidProblem("interpolation timesteps must lie in (0, 1]");
    }
  }
  const std::size_t d = problem.targets.front().size();
  for (const auto &target : problem.targets) {
    if (target.size() != d || d == 0) {
      throw InvalidProblem("targets must share one non-zero dimension");
    }
  }

  const Eigen::MatrixXd m = build_basis_matrix(problem.gammas, problem.timesteps);
  Eigen::MatrixXd b(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = problem.targets[i][j];
    }
  }

  Eigen::MatrixXd c;
  if (k == n) {
    c = m.fullPivLu().solve(b);
    // One round of refinement recovers most of the accuracy lost to
    // conditioning in the residual.
    const Eigen::MatrixXd r = b - m * c;
    c += m.fullPivLu().solve(r);
  } else {
    c = m.completeOrthogonalDecomposition().solve(b);
  }

  InterpolationSolution sol;
  sol.weights.assign(k, Vec(d, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      sol.weights[i][j] = c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  sol.residual_norm = (m * c - b).norm();
  sol.condition_estimate = condition_number(m);
  sol.ill_conditioned = !(sol.condition_estimate <= condition_cap);
  return sol;
}

MomentumParams to_momentum_params(const InterpolationSolution &solution, const Vec &gammas) {
  const std::size_t k = gammas.size();
  if (solution.weights.size() != k || k == 0) {
    throw InvalidProblem("solution and gamma basis disagree on mode count");
  }
  const std::size_t d = solution.weights.front().size();
  Vec gating(k, 1.0 / static_cast<double>(k));
  Vec velocities(k * d);
  Vec log_gammas(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      velocities[i * d + j] = static_cast<double>(k) * solution.weights[i][j];
    }
    log_gammas[i] = std::log(gammas[i]);
  }
  return MomentumParams(std::move(gating), std::move(velocities), std::move(log_gammas), d);
}

HaarReport verify_haar(const Vec &gammas, const Vec &timesteps) {
  const Eigen::MatrixXd m = build_basis_matrix(gammas, timesteps);
  if (m.rows() != m.cols()) {
    throw InvalidProblem("Haar check needs a square basis matrix");
  }
  HaarReport report;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  report.determinant = lu.determinant();
  report.condition_estimate = condition_number(m);
  // Full numerical rank: smallest singular value above rounding level.
  const double rank_floor =
      static_cast<double>(m.rows()) * std::numeric_limits<double>::epsilon();
  report.nonsingular = std::isfinite(report.condition_estimate) && report.determinant != 0.0 &&
                       std::isnormal(report.determinant) &&
                       1.0 / report.condition_estimate > rank_floor;
  return report;
}

} // namespace arcflow
