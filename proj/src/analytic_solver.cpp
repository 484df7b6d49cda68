#include "arcflow/analytic_solver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "arcflow/error.hpp"

namespace arcflow {
namespace {

void check_interval(double t_s, double t_e) {
  if (!(t_e <= t_s)) {
    throw InvalidInterval("interval end " + std::to_string(t_e) + " is after start " +
                          std::to_string(t_s));
  }
  if (t_e < 0.0 || t_s > 1.0) {
    throw InvalidInterval("interval must lie in [0, 1]");
  }
}

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1] (QUADPACK qk15).
constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for the odd Kronrod nodes 1, 3, 5 and the centre.
constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

// Integrates the mixture velocity over [a, b]; writes Kronrod estimate and
// the max per-coordinate |Kronrod - Gauss|.
double gk15(const MomentumParams &theta, double a, double b, std::span<double> kronrod) {
  const std::size_t d = theta.dim();
  const double centre = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  std::vector<double> gauss(d, 0.0);
  std::vector<double> f(d);
  std::fill(kronrod.begin(), kronrod.end(), 0.0);

  eval_velocity_into(theta, centre, f);
  for (std::size_t j = 0; j < d; ++j) {
    kronrod[j] += kWgk[7] * f[j];
    gauss[j] += kWg[3] * f[j];
  }
  std::vector<double> g(d);
  for (std::size_t i = 0; i < 7; ++i) {
    const double dx = half * kXgk[i];
    eval_velocity_into(theta, centre - dx, f);
    eval_velocity_into(theta, centre + dx, g);
    for (std::size_t j = 0; j < d; ++j) {
      const double s = f[j] + g[j];
      kronrod[j] += kWgk[i] * s;
      if (i % 2 == 1) {
        gauss[j] += kWg[i / 2] * s;
      }
    }
  }
  double err = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    kronrod[j] *= half;
    err = std::max(err, std::abs(kronrod[j] - half * gauss[j]));
  }
  return err;
}

} // namespace

double momentum_coefficient_log(double log_gamma, double t_s, double t_e, double branch_epsilon) {
  if (std::abs(log_gamma) < branch_epsilon) {
    return t_s - t_e;
  }
  // gamma^(1-t_e) - gamma^(1-t_s) = gamma^(1-t_s) * (gamma^(t_s-t_e) - 1)
  return std::exp((1.0 - t_s) * log_gamma) * std::expm1((t_s - t_e) * log_gamma) / log_gamma;
}

double momentum_coefficient(double gamma, double t_s, double t_e, double branch_epsilon) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw InvalidParameter("momentum factor must be positive");
  }
  return momentum_coefficient_log(std::log(gamma), t_s, t_e, branch_epsilon);
}

void transition_into(const MomentumParams &theta, double t_s, double t_e, std::span<double> out) {
  check_interval(t_s, t_e);
  const std::size_t d = theta.dim();
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
  const auto pi = theta.gating();
  const auto lg = theta.log_gammas();
  for (std::size_t k = 0; k < theta.modes(); ++k) {
    const double w = pi[k] * momentum_coefficient_log(lg[k], t_s, t_e);
    const auto v = theta.velocity(k);
    for (std::size_t j = 0; j < d; ++j) {
      out[j] += w * v[j];
    }
  }
}

Vec transition(const MomentumParams &theta, double t_s, double t_e) {
  Vec out(theta.dim());
  transition_into(theta, t_s, t_e, out);
  return out;
}

Vec transition(const TransitionRequest &req) { return transition(req.theta, req.t_s, req.t_e); }

LatentState step(const LatentState &x, const MomentumParams &theta, double t_e) {
  if (t_e > x.t) {
    throw InvalidInterval("step target time is after the current time");
  }
  if (x.x.size() != theta.dim()) {
    throw InvalidParameter("latent and momentum params disagree on dimension");
  }
  LatentState out{x.x, t_e};
  const Vec phi = transition(theta, x.t, t_e);
  for (std::size_t j = 0; j < phi.size(); ++j) {
    out.x[j] -= phi[j];
  }
  return out;
}

void sub_interval_displacement_into(const MomentumParams &theta, double t_a, double t_b,
                                    std::span<double> out) {
  if (!(t_b <= t_a) || t_a > 1.0 || t_b < 0.0) {
    throw InvalidInterval("sub-interval must satisfy 0 <= t_b <= t_a <= 1");
  }
  const std::size_t d = theta.dim();
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
  const auto pi = theta.gating();
  const auto lg = theta.log_gammas();
  for (std::size_t k = 0; k < theta.modes(); ++k) {
    const double c = momentum_coefficient_log(lg[k], 1.0, t_b) -
                     momentum_coefficient_log(lg[k], 1.0, t_a);
    const double w = pi[k] * c;
    const auto v = theta.velocity(k);
    for (std::size_t j = 0; j < d; ++j) {
      out[j] += w * v[j];
    }
  }
}

Vec sub_interval_displacement(const MomentumParams &theta, double t_a, double t_b) {
  Vec out(theta.dim());
  sub_interval_displacement_into(theta, t_a, t_b, out);
  return out;
}

Vec quadrature_displacement(const MomentumParams &theta, double t_s, double t_e, double tol,
                            std::size_t max_intervals) {
  if (!(tol > 0.0)) {
    throw InvalidParameter("quadrature tolerance must be positive");
  }
  check_interval(t_s, t_e);
  const std::size_t d = theta.dim();
  Vec total(d, 0.0);
  const double width = t_s - t_e;
  if (width == 0.0) {
    return total;
  }

  struct Interval {
    double a, b;
  };
  std::vector<Interval> stack{{t_e, t_s}};
  Vec local(d);
  std::size_t evaluated = 0;
  while (!stack.empty()) {
    const Interval iv = stack.back();
    stack.pop_back();
    if (++evaluated > max_intervals) {
      throw ConvergenceError("quadrature exceeded its subdivision budget");
    }
    const double err = gk15(theta, iv.a, iv.b, local);
    const double allowed = tol * (iv.b - iv.a) / width;
    if (err <= allowed) {
      for (std::size_t j = 0; j < d; ++j) {
        total[j] += local[j];
      }
      continue;
    }
    const double mid = 0.5 * (iv.a + iv.b);
    if (!(mid > iv.a && mid < iv.b)) {
      throw ConvergenceError("quadrature interval collapsed before reaching tolerance");
    }
    stack.push_back({iv.a, mid});
    stack.push_back({mid, iv.b});
  }
  return total;
}

} // namespace arcflow
