#include "arcflow/momentum.hpp"

#include <cmath>
#include <string>

#include "arcflow/error.hpp"

namespace arcflow {

MomentumParams::MomentumParams(Vec gating, Vec base_velocities, Vec log_gammas, std::size_t dim,
                               std::optional<std::size_t> anchor_index)
    : gating_(std::move(gating)), velocities_(std::move(base_velocities)),
      log_gammas_(std::move(log_gammas)), dim_(dim), anchor_(anchor_index) {
  const std::size_t k = gating_.size();
  if (k == 0 || dim_ == 0) {
    throw InvalidParameter("momentum params need at least one mode and one dimension");
  }
  if (log_gammas_.size() != k || velocities_.size() != k * dim_) {
    throw InvalidParameter("momentum params: inconsistent K/D shapes");
  }
  double sum = 0.0;
  for (double p : gating_) {
    if (!(p >= 0.0)) {
      throw InvalidParameter("gating entries must be non-negative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw InvalidParameter("gating must sum to 1 (got " + std::to_string(sum) + ")");
  }
  for (double lg : log_gammas_) {
    if (!std::isfinite(lg)) {
      throw InvalidParameter("log gamma must be finite");
    }
  }
  if (anchor_) {
    if (*anchor_ >= k) {
      throw InvalidParameter("anchor index out of range");
    }
    if (log_gammas_[*anchor_] != 0.0) {
      throw InvalidParameter("anchor mode must have log gamma exactly 0");
    }
  }
}

double MomentumParams::gamma(std::size_t k) const { return std::exp(log_gammas_[k]); }

MomentumParams MomentumParams::scaled_velocities(double alpha) const {
  MomentumParams out = *this;
  for (double &v : out.velocities_) {
    v *= alpha;
  }
  return out;
}

MomentumParams MomentumParams::zeros(std::size_t modes, std::size_t dim) {
  return MomentumParams(Vec(modes, 1.0 / static_cast<double>(modes)), Vec(modes * dim, 0.0),
                        Vec(modes, 0.0), dim);
}

Vec extrapolate_velocity(std::span<const double> v_base, double gamma, double t_s, double t) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw InvalidParameter("momentum factor must be positive");
  }
  if (t > t_s) {
    throw InvalidInterval("extrapolation runs backwards in time only (t <= t_s)");
  }
  const double scale = std::exp((t_s - t) * std::log(gamma));
  Vec out(v_base.begin(), v_base.end());
  for (double &v : out) {
    v *= scale;
  }
  return out;
}

void eval_velocity_into(const MomentumParams &theta, double t, std::span<double> out) {
  const std::size_t d = theta.dim();
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = 0.0;
  }
  const auto pi = theta.gating();
  const auto lg = theta.log_gammas();
  for (std::size_t k = 0; k < theta.modes(); ++k) {
    const double w = pi[k] * std::exp((1.0 - t) * lg[k]);
    const auto v = theta.velocity(k);
    for (std::size_t j = 0; j < d; ++j) {
      out[j] += w * v[j];
    }
  }
}

Vec eval_velocity(const MomentumParams &theta, double t) {
  Vec out(theta.dim());
  eval_velocity_into(theta, t, out);
  return out;
}

LogGammaInit init_log_gammas(std::size_t modes, double range_lo, double range_hi) {
  if (modes == 0) {
    throw InvalidParameter("need at least one momentum mode");
  }
  if (!(range_lo > 0.0) || !(range_lo < 1.0) || !(range_hi > 1.0) || !std::isfinite(range_hi)) {
    throw InvalidParameter("gamma range must satisfy 0 < lo < 1 < hi");
  }
  LogGammaInit init;
  init.log_gammas.resize(modes);
  if (modes == 1) {
    init.log_gammas[0] = 0.0;
    init.anchor_index = 0;
    return init;
  }
  const double ratio = range_hi / range_lo;
  for (std::size_t k = 0; k < modes; ++k) {
    double g = range_lo * std::pow(ratio, static_cast<double>(k) / static_cast<double>(modes - 1));
    if (k == modes - 1) {
      g = range_hi;
    }
    init.log_gammas[k] = std::log(g);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < modes; ++k) {
    if (std::abs(init.log_gammas[k]) < std::abs(init.log_gammas[best])) {
      best = k;
    }
  }
  init.log_gammas[best] = 0.0;
  init.anchor_index = best;
  return init;
}

} // namespace arcflow
