#pragma once

// Momentum-mixture velocity parameterization.
//
// A single mode carries a base velocity v (anchored at t = 1) and a momentum
// factor gamma; its velocity at time t is v * gamma^(1 - t). A bundle of K
// modes is gated by a probability vector pi:
//
//   v(t) = sum_k pi_k * v_k * gamma_k^(1 - t)
//
// Time runs from t = 1 (noise) to t = 0 (data).

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace arcflow {

using Vec = std::vector<double>;

/// Per-prediction parameter bundle: gating, base velocities, log momentum
/// factors for K modes in D dimensions. Validated on construction and
/// immutable afterwards.
class MomentumParams {
public:
  MomentumParams() = default;

  /// `base_velocities` is K*D row-major. `anchor_index`, when present, must
  /// name a mode whose log-gamma is exactly zero.
  MomentumParams(Vec gating, Vec base_velocities, Vec log_gammas, std::size_t dim,
                 std::optional<std::size_t> anchor_index = std::nullopt);

  std::size_t modes() const { return gating_.size(); }
  std::size_t dim() const { return dim_; }

  std::span<const double> gating() const { return gating_; }
  std::span<const double> log_gammas() const { return log_gammas_; }
  std::span<const double> base_velocities() const { return velocities_; }
  std::span<const double> velocity(std::size_t k) const {
    return std::span<const double>(velocities_).subspan(k * dim_, dim_);
  }
  double gamma(std::size_t k) const;
  std::optional<std::size_t> anchor_index() const { return anchor_; }

  /// Copy with base velocities multiplied by `alpha`.
  MomentumParams scaled_velocities(double alpha) const;

  /// A zero-velocity bundle with K uniform modes, all gamma = 1.
  static MomentumParams zeros(std::size_t modes, std::size_t dim);

private:
  Vec gating_;
  Vec velocities_;
  Vec log_gammas_;
  std::size_t dim_ = 0;
  std::optional<std::size_t> anchor_;
};

/// v_base * gamma^(t_s - t). Requires gamma > 0 and t <= t_s.
Vec extrapolate_velocity(std::span<const double> v_base, double gamma, double t_s, double t);

/// Instantaneous mixture velocity at time t.
Vec eval_velocity(const MomentumParams &theta, double t);

/// Writes the mixture velocity into `out` (size D) without allocating.
void eval_velocity_into(const MomentumParams &theta, double t, std::span<double> out);

struct LogGammaInit {
  Vec log_gammas;
  std::size_t anchor_index = 0;
};

/// Geometric progression from range_lo to range_hi (inclusive) over K modes,
/// converted to logs; the entry closest to log 1 is snapped to exactly 0
/// (ties go to the lower index) and reported as the anchor.
LogGammaInit init_log_gammas(std::size_t modes, double range_lo, double range_hi);

} // namespace arcflow
