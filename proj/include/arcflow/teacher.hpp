#pragma once

// Ground-truth flow-matching fields and reference samplers.
//
// Time convention: x_t = (1 - t) x0 + t x1 with x0 ~ data, x1 ~ N(0, I), so
// t = 1 is noise, t = 0 is data, and the conditional velocity is x1 - x0.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "arcflow/analytic_solver.hpp"
#include "arcflow/points.hpp"
#include "arcflow/rng.hpp"

namespace arcflow {

inline constexpr double kMinComponentStd = 1e-3;

/// Isotropic Gaussian mixture data distribution.
struct GmmTeacherSpec {
  Vec weights;
  std::vector<Vec> means;
  Vec stds;

  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  std::size_t components() const { return weights.size(); }

  /// Throws InvalidParameter on malformed specs.
  void validate() const;

  /// `components` equal-weight modes on a circle of `radius` (first two
  /// coordinates; remaining coordinates zero).
  static GmmTeacherSpec ring(std::size_t components, double radius, double std, std::size_t dim = 2);

  /// Mean of the data distribution, sum_j w_j mu_j.
  Vec mean() const;

  bool operator==(const GmmTeacherSpec &) const = default;
};

/// Writes velocity for state x at time t into `out`.
using VelocityField = std::function<void(std::span<const double> x, double t, std::span<double> out)>;

/// Marginal velocity E[x1 - x0 | x_t = x] of the linear path.
Vec gmm_velocity(const GmmTeacherSpec &spec, std::span<const double> x, double t);
void gmm_velocity_into(const GmmTeacherSpec &spec, std::span<const double> x, double t,
                       std::span<double> out);

/// Wraps a spec as a VelocityField (the spec is copied).
VelocityField gmm_field(GmmTeacherSpec spec);

/// Draws one sample into `out`.
void sample_data_into(const GmmTeacherSpec &spec, Rng &rng, std::span<double> out);
Points sample_data(const GmmTeacherSpec &spec, Rng &rng, std::size_t count);
Points sample_noise(std::size_t dim, Rng &rng, std::size_t count);

struct TrajectoryRecord {
  std::vector<LatentState> states; // t strictly decreasing from 1 to 0
  std::size_t steps = 0;
  std::uint64_t seed = 0;
};

/// Uniform-grid Euler from t = 1 to t = 0: x <- x - v(x, t) dt.
TrajectoryRecord euler_sample(const VelocityField &field, std::span<const double> x1,
                              std::size_t steps, std::uint64_t seed = 0);

/// Endpoint-only Euler, no allocation per step beyond a scratch vector.
void euler_endpoint_into(const VelocityField &field, std::span<const double> x1, std::size_t steps,
                         std::span<double> out);

class VelocityNet;

struct CfmConfig {
  std::size_t steps = 2000;
  std::size_t batch = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct CfmResult {
  std::vector<double> losses;
};

/// Conditional flow matching: minimizes E||v(x_t, t) - (x1 - x0)||^2 over
/// data/noise pairs and uniform t. Trains `net` in place.
CfmResult train_cfm_teacher(VelocityNet &net, const GmmTeacherSpec &spec, const CfmConfig &config);

} // namespace arcflow
