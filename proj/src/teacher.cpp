#include "arcflow/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "arcflow/error.hpp"
#include "arcflow/nnet.hpp"

namespace arcflow {

void GmmTeacherSpec::validate() const {
  const std::size_t j = weights.size();
  if (j == 0) {
    throw InvalidParameter("teacher mixture needs at least one component");
  }
  if (means.size() != j || stds.size() != j) {
    throw InvalidParameter("teacher weights, means and stds must have equal length");
  }
  const std::size_t d = dim();
  if (d == 0) {
    throw InvalidParameter("teacher means must be non-empty");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < j; ++i) {
    if (!(weights[i] >= 0.0)) {
      throw InvalidParameter("teacher weights must be non-negative");
    }
    sum += weights[i];
    if (means[i].size() != d) {
      throw InvalidParameter("teacher means must share one dimension");
    }
    if (!(stds[i] >= kMinComponentStd)) {
      throw InvalidParameter("teacher stds must be >= " + std::to_string(kMinComponentStd));
    }
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvalidParameter("teacher weights must sum to 1");
  }
}

GmmTeacherSpec GmmTeacherSpec::ring(std::size_t components, double radius, double std,
                                    std::size_t dim) {
  if (components == 0 || dim < 2) {
    throw InvalidParameter("ring teacher needs >= 1 component and dim >= 2");
  }
  GmmTeacherSpec spec;
  spec.weights.assign(components, 1.0 / static_cast<double>(components));
  spec.stds.assign(components, std);
  for (std::size_t j = 0; j < components; ++j) {
    const double angle =
        2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(components);
    Vec mu(dim, 0.0);
    mu[0] = radius * std::cos(angle);
    mu[1] = radius * std::sin(angle);
    spec.means.push_back(std::move(mu));
  }
  spec.validate();
  return spec;
}

Vec GmmTeacherSpec::mean() const {
  Vec m(dim(), 0.0);
  for (std::size_t j = 0; j < components(); ++j) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] += weights[j] * means[j][i];
    }
  }
  return m;
}

void gmm_velocity_into(const GmmTeacherSpec &spec, std::span<const double> x, double t,
                       std::span<double> out) {
  const std::size_t d = spec.dim();
  const std::size_t nc = spec.components();
  const double a = 1.0 - t;
  const double b = t;

  // Small fixed-size scratch keeps this allocation-free for typical mixtures.
  constexpr std::size_t kStack = 64;
  double log_r_stack[kStack];
  std::vector<double> log_r_heap;
  double *log_r = log_r_stack;
  if (nc > kStack) {
    log_r_heap.resize(nc);
    log_r = log_r_heap.data();
  }

  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < nc; ++j) {
    const double sigma = spec.stds[j];
    const double s2 = a * a * sigma * sigma + b * b;
    double dist2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = x[i] - a * spec.means[j][i];
      dist2 += diff * diff;
    }
    log_r[j] = spec.weights[j] > 0.0
                   ? std::log(spec.weights[j]) - 0.5 * dist2 / s2 -
                         0.5 * static_cast<double>(d) * std::log(s2)
                   : -std::numeric_limits<double>::infinity();
    max_log = std::max(max_log, log_r[j]);
  }
  double norm = 0.0;
  for (std::size_t j = 0; j < nc; ++j) {
    log_r[j] = std::exp(log_r[j] - max_log);
    norm += log_r[j];
  }

  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
  for (std::size_t j = 0; j < nc; ++j) {
    const double r = log_r[j] / norm;
    if (r == 0.0) {
      continue;
    }
    const double sigma = spec.stds[j];
    const double s2 = a * a * sigma * sigma + b * b;
    const double coef = (b - a * sigma * sigma) / s2;
    for (std::size_t i = 0; i < d; ++i) {
      const double mu = spec.means[j][i];
      out[i] += r * (coef * (x[i] - a * mu) - mu);
    }
  }
}

Vec gmm_velocity(const GmmTeacherSpec &spec, std::span<const double> x, double t) {
  Vec out(spec.dim());
  gmm_velocity_into(spec, x, t, out);
  return out;
}

VelocityField gmm_field(GmmTeacherSpec spec) {
  spec.validate();
  return [spec = std::move(spec)](std::span<const double> x, double t, std::span<double> out) {
    gmm_velocity_into(spec, x, t, out);
  };
}

void sample_data_into(const GmmTeacherSpec &spec, Rng &rng, std::span<double> out) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double u = uniform(rng);
  std::size_t j = 0;
  double cum = spec.weights[0];
  while (u >= cum && j + 1 < spec.components()) {
    ++j;
    cum += spec.weights[j];
  }
  for (std::size_t i = 0; i < spec.dim(); ++i) {
    out[i] = spec.means[j][i] + spec.stds[j] * normal(rng);
  }
}

Points sample_data(const GmmTeacherSpec &spec, Rng &rng, std::size_t count) {
  if (count == 0) {
    throw InvalidParameter("sample count must be >= 1");
  }
  Points pts(count, spec.dim());
  for (std::size_t n = 0; n < count; ++n) {
    sample_data_into(spec, rng, pts.row(n));
  }
  return pts;
}

Points sample_noise(std::size_t dim, Rng &rng, std::size_t count) {
  Points pts(count, dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double &v : pts.data) {
    v = normal(rng);
  }
  return pts;
}

TrajectoryRecord euler_sample(const VelocityField &field, std::span<const double> x1,
                              std::size_t steps, std::uint64_t seed) {
  if (steps == 0) {
    throw InvalidParameter("euler sampler needs at least one step");
  }
  TrajectoryRecord rec;
  rec.steps = steps;
  rec.seed = seed;
  rec.states.reserve(steps + 1);
  Vec x(x1.begin(), x1.end());
  Vec v(x.size());
  rec.states.push_back({x, 1.0});
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) * dt;
    field(x, t, v);
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (!std::isfinite(v[j])) {
        throw NumericError("non-finite velocity at t = " + std::to_string(t));
      }
      x[j] -= v[j] * dt;
    }
    const double t_next = i + 1 == steps ? 0.0 : 1.0 - static_cast<double>(i + 1) * dt;
    rec.states.push_back({x, t_next});
  }
  return rec;
}

void euler_endpoint_into(const VelocityField &field, std::span<const double> x1, std::size_t steps,
                         std::span<double> out) {
  if (steps == 0) {
    throw InvalidParameter("euler sampler needs at least one step");
  }
  std::copy(x1.begin(), x1.end(), out.begin());
  Vec v(x1.size());
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) * dt;
    field(out, t, v);
    for (std::size_t j = 0; j < x1.size(); ++j) {
      if (!std::isfinite(v[j])) {
        throw NumericError("non-finite velocity at t = " + std::to_string(t));
      }
      out[j] -= v[j] * dt;
    }
  }
}

CfmResult train_cfm_teacher(VelocityNet &net, const GmmTeacherSpec &spec, const CfmConfig &config) {
  spec.validate();
  if (net.dim() != spec.dim()) {
    throw InvalidParameter("velocity net and teacher spec disagree on dimension");
  }
  CfmResult result;
  if (config.steps == 0) {
    return result;
  }
  const std::size_t d = spec.dim();
  Rng rng = make_stream(config.seed, "cfm");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Mlp &mlp = net.mlp();
  const std::vector<ParamGroup> groups(mlp.param_count(), ParamGroup::body);
  OptimState state(mlp.param_count());
  Vec grad(mlp.param_count());
  Vec x0(d), xt(d), target(d), d_out(d);
  const double scale = 2.0 / static_cast<double>(config.batch * d);

  for (std::size_t s = 0; s < config.steps; ++s) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      sample_data_into(spec, rng, x0);
      const double t = uniform(rng);
      for (std::size_t i = 0; i < d; ++i) {
        const double x1 = normal(rng);
        xt[i] = (1.0 - t) * x0[i] + t * x1;
        target[i] = x1 - x0[i];
      }
      const auto tape = net.forward_tape(xt, t);
      const Vec &v = tape.activations.back();
      for (std::size_t i = 0; i < d; ++i) {
        const double r = v[i] - target[i];
        loss += r * r;
        d_out[i] = scale * r;
      }
      mlp.backward(tape, d_out, grad);
    }
    loss /= static_cast<double>(config.batch * d);
    if (!std::isfinite(loss)) {
      throw NumericError("CFM teacher loss diverged at step " + std::to_string(s));
    }
    result.losses.push_back(loss);
    // Cosine decay to zero; the regression target is noisy at small t.
    const double progress = static_cast<double>(s) / static_cast<double>(config.steps);
    const double lr = 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * progress));
    adam_step(mlp.params(), grad, groups, state, lr, AdamConfig{0.9, 0.999, 1e-8, 0.0, 1.0});
  }
  return result;
}

} // namespace arcflow
