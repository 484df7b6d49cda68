#include "arcflow/distill.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "arcflow/error.hpp"

namespace arcflow {

void DistillConfig::validate() const {
  if (nfe < 1) {
    throw InvalidParameter("NFE must be >= 1");
  }
  if (modes < 1) {
    throw InvalidParameter("mode count K must be >= 1");
  }
  if (n_intermediate < 1) {
    throw InvalidParameter("n_intermediate must be >= 1");
  }
  if (batch < 1) {
    throw InvalidParameter("batch must be >= 1");
  }
  if (hidden < 1) {
    throw InvalidParameter("hidden width must be >= 1");
  }
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) {
    throw InvalidParameter("base_lr must be a finite non-negative number");
  }
  if (!(gamma_lr_scale >= 0.0)) {
    throw InvalidParameter("gamma_lr_scale must be non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidParameter("Adam betas must lie in [0, 1)");
  }
  if (!(gamma_lo > 0.0 && gamma_lo < 1.0 && gamma_hi > 1.0)) {
    throw InvalidParameter("gamma range must satisfy 0 < lo < 1 < hi");
  }
}

NetShape DistillConfig::net_shape(std::size_t dim) const {
  NetShape s;
  s.dim = dim;
  s.modes = modes;
  s.hidden = hidden;
  s.hidden_layers = 2;
  s.gamma_mode = gamma_mode;
  s.share_velocity = share_velocity;
  s.share_gamma = share_gamma;
  s.gamma_lo = gamma_lo;
  s.gamma_hi = gamma_hi;
  return s;
}

AdamConfig DistillConfig::adam() const {
  AdamConfig a;
  a.beta1 = beta1;
  a.beta2 = beta2;
  a.gamma_lr_scale = gamma_lr_scale;
  return a;
}

Teacher Teacher::analytic(const GmmTeacherSpec &spec) { return Teacher{spec, gmm_field(spec)}; }

double lambda_at(std::size_t step, std::size_t guidance_steps) {
  if (guidance_steps == 0) {
    return 1.0;
  }
  return std::min(static_cast<double>(step) / static_cast<double>(guidance_steps), 1.0);
}

std::vector<LatentState> init_shelf_state(const Teacher &teacher, Rng &rng, double t_src,
                                          std::size_t batch) {
  const std::size_t d = teacher.data.dim();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<LatentState> out(batch);
  Vec x0(d);
  for (auto &state : out) {
    sample_data_into(teacher.data, rng, x0);
    state.x.resize(d);
    state.t = t_src;
    for (std::size_t i = 0; i < d; ++i) {
      state.x[i] = (1.0 - t_src) * x0[i] + t_src * normal(rng);
    }
  }
  return out;
}

AnchorSet mixed_integration(std::span<const double> x_src, double t_src,
                            const MomentumParams &theta, std::span<const double> anchor_times,
                            double lambda, const VelocityField &teacher) {
  const std::size_t d = x_src.size();
  if (theta.dim() != d) {
    throw InvalidParameter("mixed integration: state and params disagree on dimension");
  }
  double prev = t_src;
  for (double t : anchor_times) {
    if (!(t <= prev) || t < 0.0 || (t == prev && prev != t_src)) {
      throw InvalidInterval("anchor times must be strictly decreasing inside the shelf");
    }
    prev = t;
  }

  AnchorSet set;
  set.t_src = t_src;
  set.x_src.assign(x_src.begin(), x_src.end());
  set.u_src.resize(d);
  teacher(x_src, t_src, set.u_src);
  set.times.assign(anchor_times.begin(), anchor_times.end());
  set.states.reserve(anchor_times.size());
  set.teacher.reserve(anchor_times.size());

  Vec x = set.x_src;
  Vec disp(d);
  const Vec *u_prev = &set.u_src;
  double t_prev = t_src;
  for (std::size_t i = 0; i < anchor_times.size(); ++i) {
    const double t_next = anchor_times[i];
    const double teacher_span = (1.0 - lambda) * (t_prev - t_next);
    const double t_mix = std::clamp(t_prev - teacher_span, t_next, t_prev);
    for (std::size_t j = 0; j < d; ++j) {
      x[j] -= (*u_prev)[j] * teacher_span;
    }
    sub_interval_displacement_into(theta, t_mix, t_next, disp);
    for (std::size_t j = 0; j < d; ++j) {
      x[j] -= disp[j];
      if (!std::isfinite(x[j])) {
        throw NumericError("mixed integration produced a non-finite state on [" +
                           std::to_string(t_next) + ", " + std::to_string(t_prev) + "]");
      }
    }
    set.states.push_back(x);
    Vec u(d);
    teacher(x, t_next, u);
    set.teacher.push_back(std::move(u));
    u_prev = &set.teacher.back();
    t_prev = t_next;
  }
  return set;
}

MatchingLoss velocity_matching_loss(const MomentumParams &theta, const AnchorSet &anchors) {
  const std::size_t k = theta.modes();
  const std::size_t d = theta.dim();
  const std::size_t n = anchors.times.size();
  MatchingLoss out;
  out.grad = MomentumGrad(k, d);
  if (n == 0) {
    return out;
  }
  const double scale = 1.0 / static_cast<double>(n * d);
  const auto pi = theta.gating();
  const auto lg = theta.log_gammas();
  Vec v(d), dv(d), growth(k);

  for (std::size_t a = 0; a < n; ++a) {
    const double t = anchors.times[a];
    const double tau = 1.0 - t;
    for (std::size_t m = 0; m < k; ++m) {
      growth[m] = std::exp(tau * lg[m]);
    }
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t m = 0; m < k; ++m) {
      const auto vm = theta.velocity(m);
      for (std::size_t j = 0; j < d; ++j) {
        v[j] += pi[m] * growth[m] * vm[j];
      }
    }
    const Vec &u = anchors.teacher[a];
    for (std::size_t j = 0; j < d; ++j) {
      const double r = v[j] - u[j];
      out.loss += scale * r * r;
      dv[j] = 2.0 * scale * r;
    }
    for (std::size_t m = 0; m < k; ++m) {
      const auto vm = theta.velocity(m);
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += dv[j] * vm[j];
        out.grad.velocities[m * d + j] += dv[j] * pi[m] * growth[m];
      }
      out.grad.gating[m] += dot * growth[m];
      out.grad.log_gammas[m] += dot * pi[m] * growth[m] * tau;
    }
  }
  return out;
}

std::vector<double> sample_anchor_times(double t_src, double width, std::size_t count, Rng &rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> times(count);
  const double stratum = width / static_cast<double>(count);
  for (std::size_t j = 0; j < count; ++j) {
    const double hi = t_src - static_cast<double>(j) * stratum;
    const double lo = j + 1 == count ? t_src - width : t_src - static_cast<double>(j + 1) * stratum;
    times[j] = std::max(hi - uniform(rng) * (hi - lo), 0.0);
  }
  return times;
}

StepBatch draw_step_batch(const Teacher &teacher, const DistillConfig &cfg, std::size_t step) {
  Rng rng = make_stream(cfg.seed, "distill-step", step);
  StepBatch batch;
  std::uniform_int_distribution<std::size_t> pick(1, cfg.nfe);
  batch.shelf = pick(rng);
  batch.t_src = static_cast<double>(batch.shelf) / static_cast<double>(cfg.nfe);
  const double width = 1.0 / static_cast<double>(cfg.nfe);

  const auto states = init_shelf_state(teacher, rng, batch.t_src, cfg.batch);
  const std::size_t d = teacher.data.dim();
  batch.x_src = Points(cfg.batch, d);
  batch.anchor_times.reserve(cfg.batch);
  for (std::size_t b = 0; b < cfg.batch; ++b) {
    std::copy(states[b].x.begin(), states[b].x.end(), batch.x_src.row(b).begin());
    batch.anchor_times.push_back(sample_anchor_times(batch.t_src, width, cfg.n_intermediate, rng));
  }
  return batch;
}

double distill_batch_gradient(const StudentNet &net, const Teacher &teacher, const StepBatch &batch,
                              double lambda, std::span<double> grad, Exec exec,
                              std::vector<AnchorSet> *anchors_out) {
  const std::size_t n = batch.x_src.size();
  const std::size_t p = net.param_count();
  if (grad.size() != p) {
    throw InvalidParameter("gradient buffer has the wrong size");
  }
  std::vector<double> slots(n * p, 0.0);
  std::vector<double> losses(n, 0.0);
  std::vector<AnchorSet> anchors(n);
  std::vector<std::string> errors(n);

  const auto work = [&](std::size_t b) {
    try {
      const auto tape = net.forward_tape(batch.x_src.row(b), batch.t_src);
      anchors[b] = mixed_integration(batch.x_src.row(b), batch.t_src, *tape.theta,
                                     batch.anchor_times[b], lambda, teacher.field);
      const MatchingLoss ml = velocity_matching_loss(*tape.theta, anchors[b]);
      losses[b] = ml.loss;
      net.backward(tape, ml.grad, std::span<double>(slots).subspan(b * p, p));
    } catch (const std::exception &e) {
      errors[b] = e.what();
    }
  };

  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(n); ++b) {
      work(static_cast<std::size_t>(b));
    }
  } else {
    for (std::size_t b = 0; b < n; ++b) {
      work(b);
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (!errors[b].empty()) {
      throw NumericError("sample " + std::to_string(b) + ": " + errors[b]);
    }
  }

  const double inv = 1.0 / static_cast<double>(n);
  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    loss += losses[b];
    const double *slot = slots.data() + b * p;
    for (std::size_t i = 0; i < p; ++i) {
      grad[i] += slot[i];
    }
  }
  for (double &g : grad) {
    g *= inv;
  }
  if (anchors_out) {
    *anchors_out = std::move(anchors);
  }
  return loss * inv;
}

double anchored_loss(const StudentNet &net, const StepBatch &batch,
                     const std::vector<AnchorSet> &anchors, std::span<double> grad) {
  const std::size_t n = batch.x_src.size();
  const double inv = 1.0 / static_cast<double>(n);
  Vec local(grad.empty() ? 0 : net.param_count());
  if (!grad.empty()) {
    std::fill(grad.begin(), grad.end(), 0.0);
  }
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto tape = net.forward_tape(batch.x_src.row(b), batch.t_src);
    const MatchingLoss ml = velocity_matching_loss(*tape.theta, anchors[b]);
    loss += ml.loss;
    if (!grad.empty()) {
      std::fill(local.begin(), local.end(), 0.0);
      net.backward(tape, ml.grad, local);
      for (std::size_t i = 0; i < local.size(); ++i) {
        grad[i] += local[i];
      }
    }
  }
  for (double &g : grad) {
    g *= inv;
  }
  return loss * inv;
}

TrainResult distill_train(const Teacher &teacher, StudentNet &net, const DistillConfig &cfg,
                          Exec exec) {
  cfg.validate();
  teacher.data.validate();
  if (net.shape().dim != teacher.data.dim() || net.shape().modes != cfg.modes) {
    throw InvalidParameter("student net shape does not match the distillation config");
  }
  TrainResult result;
  result.log.reserve(cfg.total_steps);
  OptimState state(net.param_count());
  Vec grad(net.param_count());
  const AdamConfig adam = cfg.adam();

  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const StepBatch batch = draw_step_batch(teacher, cfg, step);
    const double lambda = lambda_at(step, cfg.guidance_steps);
    double loss = 0.0;
    try {
      loss = distill_batch_gradient(net, teacher, batch, lambda, grad, exec);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite distillation loss");
      }
      adam_step(net, grad, state, cfg.base_lr, adam);
    } catch (const std::exception &e) {
      throw NumericError("distillation aborted at step " + std::to_string(step) + ": " + e.what());
    }
    result.log.push_back({step, lambda, loss, batch.shelf});
  }
  return result;
}

TrajectoryRecord student_sample(const StudentNet &net, std::span<const double> x1, std::size_t nfe,
                                std::size_t dense_per_shelf) {
  if (nfe < 1) {
    throw InvalidParameter("NFE must be >= 1");
  }
  dense_per_shelf = std::max<std::size_t>(dense_per_shelf, 1);
  TrajectoryRecord rec;
  rec.steps = nfe;
  Vec x(x1.begin(), x1.end());
  rec.states.push_back({x, 1.0});
  Vec phi(x.size());
  for (std::size_t s = nfe; s >= 1; --s) {
    const double t_start = static_cast<double>(s) / static_cast<double>(nfe);
    const double t_end = static_cast<double>(s - 1) / static_cast<double>(nfe);
    const MomentumParams theta = net.forward(x, t_start);
    for (std::size_t j = 1; j <= dense_per_shelf; ++j) {
      const double t = j == dense_per_shelf
                           ? t_end
                           : t_start - static_cast<double>(j) * (t_start - t_end) /
                                           static_cast<double>(dense_per_shelf);
      transition_into(theta, t_start, t, phi);
      Vec xs = x;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        xs[i] -= phi[i];
      }
      rec.states.push_back({std::move(xs), t});
    }
    x = rec.states.back().x;
  }
  return rec;
}

void student_endpoint_into(const StudentNet &net, std::span<const double> x1, std::size_t nfe,
                           std::span<double> out) {
  if (nfe < 1) {
    throw InvalidParameter("NFE must be >= 1");
  }
  std::copy(x1.begin(), x1.end(), out.begin());
  Vec phi(x1.size());
  for (std::size_t s = nfe; s >= 1; --s) {
    const double t_start = static_cast<double>(s) / static_cast<double>(nfe);
    const double t_end = static_cast<double>(s - 1) / static_cast<double>(nfe);
    const MomentumParams theta = net.forward(out, t_start);
    transition_into(theta, t_start, t_end, phi);
    for (std::size_t i = 0; i < phi.size(); ++i) {
      out[i] -= phi[i];
    }
  }
}

DistillConfig make_linear_baseline(const DistillConfig &cfg) {
  DistillConfig out = cfg;
  out.modes = 1;
  out.gamma_mode = GammaMode::frozen_one;
  out.share_velocity = false;
  out.share_gamma = false;
  return out;
}

} // namespace arcflow
