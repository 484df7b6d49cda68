#include "arcflow/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "arcflow/distill.hpp"
#include "arcflow/interpolation.hpp"
#include "arcflow/kernels.hpp"
#include "arcflow/nnet.hpp"

namespace arcflow {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) {
    s += x * x;
  }
  return std::sqrt(s);
}

// Random mixture with K in [1, max_modes], gamma log-uniform in [0.05, 20] and
// |v_k| <= 10.
MomentumParams random_mixture(Rng &rng, std::size_t max_modes, std::size_t dim) {
  std::uniform_int_distribution<std::size_t> pick_k(1, max_modes);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k = pick_k(rng);
  Vec gating(k), vel(k * dim), lg(k);
  double total = 0.0;
  for (auto &g : gating) {
    g = std::exp(2.0 * normal(rng));
    total += g;
  }
  for (auto &g : gating) {
    g /= total;
  }
  for (std::size_t m = 0; m < k; ++m) {
    lg[m] = std::log(0.05) + u01(rng) * (std::log(20.0) - std::log(0.05));
    Vec dir(dim);
    for (auto &d : dir) {
      d = normal(rng);
    }
    const double r = 10.0 * u01(rng) / std::max(norm(dir), 1e-300);
    for (std::size_t j = 0; j < dim; ++j) {
      vel[m * dim + j] = dir[j] * r;
    }
  }
  return MomentumParams(std::move(gating), std::move(vel), std::move(lg), dim);
}

// sum_k pi_k |v_k| |C_k|: the size of the terms that make up Phi, used as the
// scale for relative errors so cancellation between modes does not inflate them.
double displacement_scale(const MomentumParams &theta, double t_s, double t_e) {
  double s = 0.0;
  for (std::size_t k = 0; k < theta.modes(); ++k) {
    s += theta.gating()[k] * norm(theta.velocity(k)) *
         std::abs(momentum_coefficient_log(theta.log_gammas()[k], t_s, t_e));
  }
  return s;
}

std::pair<double, double> ordered_pair(Rng &rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double a = u01(rng), b = u01(rng);
  if (a < b) {
    std::swap(a, b);
  }
  return {a, b};
}

SuiteResult finish(SuiteResult r, Clock::time_point start) {
  r.passed = r.measured <= r.tolerance;
  r.seconds = elapsed(start);
  return r;
}

struct FitTrial {
  Vec gammas;
  Vec times;
  std::vector<Vec> targets;
};

// Geometric gammas with ratio >= 1.3 inside [0.05, 20], stratified times in
// (0, 1], targets uniform in [-5, 5]^2.
FitTrial make_fit_trial(Rng &rng, std::size_t k) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  FitTrial trial;
  const double log_span = std::log(20.0 / 0.05);
  const double max_log_ratio =
      k > 1 ? std::min(log_span / static_cast<double>(k - 1), std::log(4.0)) : 0.0;
  const double log_ratio = std::log(1.3) + u01(rng) * (max_log_ratio - std::log(1.3));
  const double used = log_ratio * static_cast<double>(k - 1);
  const double log_start = std::log(0.05) + u01(rng) * (log_span - used);
  for (std::size_t i = 0; i < k; ++i) {
    trial.gammas.push_back(std::exp(log_start + log_ratio * static_cast<double>(i)));
  }
  for (std::size_t n = 0; n < k; ++n) {
    const double lo = static_cast<double>(n) / static_cast<double>(k);
    const double w = 1.0 / static_cast<double>(k);
    trial.times.push_back(lo + w * (0.1 + 0.8 * u01(rng)));
    trial.targets.push_back({-5.0 + 10.0 * u01(rng), -5.0 + 10.0 * u01(rng)});
  }
  return trial;
}

} // namespace

SuiteResult suite_continuity(const VerifyOptions &opts) {
  const auto start = Clock::now();
  Rng rng = make_stream(opts.seed, "verify-continuity");
  SuiteResult r{"coefficient continuity", false, 0.0, 1.0, "", 0.0};
  const double deltas[] = {1e-7, -1e-7, 1e-5, -1e-5, 0.0};
  for (int i = 0; i < 10000; ++i) {
    const auto [ts, te] = ordered_pair(rng);
    for (double d : deltas) {
      const double c = momentum_coefficient(1.0 + d, ts, te, opts.branch_epsilon);
      const double bound = std::max(10.0 * std::abs(d), 1e-15);
      const double ratio = std::abs(c - (ts - te)) / bound;
      if (!(ratio <= r.measured)) {
        r.measured = std::isnan(ratio) ? std::numeric_limits<double>::infinity() : ratio;
        char buf[160];
        std::snprintf(buf, sizeof buf, "worst at t_s=%.6f t_e=%.6f delta=%g (C=%.17g)", ts, te, d, c);
        r.detail = buf;
      }
    }
  }
  r.detail = "error / (10|delta|), 1e4 intervals; " + r.detail;
  return finish(r, start);
}

SuiteResult suite_quadrature(const VerifyOptions &opts) {
  const auto start = Clock::now();
  Rng rng = make_stream(opts.seed, "verify-quadrature");
  SuiteResult r{"transition vs quadrature", false, 0.0, 1e-9, "", 0.0};
  for (int i = 0; i < 1000; ++i) {
    const MomentumParams theta = random_mixture(rng, 16, 2);
    const auto [ts, te] = ordered_pair(rng);
    const Vec phi = transition(theta, ts, te);
    const Vec quad = quadrature_displacement(theta, ts, te, 1e-12);
    Vec diff(phi.size());
    for (std::size_t j = 0; j < phi.size(); ++j) {
      diff[j] = phi[j] - quad[j];
    }
    const double scale = std::max(displacement_scale(theta, ts, te), 1e-300);
    r.measured = std::max(r.measured, norm(diff) / scale);
  }
  r.detail = "1000 mixtures, K <= 16, gamma in [0.05, 20], |v| <= 10";
  return finish(r, start);
}

SuiteResult suite_additivity(const VerifyOptions &opts) {
  const auto start = Clock::now();
  Rng rng = make_stream(opts.seed, "verify-additivity");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SuiteResult r{"transition additivity", false, 0.0, 1e-12, "", 0.0};
  for (int i = 0; i < 10000; ++i) {
    const MomentumParams theta = random_mixture(rng, 16, 2);
    const auto [ts, te] = ordered_pair(rng);
    const double tm = te + u01(rng) * (ts - te);
    const Vec whole = transition(theta, ts, te);
    const Vec a = transition(theta, ts, tm);
    const Vec b = transition(theta, tm, te);
    Vec diff(whole.size());
    for (std::size_t j = 0; j < whole.size(); ++j) {
      diff[j] = whole[j] - (a[j] + b[j]);
    }
    const double scale = std::max(displacement_scale(theta, ts, te), 1e-300);
    r.measured = std::max(r.measured, norm(diff) / scale);
  }
  r.detail = "1e4 random splits";
  return finish(r, start);
}

SuiteResult suite_exact_fit(const VerifyOptions &opts) {
  const auto start = Clock::now();
  Rng rng = make_stream(opts.seed, "verify-fit");
  SuiteResult r{"exact fit", false, 0.0, 1e-6, "", 0.0};
  const std::size_t sizes[] = {2, 4, 8};
  double worst_by_k[3] = {0.0, 0.0, 0.0};
  double worst_cond = 0.0;
  // Smallest ratio among failing trials, to show where double precision runs out.
  double failing_ratio = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const FitTrial trial = make_fit_trial(rng, sizes[i % 3]);
    const InterpolationSolution sol = solve_exact_fit({trial.times, trial.targets, trial.gammas});
    worst_cond = std::max(worst_cond, sol.condition_estimate);
    const MomentumParams theta = to_momentum_params(sol, trial.gammas);
    double scale = 0.0;
    for (const Vec &u : trial.targets) {
      scale = std::max(scale, norm(u));
    }
    double worst = 0.0;
    for (std::size_t n = 0; n < trial.times.size(); ++n) {
      const Vec v = eval_velocity(theta, trial.times[n]);
      Vec diff(v.size());
      for (std::size_t j = 0; j < v.size(); ++j) {
        diff[j] = v[j] - trial.targets[n][j];
      }
      worst = std::max(worst, norm(diff) / scale);
    }
    worst_by_k[i % 3] = std::max(worst_by_k[i % 3], worst);
    if (worst > r.tolerance) {
      failing_ratio = std::max(failing_ratio, trial.gammas[1] / trial.gammas[0]);
    }
    r.measured = std::max(r.measured, worst);
  }
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "1000 trials; worst K=2 %.3g, K=4 %.3g, K=8 %.3g; worst condition %.3g%s", worst_by_k[0],
                worst_by_k[1], worst_by_k[2], worst_cond, failing_ratio > 0.0 ? "; fails up to ratio " : "");
  r.detail = buf;
  if (failing_ratio > 0.0) {
    std::snprintf(buf, sizeof buf, "%.3f", failing_ratio);
    r.detail += buf;
  }
  return finish(r, start);
}

SuiteResult suite_haar(const VerifyOptions &opts) {
  const auto start = Clock::now();
  Rng rng = make_stream(opts.seed, "verify-fit");
  SuiteResult r{"basis non-singularity", false, 0.0, 0.0, "", 0.0};
  const std::size_t sizes[] = {2, 4, 8};
  int singular = 0;
  double worst_cond = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const FitTrial trial = make_fit_trial(rng, sizes[i % 3]);
    const HaarReport rep = verify_haar(trial.gammas, trial.times);
    worst_cond = std::max(worst_cond, rep.condition_estimate);
    singular += rep.nonsingular ? 0 : 1;
  }
  r.measured = singular;
  char buf[120];
  std::snprintf(buf, sizeof buf, "singular trials out of 1000, worst condition %.3g", worst_cond);
  r.detail = buf;
  return finish(r, start);
}

SuiteResult suite_gradients(const VerifyOptions &opts) {
  const auto start = Clock::now();
  SuiteResult r{"distillation gradient", false, 0.0, 1e-4, "", 0.0};
  const Teacher teacher = Teacher::analytic(GmmTeacherSpec::ring(8, 2.0, 0.25));
  DistillConfig cfg;
  cfg.batch = 8;
  cfg.seed = opts.seed;
  Rng init = make_stream(opts.seed, "verify-grad-init");
  StudentNet net(cfg.net_shape(2), init);
  // Nudge every parameter so the gating and gamma heads are away from their
  // symmetric starting point.
  std::normal_distribution<double> normal(0.0, 0.05);
  auto p = net.params();
  const auto groups = net.groups();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (groups[i] != ParamGroup::frozen) {
      p[i] += normal(init);
    }
  }
  const StepBatch batch = draw_step_batch(teacher, cfg, 7);
  std::vector<AnchorSet> anchors;
  Vec grad(net.param_count());
  distill_batch_gradient(net, teacher, batch, 0.5, grad, Exec::serial, &anchors);

  Vec analytic(net.param_count());
  anchored_loss(net, batch, anchors, analytic);
  Rng probe = make_stream(opts.seed, "verify-grad-probe");
  const GradCheckResult gc = grad_check(
      net.params(), [&](std::span<const double>) { return anchored_loss(net, batch, anchors); },
      analytic, 100, probe, 1e-5, 1e-6);
  r.measured = gc.max_rel_error;
  double mismatch = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    mismatch = std::max(mismatch, std::abs(grad[i] - analytic[i]));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "100 probes, h = 1e-5, worst index %zu; rollout vs anchored gradient max diff %.3g",
                gc.worst_index, mismatch);
  r.detail = buf;
  if (mismatch > 1e-12) {
    r.measured = std::numeric_limits<double>::infinity();
  }
  return finish(r, start);
}

SuiteResult suite_degenerate(const VerifyOptions &opts) {
  const auto start = Clock::now();
  Rng rng = make_stream(opts.seed, "verify-degenerate");
  std::uniform_int_distribution<std::size_t> pick_nfe(1, 4), pick_n(1, 6);
  std::normal_distribution<double> normal(0.0, 1.0);
  SuiteResult r{"mixed integration limits", false, 0.0, 1e-12, "", 0.0};
  const GmmTeacherSpec spec = GmmTeacherSpec::ring(8, 2.0, 0.25);
  const VelocityField field = gmm_field(spec);
  double worst0 = 0.0, worst1 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const MomentumParams theta = random_mixture(rng, 16, 2);
    const std::size_t nfe = pick_nfe(rng);
    std::uniform_int_distribution<std::size_t> pick_shelf(1, nfe);
    const double t_src = static_cast<double>(pick_shelf(rng)) / static_cast<double>(nfe);
    const Vec x_src{2.0 * normal(rng), 2.0 * normal(rng)};
    const auto times = sample_anchor_times(t_src, 1.0 / static_cast<double>(nfe), pick_n(rng), rng);

    const AnchorSet teach = mixed_integration(x_src, t_src, theta, times, 0.0, field);
    Vec x = x_src, u(2);
    double t_prev = t_src;
    for (std::size_t a = 0; a < times.size(); ++a) {
      field(x, t_prev, u);
      for (std::size_t j = 0; j < 2; ++j) {
        x[j] -= u[j] * (t_prev - times[a]);
      }
      t_prev = times[a];
      const double scale = std::max(1.0, norm(x));
      for (std::size_t j = 0; j < 2; ++j) {
        worst0 = std::max(worst0, std::abs(teach.states[a][j] - x[j]) / scale);
      }
    }

    const AnchorSet stud = mixed_integration(x_src, t_src, theta, times, 1.0, field);
    for (std::size_t a = 0; a < times.size(); ++a) {
      const Vec phi = transition(theta, t_src, times[a]);
      const double scale = std::max({1.0, norm(x_src), norm(phi)});
      for (std::size_t j = 0; j < 2; ++j) {
        worst1 = std::max(worst1, std::abs(stud.states[a][j] - (x_src[j] - phi[j])) / scale);
      }
    }
  }
  r.measured = std::max(worst0, worst1);
  char buf[120];
  std::snprintf(buf, sizeof buf, "1000 shelves; lambda=0 worst %.3g, lambda=1 worst %.3g", worst0,
                worst1);
  r.detail = buf;
  return finish(r, start);
}

SuiteResult suite_teacher_mc(const VerifyOptions &opts) {
  const auto start = Clock::now();
  SuiteResult r{"teacher vs Monte Carlo", false, 0.0, 3.0, "", 0.0};
  const GmmTeacherSpec spec = GmmTeacherSpec::ring(8, 2.0, 0.25);
  Rng rng = make_stream(opts.seed, "verify-teacher-mc");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr std::size_t kProbes = 20;
  constexpr std::size_t kDraws = 200000;
  const std::size_t d = spec.dim();
  double worst_se = 0.0;
  for (std::size_t p = 0; p < kProbes; ++p) {
    // Probe drawn from the marginal at t so it sits where the field matters.
    const double t = 0.2 + 0.8 * u01(rng);
    const double a = 1.0 - t;
    Vec x(d);
    sample_data_into(spec, rng, x);
    for (auto &xi : x) {
      xi = a * xi + t * normal(rng);
    }
    // Posterior over x0 given x_t = x is prior times N(x; a x0, t^2 I).
    const Points x0 = sample_data(spec, rng, kDraws);
    std::vector<double> logw(kDraws);
    double max_lw = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < kDraws; ++m) {
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double z = (x[j] - a * x0.row(m)[j]) / t;
        q += z * z;
      }
      logw[m] = -0.5 * q;
      max_lw = std::max(max_lw, logw[m]);
    }
    double wsum = 0.0;
    Vec est(d, 0.0);
    for (std::size_t m = 0; m < kDraws; ++m) {
      logw[m] = std::exp(logw[m] - max_lw);
      wsum += logw[m];
      for (std::size_t j = 0; j < d; ++j) {
        const double x1 = (x[j] - a * x0.row(m)[j]) / t;
        est[j] += logw[m] * (x1 - x0.row(m)[j]);
      }
    }
    for (auto &e : est) {
      e /= wsum;
    }
    Vec var(d, 0.0);
    for (std::size_t m = 0; m < kDraws; ++m) {
      const double w = logw[m] / wsum;
      for (std::size_t j = 0; j < d; ++j) {
        const double x1 = (x[j] - a * x0.row(m)[j]) / t;
        const double dev = x1 - x0.row(m)[j] - est[j];
        var[j] += w * w * dev * dev;
      }
    }
    const Vec exact = gmm_velocity(spec, x, t);
    for (std::size_t j = 0; j < d; ++j) {
      const double se = std::sqrt(var[j]);
      worst_se = std::max(worst_se, se);
      r.measured = std::max(r.measured, std::abs(exact[j] - est[j]) / se);
    }
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "worst |z| over 20 probes x 2 coords, t in [0.2, 1]; max se %.3g",
                worst_se);
  r.detail = buf;
  return finish(r, start);
}

SuiteResult suite_teacher_transport(const VerifyOptions &opts) {
  const auto start = Clock::now();
  SuiteResult r{"teacher transport", false, 0.0, 0.0, "", 0.0};
  const GmmTeacherSpec spec = GmmTeacherSpec::ring(8, 2.0, 0.25);
  constexpr std::size_t kSamples = 10000;
  constexpr int kReplicates = 5;
  Rng noise_rng = make_stream(opts.seed, "verify-transport-noise");
  const Points noise = sample_noise(spec.dim(), noise_rng, kSamples);
  const Points moved = kernels::omp::teacher_endpoints(gmm_field(spec), noise, 200);
  Rng data_rng = make_stream(opts.seed, "verify-transport-data");
  const double ed = kernels::omp::energy_distance(moved, sample_data(spec, data_rng, kSamples));

  std::vector<double> self(kReplicates);
  for (int i = 0; i < kReplicates; ++i) {
    Rng a = make_stream(opts.seed, "verify-transport-self-a", i);
    Rng b = make_stream(opts.seed, "verify-transport-self-b", i);
    self[i] = kernels::omp::energy_distance(sample_data(spec, a, kSamples),
                                            sample_data(spec, b, kSamples));
  }
  double mean = 0.0;
  for (double s : self) {
    mean += s;
  }
  mean /= kReplicates;
  double var = 0.0;
  for (double s : self) {
    var += (s - mean) * (s - mean);
  }
  const double sigma = std::sqrt(var / (kReplicates - 1));
  r.measured = ed;
  r.tolerance = mean + 3.0 * sigma;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "energy distance, 1e4 samples, 200 Euler steps; self %.3g +- %.3g (%d replicates)",
                mean, sigma, kReplicates);
  r.detail = buf;
  return finish(r, start);
}

std::vector<SuiteResult> run_all_suites(const VerifyOptions &opts) {
  return {suite_continuity(opts), suite_quadrature(opts),   suite_additivity(opts),
          suite_exact_fit(opts),  suite_haar(opts),         suite_gradients(opts),
          suite_degenerate(opts), suite_teacher_mc(opts),   suite_teacher_transport(opts)};
}

void print_suite(std::ostream &out, const SuiteResult &r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "[%s] %-28s measured %-12.4g tol %-10.4g %6.2fs  %s",
                r.passed ? "PASS" : "FAIL", r.name.c_str(), r.measured, r.tolerance, r.seconds,
                r.detail.c_str());
  out << buf << '\n';
}

void print_tolerance_table(std::ostream &out, const std::vector<SuiteResult> &results) {
  out << "suite,measured,tolerance,passed\n";
  for (const auto &r : results) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%s\n", r.name.c_str(), r.measured, r.tolerance,
                  r.passed ? "true" : "false");
    out << buf;
  }
}

} // namespace arcflow
