#pragma once

// Few-step flow distillation with an analytic momentum-mixture student.
//
// Each training step picks a shelf [t_src - 1/NFE, t_src], draws x_src from
// the interpolation marginal at t_src, predicts Theta = net(x_src, t_src) once,
// and rolls out n intermediate anchors. Inside every sub-interval [t_i, t_i+1]
// the teacher drives the latent (constant velocity u(x_i, t_i)) down to
//
//   t_mix = t_i - (1 - lambda) (t_i - t_i+1)
//
// and the student's closed-form displacement covers [t_i+1, t_mix]. Anchors are
// detached; the loss matches the student's extrapolated velocity
// v(t_i; Theta) to the teacher velocity at each anchor.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "arcflow/analytic_solver.hpp"
#include "arcflow/nnet.hpp"
#include "arcflow/points.hpp"
#include "arcflow/teacher.hpp"

namespace arcflow {

enum class Exec { serial, parallel };

struct DistillConfig {
  std::size_t nfe = 2;
  std::size_t modes = 8;
  std::size_t n_intermediate = 4;
  std::size_t guidance_steps = 500;
  std::size_t total_steps = 3000;
  std::size_t batch = 64;
  std::size_t hidden = 64;
  double base_lr = 1e-4;
  double gamma_lr_scale = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double gamma_lo = 0.4;
  double gamma_hi = 5.0;
  std::uint64_t seed = 0;
  GammaMode gamma_mode = GammaMode::learnable;
  bool share_velocity = false;
  bool share_gamma = false;

  void validate() const;
  NetShape net_shape(std::size_t dim) const;
  AdamConfig adam() const;

  bool operator==(const DistillConfig &) const = default;
};

/// Teacher used for distillation: a data distribution (for drawing shelf
/// states) plus the velocity field supplying targets.
struct Teacher {
  GmmTeacherSpec data;
  VelocityField field;

  static Teacher analytic(const GmmTeacherSpec &spec);
};

struct AnchorSet {
  double t_src = 1.0;
  Vec x_src;
  Vec u_src;                  // teacher velocity at (x_src, t_src)
  std::vector<double> times;  // t_1 > ... > t_n
  std::vector<Vec> states;    // detached x_{t_i}
  std::vector<Vec> teacher;   // cached u(x_{t_i}, t_i)
};

struct MatchingLoss {
  double loss = 0.0;
  MomentumGrad grad;
};

/// Linear ramp min(step / guidance_steps, 1); guidance_steps = 0 gives 1.
double lambda_at(std::size_t step, std::size_t guidance_steps);

/// x = (1 - t_src) x0 + t_src x1 with x0 from the data mixture, x1 ~ N(0, I).
std::vector<LatentState> init_shelf_state(const Teacher &teacher, Rng &rng, double t_src,
                                          std::size_t batch);

/// Sequential teacher/student handoff through the anchor times.
AnchorSet mixed_integration(std::span<const double> x_src, double t_src,
                            const MomentumParams &theta, std::span<const double> anchor_times,
                            double lambda, const VelocityField &teacher);

/// Mean over anchors and coordinates of (v(t_i; Theta) - u_i)^2, with its
/// gradient with respect to Theta.
MatchingLoss velocity_matching_loss(const MomentumParams &theta, const AnchorSet &anchors);

/// Stratified-uniform anchor times inside [t_src - width, t_src], descending.
std::vector<double> sample_anchor_times(double t_src, double width, std::size_t count, Rng &rng);

struct LossRow {
  std::size_t step = 0;
  double lambda = 0.0;
  double loss = 0.0;
  std::size_t shelf = 0; // 1-based shelf index; t_src = shelf / NFE
};

struct TrainResult {
  std::vector<LossRow> log;
};

/// One step's batch: shelf choice plus per-sample source states and anchor
/// times. Drawn from a per-step stream so it depends only on (seed, step)
/// and not on the student configuration.
struct StepBatch {
  std::size_t shelf = 1;
  double t_src = 1.0;
  Points x_src;
  std::vector<std::vector<double>> anchor_times;
};

StepBatch draw_step_batch(const Teacher &teacher, const DistillConfig &cfg, std::size_t step);

/// Batch loss and mean parameter gradient for a fixed batch. Per-sample work
/// runs under `exec`; reduction is always in sample order.
double distill_batch_gradient(const StudentNet &net, const Teacher &teacher, const StepBatch &batch,
                              double lambda, std::span<double> grad, Exec exec,
                              std::vector<AnchorSet> *anchors_out = nullptr);

/// Loss of `net` against fixed anchors (no rollout); used for gradient checks.
double anchored_loss(const StudentNet &net, const StepBatch &batch,
                     const std::vector<AnchorSet> &anchors, std::span<double> grad = {});

TrainResult distill_train(const Teacher &teacher, StudentNet &net, const DistillConfig &cfg,
                          Exec exec = Exec::parallel);

/// NFE-step analytic sampler. Records `dense_per_shelf` states per shelf.
TrajectoryRecord student_sample(const StudentNet &net, std::span<const double> x1, std::size_t nfe,
                                std::size_t dense_per_shelf = 16);
void student_endpoint_into(const StudentNet &net, std::span<const double> x1, std::size_t nfe,
                           std::span<double> out);

/// K = 1 with gamma frozen at 1: a constant velocity per shelf.
DistillConfig make_linear_baseline(const DistillConfig &cfg);

} // namespace arcflow
