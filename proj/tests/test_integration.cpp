#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "arcflow/config.hpp"
#include "arcflow/experiment.hpp"

using namespace arcflow;
namespace fs = std::filesystem;

namespace {

RunConfig small_run() {
  RunConfig c = parse_config_text(
      "[distill]\nmodes = 4\nhidden = 16\nbatch = 16\ntotal_steps = 60\nguidance_steps = 20\n"
      "base_lr = 1e-3\nseed = 5\n"
      "[run]\nmetric_samples = 256\ntrajectory_samples = 2\n");
  return c;
}

} // namespace

TEST_CASE("small distillation run end to end") {
  const RunConfig cfg = small_run();
  const Teacher teacher = build_teacher(cfg.teacher, cfg.distill.seed);
  const EvalSet eval = make_eval_set(teacher, cfg.run);
  CHECK(eval.noise.size() == 256);
  CHECK(eval.teacher_floor >= 0.0);
  CHECK(eval.teacher_floor < 0.05);

  DistillOutcome out = run_distill(cfg.distill, teacher, eval, cfg.run);
  CHECK(out.train.log.size() == 60);
  for (double m : {out.report.endpoint_mse, out.report.trajectory_deviation, out.report.final_loss}) {
    CHECK(std::isfinite(m));
    CHECK(m >= 0.0);
  }
  CHECK(out.report.steps == 60);
  CHECK(out.report.seed == 5);

  // Untrained student: metrics still finite, and training helped.
  RunConfig zero = cfg;
  zero.distill.total_steps = 0;
  const DistillOutcome untrained = run_distill(zero.distill, teacher, eval, zero.run);
  CHECK(std::isfinite(untrained.report.endpoint_mse));
  CHECK(untrained.train.log.empty());
  CHECK(out.report.endpoint_mse < untrained.report.endpoint_mse);

  // Different inputs give different predictions after training.
  const MomentumParams a = out.net.forward(Vec{1.0, 0.0}, 1.0);
  const MomentumParams b = out.net.forward(Vec{-1.0, 0.5}, 1.0);
  CHECK(a.base_velocities()[0] != b.base_velocities()[0]);

  const fs::path dir = fs::temp_directory_path() / "arcflow_test_integration";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_loss_csv(dir / "loss.csv", out.train);
  save_checkpoint(dir / "student.ckpt", out.net);
  const StudentNet back = load_checkpoint(dir / "student.ckpt");
  CHECK(endpoint_mse(back, eval, cfg.distill.nfe) == out.report.endpoint_mse);
  fs::remove_all(dir);
}

TEST_CASE("baseline trains under the same loop") {
  const RunConfig cfg = small_run();
  const Teacher teacher = build_teacher(cfg.teacher, cfg.distill.seed);
  const EvalSet eval = make_eval_set(teacher, cfg.run);
  const DistillOutcome base =
      run_distill(make_linear_baseline(cfg.distill), teacher, eval, cfg.run, "baseline");
  CHECK(base.report.label == "baseline");
  CHECK(std::isfinite(base.report.endpoint_mse));
}

TEST_CASE("constant-velocity student draws straight segments") {
  NetShape shape;
  shape.modes = 1;
  shape.hidden = 4;
  shape.gamma_mode = GammaMode::frozen_one;
  Rng rng = make_stream(0, "student-init");
  StudentNet net(shape, rng);
  std::fill(net.params().begin(), net.params().end(), 0.0);
  const std::size_t last = net.mlp().layers() - 1;
  net.params()[net.mlp().bias_offset(last) + 1] = 1.5;
  net.params()[net.mlp().bias_offset(last) + 2] = -0.5;

  Points noise(1, 2);
  noise.row(0)[0] = 0.2;
  noise.row(0)[1] = 0.1;
  const auto sets = collect_trajectories(gmm_field(GmmTeacherSpec::ring(8, 2.0, 0.25)), 10, net,
                                         nullptr, noise, 2, 8);
  const TrajectoryRecord &path = sets.back().paths.front();
  CHECK(sets.back().source == "arcflow");
  for (const LatentState &s : path.states) {
    CHECK(s.x[0] == doctest::Approx(0.2 - 1.5 * (1.0 - s.t)).epsilon(1e-14));
    CHECK(s.x[1] == doctest::Approx(0.1 + 0.5 * (1.0 - s.t)).epsilon(1e-14));
  }
  const std::string svg = render_trajectory_svg(sets);
  CHECK(svg.find("<polyline") != std::string::npos);
}
