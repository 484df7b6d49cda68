#pragma once

// Experiment runs on top of the library: evaluation sets, metrics, the
// distill / ablate / sample flows, and their file exports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "arcflow/config.hpp"
#include "arcflow/distill.hpp"
#include "arcflow/points.hpp"

namespace arcflow {

/// Shared noise plus teacher endpoints, reused across every cell of a run so
/// all students are scored on identical inputs.
struct EvalSet {
  Points noise;
  Points teacher_ref;  // run.teacher_steps Euler
  Points teacher_fine; // run.reference_steps Euler
  double teacher_floor = 0.0;
};

EvalSet make_eval_set(const Teacher &teacher, const RunOptions &run);

struct MetricsReport {
  std::string label;
  double endpoint_mse = 0.0;
  double trajectory_deviation = 0.0;
  double teacher_floor = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  double wall_seconds = 0.0;
};

std::string to_json(const MetricsReport &report);

double endpoint_mse(const StudentNet &net, const EvalSet &eval, std::size_t nfe);

/// Mean distance between the student's dense trajectory and the fine Euler
/// teacher trajectory (linearly interpolated at the student's times).
double trajectory_deviation(const StudentNet &net, const VelocityField &teacher, const Points &noise,
                            std::size_t nfe, std::size_t dense_per_shelf, std::size_t teacher_steps);

/// Mean loss over the last `window` logged steps (0 when nothing was logged).
double smoothed_final_loss(const TrainResult &result, std::size_t window = 100);

struct DistillOutcome {
  StudentNet net;
  TrainResult train;
  MetricsReport report;
};

/// Initializes a student from the run seed, trains it and scores it.
DistillOutcome run_distill(const DistillConfig &cfg, const Teacher &teacher, const EvalSet &eval,
                           const RunOptions &run, const std::string &label = "arcflow",
                           Exec exec = Exec::parallel);

struct AblationRow {
  std::string group; // gamma | sharing | modes | baseline
  std::string cell;
  std::uint64_t seed = 0;
  double endpoint_mse = 0.0;
  double final_loss = 0.0;
};

struct AblationCell {
  std::string group;
  std::string cell;
  DistillConfig cfg;
};

/// Cells of the gamma-mode, head-sharing and mode-count tables plus the
/// linear baseline, derived from `base`.
std::vector<AblationCell> ablation_cells(const DistillConfig &base);

/// Runs every cell for seeds base.seed .. base.seed + seeds - 1. Cells with
/// identical configs are trained once and reported under each name.
std::vector<AblationRow> run_ablation(const DistillConfig &base, const Teacher &teacher,
                                      const EvalSet &eval, std::size_t seeds,
                                      std::ostream *progress = nullptr);

/// Median endpoint_mse of one cell over its seeds.
double median_mse(const std::vector<AblationRow> &rows, const std::string &cell);

struct OrderingCheck {
  std::string name;
  bool holds = false;
  std::string detail;
};

/// The directional orderings expected from the ablation tables.
std::vector<OrderingCheck> check_orderings(const std::vector<AblationRow> &rows);

// ---- exports

void write_loss_csv(const std::filesystem::path &path, const TrainResult &result);
void write_ablation_csv(const std::filesystem::path &path, const std::vector<AblationRow> &rows);
void write_text(const std::filesystem::path &path, const std::string &text);

struct TrajectorySet {
  std::string source;
  std::vector<TrajectoryRecord> paths; // one per noise sample
};

/// Teacher (fine Euler) and student trajectories from the same noise rows.
std::vector<TrajectorySet> collect_trajectories(const VelocityField &teacher,
                                                std::size_t teacher_steps, const StudentNet &net,
                                                const StudentNet *baseline, const Points &noise,
                                                std::size_t nfe, std::size_t dense_per_shelf);

/// Columns: trajectory, source, t, x0, x1, ...
void write_trajectory_csv(const std::filesystem::path &path, const std::vector<TrajectorySet> &sets);
/// Overlay of the first two coordinates; one colour per source.
std::string render_trajectory_svg(const std::vector<TrajectorySet> &sets, const Points *data = nullptr);

} // namespace arcflow
