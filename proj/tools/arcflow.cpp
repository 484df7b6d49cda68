// arcflow: verify | distill | ablate | sample

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "arcflow/config.hpp"
#include "arcflow/error.hpp"
#include "arcflow/experiment.hpp"
#include "arcflow/kernels.hpp"
#include "arcflow/verify.hpp"

namespace fs = std::filesystem;
using namespace arcflow;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string out;
};

void add_common(CLI::App *app, Common &c) {
  app->add_option("--config", c.config, "config file (key = value, sections [teacher] [distill] [run])");
  app->add_option("--seed", c.seed, "override [distill] seed");
  app->add_option("--steps", c.steps, "override [distill] total_steps");
  app->add_option("--out", c.out, "override [run] out_dir");
}

RunConfig load(const Common &c) {
  RunConfig cfg = c.config.empty() ? parse_config_text("") : parse_config(c.config);
  if (c.seed) {
    cfg.distill.seed = *c.seed;
  }
  if (c.steps) {
    cfg.distill.total_steps = *c.steps;
  }
  if (!c.out.empty()) {
    cfg.run.out_dir = c.out;
  }
  return cfg;
}

Teacher teacher_for(const RunConfig &cfg) {
  Teacher teacher = build_teacher(cfg.teacher, cfg.distill.seed);
  if (cfg.run.validate_teacher && cfg.teacher.field == "analytic") {
    VerifyOptions opts;
    opts.seed = cfg.distill.seed;
    const SuiteResult r = suite_teacher_mc(opts);
    print_suite(std::cout, r);
    if (!r.passed) {
      throw NumericError("teacher failed the Monte-Carlo check");
    }
  }
  return teacher;
}

int cmd_verify(const Common &c, double branch_epsilon) {
  VerifyOptions opts;
  opts.seed = c.seed.value_or(0);
  opts.branch_epsilon = branch_epsilon;
  std::vector<SuiteResult> results;
  using Suite = SuiteResult (*)(const VerifyOptions &);
  for (Suite s : {suite_continuity, suite_quadrature, suite_additivity, suite_exact_fit, suite_haar,
                  suite_gradients, suite_degenerate, suite_teacher_mc, suite_teacher_transport}) {
    results.push_back(s(opts));
    print_suite(std::cout, results.back());
  }
  std::cout << "\n";
  print_tolerance_table(std::cout, results);
  if (!c.out.empty()) {
    std::ostringstream table;
    print_tolerance_table(table, results);
    write_text(fs::path(c.out) / "verify.csv", table.str());
  }
  int failed = 0;
  for (const auto &r : results) {
    if (!r.passed) {
      std::cerr << "invariant violated: " << r.name << "\n";
      ++failed;
    }
  }
  return failed ? 1 : 0;
}

void write_outcome(const fs::path &dir, const std::string &prefix, DistillOutcome &o,
                   const RunConfig &cfg) {
  o.report.config_hash = config_hash(cfg);
  write_loss_csv(dir / (prefix + "loss.csv"), o.train);
  save_checkpoint(dir / (prefix + "student.ckpt"), o.net);
  write_text(dir / (prefix + "metrics.json"), to_json(o.report));
}

void export_trajectories(const fs::path &dir, const RunConfig &cfg, const Teacher &teacher,
                         const StudentNet &net, const StudentNet *baseline, const Points &noise,
                         std::size_t nfe) {
  const auto sets = collect_trajectories(teacher.field, cfg.run.reference_steps, net, baseline,
                                         noise, nfe, cfg.run.dense_per_shelf);
  if (cfg.run.export_csv) {
    write_trajectory_csv(dir / "trajectories.csv", sets);
  }
  if (cfg.run.export_svg) {
    Rng rng = make_stream(cfg.run.eval_seed, "svg-data");
    const Points data = sample_data(teacher.data, rng, 1000);
    write_text(dir / "trajectories.svg", render_trajectory_svg(sets, &data));
  }
}

Points first_rows(const Points &p, std::size_t n) {
  n = std::min(n, p.size());
  Points out(n, p.dim);
  std::copy_n(p.data.begin(), n * p.dim, out.data.begin());
  return out;
}

int cmd_distill(const Common &c, bool with_baseline) {
  const RunConfig cfg = load(c);
  const fs::path dir = cfg.run.out_dir;
  fs::create_directories(dir);
  write_text(dir / "config.conf", print_config(cfg));
  const Teacher teacher = teacher_for(cfg);
  const EvalSet eval = make_eval_set(teacher, cfg.run);

  DistillOutcome arc = run_distill(cfg.distill, teacher, eval, cfg.run, "arcflow");
  write_outcome(dir, "", arc, cfg);
  std::cout << to_json(arc.report);

  std::optional<DistillOutcome> base;
  if (with_baseline) {
    base = run_distill(make_linear_baseline(cfg.distill), teacher, eval, cfg.run, "baseline");
    write_outcome(dir, "baseline_", *base, cfg);
    std::cout << to_json(base->report);
  }
  if (cfg.run.export_csv || cfg.run.export_svg) {
    export_trajectories(dir, cfg, teacher, arc.net, base ? &base->net : nullptr,
                        first_rows(eval.noise, cfg.run.trajectory_samples), cfg.distill.nfe);
  }
  return 0;
}

int cmd_ablate(const Common &c, std::optional<std::size_t> seeds) {
  const RunConfig cfg = load(c);
  const fs::path dir = cfg.run.out_dir;
  fs::create_directories(dir);
  write_text(dir / "config.conf", print_config(cfg));
  const Teacher teacher = teacher_for(cfg);
  const EvalSet eval = make_eval_set(teacher, cfg.run);
  std::cout << "teacher floor " << eval.teacher_floor << "\n";
  const auto rows =
      run_ablation(cfg.distill, teacher, eval, seeds.value_or(cfg.run.ablation_seeds), &std::cout);
  write_ablation_csv(dir / "ablation.csv", rows);

  std::cout << "\ncell,median_endpoint_mse\n";
  for (const auto &cell : ablation_cells(cfg.distill)) {
    std::cout << cell.cell << "," << median_mse(rows, cell.cell) << "\n";
  }
  std::cout << "\n";
  for (const auto &o : check_orderings(rows)) {
    std::cout << (o.holds ? "[holds] " : "[fails] ") << o.name << "  " << o.detail << "\n";
  }
  return 0;
}

int cmd_sample(const Common &c, const std::string &checkpoint, const std::string &baseline_path,
               std::size_t count, std::size_t nfe) {
  const RunConfig cfg = load(c);
  const StudentNet net = load_checkpoint(checkpoint);
  std::optional<StudentNet> baseline;
  if (!baseline_path.empty()) {
    baseline = load_checkpoint(baseline_path);
  }
  const Teacher teacher = build_teacher(cfg.teacher, cfg.distill.seed);
  const StudentNet *base_ptr = baseline ? &*baseline : nullptr;
  for (const StudentNet *n : {&net, base_ptr}) {
    if (n && n->shape().dim != teacher.data.dim()) {
      throw FormatError("checkpoint dimension " + std::to_string(n->shape().dim) +
                        " does not match the teacher dimension " +
                        std::to_string(teacher.data.dim()));
    }
  }
  Rng rng = make_stream(cfg.distill.seed, "sample");
  const Points noise = sample_noise(teacher.data.dim(), rng, count);
  const fs::path dir = cfg.run.out_dir;
  fs::create_directories(dir);
  RunConfig out_cfg = cfg;
  out_cfg.run.export_csv = out_cfg.run.export_svg = true;
  export_trajectories(dir, out_cfg, teacher, net, baseline ? &*baseline : nullptr, noise, nfe);
  std::cout << "wrote " << (dir / "trajectories.csv").string() << " and "
            << (dir / "trajectories.svg").string() << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Momentum-mixture flow distillation on Gaussian-mixture teachers"};
  app.require_subcommand(0, 1);
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "print the default config and exit");

  Common verify_c, distill_c, ablate_c, sample_c;
  double branch_epsilon = kLinearBranchEpsilon;
  auto *verify = app.add_subcommand("verify", "run the invariant suites");
  add_common(verify, verify_c);
  verify->add_option("--branch-epsilon", branch_epsilon,
                     "linear-branch threshold of the coefficient (0 disables it)");

  bool with_baseline = false;
  auto *distill = app.add_subcommand("distill", "train a student and report metrics");
  add_common(distill, distill_c);
  distill->add_flag("--with-baseline", with_baseline, "also train the linear (K = 1, gamma = 1) baseline");

  std::optional<std::size_t> seeds;
  auto *ablate = app.add_subcommand("ablate", "gamma-mode, head-sharing and mode-count ablations");
  add_common(ablate, ablate_c);
  ablate->add_option("--seeds", seeds, "paired seeds per cell (default [run] ablation_seeds)");

  std::string checkpoint, baseline;
  std::size_t count = 8, nfe = 2;
  auto *sample = app.add_subcommand("sample", "export teacher and student trajectories");
  add_common(sample, sample_c);
  sample->add_option("--checkpoint", checkpoint, "student checkpoint")->required();
  sample->add_option("--baseline", baseline, "optional baseline checkpoint");
  sample->add_option("--count", count, "number of trajectories")->check(CLI::PositiveNumber);
  sample->add_option("--nfe", nfe, "student steps")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (print_defaults) {
      std::cout << print_config(RunConfig{});
      return 0;
    }
    if (verify->parsed()) {
      return cmd_verify(verify_c, branch_epsilon);
    }
    if (distill->parsed()) {
      return cmd_distill(distill_c, with_baseline);
    }
    if (ablate->parsed()) {
      return cmd_ablate(ablate_c, seeds);
    }
    if (sample->parsed()) {
      return cmd_sample(sample_c, checkpoint, baseline, count, nfe);
    }
    std::cout << app.help();
    return 0;
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 2;
}
