#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "arcflow/config.hpp"
#include "arcflow/error.hpp"
#include "arcflow/experiment.hpp"
#include "arcflow/verify.hpp"

using namespace arcflow;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int error_line(std::string_view text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError &e) {
    return e.line;
  }
  return -1;
}

fs::path temp_dir(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("arcflow_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

} // namespace

TEST_CASE("empty config gives defaults") {
  CHECK(parse_config_text("") == RunConfig{});
  CHECK(parse_config_text("# nothing\n\n   \n") == RunConfig{});
}

TEST_CASE("config values are parsed by section") {
  const RunConfig c = parse_config_text(
      "[teacher]\ncomponents = 4\nstd = 0.1\n"
      "[distill]\nnfe = 4   # shelves\nmodes=16\ngamma_mode = fixed\nshare_gamma = true\nseed = 7\n"
      "[run]\nout_dir = results/a\nexport_svg = false\n");
  CHECK(c.teacher.components == 4);
  CHECK(c.teacher.component_std == 0.1);
  CHECK(c.distill.nfe == 4);
  CHECK(c.distill.modes == 16);
  CHECK(c.distill.gamma_mode == GammaMode::fixed);
  CHECK(c.distill.share_gamma);
  CHECK(c.distill.seed == 7);
  CHECK(c.run.out_dir == "results/a");
  CHECK_FALSE(c.run.export_svg);
}

TEST_CASE("config errors carry line numbers") {
  try {
    parse_config_text("[distill]\nmodes = 8\nnfe = 0\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError &e) {
    CHECK(e.line == 3);
    CHECK(std::string(e.what()).find("nfe") != std::string::npos);
  }
  CHECK(error_line("[distill]\nbogus = 1\n") == 2);
  CHECK(error_line("[teacher]\n\n[nowhere]\n") == 3);
  CHECK(error_line("nfe = 2\n") == 1);
  CHECK(error_line("[distill]\nnfe = two\n") == 2);
  CHECK(error_line("[distill]\nnfe = 2\nnfe = 3\n") == 3);
  CHECK(error_line("[distill\n") == 1);
  CHECK(error_line("[distill]\nnfe\n") == 2);
  CHECK(error_line("[distill]\nbase_lr = nan\n") == 2);
  CHECK(error_line("[distill]\ngamma_mode = sometimes\n") == 2);
  CHECK(error_line("[teacher]\nfield = learned\n") == 2);
  // Cross-field checks are not tied to one line.
  CHECK(error_line("[distill]\ngamma_lo = 2\n") == 0);
  CHECK_THROWS_AS(parse_config("/nonexistent/arcflow.conf"), ConfigError);
}

TEST_CASE("print and parse round trip") {
  RunConfig c;
  c.teacher.kind = "custom";
  c.teacher.weights = "0.25,0.75";
  c.teacher.means = "1,0;-1,0.5";
  c.teacher.stds = "0.1,0.2";
  c.distill.base_lr = 0.1 + 0.2;
  c.distill.gamma_hi = 1.0 / 3.0 + 4.0;
  c.distill.gamma_mode = GammaMode::frozen_one;
  c.distill.seed = 1234567890123ULL;
  c.run.out_dir = "some/dir";
  c.run.validate_teacher = true;
  const std::string text = print_config(c);
  const RunConfig back = parse_config_text(text);
  CHECK(back == c);
  CHECK(print_config(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(RunConfig{}) != config_hash(c));
  CHECK(config_hash(c).size() == 16);

  const GmmTeacherSpec spec = build_teacher_spec(c.teacher);
  CHECK(spec.weights == Vec{0.25, 0.75});
  CHECK(spec.means[1] == Vec{-1.0, 0.5});
}

TEST_CASE("default config prints every section") {
  const std::string text = print_config(RunConfig{});
  for (const char *s : {"[teacher]", "[distill]", "[run]", "nfe = 2", "modes = 8", "eval_seed = 99"}) {
    CHECK(text.find(s) != std::string::npos);
  }
  CHECK(parse_config_text(text) == RunConfig{});
}

TEST_CASE("ordering checks on synthetic rows") {
  std::vector<AblationRow> rows;
  const auto add = [&](const char *cell, double mse) {
    for (std::uint64_t s = 0; s < 3; ++s) rows.push_back({"g", cell, s, mse + 0.001 * s, 0.0});
  };
  add("gamma_learnable", 0.10);
  add("gamma_fixed", 0.20);
  add("gamma_frozen_one", 0.30);
  add("share_K_K", 0.10);
  add("share_K_1", 0.15);
  add("share_1_K", 0.12);
  add("K_4", 0.30);
  add("K_8", 0.10);
  add("K_16", 0.09);
  CHECK(median_mse(rows, "K_16") == doctest::Approx(0.091));
  for (const auto &o : check_orderings(rows)) {
    CHECK_MESSAGE(o.holds, o.name);
  }
  rows.push_back({"g", "K_16", 3, 5.0, 0.0});
  rows.push_back({"g", "K_16", 4, 5.0, 0.0});
  rows.push_back({"g", "K_16", 5, 5.0, 0.0});
  const auto checks = check_orderings(rows);
  CHECK_FALSE(checks[3].holds);
  CHECK_THROWS(median_mse(rows, "missing"));
}

TEST_CASE("ablation covers every table") {
  const auto cells = ablation_cells(DistillConfig{});
  std::vector<std::string> names;
  for (const auto &c : cells) names.push_back(c.cell);
  for (const char *n : {"baseline", "gamma_frozen_one", "gamma_fixed", "gamma_learnable", "share_K_1",
                        "share_1_K", "share_K_K", "K_4", "K_8", "K_16"}) {
    CHECK(std::find(names.begin(), names.end(), n) != names.end());
  }
}

TEST_CASE("csv exports use a header and full precision") {
  const fs::path dir = temp_dir("csv");
  TrainResult r;
  r.log.push_back({0, 0.0, 0.1, 1});
  r.log.push_back({1, 1.0 / 3.0, 2.0 / 3.0, 2});
  write_loss_csv(dir / "loss.csv", r);
  const std::string text = read_file(dir / "loss.csv");
  CHECK(text.rfind("step,lambda,loss,shelf\n", 0) == 0);
  CHECK(text.find("0,0,0.10000000000000001,1\n") != std::string::npos);
  CHECK(text.find("1,0.33333333333333331,0.66666666666666663,2\n") != std::string::npos);

  write_ablation_csv(dir / "ablation.csv", {{"modes", "K_4", 2, 0.5, 0.25}});
  CHECK(read_file(dir / "ablation.csv") ==
        "group,cell,seed,endpoint_mse,final_loss\nmodes,K_4,2,0.5,0.25\n");
  fs::remove_all(dir);
}

TEST_CASE("trajectory exports") {
  DistillConfig cfg;
  cfg.hidden = 8;
  Rng rng = make_stream(1, "student-init");
  const StudentNet net(cfg.net_shape(2), rng);
  const GmmTeacherSpec spec = GmmTeacherSpec::ring(8, 2.0, 0.25);
  Rng nr = make_stream(1, "noise");
  const Points noise = sample_noise(2, nr, 3);
  const auto sets = collect_trajectories(gmm_field(spec), 20, net, &net, noise, 2, 4);
  REQUIRE(sets.size() == 3);

  const fs::path dir = temp_dir("traj");
  write_trajectory_csv(dir / "t.csv", sets);
  std::istringstream csv(read_file(dir / "t.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "trajectory,source,t,x0,x1");
  std::string prev_key;
  double prev_t = 2.0;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
    const std::string key = line.substr(0, c2);
    const double t = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
    if (key == prev_key) {
      CHECK(t < prev_t);
    } else {
      CHECK(t == 1.0);
    }
    prev_key = key;
    prev_t = t;
    ++rows;
  }
  CHECK(rows == 3 * (21 + 9 + 9));

  const std::string svg = render_trajectory_svg(sets);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t lines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
  CHECK(lines == 9);
  fs::remove_all(dir);
}

TEST_CASE("metrics json") {
  MetricsReport r;
  r.label = "arcflow";
  r.endpoint_mse = 0.25;
  r.steps = 10;
  const std::string j = to_json(r);
  CHECK(j.find("\"label\": \"arcflow\"") != std::string::npos);
  CHECK(j.find("\"endpoint_mse\": 0.25") != std::string::npos);
}

TEST_CASE("smoothed final loss") {
  TrainResult r;
  CHECK(smoothed_final_loss(r) == 0.0);
  for (std::size_t i = 0; i < 10; ++i) r.log.push_back({i, 1.0, static_cast<double>(i), 1});
  CHECK(smoothed_final_loss(r, 4) == doctest::Approx(7.5));
  CHECK(smoothed_final_loss(r, 100) == doctest::Approx(4.5));
}

TEST_CASE("continuity suite and its negative control") {
  VerifyOptions opts;
  CHECK(suite_continuity(opts).passed);
  opts.branch_epsilon = 0.0;
  const SuiteResult broken = suite_continuity(opts);
  CHECK_FALSE(broken.passed);
  CHECK(broken.name.find("continuity") != std::string::npos);
}
