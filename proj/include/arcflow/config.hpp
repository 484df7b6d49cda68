#pragma once

// Run configuration: key = value text in three sections.
//
//   [teacher]  data distribution and which velocity field to distill
//   [distill]  DistillConfig
//   [run]      output location, exports, metric sample counts
//
// Blank lines and '#' comments are ignored. Unknown sections or keys,
// duplicate keys and malformed values are ConfigErrors carrying the line.
// print_config emits every key, so parse_config(print_config(c)) == c.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "arcflow/distill.hpp"
#include "arcflow/teacher.hpp"

namespace arcflow {

struct TeacherConfig {
  std::string kind = "ring";    // ring | custom
  std::size_t components = 8;
  double radius = 2.0;
  double component_std = 0.25;
  std::size_t dim = 2;
  // custom only: "w1,w2,...", "x,y;x,y;...", "s1,s2,..."
  std::string weights;
  std::string means;
  std::string stds;
  std::string field = "analytic"; // analytic | cfm
  std::size_t cfm_steps = 2000;
  double cfm_lr = 1e-3;
  std::size_t cfm_hidden = 64;

  bool operator==(const TeacherConfig &) const = default;
};

struct RunOptions {
  std::string out_dir = "out";
  bool export_csv = true;
  bool export_svg = true;
  std::size_t metric_samples = 2048;
  std::size_t teacher_steps = 100;
  std::size_t reference_steps = 200;
  std::size_t trajectory_samples = 8;
  std::size_t dense_per_shelf = 16;
  std::uint64_t eval_seed = 99;
  bool validate_teacher = false;
  std::size_t ablation_seeds = 3;

  bool operator==(const RunOptions &) const = default;
};

struct RunConfig {
  TeacherConfig teacher;
  DistillConfig distill;
  RunOptions run;

  bool operator==(const RunConfig &) const = default;
};

RunConfig parse_config_text(std::string_view text);
/// Missing or unreadable file is a ConfigError with line 0.
RunConfig parse_config(const std::filesystem::path &path);
std::string print_config(const RunConfig &config);
/// FNV-1a of print_config(config), as 16 hex digits.
std::string config_hash(const RunConfig &config);

/// Data distribution described by the [teacher] section.
GmmTeacherSpec build_teacher_spec(const TeacherConfig &config);
/// Teacher for distillation; trains a CFM velocity net when field = cfm.
Teacher build_teacher(const TeacherConfig &config, std::uint64_t seed);

} // namespace arcflow
