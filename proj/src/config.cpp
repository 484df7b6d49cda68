#include "arcflow/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <set>
#include <type_traits>
#include <sstream>
#include <vector>

#include "arcflow/error.hpp"
#include "arcflow/nnet.hpp"

namespace arcflow {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Each value parser throws std::invalid_argument with a bare message; the
// caller adds section, key and line.
std::uint64_t parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument("expected a finite number, got '" + std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1") {
    return true;
  }
  if (s == "false" || s == "0") {
    return false;
  }
  throw std::invalid_argument("expected true or false, got '" + std::string(s) + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig &, std::string_view)> set;
  std::function<std::string(const RunConfig &)> get;
};

template <class M> Field uint_field(std::string s, std::string k, M member, std::uint64_t min = 0) {
  return {s, k,
          [member, min](RunConfig &c, std::string_view v) {
            const std::uint64_t x = parse_uint(v);
            if (x < min) {
              throw std::invalid_argument("must be >= " + std::to_string(min));
            }
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(x);
          },
          [member](const RunConfig &c) {
            return std::to_string(member(c));
          }};
}

template <class M> Field double_field(std::string s, std::string k, M member) {
  return {s, k, [member](RunConfig &c, std::string_view v) { member(c) = parse_double(v); },
          [member](const RunConfig &c) { return format_double(member(c)); }};
}

template <class M> Field bool_field(std::string s, std::string k, M member) {
  return {s, k, [member](RunConfig &c, std::string_view v) { member(c) = parse_bool(v); },
          [member](const RunConfig &c) {
            return std::string(member(c) ? "true" : "false");
          }};
}

template <class M>
Field string_field(std::string s, std::string k, M member, std::vector<std::string> allowed = {}) {
  return {s, k,
          [member, allowed](RunConfig &c, std::string_view v) {
            if (!allowed.empty()) {
              bool ok = false;
              for (const auto &a : allowed) {
                ok = ok || a == v;
              }
              if (!ok) {
                std::string msg = "expected one of";
                for (const auto &a : allowed) {
                  msg += " " + a;
                }
                throw std::invalid_argument(msg + ", got '" + std::string(v) + "'");
              }
            }
            member(c) = std::string(v);
          },
          [member](const RunConfig &c) { return member(c); }};
}

#define MEMBER(path) [](auto &c) -> auto & { return c.path; }

const std::vector<Field> &fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("teacher", "kind", MEMBER(teacher.kind), {"ring", "custom"}));
    f.push_back(uint_field("teacher", "components", MEMBER(teacher.components), 1));
    f.push_back(double_field("teacher", "radius", MEMBER(teacher.radius)));
    f.push_back(double_field("teacher", "std", MEMBER(teacher.component_std)));
    f.push_back(uint_field("teacher", "dim", MEMBER(teacher.dim), 2));
    f.push_back(string_field("teacher", "weights", MEMBER(teacher.weights)));
    f.push_back(string_field("teacher", "means", MEMBER(teacher.means)));
    f.push_back(string_field("teacher", "stds", MEMBER(teacher.stds)));
    f.push_back(string_field("teacher", "field", MEMBER(teacher.field), {"analytic", "cfm"}));
    f.push_back(uint_field("teacher", "cfm_steps", MEMBER(teacher.cfm_steps)));
    f.push_back(double_field("teacher", "cfm_lr", MEMBER(teacher.cfm_lr)));
    f.push_back(uint_field("teacher", "cfm_hidden", MEMBER(teacher.cfm_hidden), 1));

    f.push_back(uint_field("distill", "nfe", MEMBER(distill.nfe), 1));
    f.push_back(uint_field("distill", "modes", MEMBER(distill.modes), 1));
    f.push_back(uint_field("distill", "n_intermediate", MEMBER(distill.n_intermediate), 1));
    f.push_back(uint_field("distill", "guidance_steps", MEMBER(distill.guidance_steps)));
    f.push_back(uint_field("distill", "total_steps", MEMBER(distill.total_steps)));
    f.push_back(uint_field("distill", "batch", MEMBER(distill.batch), 1));
    f.push_back(uint_field("distill", "hidden", MEMBER(distill.hidden), 1));
    f.push_back(double_field("distill", "base_lr", MEMBER(distill.base_lr)));
    f.push_back(double_field("distill", "gamma_lr_scale", MEMBER(distill.gamma_lr_scale)));
    f.push_back(double_field("distill", "beta1", MEMBER(distill.beta1)));
    f.push_back(double_field("distill", "beta2", MEMBER(distill.beta2)));
    f.push_back(double_field("distill", "gamma_lo", MEMBER(distill.gamma_lo)));
    f.push_back(double_field("distill", "gamma_hi", MEMBER(distill.gamma_hi)));
    f.push_back(uint_field("distill", "seed", MEMBER(distill.seed)));
    f.push_back({"distill", "gamma_mode",
                 [](RunConfig &c, std::string_view v) {
                   try {
                     c.distill.gamma_mode = parse_gamma_mode(v);
                   } catch (const InvalidParameter &e) {
                     throw std::invalid_argument(e.what());
                   }
                 },
                 [](const RunConfig &c) { return std::string(to_string(c.distill.gamma_mode)); }});
    f.push_back(bool_field("distill", "share_velocity", MEMBER(distill.share_velocity)));
    f.push_back(bool_field("distill", "share_gamma", MEMBER(distill.share_gamma)));

    f.push_back(string_field("run", "out_dir", MEMBER(run.out_dir)));
    f.push_back(bool_field("run", "export_csv", MEMBER(run.export_csv)));
    f.push_back(bool_field("run", "export_svg", MEMBER(run.export_svg)));
    f.push_back(uint_field("run", "metric_samples", MEMBER(run.metric_samples), 1));
    f.push_back(uint_field("run", "teacher_steps", MEMBER(run.teacher_steps), 1));
    f.push_back(uint_field("run", "reference_steps", MEMBER(run.reference_steps), 1));
    f.push_back(uint_field("run", "trajectory_samples", MEMBER(run.trajectory_samples), 1));
    f.push_back(uint_field("run", "dense_per_shelf", MEMBER(run.dense_per_shelf), 1));
    f.push_back(uint_field("run", "eval_seed", MEMBER(run.eval_seed)));
    f.push_back(bool_field("run", "validate_teacher", MEMBER(run.validate_teacher)));
    f.push_back(uint_field("run", "ablation_seeds", MEMBER(run.ablation_seeds), 1));
    return f;
  }();
  return table;
}

#undef MEMBER

const Field *find_field(std::string_view section, std::string_view key) {
  for (const Field &f : fields()) {
    if (f.section == section && f.key == key) {
      return &f;
    }
  }
  return nullptr;
}

Vec parse_list(std::string_view s) {
  Vec out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto item = trim(s.substr(pos, comma == std::string_view::npos ? s.npos : comma - pos));
    out.push_back(parse_double(item));
    if (comma == std::string_view::npos) {
      break;
    }
    pos = comma + 1;
  }
  return out;
}

} // namespace

RunConfig parse_config_text(std::string_view text) {
  RunConfig config;
  std::string section;
  std::set<std::pair<std::string, std::string>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == text.npos ? text.npos : nl - pos);
    pos = nl == text.npos ? text.size() : nl + 1;
    ++line_no;

    if (const auto hash = line.find('#'); hash != line.npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(line_no, "malformed section header '" + std::string(line) + "'");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "teacher" && section != "distill" && section != "run") {
        throw ConfigError(line_no, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == line.npos) {
      throw ConfigError(line_no, "expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError(line_no, "key '" + key + "' appears before any section");
    }
    const Field *field = find_field(section, key);
    if (!field) {
      throw ConfigError(line_no, "unknown key '" + key + "' in [" + section + "]");
    }
    if (!seen.emplace(section, key).second) {
      throw ConfigError(line_no, "duplicate key '" + key + "' in [" + section + "]");
    }
    try {
      field->set(config, value);
    } catch (const std::invalid_argument &e) {
      throw ConfigError(line_no, "[" + section + "] " + key + ": " + e.what());
    }
  }

  try {
    config.distill.validate();
    build_teacher_spec(config.teacher);
  } catch (const std::invalid_argument &e) {
    throw ConfigError(0, e.what());
  }
  return config;
}

RunConfig parse_config(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError(0, "cannot open config file " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string print_config(const RunConfig &config) {
  std::string out;
  std::string section;
  for (const Field &f : fields()) {
    if (f.section != section) {
      if (!section.empty()) {
        out += "\n";
      }
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig &config) {
  const std::uint64_t h = stream_id(print_config(config));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

GmmTeacherSpec build_teacher_spec(const TeacherConfig &config) {
  GmmTeacherSpec spec;
  if (config.kind == "ring") {
    spec = GmmTeacherSpec::ring(config.components, config.radius, config.component_std, config.dim);
  } else {
    try {
      spec.weights = parse_list(config.weights);
      spec.stds = parse_list(config.stds);
      std::string_view rest = config.means;
      while (true) {
        const auto semi = rest.find(';');
        spec.means.push_back(parse_list(rest.substr(0, semi)));
        if (semi == rest.npos) {
          break;
        }
        rest = rest.substr(semi + 1);
      }
    } catch (const std::invalid_argument &e) {
      throw InvalidParameter(std::string("custom teacher: ") + e.what());
    }
  }
  spec.validate();
  return spec;
}

Teacher build_teacher(const TeacherConfig &config, std::uint64_t seed) {
  const GmmTeacherSpec spec = build_teacher_spec(config);
  if (config.field == "analytic") {
    return Teacher::analytic(spec);
  }
  Rng init = make_stream(seed, "cfm-init");
  auto net = std::make_shared<VelocityNet>(spec.dim(), config.cfm_hidden, 2, init);
  CfmConfig cfm;
  cfm.steps = config.cfm_steps;
  cfm.lr = config.cfm_lr;
  cfm.seed = seed;
  train_cfm_teacher(*net, spec, cfm);
  Teacher teacher;
  teacher.data = spec;
  teacher.field = [net](std::span<const double> x, double t, std::span<double> out) {
    net->forward_into(x, t, out);
  };
  return teacher;
}

} // namespace arcflow
