#include "arcflow/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "arcflow/error.hpp"
#include "arcflow/kernels.hpp"

namespace arcflow {
namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path &path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw FormatError("cannot write " + path.string());
  }
  return out;
}

// Position on a uniform-grid Euler record at time t, by linear interpolation.
Vec interpolate_record(const TrajectoryRecord &rec, double t) {
  const std::size_t n = rec.steps;
  const double s = (1.0 - t) * static_cast<double>(n);
  std::size_t k = static_cast<std::size_t>(std::floor(s));
  if (k >= n) {
    return rec.states.back().x;
  }
  const double f = s - static_cast<double>(k);
  const Vec &a = rec.states[k].x;
  const Vec &b = rec.states[k + 1].x;
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = (1.0 - f) * a[i] + f * b[i];
  }
  return out;
}

} // namespace

EvalSet make_eval_set(const Teacher &teacher, const RunOptions &run) {
  EvalSet eval;
  Rng rng = make_stream(run.eval_seed, "eval");
  eval.noise = sample_noise(teacher.data.dim(), rng, run.metric_samples);
  eval.teacher_ref = kernels::omp::teacher_endpoints(teacher.field, eval.noise, run.teacher_steps);
  eval.teacher_fine = kernels::omp::teacher_endpoints(teacher.field, eval.noise, run.reference_steps);
  eval.teacher_floor = kernels::mean_squared_distance(eval.teacher_fine, eval.teacher_ref);
  return eval;
}

std::string to_json(const MetricsReport &r) {
  nlohmann::ordered_json j;
  j["label"] = r.label;
  j["endpoint_mse"] = r.endpoint_mse;
  j["trajectory_deviation"] = r.trajectory_deviation;
  j["teacher_floor"] = r.teacher_floor;
  j["final_loss"] = r.final_loss;
  j["steps"] = r.steps;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(2) + "\n";
}

double endpoint_mse(const StudentNet &net, const EvalSet &eval, std::size_t nfe) {
  const Points s = kernels::omp::student_endpoints(net, eval.noise, nfe);
  return kernels::mean_squared_distance(s, eval.teacher_ref);
}

double trajectory_deviation(const StudentNet &net, const VelocityField &teacher, const Points &noise,
                            std::size_t nfe, std::size_t dense_per_shelf, std::size_t teacher_steps) {
  const std::size_t n = noise.size();
  std::vector<double> sums(n, 0.0);
  std::vector<std::size_t> counts(n, 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto r = static_cast<std::size_t>(i);
    const TrajectoryRecord ref = euler_sample(teacher, noise.row(r), teacher_steps);
    const TrajectoryRecord stu = student_sample(net, noise.row(r), nfe, dense_per_shelf);
    for (const LatentState &s : stu.states) {
      const Vec x = interpolate_record(ref, s.t);
      double d2 = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        d2 += (x[j] - s.x[j]) * (x[j] - s.x[j]);
      }
      sums[r] += std::sqrt(d2);
      ++counts[r];
    }
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    total += sums[r];
    count += counts[r];
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double smoothed_final_loss(const TrainResult &result, std::size_t window) {
  const auto &log = result.log;
  if (log.empty() || window == 0) {
    return 0.0;
  }
  const std::size_t n = std::min(window, log.size());
  double s = 0.0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) {
    s += log[i].loss;
  }
  return s / static_cast<double>(n);
}

DistillOutcome run_distill(const DistillConfig &cfg, const Teacher &teacher, const EvalSet &eval,
                           const RunOptions &run, const std::string &label, Exec exec) {
  const auto start = std::chrono::steady_clock::now();
  Rng init = make_stream(cfg.seed, "student-init");
  DistillOutcome out{StudentNet(cfg.net_shape(teacher.data.dim()), init), {}, {}};
  out.train = distill_train(teacher, out.net, cfg, exec);

  MetricsReport &r = out.report;
  r.label = label;
  r.endpoint_mse = endpoint_mse(out.net, eval, cfg.nfe);
  r.trajectory_deviation = trajectory_deviation(out.net, teacher.field, eval.noise, cfg.nfe,
                                                run.dense_per_shelf, run.reference_steps);
  r.teacher_floor = eval.teacher_floor;
  r.final_loss = smoothed_final_loss(out.train);
  r.steps = cfg.total_steps;
  r.seed = cfg.seed;
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!std::isfinite(r.endpoint_mse) || !std::isfinite(r.trajectory_deviation)) {
    throw NumericError("non-finite metrics for " + label);
  }
  return out;
}

std::vector<AblationCell> ablation_cells(const DistillConfig &base) {
  DistillConfig learn = base;
  learn.gamma_mode = GammaMode::learnable;
  learn.share_velocity = false;
  learn.share_gamma = false;

  std::vector<AblationCell> cells;
  cells.push_back({"baseline", "baseline", make_linear_baseline(base)});
  for (GammaMode m : {GammaMode::frozen_one, GammaMode::fixed, GammaMode::learnable}) {
    DistillConfig c = learn;
    c.gamma_mode = m;
    cells.push_back({"gamma", "gamma_" + std::string(to_string(m)), c});
  }
  {
    DistillConfig c = learn;
    c.share_gamma = true;
    cells.push_back({"sharing", "share_K_1", c});
    c = learn;
    c.share_velocity = true;
    cells.push_back({"sharing", "share_1_K", c});
    cells.push_back({"sharing", "share_K_K", learn});
  }
  for (std::size_t k : {4, 8, 16}) {
    DistillConfig c = learn;
    c.modes = k;
    cells.push_back({"modes", "K_" + std::to_string(k), c});
  }
  return cells;
}

std::vector<AblationRow> run_ablation(const DistillConfig &base, const Teacher &teacher,
                                      const EvalSet &eval, std::size_t seeds,
                                      std::ostream *progress) {
  const auto cells = ablation_cells(base);
  std::vector<AblationRow> rows;
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base.seed + s;
    std::vector<std::pair<DistillConfig, AblationRow>> done;
    for (const AblationCell &cell : cells) {
      DistillConfig cfg = cell.cfg;
      cfg.seed = seed;
      AblationRow row{cell.group, cell.cell, seed, 0.0, 0.0};
      auto hit = std::find_if(done.begin(), done.end(), [&](const auto &d) { return d.first == cfg; });
      if (hit != done.end()) {
        row.endpoint_mse = hit->second.endpoint_mse;
        row.final_loss = hit->second.final_loss;
      } else {
        Rng init = make_stream(cfg.seed, "student-init");
        StudentNet net(cfg.net_shape(teacher.data.dim()), init);
        const TrainResult train = distill_train(teacher, net, cfg);
        row.endpoint_mse = endpoint_mse(net, eval, cfg.nfe);
        row.final_loss = smoothed_final_loss(train);
        done.emplace_back(cfg, row);
      }
      if (progress) {
        *progress << "  seed " << seed << "  " << row.cell << "  endpoint_mse " << row.endpoint_mse
                  << "  final_loss " << row.final_loss << std::endl;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

double median_mse(const std::vector<AblationRow> &rows, const std::string &cell) {
  std::vector<double> v;
  for (const auto &r : rows) {
    if (r.cell == cell) {
      v.push_back(r.endpoint_mse);
    }
  }
  if (v.empty()) {
    throw InvalidParameter("no ablation rows for cell " + cell);
  }
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<OrderingCheck> check_orderings(const std::vector<AblationRow> &rows) {
  const auto m = [&](const char *c) { return median_mse(rows, c); };
  const auto pair = [](const char *a, double x, const char *b, double y) {
    return std::string(a) + " " + fmt17(x) + " vs " + b + " " + fmt17(y);
  };
  std::vector<OrderingCheck> out;
  const double learn = m("gamma_learnable"), fixed = m("gamma_fixed"), one = m("gamma_frozen_one");
  out.push_back({"gamma learnable <= fixed", learn <= fixed,
                 pair("learnable", learn, "fixed", fixed)});
  out.push_back({"gamma fixed <= frozen_one", fixed <= one, pair("fixed", fixed, "frozen_one", one)});
  const double kk = m("share_K_K"), k1 = m("share_K_1"), v1 = m("share_1_K");
  out.push_back({"sharing (K,K) best", kk <= k1 && kk <= v1,
                 "(K,K) " + fmt17(kk) + " (K,1) " + fmt17(k1) + " (1,K) " + fmt17(v1)});
  const double k4 = m("K_4"), k8 = m("K_8"), k16 = m("K_16");
  const double gain = std::abs(k16 - k8), prev = std::abs(k8 - k4);
  out.push_back({"modes K=16 <= K=8", k16 <= k8, pair("K=16", k16, "K=8", k8)});
  out.push_back({"modes |K16-K8| < |K8-K4|", gain < prev,
                 "|d16| " + fmt17(gain) + " |d4| " + fmt17(prev)});
  return out;
}

void write_loss_csv(const std::filesystem::path &path, const TrainResult &result) {
  auto out = open_out(path);
  out << "step,lambda,loss,shelf\n";
  for (const LossRow &r : result.log) {
    out << r.step << ',' << fmt17(r.lambda) << ',' << fmt17(r.loss) << ',' << r.shelf << '\n';
  }
}

void write_ablation_csv(const std::filesystem::path &path, const std::vector<AblationRow> &rows) {
  auto out = open_out(path);
  out << "group,cell,seed,endpoint_mse,final_loss\n";
  for (const AblationRow &r : rows) {
    out << r.group << ',' << r.cell << ',' << r.seed << ',' << fmt17(r.endpoint_mse) << ','
        << fmt17(r.final_loss) << '\n';
  }
}

void write_text(const std::filesystem::path &path, const std::string &text) {
  auto out = open_out(path);
  out << text;
}

std::vector<TrajectorySet> collect_trajectories(const VelocityField &teacher,
                                                std::size_t teacher_steps, const StudentNet &net,
                                                const StudentNet *baseline, const Points &noise,
                                                std::size_t nfe, std::size_t dense_per_shelf) {
  std::vector<TrajectorySet> sets;
  TrajectorySet t{"teacher", {}};
  TrajectorySet a{"arcflow", {}};
  TrajectorySet b{"baseline", {}};
  for (std::size_t i = 0; i < noise.size(); ++i) {
    t.paths.push_back(euler_sample(teacher, noise.row(i), teacher_steps));
    a.paths.push_back(student_sample(net, noise.row(i), nfe, dense_per_shelf));
    if (baseline) {
      b.paths.push_back(student_sample(*baseline, noise.row(i), nfe, dense_per_shelf));
    }
  }
  sets.push_back(std::move(t));
  if (baseline) {
    sets.push_back(std::move(b));
  }
  sets.push_back(std::move(a));
  return sets;
}

void write_trajectory_csv(const std::filesystem::path &path, const std::vector<TrajectorySet> &sets) {
  auto out = open_out(path);
  std::size_t dim = 0;
  for (const auto &s : sets) {
    for (const auto &p : s.paths) {
      if (!p.states.empty()) {
        dim = p.states.front().x.size();
      }
    }
  }
  out << "trajectory,source,t";
  for (std::size_t j = 0; j < dim; ++j) {
    out << ",x" << j;
  }
  out << '\n';
  for (const auto &s : sets) {
    for (std::size_t id = 0; id < s.paths.size(); ++id) {
      for (const LatentState &st : s.paths[id].states) {
        out << id << ',' << s.source << ',' << fmt17(st.t);
        for (double v : st.x) {
          out << ',' << fmt17(v);
        }
        out << '\n';
      }
    }
  }
}

std::string render_trajectory_svg(const std::vector<TrajectorySet> &sets, const Points *data) {
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  const auto grow = [&](double x, double y) {
    lo_x = std::min(lo_x, x);
    hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y);
    hi_y = std::max(hi_y, y);
  };
  for (const auto &s : sets) {
    for (const auto &p : s.paths) {
      for (const auto &st : p.states) {
        grow(st.x[0], st.x.size() > 1 ? st.x[1] : 0.0);
      }
    }
  }
  if (data) {
    for (std::size_t i = 0; i < data->size(); ++i) {
      grow(data->row(i)[0], data->dim > 1 ? data->row(i)[1] : 0.0);
    }
  }
  if (lo_x > hi_x) {
    lo_x = lo_y = -1.0;
    hi_x = hi_y = 1.0;
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9}) * 1.1;
  const double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);
  const double size = 640.0, margin = 20.0;
  const auto px = [&](double x) { return margin + (x - cx + span / 2) / span * (size - 2 * margin); };
  const auto py = [&](double y) { return size - margin - (y - cy + span / 2) / span * (size - 2 * margin); };

  std::map<std::string, std::string> colour{
      {"teacher", "#444444"}, {"baseline", "#1f77b4"}, {"arcflow", "#d62728"}};
  char buf[128];
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (data) {
    svg << "<g fill=\"#bbbbbb\">\n";
    for (std::size_t i = 0; i < data->size(); ++i) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"1.2\"/>\n",
                    px(data->row(i)[0]), py(data->dim > 1 ? data->row(i)[1] : 0.0));
      svg << buf;
    }
    svg << "</g>\n";
  }
  for (const auto &s : sets) {
    const std::string c = colour.count(s.source) ? colour[s.source] : "#2ca02c";
    svg << "<g stroke=\"" << c << "\" fill=\"none\" stroke-width=\"1.5\">\n";
    for (const auto &p : s.paths) {
      svg << "<polyline points=\"";
      for (const auto &st : p.states) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(st.x[0]), py(st.x.size() > 1 ? st.x[1] : 0.0));
        svg << buf;
      }
      svg << "\"/>\n";
    }
    svg << "</g>\n";
  }
  double ly = 24.0;
  for (const auto &s : sets) {
    const std::string c = colour.count(s.source) ? colour[s.source] : "#2ca02c";
    std::snprintf(buf, sizeof buf, "<line x1=\"24\" y1=\"%.0f\" x2=\"48\" y2=\"%.0f\" stroke=\"%s\" stroke-width=\"2\"/>\n",
                  ly, ly, c.c_str());
    svg << buf;
    svg << "<text x=\"54\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << s.source << "</text>\n";
    ly += 18.0;
  }
  svg << "</svg>\n";
  return svg.str();
}

} // namespace arcflow
