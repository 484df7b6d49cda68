#include "arcflow/kernels.hpp"

#include <cmath>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "arcflow/distill.hpp"
#include "arcflow/error.hpp"

namespace arcflow::kernels {
namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void check_dims(const Points &a, const Points &b) {
  if (a.dim != b.dim) {
    throw InvalidParameter("point sets disagree on dimension");
  }
  if (a.size() < 2 || b.size() < 2) {
    throw InvalidParameter("energy distance needs at least two points per set");
  }
}

// Runs body(i) for i in [0, n) in parallel; the first exception (lowest row)
// is rethrown after the loop.
template <class Body> void parallel_rows(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

double combine(double cross, double within_a, double within_b, std::size_t na, std::size_t nb) {
  const double dna = static_cast<double>(na);
  const double dnb = static_cast<double>(nb);
  return 2.0 * cross / (dna * dnb) - within_a / (dna * (dna - 1.0)) -
         within_b / (dnb * (dnb - 1.0));
}

} // namespace

namespace serial {

Points teacher_endpoints(const VelocityField &field, const Points &noise, std::size_t steps) {
  Points out(noise.size(), noise.dim);
  for (std::size_t i = 0; i < noise.size(); ++i) {
    euler_endpoint_into(field, noise.row(i), steps, out.row(i));
  }
  return out;
}

Points student_endpoints(const StudentNet &net, const Points &noise, std::size_t nfe) {
  Points out(noise.size(), noise.dim);
  for (std::size_t i = 0; i < noise.size(); ++i) {
    student_endpoint_into(net, noise.row(i), nfe, out.row(i));
  }
  return out;
}

Points gmm_velocities(const GmmTeacherSpec &spec, const Points &x, double t) {
  Points out(x.size(), x.dim);
  for (std::size_t i = 0; i < x.size(); ++i) {
    gmm_velocity_into(spec, x.row(i), t, out.row(i));
  }
  return out;
}

double energy_distance(const Points &a, const Points &b) {
  check_dims(a, b);
  // Row partials first, then totals in row order (same association as omp).
  double cross = 0.0, within_a = 0.0, within_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double c = 0.0, w = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      c += distance(a.row(i), b.row(j));
    }
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      w += distance(a.row(i), a.row(j));
    }
    cross += c;
    within_a += 2.0 * w;
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    double w = 0.0;
    for (std::size_t j = i + 1; j < b.size(); ++j) {
      w += distance(b.row(i), b.row(j));
    }
    within_b += 2.0 * w;
  }
  return combine(cross, within_a, within_b, a.size(), b.size());
}

} // namespace serial

namespace omp {

Points teacher_endpoints(const VelocityField &field, const Points &noise, std::size_t steps) {
  Points out(noise.size(), noise.dim);
  parallel_rows(noise.size(), [&](std::size_t r) {
    euler_endpoint_into(field, noise.row(r), steps, out.row(r));
  });
  return out;
}

Points student_endpoints(const StudentNet &net, const Points &noise, std::size_t nfe) {
  Points out(noise.size(), noise.dim);
  parallel_rows(noise.size(), [&](std::size_t r) {
    student_endpoint_into(net, noise.row(r), nfe, out.row(r));
  });
  return out;
}

Points gmm_velocities(const GmmTeacherSpec &spec, const Points &x, double t) {
  Points out(x.size(), x.dim);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gmm_velocity_into(spec, x.row(r), t, out.row(r));
  }
  return out;
}

double energy_distance(const Points &a, const Points &b) {
  check_dims(a, b);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  // Per-row partial sums, combined serially in row order.
  std::vector<double> cross_rows(na, 0.0), a_rows(na, 0.0), b_rows(nb, 0.0);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(na); ++i) {
    const auto r = static_cast<std::size_t>(i);
    double c = 0.0, w = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
      c += distance(a.row(r), b.row(j));
    }
    for (std::size_t j = r + 1; j < na; ++j) {
      w += distance(a.row(r), a.row(j));
    }
    cross_rows[r] = c;
    a_rows[r] = 2.0 * w;
  }
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nb); ++i) {
    const auto r = static_cast<std::size_t>(i);
    double w = 0.0;
    for (std::size_t j = r + 1; j < nb; ++j) {
      w += distance(b.row(r), b.row(j));
    }
    b_rows[r] = 2.0 * w;
  }
  double cross = 0.0, within_a = 0.0, within_b = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    cross += cross_rows[i];
    within_a += a_rows[i];
  }
  for (double w : b_rows) {
    within_b += w;
  }
  return combine(cross, within_a, within_b, na, nb);
}

} // namespace omp

double mean_squared_distance(const Points &a, const Points &b) {
  if (a.dim != b.dim || a.size() != b.size() || a.size() == 0) {
    throw InvalidParameter("point sets must have matching non-zero shapes");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = distance(a.row(i), b.row(i));
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

} // namespace arcflow::kernels
