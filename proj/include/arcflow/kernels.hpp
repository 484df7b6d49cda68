#pragma once

// Batch kernels over independent samples. Each kernel has a plain serial
// reference and an OpenMP version; per-sample work is identical, and any
// reduction in the OpenMP version runs over per-row partials in row order so
// results do not depend on the thread count.

#include <cstddef>

#include "arcflow/nnet.hpp"
#include "arcflow/points.hpp"
#include "arcflow/teacher.hpp"

namespace arcflow::kernels {

namespace serial {

Points teacher_endpoints(const VelocityField &field, const Points &noise, std::size_t steps);
Points student_endpoints(const StudentNet &net, const Points &noise, std::size_t nfe);
Points gmm_velocities(const GmmTeacherSpec &spec, const Points &x, double t);
/// U-statistic energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'|.
double energy_distance(const Points &a, const Points &b);

} // namespace serial

namespace omp {

Points teacher_endpoints(const VelocityField &field, const Points &noise, std::size_t steps);
Points student_endpoints(const StudentNet &net, const Points &noise, std::size_t nfe);
Points gmm_velocities(const GmmTeacherSpec &spec, const Points &x, double t);
double energy_distance(const Points &a, const Points &b);

} // namespace omp

/// Mean over rows of the squared Euclidean distance.
double mean_squared_distance(const Points &a, const Points &b);

int max_threads();

} // namespace arcflow::kernels
