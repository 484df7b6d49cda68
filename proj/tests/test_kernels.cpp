#include <doctest.h>

#include <cmath>
#include <cstring>

#include "arcflow/distill.hpp"
#include "arcflow/kernels.hpp"

using namespace arcflow;

namespace {

bool same_bits(const Points &a, const Points &b) {
  return a.dim == b.dim && a.data.size() == b.data.size() &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("serial and OpenMP kernels agree bit for bit") {
  const GmmTeacherSpec spec = GmmTeacherSpec::ring(8, 2.0, 0.25);
  Rng rng = make_stream(1, "kernels");
  const Points noise = sample_noise(2, rng, 257);
  const Points data = sample_data(spec, rng, 300);

  CHECK(same_bits(kernels::serial::gmm_velocities(spec, noise, 0.4),
                  kernels::omp::gmm_velocities(spec, noise, 0.4)));
  const VelocityField field = gmm_field(spec);
  CHECK(same_bits(kernels::serial::teacher_endpoints(field, noise, 20),
                  kernels::omp::teacher_endpoints(field, noise, 20)));

  DistillConfig cfg;
  cfg.hidden = 16;
  Rng init = make_stream(1, "student-init");
  const StudentNet net(cfg.net_shape(2), init);
  CHECK(same_bits(kernels::serial::student_endpoints(net, noise, 2),
                  kernels::omp::student_endpoints(net, noise, 2)));

  CHECK(kernels::serial::energy_distance(noise, data) == kernels::omp::energy_distance(noise, data));
  CHECK(kernels::max_threads() >= 1);
}

TEST_CASE("velocity kernel matches the pointwise field") {
  const GmmTeacherSpec spec = GmmTeacherSpec::ring(4, 1.0, 0.3);
  Rng rng = make_stream(2, "kernels");
  const Points x = sample_noise(2, rng, 16);
  const Points v = kernels::omp::gmm_velocities(spec, x, 0.7);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Vec ref = gmm_velocity(spec, x.row(i), 0.7);
    CHECK(v.row(i)[0] == ref[0]);
    CHECK(v.row(i)[1] == ref[1]);
  }
}

TEST_CASE("energy distance examples") {
  // Two point masses at distance 3: 2 * 3 - 0 - 0.
  Points a(4, 1), b(4, 1);
  for (std::size_t i = 0; i < 4; ++i) b.row(i)[0] = 3.0;
  CHECK(kernels::serial::energy_distance(a, b) == doctest::Approx(6.0));
  CHECK(kernels::serial::energy_distance(a, a) == 0.0);

  // Same distribution: the U-statistic is centred near zero.
  Rng rng = make_stream(3, "ed");
  const Points p = sample_noise(2, rng, 2000), q = sample_noise(2, rng, 2000);
  CHECK(std::abs(kernels::omp::energy_distance(p, q)) < 0.02);
  Points shifted = q;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted.row(i)[0] += 1.0;
  CHECK(kernels::omp::energy_distance(p, shifted) > 0.1);
}

TEST_CASE("mean squared distance") {
  Points a(2, 2), b(2, 2);
  b.row(0)[0] = 3.0;
  b.row(0)[1] = 4.0;
  CHECK(kernels::mean_squared_distance(a, b) == doctest::Approx(12.5));
}
