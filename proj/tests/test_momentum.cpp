#include <doctest.h>

#include <cmath>
#include <numbers>

#include "arcflow/error.hpp"
#include "arcflow/momentum.hpp"
#include "arcflow/rng.hpp"

using namespace arcflow;

TEST_CASE("extrapolate_velocity examples") {
  const Vec v{1.0, 0.0};
  CHECK(extrapolate_velocity(v, 1.0, 1.0, 0.0) == Vec{1.0, 0.0});

  // 4^0.5 directly and as two quarter steps.
  const Vec half = extrapolate_velocity(v, 4.0, 1.0, 0.5);
  CHECK(half[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(half[1] == 0.0);
  const Vec chained = extrapolate_velocity(extrapolate_velocity(v, 4.0, 1.0, 0.75), 4.0, 0.75, 0.5);
  CHECK(chained[0] == doctest::Approx(half[0]).epsilon(1e-15));

  const Vec w{3.0, -2.0};
  CHECK(extrapolate_velocity(w, 7.3, 0.4, 0.4) == w);
}

TEST_CASE("extrapolate_velocity rejects bad input") {
  const Vec v{1.0};
  CHECK_THROWS_AS(extrapolate_velocity(v, 0.0, 1.0, 0.0), InvalidParameter);
  CHECK_THROWS_AS(extrapolate_velocity(v, -2.0, 1.0, 0.0), InvalidParameter);
  CHECK_THROWS_AS(extrapolate_velocity(v, 2.0, 0.2, 0.5), InvalidInterval);
}

TEST_CASE("eval_velocity examples") {
  const MomentumParams theta({0.5, 0.5}, {1.0, 0.0, 0.0, 1.0}, {0.0, 1.0}, 2);
  const Vec at0 = eval_velocity(theta, 0.0);
  CHECK(at0[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(at0[1] == doctest::Approx(0.5 * std::numbers::e).epsilon(1e-15));
  // Cross-check by summing single-mode extrapolations.
  for (double t : {0.0, 0.3, 0.9}) {
    const Vec mix = eval_velocity(theta, t);
    const Vec a = extrapolate_velocity(theta.velocity(0), theta.gamma(0), 1.0, t);
    const Vec b = extrapolate_velocity(theta.velocity(1), theta.gamma(1), 1.0, t);
    CHECK(mix[0] == doctest::Approx(0.5 * a[0] + 0.5 * b[0]).epsilon(1e-15));
    CHECK(mix[1] == doctest::Approx(0.5 * a[1] + 0.5 * b[1]).epsilon(1e-15));
  }
  // t = 1 gives the gated sum of base velocities.
  const Vec at1 = eval_velocity(theta, 1.0);
  CHECK(at1 == Vec{0.5, 0.5});
}

TEST_CASE("one-hot gating collapses to one mode") {
  const MomentumParams theta({0.0, 1.0, 0.0}, {1, 1, 2, -3, 5, 5}, {0.3, std::log(3.0), -1.0}, 2);
  const Vec v = eval_velocity(theta, 0.25);
  const Vec ref = extrapolate_velocity(theta.velocity(1), 3.0, 1.0, 0.25);
  CHECK(v[0] == doctest::Approx(ref[0]).epsilon(1e-14));
  CHECK(v[1] == doctest::Approx(ref[1]).epsilon(1e-14));
}

TEST_CASE("MomentumParams invariants") {
  CHECK_THROWS_AS(MomentumParams({0.6, 0.6}, {1, 1}, {0, 0}, 1), InvalidParameter);
  CHECK_THROWS_AS(MomentumParams({1.2, -0.2}, {1, 1}, {0, 0}, 1), InvalidParameter);
  CHECK_THROWS_AS(MomentumParams({1.0}, {1, 1}, {0}, 1), InvalidParameter);
  CHECK_THROWS_AS(MomentumParams({1.0}, {1}, {NAN}, 1), InvalidParameter);
  CHECK_THROWS_AS(MomentumParams({0.5, 0.5}, {1, 1}, {0.1, 0.2}, 1, 0), InvalidParameter);
  CHECK_NOTHROW(MomentumParams({0.5, 0.5}, {1, 1}, {0.1, 0.0}, 1, 1));
}

TEST_CASE("semigroup property") {
  Rng rng = make_stream(1, "semigroup");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double gamma = std::exp(std::log(0.05) + u01(rng) * std::log(400.0));
    double ts = u01(rng), tm = u01(rng), te = u01(rng);
    if (ts < tm) std::swap(ts, tm);
    if (tm < te) std::swap(tm, te);
    if (ts < tm) std::swap(ts, tm);
    const Vec v{u01(rng) * 10 - 5, u01(rng) * 10 - 5};
    const Vec two = extrapolate_velocity(extrapolate_velocity(v, gamma, ts, tm), gamma, tm, te);
    const Vec one = extrapolate_velocity(v, gamma, ts, te);
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(two[j] - one[j]) <= 1e-12 * std::abs(one[j]));
    }
  }
}

TEST_CASE("mixture linearity in base velocities") {
  const MomentumParams theta({0.2, 0.3, 0.5}, {1, -2, 0.5, 4, -3, 1}, {-0.7, 0.0, 1.3}, 2);
  for (double alpha : {-2.0, 0.5, 3.0}) {
    const MomentumParams scaled = theta.scaled_velocities(alpha);
    for (double t : {0.0, 0.4, 1.0}) {
      const Vec a = eval_velocity(scaled, t);
      const Vec b = eval_velocity(theta, t);
      CHECK(a[0] == doctest::Approx(alpha * b[0]).epsilon(1e-14));
      CHECK(a[1] == doctest::Approx(alpha * b[1]).epsilon(1e-14));
    }
  }
}

TEST_CASE("anchor mode is constant in time") {
  const MomentumParams theta({0.0, 1.0, 0.0}, {9, 9, 2, -1, 7, 7}, {0.4, 0.0, -0.4}, 2, 1);
  const Vec ref = eval_velocity(theta, 1.0);
  for (double t : {0.0, 0.25, 0.5, 0.75}) {
    CHECK(eval_velocity(theta, t) == ref);
  }
}

TEST_CASE("init_log_gammas examples") {
  const LogGammaInit two = init_log_gammas(2, 0.5, 2.0);
  CHECK(two.anchor_index == 0);
  CHECK(two.log_gammas[0] == 0.0);
  CHECK(two.log_gammas[1] == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const LogGammaInit one = init_log_gammas(1, 0.5, 2.0);
  CHECK(one.log_gammas == Vec{0.0});
  CHECK(one.anchor_index == 0);

  const LogGammaInit k16 = init_log_gammas(16, 0.4, 5.0);
  REQUIRE(k16.log_gammas.size() == 16);
  CHECK(k16.log_gammas.front() == doctest::Approx(std::log(0.4)).epsilon(1e-14));
  CHECK(k16.log_gammas.back() == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  // log 0.4 + 5 * step = -0.0745... is the entry nearest zero.
  CHECK(k16.anchor_index == 5);
  CHECK(k16.log_gammas[5] == 0.0);
}

TEST_CASE("init_log_gammas is strictly increasing with one zero") {
  for (std::size_t k = 1; k <= 32; ++k) {
    for (auto [lo, hi] : {std::pair{0.4, 5.0}, std::pair{0.5, 4.0}, std::pair{0.9, 1.05}}) {
      const LogGammaInit init = init_log_gammas(k, lo, hi);
      int zeros = 0;
      for (std::size_t i = 0; i < k; ++i) {
        zeros += init.log_gammas[i] == 0.0;
        if (i > 0) {
          CHECK(init.log_gammas[i] > init.log_gammas[i - 1]);
        }
      }
      CHECK(zeros == 1);
      CHECK(init.log_gammas[init.anchor_index] == 0.0);
    }
  }
}

TEST_CASE("init_log_gammas rejects ranges without 1") {
  CHECK_THROWS_AS(init_log_gammas(4, 1.5, 3.0), InvalidParameter);
  CHECK_THROWS_AS(init_log_gammas(4, 0.2, 0.9), InvalidParameter);
  CHECK_THROWS_AS(init_log_gammas(4, 0.0, 3.0), InvalidParameter);
  CHECK_THROWS_AS(init_log_gammas(0, 0.5, 2.0), InvalidParameter);
}
