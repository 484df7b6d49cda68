#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "arcflow/error.hpp"
#include "arcflow/nnet.hpp"

using namespace arcflow;
namespace fs = std::filesystem;

namespace {

NetShape small_shape(std::size_t k = 4) {
  NetShape s;
  s.modes = k;
  s.hidden = 16;
  return s;
}

// Random linear functional of the head outputs: sum of w . theta fields.
struct Probe {
  Vec wg, wv, wl;
  double operator()(const MomentumParams &theta) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < wg.size(); ++i) acc += wg[i] * theta.gating()[i];
    for (std::size_t i = 0; i < wv.size(); ++i) acc += wv[i] * theta.base_velocities()[i];
    for (std::size_t i = 0; i < wl.size(); ++i) acc += wl[i] * theta.log_gammas()[i];
    return acc;
  }
  MomentumGrad grad() const {
    MomentumGrad g;
    g.gating = wg;
    g.velocities = wv;
    g.log_gammas = wl;
    return g;
  }
};

Probe make_probe(std::size_t k, std::size_t d, Rng &rng) {
  std::normal_distribution<double> n01;
  Probe p{Vec(k), Vec(k * d), Vec(k)};
  for (auto *v : {&p.wg, &p.wv, &p.wl}) {
    for (auto &x : *v) x = n01(rng);
  }
  return p;
}

void perturb(StudentNet &net, Rng &rng, double scale) {
  std::normal_distribution<double> n01;
  for (double &p : net.params()) p += scale * n01(rng);
}

fs::path temp_file(const std::string &name) {
  return fs::temp_directory_path() / ("arcflow_test_" + name);
}

} // namespace

TEST_CASE("fresh net reproduces the geometric initialization") {
  Rng rng = make_stream(1, "student-init");
  const NetShape shape = small_shape(8);
  const StudentNet net(shape, rng);
  const LogGammaInit init = init_log_gammas(8, shape.gamma_lo, shape.gamma_hi);
  CHECK(net.anchor_index() == init.anchor_index);
  for (double t : {1.0, 0.6, 0.1}) {
    const MomentumParams theta = net.forward(Vec{0.3, -1.2}, t);
    for (std::size_t k = 0; k < 8; ++k) {
      CHECK(theta.log_gammas()[k] == init.log_gammas[k]);
      CHECK(theta.gating()[k] == doctest::Approx(1.0 / 8).epsilon(1e-15));
    }
  }
}

TEST_CASE("frozen_one mode gives unit gammas") {
  Rng rng = make_stream(1, "student-init");
  NetShape shape = small_shape(4);
  shape.gamma_mode = GammaMode::frozen_one;
  StudentNet net(shape, rng);
  perturb(net, rng, 0.3);
  const MomentumParams theta = net.forward(Vec{0.5, 0.5}, 0.7);
  for (double lg : theta.log_gammas()) CHECK(lg == 0.0);
}

TEST_CASE("gamma mode parsing") {
  for (GammaMode m : {GammaMode::frozen_one, GammaMode::fixed, GammaMode::learnable}) {
    CHECK(parse_gamma_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_gamma_mode("bogus"), InvalidParameter);
}

TEST_CASE("student backward matches finite differences") {
  for (auto [share_v, share_g] : {std::pair{false, false}, std::pair{true, false},
                                  std::pair{false, true}, std::pair{true, true}}) {
    Rng rng = make_stream(2, "student-init");
    NetShape shape = small_shape(4);
    shape.share_velocity = share_v;
    shape.share_gamma = share_g;
    StudentNet net(shape, rng);
    perturb(net, rng, 0.1);
    const Probe probe = make_probe(4, 2, rng);
    const Vec x{0.4, -0.9};
    const double t = 0.55;
    Vec grad(net.param_count(), 0.0);
    net.backward(net.forward_tape(x, t), probe.grad(), grad);
    const auto loss = [&](std::span<const double> p) {
      return probe(StudentNet::from_params(shape, p).forward(x, t));
    };
    Vec params(net.params().begin(), net.params().end());
    const GradCheckResult r = grad_check(params, loss, grad, params.size(), rng);
    CHECK(r.probes == params.size());
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("frozen parameters get no gradient") {
  Rng rng = make_stream(3, "student-init");
  StudentNet net(small_shape(4), rng);
  perturb(net, rng, 0.1);
  const Probe probe = make_probe(4, 2, rng);
  Vec grad(net.param_count(), 0.0);
  net.backward(net.forward_tape(Vec{1.0, 1.0}, 0.3), probe.grad(), grad);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (net.groups()[i] == ParamGroup::frozen) {
      CHECK(grad[i] == 0.0);
    }
  }
}

TEST_CASE("zero upstream gives zero gradient") {
  Rng rng = make_stream(4, "student-init");
  StudentNet net(small_shape(4), rng);
  Vec grad(net.param_count(), 0.0);
  net.backward(net.forward_tape(Vec{1.0, 1.0}, 0.3), MomentumGrad(4, 2), grad);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("single affine layer has the closed-form gradient") {
  Mlp mlp({3, 2});
  auto p = mlp.params();
  // W = [[1, 2, 3], [4, 5, 6]], b = [0.5, -0.5]
  for (int i = 0; i < 6; ++i) p[i] = i + 1;
  p[6] = 0.5;
  p[7] = -0.5;
  const Vec in{1.0, -1.0, 2.0};
  const auto tape = mlp.forward(in);
  CHECK(tape.activations.back() == Vec{5.5, 10.5});
  Vec grad(8, 0.0);
  mlp.backward(tape, Vec{1.0, 2.0}, grad);
  CHECK(grad == Vec{1.0, -1.0, 2.0, 2.0, -2.0, 4.0, 1.0, 2.0});
}

TEST_CASE("backward without forward is a state error") {
  Rng rng = make_stream(5, "student-init");
  const StudentNet net(small_shape(2), rng);
  Vec grad(net.param_count(), 0.0);
  CHECK_THROWS_AS(net.backward(StudentNet::Tape{}, MomentumGrad(2, 2), grad), StateError);
  Mlp mlp({2, 2});
  Vec g2(mlp.param_count(), 0.0);
  CHECK_THROWS_AS(mlp.backward(Mlp::Tape{}, Vec{1.0, 1.0}, g2), StateError);
}

TEST_CASE("forward is deterministic") {
  Rng rng = make_stream(6, "student-init");
  StudentNet net(small_shape(8), rng);
  perturb(net, rng, 0.2);
  const MomentumParams a = net.forward(Vec{0.1, 0.2}, 0.9);
  const MomentumParams b = net.forward(Vec{0.1, 0.2}, 0.9);
  CHECK(std::equal(a.base_velocities().begin(), a.base_velocities().end(), b.base_velocities().begin()));
  CHECK(std::equal(a.gating().begin(), a.gating().end(), b.gating().begin()));
}

TEST_CASE("non-finite outputs are rejected") {
  Rng rng = make_stream(7, "student-init");
  StudentNet net(small_shape(2), rng);
  net.params()[net.param_count() - 3] = NAN;
  CHECK_THROWS_AS(net.forward(Vec{0.0, 0.0}, 0.5), NumericError);
}

TEST_CASE("Adam first step has size lr per coordinate") {
  Vec params{1.0, -2.0, 3.0, 0.5};
  const Vec grads{0.3, -7.0, 1e-3, 2.0};
  const std::vector<ParamGroup> groups{ParamGroup::body, ParamGroup::body, ParamGroup::gamma_head,
                                       ParamGroup::frozen};
  OptimState state(4);
  adam_step(params, grads, groups, state, 1e-2);
  CHECK(params[0] == doctest::Approx(1.0 - 1e-2).epsilon(1e-9));
  CHECK(params[1] == doctest::Approx(-2.0 + 1e-2).epsilon(1e-9));
  CHECK(params[2] == doctest::Approx(3.0 - 1e-3).epsilon(1e-6));
  CHECK(params[3] == 0.5);
  CHECK(state.step == 1);
}

TEST_CASE("Adam leaves params in place on a zero gradient") {
  Vec params{1.0, -2.0};
  const std::vector<ParamGroup> groups(2, ParamGroup::body);
  OptimState state(2);
  for (int i = 0; i < 5; ++i) adam_step(params, Vec{0.0, 0.0}, groups, state, 0.1);
  CHECK(params == Vec{1.0, -2.0});
}

TEST_CASE("Adam rejects non-finite gradients without side effects") {
  Vec params{1.0, -2.0};
  const std::vector<ParamGroup> groups(2, ParamGroup::body);
  OptimState state(2);
  CHECK_THROWS_AS(adam_step(params, Vec{NAN, 1.0}, groups, state, 0.1), NumericError);
  CHECK(params == Vec{1.0, -2.0});
  CHECK(state.step == 0);
  CHECK(state.m == Vec{0.0, 0.0});
}

TEST_CASE("gamma head moves ten times slower and the anchor stays pinned") {
  Rng rng = make_stream(8, "student-init");
  StudentNet net(small_shape(4), rng);
  const Vec before(net.params().begin(), net.params().end());
  const Vec ones(net.param_count(), 1.0);
  OptimState state(net.param_count());
  adam_step(net, ones, state, 1e-3);
  std::size_t gamma_params = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double moved = before[i] - net.params()[i];
    switch (net.groups()[i]) {
    case ParamGroup::body: CHECK(moved == doctest::Approx(1e-3).epsilon(1e-6)); break;
    case ParamGroup::gamma_head:
      CHECK(moved == doctest::Approx(1e-4).epsilon(1e-6));
      ++gamma_params;
      break;
    case ParamGroup::frozen: CHECK(moved == 0.0); break;
    }
  }
  CHECK(gamma_params == 3 * (16 + 1));
  const MomentumParams theta = net.forward(Vec{2.0, 2.0}, 0.2);
  CHECK(theta.log_gammas()[*net.anchor_index()] == 0.0);
}

TEST_CASE("grad_check catches a corrupted gradient") {
  Vec params{0.3, -0.7, 1.1};
  const auto loss = [](std::span<const double> p) { return p[0] * p[0] + std::sin(p[1]) * p[2]; };
  Vec good{2 * 0.3, std::cos(-0.7) * 1.1, std::sin(-0.7)};
  Rng rng = make_stream(9, "gc");
  CHECK(grad_check(params, loss, good, 3, rng).max_rel_error < 1e-8);
  Vec bad = good;
  bad[1] *= 1.01;
  const GradCheckResult r = grad_check(params, loss, bad, 3, rng);
  CHECK(r.max_rel_error > 1e-3);
  CHECK(r.worst_index == 1);
  CHECK(params == Vec{0.3, -0.7, 1.1});
}

TEST_CASE("checkpoint round trip is bit-exact") {
  for (auto mode : {GammaMode::frozen_one, GammaMode::fixed, GammaMode::learnable}) {
    Rng rng = make_stream(10, "student-init");
    NetShape shape = small_shape(4);
    shape.gamma_mode = mode;
    shape.share_gamma = mode == GammaMode::fixed;
    StudentNet net(shape, rng);
    perturb(net, rng, 0.5);
    const fs::path path = temp_file("roundtrip.ckpt");
    save_checkpoint(path, net);
    const StudentNet back = load_checkpoint(path);
    CHECK(back.shape() == net.shape());
    CHECK(std::memcmp(back.params().data(), net.params().data(), net.param_count() * 8) == 0);
    fs::remove(path);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  Rng rng = make_stream(11, "student-init");
  const StudentNet net(small_shape(2), rng);
  const fs::path path = temp_file("corrupt.ckpt");
  save_checkpoint(path, net);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  CHECK(bytes.substr(0, 8) == "ARCFLOW1");
  const auto write = [&](const std::string &b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };
  std::string bad_magic = bytes;
  bad_magic[7] = '2';
  write(bad_magic);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  write(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  write(bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}
