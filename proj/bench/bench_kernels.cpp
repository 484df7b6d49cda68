// Serial reference vs OpenMP batch kernels.

#include <benchmark/benchmark.h>

#include "arcflow/distill.hpp"
#include "arcflow/kernels.hpp"

using namespace arcflow;

namespace {

const GmmTeacherSpec &spec() {
  static const GmmTeacherSpec s = GmmTeacherSpec::ring(8, 2.0, 0.25);
  return s;
}

Points noise(std::size_t n) {
  Rng rng = make_stream(0, "bench");
  return sample_noise(2, rng, n);
}

const StudentNet &student() {
  static const StudentNet net = [] {
    DistillConfig cfg;
    Rng rng = make_stream(0, "student-init");
    return StudentNet(cfg.net_shape(2), rng);
  }();
  return net;
}

template <Points (*F)(const GmmTeacherSpec &, const Points &, double)>
void velocities(benchmark::State &state) {
  const Points x = noise(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(F(spec(), x, 0.5));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <Points (*F)(const VelocityField &, const Points &, std::size_t)>
void teacher(benchmark::State &state) {
  const Points x = noise(static_cast<std::size_t>(state.range(0)));
  const VelocityField field = gmm_field(spec());
  for (auto _ : state) {
    benchmark::DoNotOptimize(F(field, x, 100));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <Points (*F)(const StudentNet &, const Points &, std::size_t)>
void students(benchmark::State &state) {
  const Points x = noise(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(F(student(), x, 2));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <double (*F)(const Points &, const Points &)>
void energy(benchmark::State &state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Points a = noise(n);
  Rng rng = make_stream(1, "bench");
  const Points b = sample_data(spec(), rng, n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(F(a, b));
  }
}

void distill_gradient(benchmark::State &state, Exec exec) {
  DistillConfig cfg;
  const Teacher t = Teacher::analytic(spec());
  const StepBatch batch = draw_step_batch(t, cfg, 0);
  Vec grad(student().param_count());
  for (auto _ : state) {
    benchmark::DoNotOptimize(distill_batch_gradient(student(), t, batch, 0.5, grad, exec));
  }
}

} // namespace

BENCHMARK(velocities<kernels::serial::gmm_velocities>)->Name("gmm_velocities/serial")->Arg(4096);
BENCHMARK(velocities<kernels::omp::gmm_velocities>)->Name("gmm_velocities/omp")->Arg(4096);
BENCHMARK(teacher<kernels::serial::teacher_endpoints>)->Name("teacher_endpoints/serial")->Arg(512);
BENCHMARK(teacher<kernels::omp::teacher_endpoints>)->Name("teacher_endpoints/omp")->Arg(512);
BENCHMARK(students<kernels::serial::student_endpoints>)->Name("student_endpoints/serial")->Arg(2048);
BENCHMARK(students<kernels::omp::student_endpoints>)->Name("student_endpoints/omp")->Arg(2048);
BENCHMARK(energy<kernels::serial::energy_distance>)->Name("energy_distance/serial")->Arg(2000);
BENCHMARK(energy<kernels::omp::energy_distance>)->Name("energy_distance/omp")->Arg(2000);
BENCHMARK_CAPTURE(distill_gradient, serial, Exec::serial);
BENCHMARK_CAPTURE(distill_gradient, omp, Exec::parallel);

BENCHMARK_MAIN();
