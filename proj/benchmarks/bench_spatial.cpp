#include <benchmark/benchmark.h>

#include "slrgrowth/spatial.hpp"
#include "slrgrowth/synth.hpp"
#include "slrgrowth/weights.hpp"

using namespace slrgrowth;

namespace {

weights::ContiguityWeights lattice(std::size_t side) {
  const auto pairs = weights::rook_lattice(side, side);
  return weights::ContiguityWeights::build(side * side, pairs);
}

synth::SyntheticData sar_draw(std::size_t side) {
  synth::DgpSpec s;
  s.rows = s.cols = side;
  s.rho = 0.458;
  s.seed = 1;
  return synth::generate(s);
}

}  // namespace

static void BM_Lag(benchmark::State& state) {
  const auto w = lattice(static_cast<std::size_t>(state.range(0)));
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(w.size()), 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(w.lag(x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.nonzeros()));
}
BENCHMARK(BM_Lag)->Arg(20)->Arg(55);

static void BM_LogDet(benchmark::State& state) {
  const spatial::SpatialOperator op(lattice(static_cast<std::size_t>(state.range(0))));
  double a = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(op.log_det(a));
    a = a > 0.8 ? 0.1 : a + 0.01;
  }
}
BENCHMARK(BM_LogDet)->Arg(20)->Arg(55);

static void BM_Resolvent(benchmark::State& state) {
  const spatial::SpatialOperator op(lattice(static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(op.resolvent(0.458));
}
BENCHMARK(BM_Resolvent)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);

static void BM_FitSar(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const spatial::SpatialOperator op(lattice(side));
  const auto d = sar_draw(side);
  for (auto _ : state) benchmark::DoNotOptimize(spatial::fit_sar(d.y, d.X, op));
}
BENCHMARK(BM_FitSar)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
