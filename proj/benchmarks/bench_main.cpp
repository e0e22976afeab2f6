#include <benchmark/benchmark.h>

#include "cif_fusion/estimators.hpp"
#include "cif_fusion/simulation.hpp"

namespace {

cif::Cohort cohort_of(std::size_t n) {
  cif::DgpConfig c = cif::DgpConfig::standard();
  c.n = n;
  return cif::sample_cohort(c, 1);
}

void BM_CoxFit(benchmark::State& state) {
  const cif::Cohort c = cohort_of(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cif::fit_cox(c, nullptr, cif::Cause::interest));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CoxFit)->RangeMultiplier(4)->Range(500, 8000)->Unit(benchmark::kMillisecond)->Complexity();

void BM_FitNuisances(benchmark::State& state) {
  const cif::Cohort c = cohort_of(static_cast<std::size_t>(state.range(0)));
  cif::FitOptions opts;
  opts.parallel = false;
  for (auto _ : state) benchmark::DoNotOptimize(cif::fit_nuisances(c, opts));
}
BENCHMARK(BM_FitNuisances)->Arg(1500)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_InfluenceTable(benchmark::State& state) {
  const cif::Cohort c = cohort_of(static_cast<std::size_t>(state.range(0)));
  const cif::NuisanceSet ns = cif::fit_nuisances(c);
  const std::vector<double> times = {0.25, 1.0, 2.0};
  for (auto _ : state) benchmark::DoNotOptimize(cif::influence_table(c, ns, 0, cif::Mode::fusion, times));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_InfluenceTable)->RangeMultiplier(2)->Range(500, 4000)->Unit(benchmark::kMillisecond)->Complexity();

void BM_TrueValues(benchmark::State& state) {
  const cif::DgpConfig c = cif::DgpConfig::standard();
  const std::vector<cif::Target> targets = cif::standard_targets({0.25, 1.0, 2.0});
  for (auto _ : state) benchmark::DoNotOptimize(cif::true_values(c, targets, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_TrueValues)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);

}  // namespace
