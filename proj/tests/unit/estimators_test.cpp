#include <doctest.h>

#include <cmath>
#include <limits>

#include "cif_fusion/errors.hpp"
#include "cif_fusion/estimators.hpp"
#include "cif_fusion/simulation.hpp"

using namespace cif;

namespace {

EventRecord rec(std::string id, double time, Cause cause, int treat = 0) {
  EventRecord r;
  r.id = std::move(id);
  r.time = time;
  r.cause = cause;
  r.treat = treat;
  return r;
}

HazardModel empirical(const CumulativeHazard& a) {
  HazardModel m;
  m.times.assign(a.jump_times().begin(), a.jump_times().end());
  m.increments.assign(a.jump_sizes().begin(), a.jump_sizes().end());
  m.clamp = false;
  return m;
}

// Nelson-Aalen nuisances for a single-population, covariate-free cohort of controls.
NuisanceSet empirical_nuisances(const Cohort& c) {
  NuisanceSet ns;
  ns.alpha_hat = 1.0;
  ns.weight_cap = std::numeric_limits<double>::infinity();
  ns.e1 = LogisticFit::constant(0.0, 0);
  ns.haz_interest_rct_ctrl = empirical(nelson_aalen(c, Cause::interest, nullptr));
  ns.haz_comp_rct_ctrl = empirical(nelson_aalen(c, Cause::competing, nullptr));
  ns.cens_rct_ctrl = empirical(nelson_aalen(c, Cause::censored, nullptr));
  return ns;
}

struct Fitted {
  Cohort cohort;
  NuisanceSet ns;
};

const Fitted& simulated() {
  static const Fitted f = [] {
    DgpConfig cfg = DgpConfig::standard();
    cfg.n = 1200;
    Cohort c = sample_cohort(cfg, 21);
    NuisanceSet ns = fit_nuisances(c);
    return Fitted{std::move(c), std::move(ns)};
  }();
  return f;
}

}  // namespace

TEST_SUITE("estimators") {

TEST_CASE("estimand labels") {
  CHECK(Target{Family::theta, 1, Arm::control, 1.0}.estimand() == "theta_1(0)");
  CHECK(Target{Family::gamma, 2, Arm::treated, 1.0}.estimand() == "gamma_2(1)");
  CHECK(Target{Family::theta, 1, Arm::effect, 1.0}.estimand() == "theta_1{t}");
}

TEST_CASE("empirical nuisances reproduce aalen-johansen") {
  const Cohort c({rec("a", 1, Cause::interest), rec("b", 2, Cause::competing), rec("c", 3, Cause::censored)}, 0, 3);
  const NuisanceSet ns = empirical_nuisances(c);
  CHECK(influence_theta(c, ns, 0, Cause::interest, 3.0, Mode::rct_only).mean() == doctest::Approx(1.0 / 3.0));
  CHECK(influence_theta(c, ns, 0, Cause::competing, 3.0, Mode::rct_only).mean() == doctest::Approx(1.0 / 3.0));
  const InfluenceVector early = influence_theta(c, ns, 0, Cause::interest, 0.5, Mode::rct_only);
  for (double v : early.values) CHECK(v == 0.0);
}

TEST_CASE("time lost by a single subject") {
  const Cohort c({rec("a", 1, Cause::interest)}, 0, 2);
  const NuisanceSet ns = empirical_nuisances(c);
  CHECK(influence_gamma(c, ns, 0, Cause::interest, 2.0, Mode::rct_only).mean() == doctest::Approx(1.0));
  CHECK(influence_gamma(c, ns, 0, Cause::competing, 2.0, Mode::rct_only).mean() == 0.0);
}

TEST_CASE("zero hazards give zero influence") {
  const Cohort c({rec("a", 1, Cause::censored), rec("b", 2, Cause::censored)}, 0, 2);
  NuisanceSet ns = empirical_nuisances(c);
  ns.haz_interest_rct_ctrl = HazardModel();
  for (double v : influence_theta(c, ns, 0, Cause::interest, 2.0, Mode::rct_only).values) CHECK(v == 0.0);
  for (double v : influence_gamma(c, ns, 0, Cause::interest, 2.0, Mode::rct_only).values) CHECK(v == 0.0);
}

TEST_CASE("degenerate time zero") {
  const auto& [c, ns] = simulated();
  const EstimateReport r = estimate(c, ns, {Family::theta, 1, Arm::control, 0.0, Mode::fusion});
  CHECK(r.estimate == 0.0);
  CHECK(r.std_error == 0.0);
}

TEST_CASE("target validation") {
  const auto& [c, ns] = simulated();
  CHECK_THROWS_AS(estimate(c, ns, {Family::theta, 3, Arm::control, 1.0}), DataError);
  CHECK_THROWS_AS(estimate(c, ns, {Family::theta, 1, Arm::control, 5.0}), DataError);
  NuisanceSet no_ext = ns;
  no_ext.pi.reset();
  CHECK_THROWS_AS(estimate(c, no_ext, {Family::theta, 1, Arm::control, 1.0, Mode::fusion}), DataError);
  CHECK_NOTHROW(estimate(c, no_ext, {Family::theta, 1, Arm::control, 1.0, Mode::rct_only}));
}

TEST_CASE("treated arm ignores the mode") {
  const auto& [c, ns] = simulated();
  for (Family f : {Family::theta, Family::gamma}) {
    const auto fus = influence(c, ns, {f, 2, Arm::treated, 1.0, Mode::fusion});
    const auto rct = influence(c, ns, {f, 2, Arm::treated, 1.0, Mode::rct_only});
    CHECK(fus.values == rct.values);
  }
}

TEST_CASE("external controls never enter the treated arm") {
  const auto& [c, ns] = simulated();
  const auto iv = influence(c, ns, {Family::theta, 1, Arm::treated, 2.0});
  for (std::size_t i = 0; i < c.size(); ++i)
    if (!c[i].is_rct()) CHECK(iv.values[i] == 0.0);
}

TEST_CASE("effect is the entrywise difference") {
  const auto& [c, ns] = simulated();
  for (Mode m : {Mode::fusion, Mode::rct_only}) {
    const auto eff = influence(c, ns, {Family::gamma, 1, Arm::effect, 1.0, m});
    const auto trt = influence(c, ns, {Family::gamma, 1, Arm::treated, 1.0, m});
    const auto ctl = influence(c, ns, {Family::gamma, 1, Arm::control, 1.0, m});
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(eff.values[i] == doctest::Approx(trt.values[i] - ctl.values[i]));
  }
}

TEST_CASE("selection score of one gives the trial-only weights") {
  auto [c, ns] = simulated();
  ns.pi = LogisticFit::constant(1.0, 3);
  ns.haz_interest_pooled = ns.haz_interest_rct_ctrl;
  const auto fus = influence_theta(c, ns, 0, Cause::interest, 1.0, Mode::fusion);
  const auto rct = influence_theta(c, ns, 0, Cause::interest, 1.0, Mode::rct_only);
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i].is_rct()) CHECK(fus.values[i] == doctest::Approx(rct.values[i]).epsilon(1e-10));
}

TEST_CASE("incidences and survival add up on the plug-in parts") {
  const auto& [c, ns] = simulated();
  const std::vector<double> times = {0.25, 1.0, 2.0};
  for (int arm : {0, 1}) {
    const InfluenceTable tab = influence_table(c, ns, arm, Mode::fusion, times);
    for (std::size_t k = 0; k < times.size(); ++k) {
      double total = 0.0;
      for (std::size_t i = 0; i < c.size(); ++i)
        total += tab.plugin_theta[0][k][i] + tab.plugin_theta[1][k][i] + tab.plugin_survival[k][i];
      CHECK(std::abs(total / static_cast<double>(c.size()) - 1.0) < 1e-8);
    }
  }
}

TEST_CASE("plug-in incidence is non-decreasing in time") {
  const auto& [c, ns] = simulated();
  std::vector<double> times;
  for (int k = 0; k <= 40; ++k) times.push_back(0.05 * k);
  const InfluenceTable tab = influence_table(c, ns, 0, Mode::fusion, times);
  for (int j = 0; j < 2; ++j) {
    double prev = -1.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      double m = 0.0;
      for (double v : tab.plugin_theta[static_cast<std::size_t>(j)][k]) m += v;
      CHECK(m >= prev);
      prev = m;
    }
  }
}

TEST_CASE("batched and single estimates agree") {
  const auto& [c, ns] = simulated();
  const std::vector<Target> targets = {{Family::theta, 1, Arm::control, 1.0, Mode::fusion},
                                       {Family::gamma, 2, Arm::effect, 2.0, Mode::rct_only},
                                       {Family::theta, 2, Arm::treated, 0.25, Mode::fusion}};
  std::vector<InfluenceVector> ivs;
  const auto batch = estimate_all(c, ns, targets, &ivs);
  REQUIRE(ivs.size() == targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const EstimateReport one = estimate(c, ns, targets[k]);
    CHECK(batch[k].estimate == doctest::Approx(one.estimate).epsilon(1e-12));
    CHECK(batch[k].std_error == doctest::Approx(one.std_error).epsilon(1e-12));
    CHECK(ivs[k].mean() == doctest::Approx(one.estimate).epsilon(1e-12));
  }
}

TEST_CASE("standard error and interval") {
  const Cohort c({rec("a", 1, Cause::interest), rec("b", 2, Cause::competing), rec("c", 3, Cause::censored)}, 0, 3);
  InfluenceVector iv;
  iv.values = {0.9, 0.3, -0.3};
  iv.target = {Family::theta, 1, Arm::control, 1.0};
  const EstimateReport r = summarize(c, iv);
  CHECK(r.estimate == doctest::Approx(0.3));
  // centered: 0.6, 0, -0.6
  CHECK(r.std_error == doctest::Approx(std::sqrt(0.72 / 3.0) / std::sqrt(3.0)));
  CHECK(r.ci_low == doctest::Approx(0.3 - wald_z * r.std_error));
  CHECK(r.ci_high == doctest::Approx(0.3 + wald_z * r.std_error));
  CHECK(influence_second_moment(c, iv) == doctest::Approx(0.24));
  iv.values.pop_back();
  CHECK_THROWS_AS(summarize(c, iv), std::invalid_argument);
}

TEST_CASE("variance reduction") {
  auto [c, ns] = simulated();
  const ReductionReport base = variance_reduction(c, ns, 2.0);
  CHECK(base.reduction_estimate > 0.0);
  CHECK(base.relative > 0.0);
  CHECK(base.relative < 1.0);

  NuisanceSet one = ns;
  one.pi = LogisticFit::constant(1.0, 3);
  CHECK(variance_reduction(c, one, 2.0).reduction_estimate == 0.0);
  NuisanceSet flat = ns;
  flat.haz_interest_pooled.increments.assign(flat.haz_interest_pooled.increments.size(), 0.0);
  CHECK(variance_reduction(c, flat, 2.0).reduction_estimate == 0.0);
}

TEST_CASE("weight cap bounds inverse weights") {
  auto [c, ns] = simulated();
  ns.weight_cap = 1.0;
  const auto capped = influence_theta(c, ns, 0, Cause::interest, 2.0, Mode::rct_only);
  ns.weight_cap = std::numeric_limits<double>::infinity();
  const auto free = influence_theta(c, ns, 0, Cause::interest, 2.0, Mode::rct_only);
  CHECK(capped.values != free.values);
  CHECK(capped.plugin == free.plugin);
}

}  // TEST_SUITE
