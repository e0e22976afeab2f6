#include <doctest.h>

#include <cmath>
#include <random>

#include "cif_fusion/errors.hpp"
#include "cif_fusion/nuisance.hpp"
#include "cif_fusion/simulation.hpp"

using namespace cif;

namespace {

EventRecord rec(std::string id, double time, Cause cause, std::vector<double> x = {}, int pop = 1, int treat = 0) {
  EventRecord r;
  r.id = std::move(id);
  r.time = time;
  r.cause = cause;
  r.pop = pop;
  if (pop == 1) r.treat = treat;
  r.covariates = std::move(x);
  return r;
}

// Two-group exponential data with rates base and base * exp(beta), uniform censoring on (0, 4).
Cohort two_group(std::size_t n, double base, double beta, std::uint64_t seed) {
  Rng rng(seed);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EventRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = i % 2 == 0 ? 0.0 : 1.0;
    const double t = expo(rng) / (base * std::exp(beta * x));
    const double c = 4.0 * u(rng);
    recs.push_back(rec(std::to_string(i), std::min(t, c), t <= c ? Cause::interest : Cause::censored, {x}));
  }
  return Cohort(std::move(recs), 1, 4.0);
}

}  // namespace

TEST_SUITE("nuisance") {

TEST_CASE("logistic closed forms") {
  const LogisticFit fit = fit_logistic(Eigen::MatrixXd(4, 0), {1, 1, 1, 0});
  CHECK(fit.converged);
  CHECK(fit.intercept == doctest::Approx(std::log(3.0)));
  CHECK(fit.predict(std::vector<double>{}) == doctest::Approx(0.75));
  CHECK(LogisticFit::constant(0.5, 2).predict(std::vector<double>{0.0, 0.0}) == 0.5);
  CHECK(LogisticFit::constant(0.2, 1).predict(std::vector<double>{3.0}) == doctest::Approx(0.2));
}

TEST_CASE("logistic errors") {
  CHECK_THROWS_WITH_AS(fit_logistic(Eigen::MatrixXd::Zero(3, 1), {1, 1, 1}), "degenerate labels", FitError);
  Eigen::MatrixXd x(4, 1);
  x << -2, -1, 1, 2;
  CHECK_THROWS_WITH_AS(fit_logistic(x, {0, 0, 1, 1}), "separation", FitError);
  CHECK_THROWS_AS(fit_logistic(x, {0, 1}), std::invalid_argument);
}

TEST_CASE("logistic drops constant columns") {
  Eigen::MatrixXd x(6, 2);
  x << 1, 0.3, 1, -0.2, 1, 0.9, 1, -1.1, 1, 0.4, 1, 0.0;
  const LogisticFit fit = fit_logistic(x, {1, 0, 1, 0, 0, 1});
  REQUIRE(fit.dropped.size() == 1);
  CHECK(fit.dropped[0] == 0);
  CHECK(fit.coefficients[0] == 0.0);
}

TEST_CASE("logistic recovers coefficients") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0), v(0.0, 1.0);
  const int n = 20000;
  Eigen::MatrixXd x(n, 1);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    y[static_cast<std::size_t>(i)] = v(rng) < 1.0 / (1.0 + std::exp(0.2 - 0.4 * x(i, 0))) ? 1 : 0;
  }
  const LogisticFit fit = fit_logistic(x, y);
  CHECK(fit.converged);
  CHECK(std::abs(fit.intercept + 0.2) < 0.08);
  CHECK(std::abs(fit.coefficients[0] - 0.4) < 0.08);
}

TEST_CASE("breslow at zero coefficients is nelson-aalen") {
  Rng rng(17);
  std::uniform_int_distribution<int> size(2, 50), tick(1, 8), cause(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EventRecord> recs;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) recs.push_back(rec(std::to_string(i), tick(rng), cause(rng) ? Cause::interest : Cause::censored, {0.1 * i}));
    const Cohort c(recs, 1, 8.0);
    std::vector<double> times, jumps;
    breslow_baseline(c, nullptr, Cause::interest, Eigen::VectorXd::Zero(1), times, jumps);
    const CumulativeHazard na = nelson_aalen(c, Cause::interest, nullptr);
    REQUIRE(times.size() == na.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
      CHECK(times[k] == na.jump_times()[k]);
      CHECK(jumps[k] == na.jump_sizes()[k]);
    }
  }
}

TEST_CASE("cox recovers a log hazard ratio") {
  const Cohort c = two_group(8000, 0.2, 0.5, 9);
  const CoxFit fit = fit_cox(c, nullptr, Cause::interest);
  CHECK(fit.converged);
  CHECK(std::abs(fit.coefficients[0] - 0.5) < 0.1);
  for (std::size_t k = 1; k < fit.likelihood_path.size(); ++k) CHECK(fit.likelihood_path[k] >= fit.likelihood_path[k - 1]);
}

TEST_CASE("cox censoring fit swaps the event indicator") {
  const Cohort c = two_group(500, 0.2, 0.0, 2);
  const CoxFit events = fit_cox(c, nullptr, Cause::interest);
  const CoxFit cens = fit_cox(c, nullptr, Cause::censored);
  std::size_t n_cens = 0;
  for (const auto& r : c.records()) n_cens += r.cause == Cause::censored;
  CHECK(cens.baseline_times.size() == n_cens);
  CHECK(events.baseline_times.size() == c.size() - n_cens);
}

TEST_CASE("cox degenerate inputs") {
  const Cohort c({rec("a", 1, Cause::interest, {0}), rec("b", 2, Cause::competing, {0}), rec("c", 3, Cause::censored, {0})}, 1, 3);
  CHECK_THROWS_WITH_AS(fit_cox(c, nullptr, Cause::interest), "degenerate design", FitError);
  CoxOptions drop;
  drop.degenerate = DegenerateColumns::drop;
  const CoxFit fit = fit_cox(c, nullptr, Cause::interest, drop);
  REQUIRE(fit.dropped.size() == 1);
  CHECK(fit.baseline_jumps.size() == 1);
  CHECK(fit.baseline_jumps[0] == doctest::Approx(1.0 / 3.0));

  const Cohort quiet({rec("a", 1, Cause::censored, {0}), rec("b", 2, Cause::censored, {1})}, 1, 2);
  CHECK_THROWS_WITH_AS(fit_cox(quiet, nullptr, Cause::interest), "no events", FitError);
  CHECK_THROWS_WITH_AS(fit_cox(c, [](const EventRecord& r) { return r.id == "a"; }, Cause::interest),
                       "fewer than two records", FitError);
}

TEST_CASE("clamped increments") {
  CHECK(clamp_jump(0.05) == doctest::Approx(0.048771).epsilon(1e-5));
  CHECK(clamp_jump(3.0) == doctest::Approx(0.95021).epsilon(1e-5));
  HazardModel m;
  m.times = {1.0, 2.0};
  m.increments = {0.05, 3.0};
  m.beta = Eigen::VectorXd::Zero(2);
  const CumulativeHazard a = m.at(std::vector<double>{0.0, 0.0});
  CHECK(a.jump_sizes()[0] == doctest::Approx(clamp_jump(0.05)));
  CHECK(a.jump_sizes()[1] == doctest::Approx(clamp_jump(3.0)));
  m.clamp = false;
  m.increments = {0.05, 0.5};
  CHECK(m.at(std::vector<double>{0.0, 0.0}).jump_sizes()[1] == 0.5);
}

TEST_CASE("trial-only cohorts have no external fits") {
  DgpConfig cfg = DgpConfig::standard();
  cfg.n = 600;
  const Cohort full = sample_cohort(cfg, 4);
  std::vector<EventRecord> rct;
  for (const auto& r : full.records())
    if (r.is_rct()) rct.push_back(r);
  const NuisanceSet ns = fit_nuisances(Cohort(rct, 3, cfg.tau));
  CHECK_FALSE(ns.pi.has_value());
  CHECK_FALSE(ns.haz_comp_ext.has_value());
  CHECK_FALSE(ns.cens_ext.has_value());
  CHECK_FALSE(ns.supports_fusion());
  CHECK(ns.alpha_hat == 1.0);
}

TEST_CASE("simulated data: every fit converges") {
  DgpConfig cfg = DgpConfig::standard();
  cfg.n = 1500;
  const NuisanceSet ns = fit_nuisances(sample_cohort(cfg, 1));
  CHECK(ns.supports_fusion());
  CHECK(ns.unconverged.empty());
  CHECK(ns.weight_cap == doctest::Approx(default_weight_cap(1500)));
}

TEST_CASE("externals without events fail on the competing fit") {
  DgpConfig cfg = DgpConfig::standard();
  cfg.n = 600;
  const Cohort full = sample_cohort(cfg, 4);
  std::vector<EventRecord> recs = full.records();
  for (auto& r : recs)
    if (!r.is_rct()) {
      r.cause = Cause::censored;
      r.time = 1e-6 * (1.0 + static_cast<double>(std::stoi(r.id)) * 1e-6);
    }
  CHECK_THROWS_WITH_AS(fit_nuisances(Cohort(recs, 3, cfg.tau)), "comp_ext: no events", FitError);
}

TEST_CASE("derived quantities") {
  NuisanceSet ns;
  auto zero = [] {
    HazardModel m;
    m.beta = Eigen::VectorXd::Zero(1);
    return m;
  };
  ns.haz_interest_pooled = ns.haz_interest_rct_ctrl = ns.haz_comp_rct_ctrl = ns.haz_interest_trt = ns.haz_comp_trt =
      ns.cens_rct_ctrl = ns.cens_rct_trt = zero();
  ns.haz_comp_ext = zero();
  ns.cens_ext = zero();
  ns.pi = LogisticFit::constant(0.4, 1);
  ns.e1 = LogisticFit::constant(0.5, 1);
  const std::vector<double> x = {0.0};

  SUBCASE("null hazards") {
    const DerivedQuantities q = derived_quantities(ns, x, 0, Cause::interest, 1.0, 2.0);
    CHECK(q.S1 == 1.0);
    CHECK(q.S0 == 1.0);
    CHECK(q.S1c == 1.0);
    CHECK(q.S0c == 1.0);
    CHECK(q.F1j_at_t == 0.0);
    CHECK(q.H_dot == doctest::Approx(0.4 * 0.5 + 0.6));
    CHECK(q.W_1j == 1.0);
    CHECK(q.W_2j == 0.0);
  }
  SUBCASE("single pooled jump") {
    ns.haz_interest_pooled.times = {1.0};
    ns.haz_interest_pooled.increments = {0.5};
    ns.haz_interest_pooled.clamp = false;
    const DerivedQuantities q = derived_quantities(ns, x, 0, Cause::interest, 1.0, 2.0);
    CHECK(q.F1j_at_horizon == doctest::Approx(0.5));
    CHECK(q.W_1j == doctest::Approx(1.0));
  }
  SUBCASE("no external mass") {
    ns.pi = LogisticFit::constant(1.0, 1);
    ns.cens_rct_ctrl.times = {0.5};
    ns.cens_rct_ctrl.increments = {0.3};
    const DerivedQuantities q = derived_quantities(ns, x, 0, Cause::interest, 1.0, 2.0);
    CHECK(q.H_dot == doctest::Approx(q.H_1));
  }
  SUBCASE("positivity") {
    ns.e1 = LogisticFit::constant(1.0, 1);
    CHECK_THROWS_AS(derived_quantities(ns, x, 0, Cause::interest, 1.0, 2.0, Mode::rct_only), PositivityError);
  }
}

}  // TEST_SUITE
