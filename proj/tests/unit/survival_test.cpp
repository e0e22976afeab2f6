#include <doctest.h>

#include <cmath>
#include <random>

#include "cif_fusion/errors.hpp"
#include "cif_fusion/survival.hpp"

using namespace cif;

namespace {

EventRecord rec(std::string id, double time, Cause cause, int pop = 1, std::optional<int> treat = 0) {
  EventRecord r;
  r.id = std::move(id);
  r.time = time;
  r.cause = cause;
  r.pop = pop;
  r.treat = pop == 1 ? treat : std::nullopt;
  return r;
}

Cohort three_subjects() {
  return Cohort({rec("a", 1, Cause::interest), rec("b", 2, Cause::competing), rec("c", 3, Cause::censored)}, 0, 3);
}

CumulativeHazard random_hazard(std::mt19937_64& rng, int max_jumps) {
  std::uniform_int_distribution<int> count(0, max_jumps);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> times, sizes;
  const int k = count(rng);
  double t = 0.0;
  for (int i = 0; i < k; ++i) {
    t += 0.01 + u(rng);
    times.push_back(t);
    sizes.push_back(u(rng));
  }
  return {times, sizes};
}

}  // namespace

TEST_SUITE("survival") {

TEST_CASE("step function evaluation") {
  CHECK(CumulativeHazard().eval(5.0) == 0.0);
  const CumulativeHazard one({1.0}, {0.3});
  CHECK(one.eval(1.0) == doctest::Approx(0.3));
  CHECK(one.eval_left(1.0) == 0.0);
  CHECK(one.jump_at(1.0) == doctest::Approx(0.3));
  CHECK(one.jump_at(0.5) == 0.0);
  const CumulativeHazard two({1.0, 2.0}, {0.1, 0.2});
  CHECK(two.eval(1.5) == doctest::Approx(0.1));
  CHECK(two.eval(2.0) == doctest::Approx(0.3));
  CHECK(two.eval_left(2.0) == doctest::Approx(0.1));
}

TEST_CASE("invalid step functions are rejected") {
  CHECK_THROWS_AS(CumulativeHazard({2.0, 1.0}, {0.1, 0.1}), std::invalid_argument);
  CHECK_THROWS_AS(CumulativeHazard({1.0, 1.0}, {0.1, 0.1}), std::invalid_argument);
  CHECK_THROWS_AS(CumulativeHazard({1.0}, {1.5}), std::invalid_argument);
  CHECK_THROWS_AS(CumulativeHazard({1.0}, {-0.1}), std::invalid_argument);
  CHECK_THROWS_AS(CumulativeHazard({1.0}, {}), std::invalid_argument);
  CHECK_THROWS_AS(CumulativeHazard({1.0}, {0.6}) + CumulativeHazard({1.0}, {0.6}), std::invalid_argument);
}

TEST_CASE("sum merges jump times") {
  const CumulativeHazard s = CumulativeHazard({1.0, 3.0}, {0.1, 0.2}) + CumulativeHazard({1.0, 2.0}, {0.3, 0.4});
  REQUIRE(s.size() == 3);
  CHECK(s.jump_at(1.0) == doctest::Approx(0.4));
  CHECK(s.eval(3.0) == doctest::Approx(1.0));
}

TEST_CASE("product integral") {
  CHECK(product_integral(CumulativeHazard(), 4.0) == 1.0);
  const CumulativeHazard two({1.0, 2.0}, {0.1, 0.2});
  CHECK(product_integral(two, 2.0) == doctest::Approx(0.72));
  CHECK(product_integral_left(two, 2.0) == doctest::Approx(0.9));

  std::vector<double> times, sizes;
  const double h = 1e-4;
  for (int k = 1; k <= 10000; ++k) {
    times.push_back(k * h);
    sizes.push_back(0.5 * h);
  }
  CHECK(std::abs(product_integral(CumulativeHazard(times, sizes), 1.0) - std::exp(-0.5)) < 1e-3);
}

TEST_CASE("stieltjes sums") {
  const CumulativeHazard a({1.0, 2.0}, {0.5, 0.5});
  CHECK(stieltjes_integral([](double) { return 1.0; }, a, 0.0, 2.0) == doctest::Approx(a.eval(2.0)));
  CHECK(stieltjes_integral([](double) { return 0.0; }, a, 0.0, 2.0) == 0.0);
  const double v = stieltjes_integral([&](double s) { return product_integral_left(a, s); }, a, 0.0, 2.0);
  CHECK(v == doctest::Approx(0.75));
  CHECK(v == doctest::Approx(1.0 - product_integral(a, 2.0)));
  CHECK(stieltjes_integral([](double) { return 1.0; }, a, 1.0, 2.0) == doctest::Approx(0.5));
}

TEST_CASE("hazard identities") {
  const CumulativeHazard a({1.0}, {0.2});
  CHECK(duhamel_residual(a, a, 3.0) == 0.0);
  CHECK(std::abs(duhamel_residual(a, CumulativeHazard(), 1.0)) < 1e-12);
  CHECK(std::abs(duhamel_residual(a, CumulativeHazard(), 7.0)) < 1e-12);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const CumulativeHazard f = random_hazard(rng, 20), g = random_hazard(rng, 20);
    const double t = 25.0 * u(rng), s = t * u(rng);
    CHECK(std::abs(duhamel_residual(f, g, t)) < 1e-10);
    CHECK(std::abs(backward_residual(f, t)) < 1e-10);
    CHECK(std::abs(integration_by_parts_residual(f, g, s, t)) < 1e-10);
  }
}

TEST_CASE("nelson-aalen on three subjects") {
  const Cohort c = three_subjects();
  const CumulativeHazard a1 = nelson_aalen(c, Cause::interest, nullptr);
  REQUIRE(a1.size() == 1);
  CHECK(a1.jump_times()[0] == 1.0);
  CHECK(a1.jump_sizes()[0] == doctest::Approx(1.0 / 3.0));
  const CumulativeHazard a2 = nelson_aalen(c, Cause::competing, nullptr);
  REQUIRE(a2.size() == 1);
  CHECK(a2.jump_times()[0] == 2.0);
  CHECK(a2.jump_sizes()[0] == doctest::Approx(0.5));

  const Cohort censored({rec("a", 1, Cause::censored), rec("b", 2, Cause::censored)}, 0, 2);
  CHECK(nelson_aalen(censored, Cause::interest, nullptr).empty());
}

TEST_CASE("nelson-aalen respects the subset") {
  const Cohort c({rec("a", 1, Cause::interest, 1, 0), rec("b", 2, Cause::interest, 1, 1), rec("c", 3, Cause::censored, 1, 0)},
                 0, 3);
  const CumulativeHazard ctrl = nelson_aalen(c, Cause::interest, [](const EventRecord& r) { return r.arm() == 0; });
  REQUIRE(ctrl.size() == 1);
  CHECK(ctrl.jump_sizes()[0] == doctest::Approx(0.5));
}

TEST_CASE("aalen-johansen") {
  const Cohort c = three_subjects();
  const CumulativeHazard a1 = nelson_aalen(c, Cause::interest, nullptr);
  const CumulativeHazard a2 = nelson_aalen(c, Cause::competing, nullptr);
  CHECK(aalen_johansen(a1, a2, 3.0) == doctest::Approx(1.0 / 3.0));
  CHECK(aalen_johansen(a2, a1, 3.0) == doctest::Approx(1.0 / 3.0));
  CHECK(aalen_johansen(a1, a2, 0.5) == 0.0);
  CHECK(aalen_johansen(CumulativeHazard({1.0}, {1.0}), CumulativeHazard(), 1.0) == 1.0);
  CHECK_THROWS_AS(aalen_johansen(CumulativeHazard({1.0}, {0.1}), CumulativeHazard({1.0}, {0.1}), 2.0), DataError);
}

TEST_CASE("incidences and survival add up to one") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const CumulativeHazard all = random_hazard(rng, 30);
    std::vector<double> t1, s1, t2, s2;
    for (std::size_t k = 0; k < all.size(); ++k) {
      auto& t = u(rng) < 0.5 ? t1 : t2;
      auto& s = &t == &t1 ? s1 : s2;
      t.push_back(all.jump_times()[k]);
      s.push_back(all.jump_sizes()[k]);
    }
    const CumulativeHazard a1(t1, s1), a2(t2, s2);
    const double t = 30.0 * u(rng);
    CHECK(std::abs(aalen_johansen(a1, a2, t) + aalen_johansen(a2, a1, t) + product_integral(a1 + a2, t) - 1.0) < 1e-12);
  }
}

TEST_CASE("cohort validation") {
  CHECK_NOTHROW(three_subjects());
  CHECK_THROWS_AS(Cohort({rec("a", 1, Cause::interest, 0)}, 0, 1), DataError);  // no trial rows
  EventRecord bad = rec("a", 1, Cause::interest, 0);
  bad.treat = 1;
  CHECK_THROWS_AS(Cohort({rec("b", 1, Cause::censored), bad}, 0, 1), DataError);
  CHECK_THROWS_AS(Cohort({rec("a", -1, Cause::interest)}, 0, 1), DataError);
  CHECK_THROWS_AS(Cohort({rec("a", 1, Cause::interest)}, 2, 1), DataError);
  CHECK_THROWS_AS(Cohort({rec("a", 1, Cause::interest)}, 0, 0), DataError);
  CHECK_THROWS_WITH_AS(Cohort({rec("a", 1, Cause::interest), rec("b", 1, Cause::competing)}, 0, 1),
                       "tied cross-cause event times", DataError);
  CHECK_NOTHROW(Cohort({rec("a", 1, Cause::interest), rec("b", 1, Cause::interest), rec("c", 1, Cause::censored)}, 0, 1));
}

TEST_CASE("cohort counts") {
  const Cohort c({rec("a", 1, Cause::interest), rec("b", 2, Cause::competing, 0), rec("c", 3, Cause::censored, 1, 1),
                  rec("d", 4, Cause::censored, 0)},
                 0, 4);
  CHECK(c.n_rct() == 2);
  CHECK(c.n_external() == 2);
  CHECK(c.alpha_hat() == doctest::Approx(0.5));
  CHECK(c[1].arm() == 0);
  CHECK(c[2].arm() == 1);
}

}  // TEST_SUITE
