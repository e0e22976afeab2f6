#include <doctest.h>

#include <limits>
#include <sstream>

#include "cif_fusion/oracles.hpp"

using namespace cif;

TEST_SUITE("oracles") {

TEST_CASE("identity sweep") {
  Rng rng(4);
  const OracleReport r = check_identities(200, rng);
  CHECK(r.passed);
  CHECK(r.statistic < 1e-10);
  CHECK(r.name == "identities");
}

TEST_CASE("aalen-johansen equivalence on small cohorts") {
  Rng rng(5);
  const OracleReport r = check_aj_equivalence(12, 60, rng);
  CHECK(r.passed);
  CHECK(r.statistic < 1e-10);
}

TEST_CASE("mean-zero harness with no events is trivially zero") {
  DgpConfig c = DgpConfig::standard();
  const double off = -std::numeric_limits<double>::infinity();
  c.beta11.intercept = c.beta12.intercept = c.beta01.intercept = c.beta02.intercept = off;
  MeanZeroOptions opts;
  opts.n = 1000;
  opts.seeds = 2;
  opts.grid_points = 100;
  const OracleReport r = check_eif_mean_zero(c, opts);
  CHECK(r.passed);
  CHECK(r.statistic == 0.0);
}

TEST_CASE("report lines") {
  OracleReport ok{"alpha", true, 1e-12, 1e-10, "fine"};
  OracleReport bad{"beta", false, 0.5, 0.05, "not fine"};
  std::ostringstream out;
  print_reports(out, {ok, bad});
  const std::string s = out.str();
  CHECK(s.find("alpha") != std::string::npos);
  CHECK(s.find("PASS") < s.find("FAIL"));
  CHECK(s.find("not fine") != std::string::npos);
}

}  // TEST_SUITE
