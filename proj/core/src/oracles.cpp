#include "cif_fusion/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "cif_fusion/estimators.hpp"
#include "cif_fusion/parallel.hpp"

namespace cif {

namespace {

constexpr double exact_threshold = 1e-10;

OracleReport finish(std::string name, double statistic, double threshold, std::string detail) {
  OracleReport r;
  r.name = std::move(name);
  r.statistic = statistic;
  r.threshold = threshold;
  r.passed = statistic <= threshold;
  r.detail = std::move(detail);
  return r;
}

HazardModel empirical_model(const CumulativeHazard& a) {
  HazardModel m;
  m.times.assign(a.jump_times().begin(), a.jump_times().end());
  m.increments.assign(a.jump_sizes().begin(), a.jump_sizes().end());
  m.clamp = false;
  return m;
}

// Aalen-Johansen incidence of both causes at `t` and its integral over (0, t], by direct counting.
struct AjValue {
  double cif[2] = {0.0, 0.0};
  double area[2] = {0.0, 0.0};
};

AjValue brute_force_aj(const std::vector<EventRecord>& recs, double t) {
  std::vector<double> times;
  for (const auto& r : recs)
    if (r.cause != Cause::censored) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  AjValue v;
  double surv = 1.0, last = 0.0;
  for (double s : times) {
    if (s > t) break;
    double at_risk = 0.0, d[2] = {0.0, 0.0};
    for (const auto& r : recs) {
      if (r.time >= s) at_risk += 1.0;
      if (r.time == s && r.cause != Cause::censored) d[static_cast<int>(r.cause) - 1] += 1.0;
    }
    for (int j = 0; j < 2; ++j) v.area[j] += v.cif[j] * (s - last);
    last = s;
    for (int j = 0; j < 2; ++j) v.cif[j] += surv * d[j] / at_risk;
    surv *= 1.0 - (d[0] + d[1]) / at_risk;
  }
  for (int j = 0; j < 2; ++j) v.area[j] += v.cif[j] * (t - last);
  return v;
}

CumulativeHazard random_hazard(Rng& rng, std::size_t max_jumps, double horizon) {
  std::uniform_int_distribution<std::size_t> count(0, max_jumps);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t k = count(rng);
  std::vector<double> times;
  for (std::size_t i = 0; i < k; ++i) times.push_back(horizon * (1.0 - unif(rng)));
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  std::vector<double> sizes;
  for (std::size_t i = 0; i < times.size(); ++i) {
    // occasional full jumps exercise the absorbing case
    sizes.push_back(unif(rng) < 0.05 ? 1.0 : unif(rng));
  }
  return {std::move(times), std::move(sizes)};
}

// Splits the jumps of one random hazard between two so their jump times are disjoint.
std::pair<CumulativeHazard, CumulativeHazard> disjoint_pair(Rng& rng, std::size_t max_jumps, double horizon) {
  const CumulativeHazard all = random_hazard(rng, max_jumps, horizon);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> t1, s1, t2, s2;
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (coin(rng)) {
      t1.push_back(all.jump_times()[k]);
      s1.push_back(all.jump_sizes()[k]);
    } else {
      t2.push_back(all.jump_times()[k]);
      s2.push_back(all.jump_sizes()[k]);
    }
  }
  return {CumulativeHazard(std::move(t1), std::move(s1)), CumulativeHazard(std::move(t2), std::move(s2))};
}

}  // namespace

OracleReport check_aj_equivalence(std::size_t max_n, std::size_t trials, Rng& rng) {
  std::uniform_int_distribution<std::size_t> size_dist(1, std::max<std::size_t>(1, max_n));
  std::uniform_int_distribution<int> time_dist(1, 6);
  std::uniform_int_distribution<int> outcome(0, 2);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst = 0.0;
  std::size_t compared = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    // Each integer time carries one event cause, so within-cause and event/censoring ties occur
    // but cross-cause ties do not.
    int cause_of_time[7];
    for (int& c : cause_of_time) c = coin(rng) ? 1 : 2;
    const std::size_t n = size_dist(rng);
    std::vector<EventRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
      EventRecord r;
      r.id = std::to_string(i + 1);
      r.time = time_dist(rng);
      r.cause = outcome(rng) == 0 ? Cause::censored : static_cast<Cause>(cause_of_time[static_cast<int>(r.time)]);
      r.pop = 1;
      r.treat = 0;
      recs.push_back(r);
    }
    const double tau = 6.0;
    const Cohort cohort(recs, 0, tau);

    NuisanceSet ns;
    ns.alpha_hat = 1.0;
    ns.weight_cap = std::numeric_limits<double>::infinity();
    ns.e1 = LogisticFit::constant(0.0, 0);
    ns.haz_interest_rct_ctrl = empirical_model(nelson_aalen(cohort, Cause::interest, nullptr));
    ns.haz_comp_rct_ctrl = empirical_model(nelson_aalen(cohort, Cause::competing, nullptr));
    ns.cens_rct_ctrl = empirical_model(nelson_aalen(cohort, Cause::censored, nullptr));

    const std::vector<double> times = {0.5, 1.0, 2.5, 3.0, 4.0 + unif(rng), 6.0};
    const InfluenceTable table = influence_table(cohort, ns, 0, Mode::rct_only, times);
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      const AjValue aj = brute_force_aj(recs, times[ti]);
      for (int j = 0; j < 2; ++j) {
        double theta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          theta += table.theta[static_cast<std::size_t>(j)][ti][i];
          gamma += table.gamma[static_cast<std::size_t>(j)][ti][i];
        }
        theta /= static_cast<double>(n);
        gamma /= static_cast<double>(n);
        worst = std::max({worst, std::abs(theta - aj.cif[j]), std::abs(gamma - aj.area[j])});
        compared += 2;
      }
    }
  }
  return finish("aj_equivalence", worst, exact_threshold,
                std::to_string(trials) + " cohorts, " + std::to_string(compared) + " comparisons");
}

OracleReport check_identities(std::size_t trials, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double horizon = 10.0;
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const CumulativeHazard a = random_hazard(rng, 50, horizon);
    const CumulativeHazard b = random_hazard(rng, 50, horizon);
    const double t = horizon * unif(rng);
    const double s = t * unif(rng);
    worst = std::max(worst, std::abs(duhamel_residual(a, b, t)));
    worst = std::max(worst, std::abs(backward_residual(a, t)));
    worst = std::max(worst, std::abs(integration_by_parts_residual(a, b, s, t)));
    const auto [a1, a2] = disjoint_pair(rng, 50, horizon);
    const double adding_up = aalen_johansen(a1, a2, t) + aalen_johansen(a2, a1, t) + product_integral(a1 + a2, t) - 1.0;
    worst = std::max(worst, std::abs(adding_up));
  }
  return finish("identities", worst, exact_threshold, std::to_string(trials) + " random instances");
}

OracleReport check_eif_mean_zero(const DgpConfig& base, const MeanZeroOptions& options) {
  DgpConfig config = base;
  config.n = options.n;
  std::vector<Target> targets;
  for (Family f : {Family::theta, Family::gamma})
    for (int cause : {1, 2})
      for (double t : options.times) {
        if (t > config.tau) continue;
        targets.push_back({f, cause, Arm::control, t, Mode::fusion});
        targets.push_back({f, cause, Arm::control, t, Mode::rct_only});
        targets.push_back({f, cause, Arm::treated, t, Mode::fusion});
      }
  const std::vector<double> truth = true_values(config, targets);

  std::vector<double> worst_z(options.seeds, 0.0);
  parallel_for(options.seeds, [&](std::size_t k) {
    const Cohort cohort = sample_cohort(config, options.first_seed + k);
    CorrectComponents correct;
    if (options.corruption == Corruption::constant_hazards) correct.interest = correct.comp_rct = correct.comp_ext = false;
    NuisanceSet ns = mixed_nuisances(config, cohort, correct, options.grid_points);
    if (options.corruption == Corruption::constant_pi) ns.pi = LogisticFit::constant(0.9, 3);
    const auto reports = estimate_all(cohort, ns, targets);
    double z = 0.0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const double se = reports[i].std_error;
      const double dev = std::abs(reports[i].estimate - truth[i]);
      z = std::max(z, se > 0.0 ? dev / se : (dev > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
    }
    worst_z[k] = z;
  });
  std::size_t failing = 0;
  double max_z = 0.0;
  for (double z : worst_z) {
    if (!(z < 3.0)) ++failing;
    max_z = std::max(max_z, z);
  }
  const char* label = options.corruption == Corruption::none         ? "eif_mean_zero"
                      : options.corruption == Corruption::constant_pi ? "eif_mean_zero[pi=0.9]"
                                                                       : "eif_mean_zero[constant hazards]";
  char detail[160];
  std::snprintf(detail, sizeof detail, "%zu/%zu seeds with max |z| < 3 over %zu targets; largest |z| %.3g",
                options.seeds - failing, options.seeds, targets.size(), max_z);
  return finish(label, static_cast<double>(failing) / static_cast<double>(options.seeds), 0.05, detail);
}

OracleReport check_reduction_consistency(const DgpConfig& base, std::size_t n, std::uint64_t seed) {
  DgpConfig config = base;
  config.n = n;
  const Cohort cohort = sample_cohort(config, seed);
  const NuisanceSet ns = fit_nuisances(cohort);
  const double t = config.tau;
  const ReductionReport red = variance_reduction(cohort, ns, t);
  const double v_fusion =
      influence_second_moment(cohort, influence_theta(cohort, ns, 0, Cause::interest, t, Mode::fusion));
  const double v_rct =
      influence_second_moment(cohort, influence_theta(cohort, ns, 0, Cause::interest, t, Mode::rct_only));
  const double diff = v_rct - v_fusion;
  const double stat = v_rct > 0.0 ? std::abs(red.reduction_estimate - diff) / v_rct : 0.0;
  char detail[160];
  std::snprintf(detail, sizeof detail, "plug-in %.5g, variance difference %.5g, rct-only variance %.5g",
                red.reduction_estimate, diff, v_rct);
  return finish("reduction_consistency", stat, 0.15, detail);
}

void print_reports(std::ostream& out, const std::vector<OracleReport>& reports) {
  char line[512];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-34s %s  statistic=%-11.4g threshold=%-9.3g %s\n", r.name.c_str(),
                  r.passed ? "PASS" : "FAIL", r.statistic, r.threshold, r.detail.c_str());
    out << line;
  }
}

}  // namespace cif
