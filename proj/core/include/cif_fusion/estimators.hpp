#pragma once

// One-step estimators built from uncentered influence values: cumulative incidence (theta) and
// restricted mean time lost (gamma), for the control arm, the treated arm, and their difference.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cif_fusion/nuisance.hpp"
#include "cif_fusion/survival.hpp"

namespace cif {

enum class Family { theta, gamma };
enum class Arm { control, treated, effect };

inline constexpr double wald_z = 1.959964;

struct Target {
  Family family = Family::theta;
  int cause = 1;
  Arm arm = Arm::control;
  double time = 0.0;
  Mode mode = Mode::fusion;

  // "theta_1(0)", "gamma_2(1)", "theta_1{t}" for the effect.
  std::string estimand() const;
};

struct InfluenceVector {
  std::vector<double> values;  // uncentered, one per record in cohort order
  std::vector<double> plugin;  // the D/alpha * F (or its time integral) part of each value
  Target target;

  double mean() const;
};

struct EstimateReport {
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_used = 0;
  Target target;
};

struct ReductionReport {
  double reduction_estimate = 0.0;
  double relative = 0.0;
};

// All influence values of one (arm, mode) pass, for both causes and every requested time.
struct InfluenceTable {
  int arm = 0;
  Mode mode = Mode::fusion;
  std::vector<double> times;
  // Indexed [cause - 1][time index][record].
  std::array<std::vector<std::vector<double>>, 2> theta, gamma, plugin_theta, plugin_gamma;
  // D/alpha * S(t | arm, X), the all-cause survival part, indexed [time index][record].
  std::vector<std::vector<double>> plugin_survival;
};

InfluenceTable influence_table(const Cohort& cohort, const NuisanceSet& ns, int arm, Mode mode,
                               std::span<const double> times);

InfluenceVector influence_theta(const Cohort& cohort, const NuisanceSet& ns, int arm, Cause cause, double t,
                                Mode mode);
InfluenceVector influence_gamma(const Cohort& cohort, const NuisanceSet& ns, int arm, Cause cause, double t,
                                Mode mode);
InfluenceVector influence(const Cohort& cohort, const NuisanceSet& ns, const Target& target);

// Point estimate, SE from the influence centered by D/alpha * estimate, and Wald interval.
EstimateReport summarize(const Cohort& cohort, const InfluenceVector& iv);

EstimateReport estimate(const Cohort& cohort, const NuisanceSet& ns, const Target& target);

// Batched version sharing one pass per (arm, mode); returns reports in target order.
// When `influence` is non-null it receives the matching influence vectors.
std::vector<EstimateReport> estimate_all(const Cohort& cohort, const NuisanceSet& ns,
                                         std::span<const Target> targets,
                                         std::vector<InfluenceVector>* influence = nullptr);

// Plug-in variance reduction of the fusion over the trial-only control-arm cause-1 incidence at t.
ReductionReport variance_reduction(const Cohort& cohort, const NuisanceSet& ns, double t);

// Mean over records of the squared centered influence.
double influence_second_moment(const Cohort& cohort, const InfluenceVector& iv);

}  // namespace cif
