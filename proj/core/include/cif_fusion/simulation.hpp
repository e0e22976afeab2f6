#pragma once

// Data-generating process for a trial with external controls, analytic truths, injected true
// nuisances, and the replicate loop that aggregates Monte Carlo summaries.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cif_fusion/estimators.hpp"
#include "cif_fusion/nuisance.hpp"
#include "cif_fusion/survival.hpp"

namespace cif {

using Rng = std::mt19937_64;

// intercept + treat * A + x'X + (1 - A) * control_x'X. An intercept of -inf disables the hazard.
struct LinearPredictor {
  double intercept = 0.0;
  double treat = 0.0;
  std::array<double, 3> x{};
  std::array<double, 3> control_x{};

  double eval(std::span<const double> cov, int a) const;
};

struct Weibull {
  double shape = 0.7;
  double scale = 0.2;

  double cumulative(double t) const { return scale * std::pow(t, shape); }
};

struct DgpConfig {
  std::size_t n = 1500;
  Eigen::Matrix3d sigma = Eigen::Matrix3d::Identity();
  std::array<double, 4> sel_coef{};  // intercept, X1, X2, X3
  double trt_prob = 0.5;
  LinearPredictor beta11, beta12, beta01, beta02;
  Weibull weibull_event{0.7, 0.2};
  Weibull weibull_cens{0.7, 0.24};
  LinearPredictor cens_coef_rct, cens_coef_ext;
  double tau = 2.0;
  std::uint64_t seed = 1;

  static DgpConfig standard();
  void validate() const;

  double selection_probability(std::span<const double> x) const;
  // Linear predictors of the cause-1 and cause-2 hazards for population d and arm a.
  double event_lp(int cause, std::span<const double> x, int d, int a) const;
  double censoring_lp(std::span<const double> x, int d, int a) const;
};

Eigen::MatrixXd sample_covariates(Rng& rng, std::size_t n, const Eigen::Matrix3d& sigma);

struct Assignment {
  int pop = 1;
  std::optional<int> treat;
};
Assignment sample_selection_treatment(Rng& rng, std::span<const double> x, const DgpConfig& config);

struct EventDraw {
  double time = 0.0;
  Cause cause = Cause::interest;
};
EventDraw sample_event(Rng& rng, std::span<const double> x, int d, int a, const DgpConfig& config);
double sample_censoring(Rng& rng, std::span<const double> x, int d, int a, const DgpConfig& config);

Cohort sample_cohort(const DgpConfig& config, std::uint64_t seed);

// Closed-form conditional incidence F_j(t | a, x) and its integral over (0, t] for the trial population.
double conditional_cif(const DgpConfig& config, int cause, int arm, std::span<const double> x, double t);
double conditional_cif_integral(const DgpConfig& config, int cause, int arm, std::span<const double> x, double t);

// Truth of each target under the trial covariate law, by Gauss-Hermite quadrature over the
// latent normal weighted by the selection probability.
std::vector<double> true_values(const DgpConfig& config, std::span<const Target> targets, int nodes = 40);

// Analytic hazards discretized on a fine grid (clamped so the product integral matches exp(-Lambda)
// at grid points), true selection probability, and the true treatment probability.
NuisanceSet true_nuisances(const DgpConfig& config, const Cohort& cohort, std::size_t grid_points = 1000,
                           std::optional<double> weight_cap = std::nullopt);

// Covariate-free constant-hazard fit (events / person-time) on the subset, laid on `grid`.
HazardModel exponential_hazard(const Cohort& cohort, const RecordFilter& subset, Cause cause,
                               const std::vector<double>& grid);

// Which nuisance components are the truth; the rest are covariate-free constant fits.
struct CorrectComponents {
  bool interest = true;   // cause-1 hazards
  bool comp_rct = true;   // trial cause-2 hazards
  bool comp_ext = true;   // external cause-2 hazard
  bool censoring = true;  // all censoring hazards
  bool selection = true;  // pi
  bool treatment = true;  // e1
};

NuisanceSet mixed_nuisances(const DgpConfig& config, const Cohort& cohort, const CorrectComponents& correct,
                            std::size_t grid_points = 1000, std::optional<double> weight_cap = std::nullopt);

using NuisanceBuilder = std::function<NuisanceSet(const Cohort&)>;

struct StudyOptions {
  std::size_t reps = 200;
  std::vector<Target> targets;  // the mode field is ignored; see both_modes
  bool both_modes = true;       // false: fusion only
  NuisanceBuilder nuisances;    // default: fit_nuisances
};

struct SummaryRow {
  std::string estimand;
  double time = 0.0;
  char type = '+';
  double mean = 0.0;
  double bias_1e4 = 0.0;
  double rmse_1e2 = 0.0;
  double se_1e2 = 0.0;
  double coverage_pct = 0.0;
  std::optional<double> reduction_pct;
  // Not serialized.
  double truth = 0.0;
  double sd = 0.0;
};

struct SimulationSummary {
  std::vector<SummaryRow> rows;
  std::size_t replicates = 0;
  std::size_t excluded = 0;
  std::vector<std::string> failures;
};

// Default target list: theta and gamma for both causes, each arm and the effect, at the given times.
std::vector<Target> standard_targets(const std::vector<double>& times);

SimulationSummary run_study(const DgpConfig& config, const StudyOptions& options);

void write_summary_csv(std::ostream& out, const SimulationSummary& summary);
SimulationSummary parse_summary_csv(std::istream& in);

}  // namespace cif
