#pragma once

// Logistic and Cox nuisance fits, conditional hazard models, and the assembled nuisance set.

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cif_fusion/survival.hpp"

namespace cif {

enum class Mode { fusion, rct_only };

struct LogisticFit {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  bool converged = false;
  int iterations = 0;
  std::vector<std::size_t> dropped;

  double linear_predictor(std::span<const double> x) const;
  double predict(std::span<const double> x) const;

  static LogisticFit constant(double probability, std::size_t dim);
};

// Rows are observations; no intercept column (one is always fitted).
LogisticFit fit_logistic(const Eigen::MatrixXd& features, const std::vector<int>& labels);

enum class DegenerateColumns { error, drop };

struct CoxOptions {
  DegenerateColumns degenerate = DegenerateColumns::error;
  int max_iterations = 100;
  double tolerance = 1e-8;
};

struct CoxFit {
  Eigen::VectorXd coefficients;         // full covariate dimension; dropped columns stay 0
  std::vector<double> baseline_times;   // distinct event times of the modelled cause
  std::vector<double> baseline_jumps;   // raw Breslow increments, may exceed 1
  bool converged = false;
  int iterations = 0;
  double log_partial_likelihood = 0.0;
  std::vector<double> likelihood_path;  // value after each accepted step
  std::vector<std::size_t> dropped;
  std::vector<std::string> warnings;
};

// Cause-specific Cox fit on the selected records; every other outcome is right-censoring.
// `Cause::censored` fits the censoring hazard.
CoxFit fit_cox(const Cohort& cohort, const RecordFilter& subset, Cause event_cause,
               const CoxOptions& options = {});

// Breslow increments for fixed coefficients.
void breslow_baseline(const Cohort& cohort, const RecordFilter& subset, Cause event_cause,
                      const Eigen::VectorXd& beta, std::vector<double>& times, std::vector<double>& jumps);

// Clamp maps a raw increment d to 1 - exp(-d).
inline double clamp_jump(double raw) { return -std::expm1(-raw); }

// Conditional cumulative hazard dA(t|x) = g(dA0(t) exp(offset + beta'x)), g = clamp or identity.
struct HazardModel {
  std::vector<double> times;
  std::vector<double> increments;
  Eigen::VectorXd beta;
  double offset = 0.0;
  bool clamp = true;

  double risk(std::span<const double> x) const;
  double jump(std::size_t k, double risk_score) const {
    const double raw = increments[k] * risk_score;
    return clamp ? clamp_jump(raw) : raw;
  }
  CumulativeHazard at(std::span<const double> x) const;

  static HazardModel from_fit(const CoxFit& fit, bool clamp = true);
};

CumulativeHazard predict_cum_hazard(const CoxFit& fit, std::span<const double> x, bool clamp);

struct NuisanceSet {
  std::optional<LogisticFit> pi;  // absent without external controls
  LogisticFit e1;
  HazardModel haz_interest_pooled;    // cause 1 under control, both populations
  HazardModel haz_interest_rct_ctrl;  // cause 1, trial controls only
  HazardModel haz_comp_rct_ctrl;
  std::optional<HazardModel> haz_comp_ext;
  HazardModel haz_interest_trt;
  HazardModel haz_comp_trt;
  HazardModel cens_rct_ctrl;
  HazardModel cens_rct_trt;
  std::optional<HazardModel> cens_ext;
  double alpha_hat = 1.0;
  double weight_cap = 0.0;
  std::vector<std::string> warnings;
  std::vector<std::string> unconverged;

  bool supports_fusion() const { return pi && haz_comp_ext && cens_ext; }
};

double default_weight_cap(std::size_t n);

struct FitOptions {
  std::optional<double> weight_cap;  // default: sqrt(n) log(n) / 5
  bool parallel = true;
};

NuisanceSet fit_nuisances(const Cohort& cohort, const FitOptions& options = {});

struct DerivedQuantities {
  double S1 = 1.0, S0 = 1.0;
  double F1j_at_t = 0.0, F1j_at_horizon = 0.0;
  double S1c = 1.0, S0c = 1.0;
  double H_dot = 0.0, H_1 = 0.0;  // left limits at t
  double W_1j = 0.0, W_2j = 0.0;  // W_kj(horizon, t)
};

// Nuisance functions for covariates x under `arm` at time t. Survival values are at t, H's at t-.
// For arm 0 in fusion mode the cause-1 hazard is the pooled fit; otherwise the trial fit of that arm.
DerivedQuantities derived_quantities(const NuisanceSet& ns, std::span<const double> x, int arm, Cause cause,
                                     double t, double horizon, Mode mode = Mode::fusion);

}  // namespace cif
