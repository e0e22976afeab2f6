#pragma once

// Brute-force and closed-form checks of the estimators and the hazard calculus.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cif_fusion/simulation.hpp"

namespace cif {

struct OracleReport {
  std::string name;
  bool passed = false;
  double statistic = 0.0;
  double threshold = 0.0;
  std::string detail;
};

// Trial-only control incidence with empirical (Nelson-Aalen) nuisances against Aalen-Johansen
// computed by raw risk-set counting on random cohorts of size <= max_n.
OracleReport check_aj_equivalence(std::size_t max_n, std::size_t trials, Rng& rng);

// Duhamel, backward-equation, integration-by-parts and adding-up residuals on random step hazards.
OracleReport check_identities(std::size_t trials, Rng& rng);

enum class Corruption { none, constant_pi, constant_hazards };

struct MeanZeroOptions {
  std::size_t n = 5000;
  std::size_t seeds = 20;
  std::uint64_t first_seed = 1;
  std::vector<double> times = {0.25, 1.0, 2.0};
  Corruption corruption = Corruption::none;
  std::size_t grid_points = 1000;
};

// Estimates with true nuisances injected; a seed passes when every target has |estimate - truth| / SE < 3.
// statistic = fraction of failing seeds, threshold 0.05.
OracleReport check_eif_mean_zero(const DgpConfig& config, const MeanZeroOptions& options);

// |plug-in reduction - (var rct-only - var fusion)| / var rct-only at t = tau with fitted nuisances.
OracleReport check_reduction_consistency(const DgpConfig& config, std::size_t n, std::uint64_t seed);

void print_reports(std::ostream& out, const std::vector<OracleReport>& reports);

}  // namespace cif
