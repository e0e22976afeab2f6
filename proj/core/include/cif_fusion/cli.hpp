#pragma once

// Dataset ingestion, run configuration, and the estimate / simulate / check commands.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cif_fusion/estimators.hpp"
#include "cif_fusion/oracles.hpp"
#include "cif_fusion/simulation.hpp"

namespace cif {

struct TargetSpec {
  Family family = Family::theta;
  int cause = 1;
  Arm arm = Arm::control;
};

enum class ModeChoice { fusion, rct_only, both };

struct RunConfig {
  std::optional<double> tau;  // default: largest observed time (estimate) or 2 (simulate)
  std::vector<double> times = {0.25, 1.0, 2.0};
  std::vector<TargetSpec> targets;  // default: theta and gamma, both causes, arms 0, 1 and effect
  ModeChoice mode = ModeChoice::both;
  double jitter_scale = 1e-5;
  std::optional<double> weight_cap;  // unset: sqrt(n) log(n) / 5
  std::uint64_t seed = 1;
  std::size_t reps = 200;
  DgpConfig dgp = DgpConfig::standard();

  std::vector<Target> expand(double tau_value) const;  // targets x times x modes, row order of the reports
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

struct IngestOptions {
  double jitter_scale = 1e-5;
  std::uint64_t seed = 1;
  std::optional<double> tau;
};

struct IngestResult {
  Cohort cohort;
  std::size_t dropped_rows = 0;
  std::size_t jittered_rows = 0;
};

IngestResult ingest(std::istream& in, const IngestOptions& options);
IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options);

// Header id,time,event,treat,pop,x1..xp; reals with 17 significant digits.
void write_cohort_csv(std::ostream& out, const Cohort& cohort);

struct EstimateOutput {
  std::vector<EstimateReport> reports;
  std::vector<InfluenceVector> influence;
  std::size_t dropped_rows = 0;
  std::size_t jittered_rows = 0;
  std::vector<std::string> warnings;
};

// Fits nuisances and evaluates every configured target. Used by cmd_estimate and by tests.
EstimateOutput run_estimate(const Cohort& cohort, const RunConfig& config);

void write_estimates_csv(std::ostream& out, const std::vector<EstimateReport>& reports);
void write_influence_csv(std::ostream& out, const Cohort& cohort, const std::vector<InfluenceVector>& influence);

// Writes estimates.csv (and influence.csv) into out_dir.
EstimateOutput cmd_estimate(const std::filesystem::path& dataset, const RunConfig& config,
                            const std::filesystem::path& out_dir, bool emit_influence, std::ostream& log);

// Returns the process exit code: 3 when more than 5% of replicates were excluded.
int cmd_simulate(const RunConfig& config, std::ostream& csv, std::ostream& log);

enum class CheckLevel { quick, full };

// Returns 0 iff every check passes and every negative control fails.
int cmd_check(CheckLevel level, bool negative_controls, std::uint64_t seed, std::ostream& out);

}  // namespace cif
