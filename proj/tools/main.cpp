// cif_fusion: estimate, simulate, check, generate.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "cif_fusion/cli.hpp"
#include "cif_fusion/errors.hpp"

namespace {

constexpr int exit_usage = 1;
constexpr int exit_data = 2;
constexpr int exit_numerical = 3;

cif::RunConfig config_from(const std::string& path) {
  return path.empty() ? cif::parse_run_config("{}") : cif::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-fusion estimators of cumulative incidence with external controls"};
  app.require_subcommand(1);

  std::string data_path, config_path, out_dir, out_path;
  bool emit_influence = false;
  auto* estimate = app.add_subcommand("estimate", "Estimate cumulative incidences and times lost from a dataset");
  estimate->add_option("--data", data_path, "CSV with header id,time,event,treat,pop,x1,...")->required();
  estimate->add_option("--config", config_path, "JSON run configuration");
  estimate->add_option("--out", out_dir, "Output directory")->default_val(".");
  estimate->add_flag("--emit-influence", emit_influence, "Also write influence.csv");

  std::optional<std::size_t> reps, n;
  std::optional<std::uint64_t> seed;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on the built-in data-generating process");
  simulate->add_option("--config", config_path, "JSON run configuration");
  simulate->add_option("--out", out_path, "Summary CSV path (default: stdout)");
  simulate->add_option("--reps", reps, "Replicates (overrides config)");
  simulate->add_option("--n", n, "Sample size (overrides config)");
  simulate->add_option("--seed", seed, "Seed (overrides config)");

  std::string level = "quick";
  bool negative_controls = false;
  std::uint64_t check_seed = 1;
  auto* check = app.add_subcommand("check", "Run the verification oracles");
  check->add_option("--level", level, "quick or full")->check(CLI::IsMember({"quick", "full"}));
  check->add_flag("--negative-controls", negative_controls, "Also run corrupted-input checks, which must fail");
  check->add_option("--seed", check_seed, "Seed");

  auto* generate = app.add_subcommand("generate", "Write one dataset drawn from the data-generating process");
  generate->add_option("--config", config_path, "JSON run configuration");
  generate->add_option("--out", out_path, "Dataset CSV path")->required();
  generate->add_option("--n", n, "Sample size (overrides config)");
  generate->add_option("--seed", seed, "Seed (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_usage;
  }

  try {
    if (*estimate) {
      cif::cmd_estimate(data_path, config_from(config_path), out_dir, emit_influence, std::cerr);
      return 0;
    }
    if (*simulate || *generate) {
      cif::RunConfig config = config_from(config_path);
      if (reps) config.reps = *reps;
      if (n) config.dgp.n = *n;
      if (seed) config.seed = config.dgp.seed = *seed;
      if (*generate) {
        const cif::Cohort cohort = cif::sample_cohort(config.dgp, config.seed);
        std::ofstream out(out_path);
        if (!out) throw cif::DataError("cannot write " + out_path);
        cif::write_cohort_csv(out, cohort);
        return 0;
      }
      if (out_path.empty() || out_path == "-") return cif::cmd_simulate(config, std::cout, std::cerr);
      std::ofstream out(out_path);
      if (!out) throw cif::DataError("cannot write " + out_path);
      return cif::cmd_simulate(config, out, std::cerr);
    }
    if (*check) {
      const auto lvl = level == "full" ? cif::CheckLevel::full : cif::CheckLevel::quick;
      return cif::cmd_check(lvl, negative_controls, check_seed, std::cout);
    }
  } catch (const cif::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return exit_data;
  } catch (const cif::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return exit_data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  }
  return exit_usage;
}
