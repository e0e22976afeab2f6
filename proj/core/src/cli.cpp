#include "cif_fusion/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cif_fusion/errors.hpp"

namespace cif {

using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- config

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw DataError("config: " + where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw DataError("config: unknown key '" + key + "' in " + where);
}

double number(const json& v, const std::string& what) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "inf") return std::numeric_limits<double>::infinity();
  }
  throw DataError("config: " + what + " must be a number");
}

template <std::size_t N>
std::array<double, N> fixed_array(const json& v, const std::string& what) {
  if (!v.is_array() || v.size() != N) throw DataError("config: " + what + " must have " + std::to_string(N) + " entries");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = number(v[i], what);
  return out;
}

LinearPredictor parse_lp(const json& v, const std::string& what) {
  reject_unknown(v, {"intercept", "treat", "x", "control_x"}, what);
  LinearPredictor lp;
  if (v.contains("intercept")) lp.intercept = number(v["intercept"], what + ".intercept");
  if (v.contains("treat")) lp.treat = number(v["treat"], what + ".treat");
  if (v.contains("x")) lp.x = fixed_array<3>(v["x"], what + ".x");
  if (v.contains("control_x")) lp.control_x = fixed_array<3>(v["control_x"], what + ".control_x");
  return lp;
}

Weibull parse_weibull(const json& v, const std::string& what) {
  reject_unknown(v, {"shape", "scale"}, what);
  Weibull w;
  if (v.contains("shape")) w.shape = number(v["shape"], what + ".shape");
  if (v.contains("scale")) w.scale = number(v["scale"], what + ".scale");
  return w;
}

void parse_dgp(const json& v, DgpConfig& c) {
  reject_unknown(v,
                 {"n", "sigma", "sel_coef", "trt_prob", "beta11", "beta12", "beta01", "beta02", "weibull_event",
                  "weibull_cens", "cens_coef_rct", "cens_coef_ext"},
                 "dgp");
  if (v.contains("n")) {
    if (!v["n"].is_number_unsigned() || v["n"].get<std::size_t>() == 0) throw DataError("config: dgp.n must be a positive integer");
    c.n = v["n"].get<std::size_t>();
  }
  if (v.contains("sigma")) {
    const auto& s = v["sigma"];
    if (!s.is_array() || s.size() != 3) throw DataError("config: dgp.sigma must be 3x3");
    for (int i = 0; i < 3; ++i) {
      const auto row = fixed_array<3>(s[static_cast<std::size_t>(i)], "dgp.sigma");
      for (int j = 0; j < 3; ++j) c.sigma(i, j) = row[static_cast<std::size_t>(j)];
    }
  }
  if (v.contains("sel_coef")) c.sel_coef = fixed_array<4>(v["sel_coef"], "dgp.sel_coef");
  if (v.contains("trt_prob")) c.trt_prob = number(v["trt_prob"], "dgp.trt_prob");
  if (v.contains("beta11")) c.beta11 = parse_lp(v["beta11"], "dgp.beta11");
  if (v.contains("beta12")) c.beta12 = parse_lp(v["beta12"], "dgp.beta12");
  if (v.contains("beta01")) c.beta01 = parse_lp(v["beta01"], "dgp.beta01");
  if (v.contains("beta02")) c.beta02 = parse_lp(v["beta02"], "dgp.beta02");
  if (v.contains("weibull_event")) c.weibull_event = parse_weibull(v["weibull_event"], "dgp.weibull_event");
  if (v.contains("weibull_cens")) c.weibull_cens = parse_weibull(v["weibull_cens"], "dgp.weibull_cens");
  if (v.contains("cens_coef_rct")) c.cens_coef_rct = parse_lp(v["cens_coef_rct"], "dgp.cens_coef_rct");
  if (v.contains("cens_coef_ext")) c.cens_coef_ext = parse_lp(v["cens_coef_ext"], "dgp.cens_coef_ext");
}

TargetSpec parse_target(const json& v) {
  reject_unknown(v, {"family", "cause", "arm"}, "targets[]");
  TargetSpec t;
  const auto family = v.value("family", std::string("theta"));
  if (family == "theta") t.family = Family::theta;
  else if (family == "gamma") t.family = Family::gamma;
  else throw DataError("config: target family must be theta or gamma");
  if (v.contains("cause")) {
    if (!v["cause"].is_number_integer()) throw DataError("config: target cause must be 1 or 2");
    t.cause = v["cause"].get<int>();
  }
  if (t.cause != 1 && t.cause != 2) throw DataError("config: target cause must be 1 or 2");
  const json arm = v.contains("arm") ? v["arm"] : json(0);
  if (arm == json(0) || arm == json("0")) t.arm = Arm::control;
  else if (arm == json(1) || arm == json("1")) t.arm = Arm::treated;
  else if (arm == json("effect")) t.arm = Arm::effect;
  else throw DataError("config: target arm must be 0, 1 or \"effect\"");
  return t;
}

}  // namespace

std::vector<Target> RunConfig::expand(double tau_value) const {
  std::vector<TargetSpec> specs = targets;
  if (specs.empty())
    for (Family f : {Family::theta, Family::gamma})
      for (int cause : {1, 2})
        for (Arm arm : {Arm::control, Arm::treated, Arm::effect}) specs.push_back({f, cause, arm});
  std::vector<Mode> modes;
  if (mode != ModeChoice::rct_only) modes.push_back(Mode::fusion);
  if (mode != ModeChoice::fusion) modes.push_back(Mode::rct_only);
  std::vector<Target> out;
  for (const auto& spec : specs)
    for (double t : times) {
      if (t > tau_value) throw DataError("config: time " + fmt17(t) + " exceeds tau");
      for (Mode m : modes) out.push_back({spec.family, spec.cause, spec.arm, t, m});
    }
  return out;
}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  reject_unknown(doc,
                 {"tau", "times", "targets", "mode", "jitter_scale", "weight_cap_rule", "seed", "reps", "dgp"},
                 "config");
  RunConfig c;
  if (doc.contains("tau")) {
    c.tau = number(doc["tau"], "tau");
    if (!(*c.tau > 0.0) || !std::isfinite(*c.tau)) throw DataError("config: tau must be positive");
  }
  if (doc.contains("times")) {
    if (!doc["times"].is_array() || doc["times"].empty()) throw DataError("config: times must be a non-empty list");
    c.times.clear();
    for (const auto& t : doc["times"]) {
      const double v = number(t, "times[]");
      if (!(v >= 0.0)) throw DataError("config: times must be non-negative");
      c.times.push_back(v);
    }
  }
  if (doc.contains("targets")) {
    if (!doc["targets"].is_array()) throw DataError("config: targets must be a list");
    for (const auto& t : doc["targets"]) c.targets.push_back(parse_target(t));
  }
  if (doc.contains("mode")) {
    const auto m = doc["mode"].is_string() ? doc["mode"].get<std::string>() : std::string();
    if (m == "fusion") c.mode = ModeChoice::fusion;
    else if (m == "rct-only") c.mode = ModeChoice::rct_only;
    else if (m == "both") c.mode = ModeChoice::both;
    else throw DataError("config: mode must be fusion, rct-only or both");
  }
  if (doc.contains("jitter_scale")) {
    c.jitter_scale = number(doc["jitter_scale"], "jitter_scale");
    if (!(c.jitter_scale > 0.0)) throw DataError("config: jitter_scale must be positive");
  }
  if (doc.contains("weight_cap_rule")) {
    const auto& w = doc["weight_cap_rule"];
    if (w.is_string() && w.get<std::string>() == "sqrt_n_log_n_over_5") c.weight_cap.reset();
    else if (w.is_string() && w.get<std::string>() == "none") c.weight_cap = std::numeric_limits<double>::infinity();
    else if (w.is_number() && w.get<double>() > 0.0) c.weight_cap = w.get<double>();
    else throw DataError("config: weight_cap_rule must be \"sqrt_n_log_n_over_5\", \"none\" or a positive number");
  }
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) throw DataError("config: seed must be a non-negative integer");
    c.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("reps")) {
    if (!doc["reps"].is_number_unsigned() || doc["reps"].get<std::size_t>() == 0)
      throw DataError("config: reps must be a positive integer");
    c.reps = doc["reps"].get<std::size_t>();
  }
  if (doc.contains("dgp")) parse_dgp(doc["dgp"], c.dgp);
  c.dgp.seed = c.seed;
  if (c.tau) c.dgp.tau = *c.tau;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

// ---------------------------------------------------------------- ingestion

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  return cells;
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace

IngestResult ingest(std::istream& in, const IngestOptions& options) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("line 1: missing header");
  const auto header = split_csv(line);
  const std::vector<std::string> fixed = {"id", "time", "event", "treat", "pop"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin()))
    throw DataError("line 1: header must start with id,time,event,treat,pop");
  const std::size_t p = header.size() - fixed.size();
  for (std::size_t j = 0; j < p; ++j)
    if (header[fixed.size() + j] != "x" + std::to_string(j + 1))
      throw DataError("line 1: expected column x" + std::to_string(j + 1) + ", found '" + header[fixed.size() + j] + "'");

  std::vector<EventRecord> records;
  std::size_t dropped = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (cells.size() != header.size())
      throw DataError(where + "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    EventRecord r;
    r.id = cells[0];
    if (!parse_real(cells[1], r.time) || !(r.time > 0.0)) throw DataError(where + "time must be a positive real");
    if (cells[2] == "0") r.cause = Cause::censored;
    else if (cells[2] == "1") r.cause = Cause::interest;
    else if (cells[2] == "2") r.cause = Cause::competing;
    else throw DataError(where + "event must be 0, 1 or 2");
    if (cells[4] == "1") r.pop = 1;
    else if (cells[4] == "0") r.pop = 0;
    else throw DataError(where + "pop must be 0 or 1");
    if (cells[3] == "0" || cells[3] == "1") r.treat = cells[3] == "1" ? 1 : 0;
    else if (cells[3] != "NA") throw DataError(where + "treat must be 0, 1 or NA");
    if (r.treat.has_value() != (r.pop == 1)) throw DataError(where + "treat must be NA exactly when pop = 0");
    bool missing = false;
    r.covariates.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
      const auto& c = cells[fixed.size() + j];
      if (c.empty() || c == "NA") {
        missing = true;
        continue;
      }
      if (!parse_real(c, r.covariates[j])) throw DataError(where + "covariate x" + std::to_string(j + 1) + " is not a real");
    }
    if (missing) {
      ++dropped;
      continue;
    }
    records.push_back(std::move(r));
  }
  if (std::none_of(records.begin(), records.end(), [](const EventRecord& r) { return r.is_rct(); }))
    throw DataError("dataset has no RCT rows");

  // Break cross-cause ties by jittering every event row at a tied time until none remain.
  Rng rng(options.seed);
  std::uniform_real_distribution<double> noise(0.0, options.jitter_scale);
  std::set<std::size_t> jittered;
  for (;;) {
    std::vector<std::size_t> events;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].cause != Cause::censored) events.push_back(i);
    std::stable_sort(events.begin(), events.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].time < records[b].time; });
    std::vector<std::size_t> to_jitter;
    for (std::size_t k = 0; k < events.size();) {
      std::size_t end = k;
      bool c1 = false, c2 = false;
      while (end < events.size() && records[events[end]].time == records[events[k]].time) {
        (records[events[end]].cause == Cause::interest ? c1 : c2) = true;
        ++end;
      }
      if (c1 && c2)
        for (std::size_t m = k; m < end; ++m) to_jitter.push_back(events[m]);
      k = end;
    }
    if (to_jitter.empty()) break;
    std::sort(to_jitter.begin(), to_jitter.end());
    for (std::size_t i : to_jitter) {
      records[i].time += noise(rng);
      jittered.insert(i);
    }
  }

  double tau = 0.0;
  for (const auto& r : records) tau = std::max(tau, r.time);
  if (options.tau) tau = *options.tau;
  return IngestResult{Cohort(std::move(records), p, tau), dropped, jittered.size()};
}

IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return ingest(in, options);
}

void write_cohort_csv(std::ostream& out, const Cohort& cohort) {
  out << "id,time,event,treat,pop";
  for (std::size_t j = 0; j < cohort.covariate_dim(); ++j) out << ",x" << j + 1;
  out << '\n';
  for (const auto& r : cohort.records()) {
    out << r.id << ',' << fmt17(r.time) << ',' << static_cast<int>(r.cause) << ','
        << (r.treat ? std::to_string(*r.treat) : std::string("NA")) << ',' << r.pop;
    for (double x : r.covariates) out << ',' << fmt17(x);
    out << '\n';
  }
}

// ---------------------------------------------------------------- commands

EstimateOutput run_estimate(const Cohort& cohort, const RunConfig& config) {
  const std::vector<Target> targets = config.expand(cohort.tau());
  const bool needs_fusion = std::any_of(targets.begin(), targets.end(), [](const Target& t) {
    return t.mode == Mode::fusion && t.arm != Arm::treated;
  });
  if (needs_fusion && cohort.n_external() == 0)
    throw DataError("fusion mode needs external controls (pop = 0); use mode rct-only");
  FitOptions fit_options;
  fit_options.weight_cap = config.weight_cap;
  const NuisanceSet ns = fit_nuisances(cohort, fit_options);
  EstimateOutput out;
  out.reports = estimate_all(cohort, ns, targets, &out.influence);
  out.warnings = ns.warnings;
  for (const auto& name : ns.unconverged) out.warnings.push_back(name + ": fit did not converge");
  return out;
}

void write_estimates_csv(std::ostream& out, const std::vector<EstimateReport>& reports) {
  out << "estimand,time,type,estimate,ci_low,ci_high,reduction_pct\n";
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const auto& r = reports[k];
    const bool fusion = r.target.mode == Mode::fusion;
    out << r.target.estimand() << ',' << fmt17(r.target.time) << ',' << (fusion ? '+' : '-') << ','
        << fmt17(r.estimate) << ',' << fmt17(r.ci_low) << ',' << fmt17(r.ci_high) << ',';
    // Reduction in CI length against the matching rct-only row, which directly follows a fusion row.
    if (fusion && k + 1 < reports.size()) {
      const auto& next = reports[k + 1];
      if (next.target.mode == Mode::rct_only && next.target.estimand() == r.target.estimand() &&
          next.target.time == r.target.time) {
        const double pct = next.std_error > 0.0 ? 100.0 * (1.0 - r.std_error / next.std_error) : 0.0;
        out << fmt17(pct);
      }
    }
    out << '\n';
  }
}

void write_influence_csv(std::ostream& out, const Cohort& cohort, const std::vector<InfluenceVector>& influence) {
  out << "id,estimand,time,type,influence\n";
  for (const auto& iv : influence) {
    const std::string prefix = ',' + iv.target.estimand() + ',' + fmt17(iv.target.time) + ',' +
                               (iv.target.mode == Mode::fusion ? '+' : '-') + ',';
    for (std::size_t i = 0; i < iv.values.size(); ++i) out << cohort[i].id << prefix << fmt17(iv.values[i]) << '\n';
  }
}

EstimateOutput cmd_estimate(const std::filesystem::path& dataset, const RunConfig& config,
                            const std::filesystem::path& out_dir, bool emit_influence, std::ostream& log) {
  IngestOptions opts;
  opts.jitter_scale = config.jitter_scale;
  opts.seed = config.seed;
  opts.tau = config.tau;
  IngestResult data = ingest(dataset, opts);
  log << "ingested " << data.cohort.size() << " records (" << data.cohort.n_rct() << " trial, "
      << data.cohort.n_external() << " external); dropped " << data.dropped_rows
      << " rows with missing covariates; jittered " << data.jittered_rows << " rows\n";
  EstimateOutput out = run_estimate(data.cohort, config);
  out.dropped_rows = data.dropped_rows;
  out.jittered_rows = data.jittered_rows;
  for (const auto& w : out.warnings) log << "warning: " << w << '\n';

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "estimates.csv");
    if (!f) throw DataError("cannot write " + (out_dir / "estimates.csv").string());
    write_estimates_csv(f, out.reports);
  }
  if (emit_influence) {
    std::ofstream f(out_dir / "influence.csv");
    if (!f) throw DataError("cannot write " + (out_dir / "influence.csv").string());
    write_influence_csv(f, data.cohort, out.influence);
  }
  return out;
}

int cmd_simulate(const RunConfig& config, std::ostream& csv, std::ostream& log) {
  DgpConfig dgp = config.dgp;
  dgp.seed = config.seed;
  dgp.tau = config.tau.value_or(dgp.tau);
  if (config.mode == ModeChoice::rct_only)
    throw DataError("simulate reports fusion rows; mode must be fusion or both");
  RunConfig fusion_only = config;
  fusion_only.mode = ModeChoice::fusion;
  StudyOptions opts;
  opts.reps = config.reps;
  opts.targets = fusion_only.expand(dgp.tau);
  opts.both_modes = config.mode == ModeChoice::both;
  if (config.weight_cap) {
    const double cap = *config.weight_cap;
    opts.nuisances = [cap](const Cohort& c) {
      FitOptions f;
      f.weight_cap = cap;
      return fit_nuisances(c, f);
    };
  }
  const SimulationSummary summary = run_study(dgp, opts);
  write_summary_csv(csv, summary);
  log << summary.replicates - summary.excluded << " of " << summary.replicates << " replicates used\n";
  for (const auto& f : summary.failures) log << "excluded: " << f << '\n';
  if (static_cast<double>(summary.excluded) > 0.05 * static_cast<double>(summary.replicates)) {
    log << "error: more than 5% of replicates were excluded\n";
    return 3;
  }
  return 0;
}

int cmd_check(CheckLevel level, bool negative_controls, std::uint64_t seed, std::ostream& out) {
  Rng rng(seed);
  std::vector<OracleReport> checks;
  checks.push_back(check_identities(500, rng));
  checks.push_back(check_aj_equivalence(12, 200, rng));
  const DgpConfig dgp = DgpConfig::standard();
  if (level == CheckLevel::full) {
    MeanZeroOptions mz;
    mz.first_seed = seed;
    checks.push_back(check_eif_mean_zero(dgp, mz));
    checks.push_back(check_reduction_consistency(dgp, 5000, seed));
  }
  std::vector<OracleReport> controls;
  if (negative_controls) {
    MeanZeroOptions mz;
    mz.first_seed = seed;
    mz.corruption = Corruption::constant_pi;
    controls.push_back(check_eif_mean_zero(dgp, mz));
    mz.corruption = Corruption::constant_hazards;
    controls.push_back(check_eif_mean_zero(dgp, mz));
  }
  print_reports(out, checks);
  bool ok = std::all_of(checks.begin(), checks.end(), [](const OracleReport& r) { return r.passed; });
  if (!controls.empty()) {
    out << "negative controls (expected to FAIL):\n";
    print_reports(out, controls);
    ok = ok && std::none_of(controls.begin(), controls.end(), [](const OracleReport& r) { return r.passed; });
  }
  return ok ? 0 : 3;
}

}  // namespace cif
