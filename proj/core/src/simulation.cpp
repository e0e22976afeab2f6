#include "cif_fusion/simulation.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "cif_fusion/errors.hpp"
#include "cif_fusion/parallel.hpp"

namespace cif {

namespace {

double dot3(const std::array<double, 3>& b, std::span<const double> x) { return b[0] * x[0] + b[1] * x[1] + b[2] * x[2]; }

double expit(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

}  // namespace

double LinearPredictor::eval(std::span<const double> cov, int a) const {
  if (intercept == -std::numeric_limits<double>::infinity()) return intercept;
  return intercept + treat * a + dot3(x, cov) + (1 - a) * dot3(control_x, cov);
}

DgpConfig DgpConfig::standard() {
  DgpConfig c;
  c.sigma << 1.0, 0.25, 0.25, 0.25, 1.0, 0.25, 0.25, 0.25, 1.0;
  c.sel_coef = {-0.2, 0.4, 0.2, 0.3};
  c.trt_prob = 0.5;
  c.beta11 = {0.0, 0.5, {0.2, 0.0, 0.7}, {}};
  c.beta12 = {1.0, 0.05, {0.8, 0.5, 0.0}, {}};
  c.beta01 = {0.0, 0.0, {0.2, 0.0, 0.7}, {}};
  c.beta02 = {0.0, 0.0, {0.5, 0.8, -0.3}, {}};
  c.weibull_event = {0.7, 0.2};
  c.weibull_cens = {0.7, 0.24};
  c.cens_coef_rct = {0.5, 0.0, {0.0, 0.0, -0.05}, {0.05, 0.0, 0.0}};
  c.cens_coef_ext = {0.0, 0.0, {0.0, 0.05, 0.0}, {}};
  return c;
}

void DgpConfig::validate() const {
  if (n == 0) throw DataError("dgp: n must be positive");
  if (!sigma.isApprox(sigma.transpose(), 0.0)) throw DataError("dgp: sigma must be symmetric");
  for (int i = 0; i < 3; ++i)
    if (sigma(i, i) != 1.0) throw DataError("dgp: sigma must have unit diagonal");
  if (Eigen::LLT<Eigen::Matrix3d>(sigma).info() != Eigen::Success) throw DataError("dgp: sigma is not positive definite");
  for (const Weibull* w : {&weibull_event, &weibull_cens})
    if (!(w->shape > 0.0) || !(w->scale > 0.0)) throw DataError("dgp: Weibull shape and scale must be positive");
  if (!(trt_prob > 0.0 && trt_prob < 1.0)) throw DataError("dgp: trt_prob must be in (0, 1)");
  if (!(tau > 0.0)) throw DataError("dgp: tau must be positive");
}

double DgpConfig::selection_probability(std::span<const double> x) const {
  return expit(sel_coef[0] + sel_coef[1] * x[0] + sel_coef[2] * x[1] + sel_coef[3] * x[2]);
}

double DgpConfig::event_lp(int cause, std::span<const double> x, int d, int a) const {
  if (d == 1) return (cause == 1 ? beta11 : beta12).eval(x, a);
  return (cause == 1 ? beta01 : beta02).eval(x, 0);
}

double DgpConfig::censoring_lp(std::span<const double> x, int d, int a) const {
  return d == 1 ? cens_coef_rct.eval(x, a) : cens_coef_ext.eval(x, 0);
}

Eigen::MatrixXd sample_covariates(Rng& rng, std::size_t n, const Eigen::Matrix3d& sigma) {
  const Eigen::LLT<Eigen::Matrix3d> llt(sigma);
  if (llt.info() != Eigen::Success) throw DataError("sigma is not positive definite");
  const Eigen::Matrix3d l = llt.matrixL();
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Vector3d z;
    for (int j = 0; j < 3; ++j) z[j] = normal(rng);
    const Eigen::Vector3d y = l * z;
    for (int j = 0; j < 3; ++j) x(i, j) = std::erf(y[j] / std::sqrt(2.0));  // 2 Phi(y) - 1
  }
  return x;
}

Assignment sample_selection_treatment(Rng& rng, std::span<const double> x, const DgpConfig& config) {
  std::uniform_real_distribution<double> unif;
  Assignment out;
  out.pop = unif(rng) < config.selection_probability(x) ? 1 : 0;
  if (out.pop == 1) out.treat = unif(rng) < config.trt_prob ? 1 : 0;
  return out;
}

EventDraw sample_event(Rng& rng, std::span<const double> x, int d, int a, const DgpConfig& config) {
  std::exponential_distribution<double> expo;
  std::uniform_real_distribution<double> unif;
  const double r1 = std::exp(config.event_lp(1, x, d, a));
  const double r2 = std::exp(config.event_lp(2, x, d, a));
  const double e = expo(rng);
  const double u = unif(rng);
  EventDraw out;
  const double total = r1 + r2;
  if (total == 0.0) {
    out.time = std::numeric_limits<double>::infinity();
    return out;
  }
  const auto& w = config.weibull_event;
  out.time = std::pow(e / (w.scale * total), 1.0 / w.shape);
  out.cause = u < r1 / total ? Cause::interest : Cause::competing;
  return out;
}

double sample_censoring(Rng& rng, std::span<const double> x, int d, int a, const DgpConfig& config) {
  std::exponential_distribution<double> expo;
  const double e = expo(rng);
  const double rate = std::exp(config.censoring_lp(x, d, a));
  if (rate == 0.0) return std::numeric_limits<double>::infinity();
  const auto& w = config.weibull_cens;
  return std::pow(e / (w.scale * rate), 1.0 / w.shape);
}

Cohort sample_cohort(const DgpConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const Eigen::MatrixXd x = sample_covariates(rng, config.n, config.sigma);
  std::vector<EventRecord> records;
  records.reserve(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    EventRecord r;
    r.id = std::to_string(i + 1);
    r.covariates = {x(static_cast<Eigen::Index>(i), 0), x(static_cast<Eigen::Index>(i), 1), x(static_cast<Eigen::Index>(i), 2)};
    const Assignment asg = sample_selection_treatment(rng, r.covariates, config);
    r.pop = asg.pop;
    r.treat = asg.treat;
    const EventDraw ev = sample_event(rng, r.covariates, r.pop, r.arm(), config);
    const double c = sample_censoring(rng, r.covariates, r.pop, r.arm(), config);
    if (ev.time <= c) {
      r.time = ev.time;
      r.cause = ev.cause;
    } else {
      r.time = c;
      r.cause = Cause::censored;
    }
    if (!std::isfinite(r.time)) throw DataError("dgp: both event and censoring hazards are disabled");
    records.push_back(std::move(r));
  }
  return Cohort(std::move(records), 3, config.tau);
}

double conditional_cif(const DgpConfig& config, int cause, int arm, std::span<const double> x, double t) {
  const double r1 = std::exp(config.event_lp(1, x, 1, arm));
  const double r2 = std::exp(config.event_lp(2, x, 1, arm));
  const double total = r1 + r2;
  if (total == 0.0 || t <= 0.0) return 0.0;
  const double share = (cause == 1 ? r1 : r2) / total;
  return share * -std::expm1(-total * config.weibull_event.cumulative(t));
}

double conditional_cif_integral(const DgpConfig& config, int cause, int arm, std::span<const double> x, double t) {
  const double r1 = std::exp(config.event_lp(1, x, 1, arm));
  const double r2 = std::exp(config.event_lp(2, x, 1, arm));
  const double total = r1 + r2;
  if (total == 0.0 || t <= 0.0) return 0.0;
  const double share = (cause == 1 ? r1 : r2) / total;
  const double k = config.weibull_event.shape;
  const double c = config.weibull_event.scale * total;
  // int_0^t exp(-c s^k) ds = c^{-1/k} Gamma(1/k) P(1/k, c t^k) / k
  const double survival_area = std::pow(c, -1.0 / k) * std::tgamma(1.0 / k) *
                               boost::math::gamma_p(1.0 / k, c * std::pow(t, k)) / k;
  return share * (t - survival_area);
}

namespace {

// Nodes and weights for expectations under N(0, 1) (Golub-Welsch on probabilists' Hermite).
void hermite_rule(int nodes, std::vector<double>& z, std::vector<double>& w) {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nodes, nodes);
  for (int k = 1; k < nodes; ++k) jac(k, k - 1) = jac(k - 1, k) = std::sqrt(static_cast<double>(k));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jac);
  z.resize(static_cast<std::size_t>(nodes));
  w.resize(static_cast<std::size_t>(nodes));
  for (int k = 0; k < nodes; ++k) {
    z[static_cast<std::size_t>(k)] = eig.eigenvalues()[k];
    const double v = eig.eigenvectors()(0, k);
    w[static_cast<std::size_t>(k)] = v * v;
  }
}

}  // namespace

std::vector<double> true_values(const DgpConfig& config, std::span<const Target> targets, int nodes) {
  config.validate();
  std::vector<double> z, w;
  hermite_rule(nodes, z, w);
  const Eigen::Matrix3d l = Eigen::LLT<Eigen::Matrix3d>(config.sigma).matrixL();
  std::vector<double> acc(targets.size(), 0.0);
  double mass = 0.0;
  const auto m = static_cast<std::size_t>(nodes);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t c = 0; c < m; ++c) {
        const Eigen::Vector3d y = l * Eigen::Vector3d(z[a], z[b], z[c]);
        const double x[3] = {std::erf(y[0] / std::sqrt(2.0)), std::erf(y[1] / std::sqrt(2.0)),
                             std::erf(y[2] / std::sqrt(2.0))};
        const double weight = w[a] * w[b] * w[c] * config.selection_probability(x);
        mass += weight;
        for (std::size_t t = 0; t < targets.size(); ++t) {
          const Target& tg = targets[t];
          auto value = [&](int arm) {
            return tg.family == Family::theta ? conditional_cif(config, tg.cause, arm, x, tg.time)
                                              : conditional_cif_integral(config, tg.cause, arm, x, tg.time);
          };
          double v = 0.0;
          switch (tg.arm) {
            case Arm::control: v = value(0); break;
            case Arm::treated: v = value(1); break;
            case Arm::effect: v = value(1) - value(0); break;
          }
          acc[t] += weight * v;
        }
      }
  for (double& v : acc) v /= mass;
  return acc;
}

namespace {

HazardModel weibull_model(const Weibull& base, const LinearPredictor& lp, int a, double tau, std::size_t points,
                          double offset_fraction) {
  HazardModel m;
  const double h = tau / static_cast<double>(points);
  double prev = 0.0;
  for (std::size_t k = 0; k < points; ++k) {
    const double t = (static_cast<double>(k) + offset_fraction) * h;
    m.times.push_back(t);
    m.increments.push_back(base.cumulative(t) - base.cumulative(prev));
    prev = t;
  }
  m.beta = Eigen::VectorXd(3);
  for (int j = 0; j < 3; ++j) m.beta[j] = lp.x[static_cast<std::size_t>(j)] + (1 - a) * lp.control_x[static_cast<std::size_t>(j)];
  m.offset = lp.intercept == -std::numeric_limits<double>::infinity() ? lp.intercept : lp.intercept + lp.treat * a;
  m.clamp = true;
  return m;
}

// Grid offsets keep the cause-1, cause-2 and censoring jump times disjoint.
constexpr double interest_offset = 1.0, competing_offset = 0.5, cens_offset = 0.75, cens_ext_offset = 0.25;

bool is_rct_ctrl(const EventRecord& r) { return r.is_rct() && r.arm() == 0; }
bool is_rct_trt(const EventRecord& r) { return r.is_rct() && r.arm() == 1; }
bool is_ext(const EventRecord& r) { return !r.is_rct(); }
bool is_control(const EventRecord& r) { return r.arm() == 0; }

}  // namespace

HazardModel exponential_hazard(const Cohort& cohort, const RecordFilter& subset, Cause cause,
                               const std::vector<double>& grid) {
  double events = 0.0, exposure = 0.0;
  for (const auto& r : cohort.records()) {
    if (subset && !subset(r)) continue;
    exposure += r.time;
    if (r.cause == cause) events += 1.0;
  }
  const double rate = exposure > 0.0 ? events / exposure : 0.0;
  HazardModel m;
  m.times = grid;
  double prev = 0.0;
  for (double t : grid) {
    m.increments.push_back(rate * (t - prev));
    prev = t;
  }
  m.clamp = true;
  return m;
}

NuisanceSet mixed_nuisances(const DgpConfig& config, const Cohort& cohort, const CorrectComponents& correct,
                            std::size_t grid_points, std::optional<double> weight_cap) {
  NuisanceSet ns;
  ns.alpha_hat = cohort.alpha_hat();
  ns.weight_cap = weight_cap.value_or(default_weight_cap(cohort.size()));
  const double tau = config.tau;
  const auto& ev = config.weibull_event;
  const auto& ce = config.weibull_cens;

  auto pick = [&](bool truth, HazardModel true_model, const RecordFilter& subset, Cause cause) {
    if (truth) return true_model;
    return exponential_hazard(cohort, subset, cause, true_model.times);
  };
  ns.haz_interest_pooled = pick(correct.interest, weibull_model(ev, config.beta11, 0, tau, grid_points, interest_offset),
                                is_control, Cause::interest);
  ns.haz_interest_rct_ctrl = pick(correct.interest, weibull_model(ev, config.beta11, 0, tau, grid_points, interest_offset),
                                  is_rct_ctrl, Cause::interest);
  ns.haz_interest_trt = pick(correct.interest, weibull_model(ev, config.beta11, 1, tau, grid_points, interest_offset),
                             is_rct_trt, Cause::interest);
  ns.haz_comp_rct_ctrl = pick(correct.comp_rct, weibull_model(ev, config.beta12, 0, tau, grid_points, competing_offset),
                              is_rct_ctrl, Cause::competing);
  ns.haz_comp_trt = pick(correct.comp_rct, weibull_model(ev, config.beta12, 1, tau, grid_points, competing_offset),
                         is_rct_trt, Cause::competing);
  ns.cens_rct_ctrl = pick(correct.censoring, weibull_model(ce, config.cens_coef_rct, 0, tau, grid_points, cens_offset),
                          is_rct_ctrl, Cause::censored);
  ns.cens_rct_trt = pick(correct.censoring, weibull_model(ce, config.cens_coef_rct, 1, tau, grid_points, cens_offset),
                         is_rct_trt, Cause::censored);
  if (cohort.n_external() > 0) {
    ns.haz_comp_ext = pick(correct.comp_ext, weibull_model(ev, config.beta02, 0, tau, grid_points, competing_offset),
                           is_ext, Cause::competing);
    ns.cens_ext = pick(correct.censoring, weibull_model(ce, config.cens_coef_ext, 0, tau, grid_points, cens_ext_offset),
                       is_ext, Cause::censored);
    if (correct.selection) {
      LogisticFit pi;
      pi.intercept = config.sel_coef[0];
      pi.coefficients = Eigen::Vector3d(config.sel_coef[1], config.sel_coef[2], config.sel_coef[3]);
      pi.converged = true;
      ns.pi = pi;
    } else {
      ns.pi = LogisticFit::constant(cohort.alpha_hat(), 3);
    }
  }
  if (correct.treatment) {
    ns.e1 = LogisticFit::constant(config.trt_prob, 3);
  } else {
    double treated = 0.0;
    for (const auto& r : cohort.records()) treated += r.is_rct() ? r.arm() : 0;
    ns.e1 = LogisticFit::constant(treated / static_cast<double>(cohort.n_rct()), 3);
  }
  return ns;
}

NuisanceSet true_nuisances(const DgpConfig& config, const Cohort& cohort, std::size_t grid_points,
                           std::optional<double> weight_cap) {
  return mixed_nuisances(config, cohort, CorrectComponents{}, grid_points, weight_cap);
}

std::vector<Target> standard_targets(const std::vector<double>& times) {
  std::vector<Target> out;
  for (Family f : {Family::theta, Family::gamma})
    for (int cause : {1, 2})
      for (Arm arm : {Arm::control, Arm::treated, Arm::effect})
        for (double t : times) out.push_back({f, cause, arm, t, Mode::fusion});
  return out;
}

SimulationSummary run_study(const DgpConfig& config, const StudyOptions& options) {
  if (options.reps == 0) throw DataError("reps must be at least 1");
  config.validate();
  const std::vector<Mode> modes =
      options.both_modes ? std::vector<Mode>{Mode::fusion, Mode::rct_only} : std::vector<Mode>{Mode::fusion};
  std::vector<Target> all;
  for (const auto& t : options.targets)
    for (Mode m : modes) {
      Target tt = t;
      tt.mode = m;
      all.push_back(tt);
    }
  const std::vector<double> truth = true_values(config, all);

  struct Replicate {
    bool ok = false;
    std::string error;
    std::vector<EstimateReport> reports;
  };
  std::vector<Replicate> reps(options.reps);
  parallel_for(options.reps, [&](std::size_t r) {
    Replicate& out = reps[r];
    try {
      const Cohort cohort = sample_cohort(config, config.seed + r);
      const NuisanceSet ns = options.nuisances ? options.nuisances(cohort) : fit_nuisances(cohort);
      out.reports = estimate_all(cohort, ns, all);
      out.ok = true;
    } catch (const std::runtime_error& e) {
      out.error = "replicate " + std::to_string(r) + ": " + e.what();
    }
  });

  SimulationSummary summary;
  summary.replicates = options.reps;
  for (const auto& r : reps)
    if (!r.ok) {
      ++summary.excluded;
      summary.failures.push_back(r.error);
    }
  const double used = static_cast<double>(options.reps - summary.excluded);
  for (std::size_t k = 0; k < all.size(); ++k) {
    SummaryRow row;
    row.estimand = all[k].estimand();
    row.time = all[k].time;
    row.type = all[k].mode == Mode::fusion ? '+' : '-';
    row.truth = truth[k];
    if (used == 0.0) {
      summary.rows.push_back(row);
      continue;
    }
    double sum = 0.0, sq_err = 0.0, se = 0.0, cover = 0.0, reduction = 0.0;
    const std::size_t partner = row.type == '+' && options.both_modes ? k + 1 : k;
    for (const auto& r : reps) {
      if (!r.ok) continue;
      const auto& rep = r.reports[k];
      sum += rep.estimate;
      sq_err += (rep.estimate - truth[k]) * (rep.estimate - truth[k]);
      se += rep.std_error;
      cover += (rep.ci_low <= truth[k] && truth[k] <= rep.ci_high) ? 1.0 : 0.0;
      const double se_rct = r.reports[partner].std_error;
      if (se_rct > 0.0) reduction += 1.0 - (rep.std_error * rep.std_error) / (se_rct * se_rct);
    }
    row.mean = sum / used;
    double ss = 0.0;
    for (const auto& r : reps)
      if (r.ok) ss += (r.reports[k].estimate - row.mean) * (r.reports[k].estimate - row.mean);
    row.sd = used > 1.0 ? std::sqrt(ss / (used - 1.0)) : 0.0;
    row.bias_1e4 = (row.mean - truth[k]) * 1e4;
    row.rmse_1e2 = std::sqrt(sq_err / used) * 1e2;
    row.se_1e2 = se / used * 1e2;
    row.coverage_pct = cover / used * 100.0;
    if (row.type == '+' && options.both_modes) row.reduction_pct = reduction / used * 100.0;
    summary.rows.push_back(row);
  }
  return summary;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* summary_header = "estimand,time,type,mean,bias_1e4,rmse_1e2,se_1e2,coverage_pct,reduction_pct";

}  // namespace

void write_summary_csv(std::ostream& out, const SimulationSummary& summary) {
  out << summary_header << '\n';
  for (const auto& r : summary.rows) {
    out << r.estimand << ',' << fmt(r.time) << ',' << r.type << ',' << fmt(r.mean) << ',' << fmt(r.bias_1e4) << ','
        << fmt(r.rmse_1e2) << ',' << fmt(r.se_1e2) << ',' << fmt(r.coverage_pct) << ',';
    if (r.reduction_pct) out << fmt(*r.reduction_pct);
    out << '\n';
  }
}

SimulationSummary parse_summary_csv(std::istream& in) {
  SimulationSummary s;
  std::string line;
  if (!std::getline(in, line) || line != summary_header) throw DataError("summary: unexpected header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 9 || cells[2].size() != 1)
      throw DataError("summary line " + std::to_string(lineno) + ": malformed row");
    auto num = [&](const std::string& c) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != c.size() || c.empty())
        throw DataError("summary line " + std::to_string(lineno) + ": bad number '" + c + "'");
      return v;
    };
    SummaryRow r;
    r.estimand = cells[0];
    r.time = num(cells[1]);
    r.type = cells[2][0];
    r.mean = num(cells[3]);
    r.bias_1e4 = num(cells[4]);
    r.rmse_1e2 = num(cells[5]);
    r.se_1e2 = num(cells[6]);
    r.coverage_pct = num(cells[7]);
    if (!cells[8].empty()) r.reduction_pct = num(cells[8]);
    s.rows.push_back(r);
  }
  return s;
}

}  // namespace cif
