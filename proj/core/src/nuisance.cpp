#include "cif_fusion/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "cif_fusion/errors.hpp"
#include "cif_fusion/parallel.hpp"

namespace cif {

namespace {

double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double dot_prefix(const Eigen::VectorXd& beta, std::span<const double> x) {
  double acc = 0.0;
  const auto m = std::min<std::size_t>(static_cast<std::size_t>(beta.size()), x.size());
  for (std::size_t j = 0; j < m; ++j) acc += beta[static_cast<Eigen::Index>(j)] * x[j];
  return acc;
}

std::vector<std::size_t> constant_columns(const Eigen::MatrixXd& m) {
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    if (m.rows() == 0 || m.col(j).maxCoeff() == m.col(j).minCoeff()) out.push_back(static_cast<std::size_t>(j));
  return out;
}

Eigen::MatrixXd keep_columns(const Eigen::MatrixXd& m, const std::vector<std::size_t>& keep) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(keep[j]));
  return out;
}

std::vector<std::size_t> complement(std::size_t p, const std::vector<std::size_t>& dropped) {
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < p; ++j)
    if (std::find(dropped.begin(), dropped.end(), j) == dropped.end()) keep.push_back(j);
  return keep;
}

bool is_event(const EventRecord& r, Cause cause) { return r.cause == cause; }

}  // namespace

// ---------------------------------------------------------------- logistic

double LogisticFit::linear_predictor(std::span<const double> x) const {
  return intercept + dot_prefix(coefficients, x);
}

double LogisticFit::predict(std::span<const double> x) const { return expit(linear_predictor(x)); }

LogisticFit LogisticFit::constant(double probability, std::size_t dim) {
  LogisticFit fit;
  fit.intercept = std::log(probability / (1.0 - probability));
  fit.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  fit.converged = true;
  return fit;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& features, const std::vector<int>& labels) {
  const Eigen::Index n = features.rows();
  if (n == 0) throw DataError("logistic fit needs at least one row");
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("features and labels differ in length");
  const auto ones = std::count(labels.begin(), labels.end(), 1);
  if (ones == 0 || ones == n) throw FitError("degenerate labels");

  const auto p = static_cast<std::size_t>(features.cols());
  LogisticFit fit;
  fit.dropped = constant_columns(features);
  const auto keep = complement(p, fit.dropped);
  const auto q = static_cast<Eigen::Index>(keep.size());

  Eigen::MatrixXd design(n, q + 1);
  design.col(0).setOnes();
  design.rightCols(q) = keep_columns(features, keep);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];

  auto loglik = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = design * b;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + e^eta) computed without overflow
      const double sp = eta[i] > 0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
      ll += y[i] * eta[i] - sp;
    }
    return ll;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q + 1);
  beta[0] = std::log(static_cast<double>(ones) / static_cast<double>(n - ones));
  double ll = loglik(beta);
  constexpr int max_iterations = 100;
  for (int it = 0; it <= max_iterations; ++it) {
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd prob(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = expit(eta[i]);
      w[i] = prob[i] * (1.0 - prob[i]);
    }
    const Eigen::VectorXd score = design.transpose() * (y - prob);
    fit.iterations = it;
    if (score.lpNorm<Eigen::Infinity>() < 1e-8) {
      fit.converged = true;
      break;
    }
    if (it == max_iterations) break;
    const Eigen::MatrixXd info = design.transpose() * w.asDiagonal() * design;
    const Eigen::VectorXd step = info.ldlt().solve(score);
    double scale = 1.0;
    Eigen::VectorXd candidate = beta + step;
    double cand_ll = loglik(candidate);
    for (int h = 0; h < 10 && !(cand_ll >= ll); ++h) {
      scale *= 0.5;
      candidate = beta + scale * step;
      cand_ll = loglik(candidate);
    }
    if (!(cand_ll >= ll - 1e-12 * std::abs(ll))) break;
    beta = candidate;
    ll = cand_ll;
    if (beta.norm() > 1e3) throw FitError("separation");
  }
  if (!fit.converged && beta.norm() > 1e3) throw FitError("separation");
  // The score vanishes long before the coefficients diverge when the classes are perfectly split,
  // so a saturated fit that reproduces every label is reported the same way.
  {
    const Eigen::VectorXd eta = design * beta;
    bool saturated = true;
    for (Eigen::Index i = 0; i < n && saturated; ++i) saturated = std::abs(y[i] - expit(eta[i])) < 1e-6;
    if (saturated) throw FitError("separation");
  }

  fit.intercept = beta[0];
  fit.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < keep.size(); ++j)
    fit.coefficients[static_cast<Eigen::Index>(keep[j])] = beta[static_cast<Eigen::Index>(j) + 1];
  return fit;
}

// ---------------------------------------------------------------- Cox

namespace {

struct CoxData {
  Eigen::MatrixXd z;           // selected rows, sorted by decreasing time
  std::vector<double> time;    // same order
  std::vector<char> event;
};

CoxData gather(const Cohort& cohort, const RecordFilter& subset, Cause cause) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < cohort.size(); ++i)
    if (!subset || subset(cohort[i])) rows.push_back(i);
  std::stable_sort(rows.begin(), rows.end(),
                   [&](std::size_t a, std::size_t b) { return cohort[a].time > cohort[b].time; });
  CoxData d;
  const auto p = static_cast<Eigen::Index>(cohort.covariate_dim());
  d.z.resize(static_cast<Eigen::Index>(rows.size()), p);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& rec = cohort[rows[r]];
    for (Eigen::Index j = 0; j < p; ++j) d.z(static_cast<Eigen::Index>(r), j) = rec.covariates[static_cast<std::size_t>(j)];
    d.time.push_back(rec.time);
    d.event.push_back(is_event(rec, cause) ? 1 : 0);
  }
  return d;
}

struct PartialLikelihood {
  double value = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

// Breslow partial likelihood on rows sorted by decreasing time.
PartialLikelihood partial_likelihood(const Eigen::MatrixXd& z, const std::vector<double>& time,
                                     const std::vector<char>& event, const Eigen::VectorXd& beta, bool derivatives) {
  const Eigen::Index q = z.cols();
  const auto n = time.size();
  PartialLikelihood out;
  out.score = Eigen::VectorXd::Zero(q);
  out.information = Eigen::MatrixXd::Zero(q, q);
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(q, q);
  std::size_t i = 0;
  while (i < n) {
    std::size_t end = i;
    double d = 0.0;
    Eigen::VectorXd zsum = Eigen::VectorXd::Zero(q);
    while (end < n && time[end] == time[i]) {
      const auto row = z.row(static_cast<Eigen::Index>(end));
      const double eta = q > 0 ? row.dot(beta) : 0.0;
      const double w = std::exp(eta);
      s0 += w;
      if (derivatives) {
        s1 += w * row.transpose();
        s2.noalias() += w * row.transpose() * row;
      }
      if (event[end]) {
        d += 1.0;
        out.value += eta;
        zsum += row.transpose();
      }
      ++end;
    }
    if (d > 0.0) {
      out.value -= d * std::log(s0);
      if (derivatives) {
        const Eigen::VectorXd mean = s1 / s0;
        out.score += zsum - d * mean;
        out.information += d * (s2 / s0 - mean * mean.transpose());
      }
    }
    i = end;
  }
  return out;
}

}  // namespace

void breslow_baseline(const Cohort& cohort, const RecordFilter& subset, Cause event_cause,
                      const Eigen::VectorXd& beta, std::vector<double>& times, std::vector<double>& jumps) {
  const CoxData d = gather(cohort, subset, event_cause);
  times.clear();
  jumps.clear();
  const auto n = d.time.size();
  double risk = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t end = i;
    double events = 0.0;
    while (end < n && d.time[end] == d.time[i]) {
      const double eta = beta.size() > 0 ? d.z.row(static_cast<Eigen::Index>(end)).dot(beta) : 0.0;
      risk += std::exp(eta);
      events += d.event[end];
      ++end;
    }
    if (events > 0.0) {
      times.push_back(d.time[i]);
      jumps.push_back(events / risk);
    }
    i = end;
  }
  std::reverse(times.begin(), times.end());
  std::reverse(jumps.begin(), jumps.end());
}

CoxFit fit_cox(const Cohort& cohort, const RecordFilter& subset, Cause event_cause, const CoxOptions& options) {
  CoxData d = gather(cohort, subset, event_cause);
  if (d.time.size() < 2) throw FitError("fewer than two records");
  if (std::none_of(d.event.begin(), d.event.end(), [](char e) { return e != 0; })) throw FitError("no events");

  const auto p = static_cast<std::size_t>(d.z.cols());
  CoxFit fit;
  fit.dropped = constant_columns(d.z);
  if (!fit.dropped.empty()) {
    if (options.degenerate == DegenerateColumns::error) throw FitError("degenerate design");
    for (auto j : fit.dropped) fit.warnings.push_back("covariate x" + std::to_string(j + 1) + " has zero variance; dropped");
  }
  const auto keep = complement(p, fit.dropped);
  Eigen::MatrixXd z = keep_columns(d.z, keep);
  const Eigen::RowVectorXd centre = z.colwise().mean();
  z.rowwise() -= centre;
  const Eigen::Index q = z.cols();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  PartialLikelihood pl = partial_likelihood(z, d.time, d.event, beta, true);
  fit.likelihood_path.push_back(pl.value);
  for (int it = 0;; ++it) {
    fit.iterations = it;
    if (q == 0 || pl.score.lpNorm<Eigen::Infinity>() < options.tolerance) {
      fit.converged = true;
      break;
    }
    if (it == options.max_iterations) break;
    const Eigen::VectorXd step = pl.information.ldlt().solve(pl.score);
    if (!step.allFinite()) break;
    double scale = 1.0;
    Eigen::VectorXd candidate = beta + step;
    PartialLikelihood next = partial_likelihood(z, d.time, d.event, candidate, false);
    for (int h = 0; h < 10 && !(next.value >= pl.value); ++h) {
      scale *= 0.5;
      candidate = beta + scale * step;
      next = partial_likelihood(z, d.time, d.event, candidate, false);
    }
    if (!(next.value >= pl.value)) {
      // no ascent left at working precision; accept only if the score is already negligible
      const double tol = 1e-12 * std::max(1.0, std::abs(pl.value));
      if (!(next.value >= pl.value - tol)) break;
    }
    beta = candidate;
    pl = partial_likelihood(z, d.time, d.event, beta, true);
    fit.likelihood_path.push_back(pl.value);
  }
  fit.log_partial_likelihood = pl.value;

  fit.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < keep.size(); ++j)
    fit.coefficients[static_cast<Eigen::Index>(keep[j])] = beta[static_cast<Eigen::Index>(j)];
  breslow_baseline(cohort, subset, event_cause, fit.coefficients, fit.baseline_times, fit.baseline_jumps);
  return fit;
}

// ---------------------------------------------------------------- hazard models

double HazardModel::risk(std::span<const double> x) const { return std::exp(offset + dot_prefix(beta, x)); }

CumulativeHazard HazardModel::at(std::span<const double> x) const {
  const double r = risk(x);
  std::vector<double> sizes(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) sizes[k] = jump(k, r);
  return {times, std::move(sizes)};
}

HazardModel HazardModel::from_fit(const CoxFit& fit, bool clamp) {
  HazardModel m;
  m.times = fit.baseline_times;
  m.increments = fit.baseline_jumps;
  m.beta = fit.coefficients;
  m.clamp = clamp;
  return m;
}

CumulativeHazard predict_cum_hazard(const CoxFit& fit, std::span<const double> x, bool clamp) {
  return HazardModel::from_fit(fit, clamp).at(x);
}

// ---------------------------------------------------------------- nuisance set

double default_weight_cap(std::size_t n) {
  const auto nn = static_cast<double>(n);
  return std::sqrt(nn) * std::log(nn) / 5.0;
}

NuisanceSet fit_nuisances(const Cohort& cohort, const FitOptions& options) {
  NuisanceSet ns;
  ns.alpha_hat = cohort.alpha_hat();
  ns.weight_cap = options.weight_cap.value_or(default_weight_cap(cohort.size()));
  const bool external = cohort.n_external() > 0;
  const auto p = static_cast<Eigen::Index>(cohort.covariate_dim());

  auto rct_ctrl = [](const EventRecord& r) { return r.is_rct() && r.arm() == 0; };
  auto rct_trt = [](const EventRecord& r) { return r.is_rct() && r.arm() == 1; };
  auto ext = [](const EventRecord& r) { return !r.is_rct(); };
  auto control = [](const EventRecord& r) { return r.arm() == 0; };

  struct HazardTask {
    const char* name;
    RecordFilter subset;
    Cause cause;
    HazardModel* out;
    CoxFit fit;
  };
  std::optional<HazardModel> comp_ext, cens_ext;
  if (external) {
    comp_ext.emplace();
    cens_ext.emplace();
  }
  std::vector<HazardTask> tasks = {
      {"interest_pooled", control, Cause::interest, &ns.haz_interest_pooled, {}},
      {"interest_rct_ctrl", rct_ctrl, Cause::interest, &ns.haz_interest_rct_ctrl, {}},
      {"comp_rct_ctrl", rct_ctrl, Cause::competing, &ns.haz_comp_rct_ctrl, {}},
      {"interest_trt", rct_trt, Cause::interest, &ns.haz_interest_trt, {}},
      {"comp_trt", rct_trt, Cause::competing, &ns.haz_comp_trt, {}},
      {"cens_rct_ctrl", rct_ctrl, Cause::censored, &ns.cens_rct_ctrl, {}},
      {"cens_rct_trt", rct_trt, Cause::censored, &ns.cens_rct_trt, {}},
  };
  if (external) {
    tasks.push_back({"comp_ext", ext, Cause::competing, &*comp_ext, {}});
    tasks.push_back({"cens_ext", ext, Cause::censored, &*cens_ext, {}});
  }

  auto tagged = [](const char* name, auto&& body) {
    try {
      body();
    } catch (const DataError& e) {
      throw DataError(std::string(name) + ": " + e.what());
    } catch (const FitError& e) {
      throw FitError(std::string(name) + ": " + e.what());
    }
  };

  // The two logistic fits run as extra tasks after the hazard fits.
  const std::size_t n_tasks = tasks.size() + 2;
  auto run = [&](std::size_t i) {
    if (i < tasks.size()) {
      auto& task = tasks[i];
      tagged(task.name, [&] {
        CoxOptions opts;
        opts.degenerate = DegenerateColumns::drop;
        task.fit = fit_cox(cohort, task.subset, task.cause, opts);
        *task.out = HazardModel::from_fit(task.fit);
      });
    } else if (i == tasks.size()) {
      tagged("e1", [&] {
        std::vector<const EventRecord*> rows;
        for (const auto& r : cohort.records())
          if (r.is_rct()) rows.push_back(&r);
        Eigen::MatrixXd xs(static_cast<Eigen::Index>(rows.size()), p);
        std::vector<int> y;
        for (std::size_t k = 0; k < rows.size(); ++k) {
          for (Eigen::Index j = 0; j < p; ++j) xs(static_cast<Eigen::Index>(k), j) = rows[k]->covariates[static_cast<std::size_t>(j)];
          y.push_back(rows[k]->arm());
        }
        ns.e1 = fit_logistic(xs, y);
      });
    } else if (external) {
      tagged("pi", [&] {
        Eigen::MatrixXd xs(static_cast<Eigen::Index>(cohort.size()), p);
        std::vector<int> y;
        for (std::size_t k = 0; k < cohort.size(); ++k) {
          for (Eigen::Index j = 0; j < p; ++j) xs(static_cast<Eigen::Index>(k), j) = cohort[k].covariates[static_cast<std::size_t>(j)];
          y.push_back(cohort[k].pop);
        }
        ns.pi = fit_logistic(xs, y);
      });
    }
  };
  if (options.parallel) {
    parallel_for(n_tasks, run);
  } else {
    for (std::size_t i = 0; i < n_tasks; ++i) run(i);
  }

  ns.haz_comp_ext = std::move(comp_ext);
  ns.cens_ext = std::move(cens_ext);
  for (const auto& task : tasks) {
    for (const auto& w : task.fit.warnings) ns.warnings.push_back(std::string(task.name) + ": " + w);
    if (!task.fit.converged) ns.unconverged.emplace_back(task.name);
  }
  if (!ns.e1.converged) ns.unconverged.emplace_back("e1");
  if (ns.pi && !ns.pi->converged) ns.unconverged.emplace_back("pi");
  return ns;
}

DerivedQuantities derived_quantities(const NuisanceSet& ns, std::span<const double> x, int arm, Cause cause,
                                     double t, double horizon, Mode mode) {
  if (cause == Cause::censored) throw std::invalid_argument("derived_quantities needs cause 1 or 2");
  if (t > horizon) throw std::invalid_argument("derived_quantities needs t <= horizon");
  const bool fusion = arm == 0 && mode == Mode::fusion;
  if (fusion && !ns.supports_fusion()) throw DataError("fusion mode needs external-control nuisances");

  const HazardModel& m1 = arm == 1 ? ns.haz_interest_trt : (fusion ? ns.haz_interest_pooled : ns.haz_interest_rct_ctrl);
  const HazardModel& m2 = arm == 1 ? ns.haz_comp_trt : ns.haz_comp_rct_ctrl;
  const HazardModel& mc = arm == 1 ? ns.cens_rct_trt : ns.cens_rct_ctrl;
  const CumulativeHazard a1 = m1.at(x), a2 = m2.at(x), ac = mc.at(x);
  const CumulativeHazard& aj = cause == Cause::interest ? a1 : a2;

  auto s1_left = [&](double s) { return product_integral_left(a1, s) * product_integral_left(a2, s); };
  auto cif = [&](double upto) { return stieltjes_integral(s1_left, aj, 0.0, upto); };

  DerivedQuantities q;
  q.S1 = product_integral(a1, t) * product_integral(a2, t);
  q.S1c = product_integral(ac, t);
  q.F1j_at_t = cif(t);
  q.F1j_at_horizon = cif(horizon);

  const double e_arm = arm == 1 ? ns.e1.predict(x) : 1.0 - ns.e1.predict(x);
  q.H_1 = e_arm * s1_left(t) * product_integral_left(ac, t);
  q.H_dot = q.H_1;
  if (ns.haz_comp_ext && ns.cens_ext) {
    const CumulativeHazard a02 = ns.haz_comp_ext->at(x), a0c = ns.cens_ext->at(x);
    q.S0 = product_integral(a1, t) * product_integral(a02, t);
    q.S0c = product_integral(a0c, t);
    if (fusion) {
      const double pi = ns.pi->predict(x);
      const double s0_left = product_integral_left(a1, t) * product_integral_left(a02, t);
      q.H_dot = pi * q.H_1 + (1.0 - pi) * s0_left * product_integral_left(a0c, t);
    }
  }
  if (!(q.H_1 > 0.0) || !(q.H_dot > 0.0)) throw PositivityError("positivity violation at t=" + std::to_string(t));

  const double fj_t = q.F1j_at_t;
  const double s1 = s1_left(t);
  auto w = [&](const CumulativeHazard& ak, bool same) {
    const double denom = 1.0 - ak.jump_at(t);
    const double tail = denom > 0.0 ? (q.F1j_at_horizon - fj_t) / denom : 0.0;
    return (same ? s1 : 0.0) - tail;
  };
  q.W_1j = w(a1, cause == Cause::interest);
  q.W_2j = w(a2, cause == Cause::competing);
  return q;
}

}  // namespace cif
