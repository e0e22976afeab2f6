#include "cif_fusion/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>

#include "cif_fusion/errors.hpp"
#include "cif_fusion/parallel.hpp"

namespace cif {

std::string Target::estimand() const {
  std::string s = family == Family::theta ? "theta_" : "gamma_";
  s += std::to_string(cause);
  switch (arm) {
    case Arm::control: return s + "(0)";
    case Arm::treated: return s + "(1)";
    case Arm::effect: return s + "{t}";
  }
  return s;
}

double InfluenceVector::mean() const {
  if (values.empty()) return 0.0;
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

namespace {

// Model slots on the merged grid.
enum Slot : std::size_t { interest = 0, competing = 1, censoring = 2, ext_competing = 3, ext_censoring = 4, n_slots = 5 };

struct PassModels {
  std::array<const HazardModel*, n_slots> model{};
  bool fusion = false;
  int arm = 0;
};

PassModels select_models(const NuisanceSet& ns, int arm, Mode mode) {
  PassModels pm;
  pm.arm = arm;
  pm.fusion = arm == 0 && mode == Mode::fusion;
  if (pm.fusion && !ns.supports_fusion()) throw DataError("fusion mode needs external-control nuisances");
  if (arm == 1) {
    pm.model[interest] = &ns.haz_interest_trt;
    pm.model[competing] = &ns.haz_comp_trt;
    pm.model[censoring] = &ns.cens_rct_trt;
  } else {
    pm.model[interest] = pm.fusion ? &ns.haz_interest_pooled : &ns.haz_interest_rct_ctrl;
    pm.model[competing] = &ns.haz_comp_rct_ctrl;
    pm.model[censoring] = &ns.cens_rct_ctrl;
  }
  if (pm.fusion) {
    pm.model[ext_competing] = &*ns.haz_comp_ext;
    pm.model[ext_censoring] = &*ns.cens_ext;
  }
  return pm;
}

struct Grid {
  std::vector<double> times;
  std::vector<std::array<double, n_slots>> increments;
};

Grid merge_grid(const PassModels& pm, double horizon) {
  std::map<double, std::array<double, n_slots>> merged;
  for (std::size_t m = 0; m < n_slots; ++m) {
    const HazardModel* model = pm.model[m];
    if (!model) continue;
    for (std::size_t k = 0; k < model->times.size(); ++k) {
      if (model->times[k] > horizon) break;
      if (model->increments[k] == 0.0) continue;
      auto [it, inserted] = merged.try_emplace(model->times[k]);
      if (inserted) it->second.fill(0.0);
      it->second[m] = model->increments[k];
    }
  }
  Grid g;
  g.times.reserve(merged.size());
  g.increments.reserve(merged.size());
  for (const auto& [t, inc] : merged) {
    g.times.push_back(t);
    g.increments.push_back(inc);
  }
  return g;
}

struct RecordSetup {
  double f_plugin = 0.0;
  std::array<double, 2> f{};  // record factors of the cause-1 and cause-2 martingale terms
  double pi = 1.0;
  double e_arm = 1.0;
  std::array<double, n_slots> risk{};
};

RecordSetup setup_record(const EventRecord& r, const NuisanceSet& ns, const PassModels& pm) {
  RecordSetup rs;
  const double inv_alpha = 1.0 / ns.alpha_hat;
  const int d = r.pop;
  const int a = r.arm();
  rs.f_plugin = d * inv_alpha;
  const double e1 = ns.e1.predict(r.covariates);
  rs.e_arm = pm.arm == 1 ? e1 : 1.0 - e1;
  if (pm.fusion) {
    rs.pi = ns.pi->predict(r.covariates);
    rs.f[0] = a == 0 ? rs.pi * inv_alpha : 0.0;
    rs.f[1] = (d == 1 && a == 0) ? inv_alpha : 0.0;
  } else {
    const double f = (d == 1 && a == pm.arm) ? inv_alpha : 0.0;
    rs.f = {f, f};
  }
  for (std::size_t m = 0; m < n_slots; ++m)
    if (pm.model[m]) rs.risk[m] = pm.model[m]->risk(r.covariates);
  return rs;
}

double capped_inverse(double h, double cap, const EventRecord& r, double s) {
  if (!(h > 0.0)) {
    throw PositivityError("positivity violation for record " + r.id + " at t=" + std::to_string(s));
  }
  return std::min(1.0 / h, cap);
}

// Walks one record along the merged grid, accumulating the martingale sums in prefix form so
// that every target time, both causes, and both the incidence and its time integral come out of
// a single pass.
class RecordWalker {
 public:
  RecordWalker(const EventRecord& r, const NuisanceSet& ns, const PassModels& pm, const RecordSetup& rs)
      : r_(r), ns_(ns), pm_(pm), rs_(rs) {}

  template <class Snapshot>
  void run(const Grid& grid, std::span<const double> sorted_times, Snapshot&& snapshot) {
    const int ev_cause = static_cast<int>(r_.cause);
    const double horizon = sorted_times.empty() ? 0.0 : sorted_times.back();
    bool ev_pending = ev_cause != 0 && rs_.f[ev_cause - 1] != 0.0 && r_.time <= horizon;
    std::size_t ti = 0;
    auto flush_before = [&](double s) {
      for (;;) {
        const bool tgt = ti < sorted_times.size() && sorted_times[ti] < s;
        const bool ev = ev_pending && r_.time < s;
        if (!tgt && !ev) break;
        if (ev && (!tgt || r_.time <= sorted_times[ti])) {
          off_grid_event(ev_cause);
          ev_pending = false;
        } else {
          emit(sorted_times[ti], ti, snapshot);
          ++ti;
        }
      }
    };
    for (std::size_t g = 0; g < grid.times.size(); ++g) {
      const double s = grid.times[g];
      flush_before(s);
      if (grid_point(s, grid.increments[g], ev_pending ? ev_cause : 0)) ev_pending = false;
    }
    flush_before(std::numeric_limits<double>::infinity());
  }

 private:
  struct Acc {
    double a = 0, b = 0, c = 0, d = 0, e = 0, f = 0;
  };

  double h_for(int k) const {
    const double h1 = rs_.e_arm * s1_ * sc_;
    if (k == 1 && pm_.fusion) return rs_.pi * h1 + (1.0 - rs_.pi) * s0_ * s0c_;
    return h1;
  }

  void add(int k, double measure, double s, double delta_k, const std::array<double, 2>& f_s,
           const std::array<double, 2>& fint_s) {
    const double weight = capped_inverse(h_for(k), ns_.weight_cap, r_, s);
    const double c = rs_.f[k - 1] * weight * measure;
    const double inv = 1.0 - delta_k > 0.0 ? 1.0 / (1.0 - delta_k) : 0.0;
    for (int j = 0; j < 2; ++j) {
      Acc& acc = acc_[j];
      if (k == j + 1) {
        acc.a += c * s1_;
        acc.d += c * s1_ * s;
      }
      acc.b += c * inv;
      acc.c += c * f_s[j] * inv;
      acc.e += c * fint_s[j] * inv;
      acc.f += c * s * f_s[j] * inv;
    }
  }

  void off_grid_event(int k) {
    const double s = r_.time;
    const std::array<double, 2> fint_s = {fint_[0] + f_[0] * (s - last_), fint_[1] + f_[1] * (s - last_)};
    add(k, 1.0, s, 0.0, f_, fint_s);
  }

  // Returns true when the record's own event was consumed at this grid point.
  bool grid_point(double s, const std::array<double, n_slots>& inc, int ev_cause) {
    std::array<double, n_slots> delta{};
    for (std::size_t m = 0; m < n_slots; ++m)
      if (inc[m] != 0.0) {
        const double raw = inc[m] * rs_.risk[m];
        delta[m] = pm_.model[m]->clamp ? clamp_jump(raw) : raw;
      }
    const std::array<double, 2> f_s = {f_[0] + s1_ * delta[interest], f_[1] + s1_ * delta[competing]};
    const std::array<double, 2> fint_s = {fint_[0] + f_[0] * (s - last_), fint_[1] + f_[1] * (s - last_)};

    bool consumed = false;
    if (r_.time >= s) {
      for (int k = 1; k <= 2; ++k) {
        if (rs_.f[k - 1] == 0.0) continue;
        const double dk = delta[k == 1 ? interest : competing];
        double measure = -dk;
        if (ev_cause == k && r_.time == s) {
          measure += 1.0;
          consumed = true;
        }
        if (measure != 0.0) add(k, measure, s, dk, f_s, fint_s);
      }
    }
    f_ = f_s;
    fint_ = fint_s;
    last_ = s;
    s1_ *= (1.0 - delta[interest]) * (1.0 - delta[competing]);
    s0_ *= (1.0 - delta[interest]) * (1.0 - delta[ext_competing]);
    sc_ *= 1.0 - delta[censoring];
    s0c_ *= 1.0 - delta[ext_censoring];
    return consumed;
  }

  template <class Snapshot>
  void emit(double t, std::size_t ti, Snapshot& snapshot) {
    for (int j = 0; j < 2; ++j) {
      const Acc& acc = acc_[j];
      const double ft = f_[j];
      const double fint_t = fint_[j] + f_[j] * (t - last_);
      const double theta = acc.a - ft * acc.b + acc.c + rs_.f_plugin * ft;
      const double gamma = t * acc.a - acc.d - fint_t * acc.b + acc.e + t * acc.c - acc.f + rs_.f_plugin * fint_t;
      snapshot(ti, j, theta, gamma, rs_.f_plugin * ft, rs_.f_plugin * fint_t, rs_.f_plugin * s1_);
    }
  }

  const EventRecord& r_;
  const NuisanceSet& ns_;
  const PassModels& pm_;
  const RecordSetup& rs_;
  double s1_ = 1.0, s0_ = 1.0, sc_ = 1.0, s0c_ = 1.0;
  std::array<double, 2> f_{}, fint_{};
  double last_ = 0.0;
  std::array<Acc, 2> acc_{};
};

void check_times(const Cohort& cohort, std::span<const double> times) {
  for (double t : times)
    if (!(t >= 0.0) || t > cohort.tau())
      throw DataError("target time " + std::to_string(t) + " outside [0, tau]");
}

}  // namespace

InfluenceTable influence_table(const Cohort& cohort, const NuisanceSet& ns, int arm, Mode mode,
                               std::span<const double> times) {
  check_times(cohort, times);
  const PassModels pm = select_models(ns, arm, mode);

  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  std::vector<double> sorted(times.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = times[order[i]];
  const Grid grid = merge_grid(pm, sorted.empty() ? 0.0 : sorted.back());

  InfluenceTable table;
  table.arm = arm;
  table.mode = mode;
  table.times.assign(times.begin(), times.end());
  const std::size_t n = cohort.size();
  const std::vector<std::vector<double>> zeros(times.size(), std::vector<double>(n, 0.0));
  for (int j = 0; j < 2; ++j) {
    table.theta[j] = zeros;
    table.gamma[j] = zeros;
    table.plugin_theta[j] = zeros;
    table.plugin_gamma[j] = zeros;
  }
  table.plugin_survival = zeros;

  parallel_for(n, [&](std::size_t i) {
    const EventRecord& r = cohort[i];
    const RecordSetup rs = setup_record(r, ns, pm);
    if (rs.f_plugin == 0.0 && rs.f[0] == 0.0 && rs.f[1] == 0.0) return;
    RecordWalker walker(r, ns, pm, rs);
    walker.run(grid, sorted, [&](std::size_t ti, int j, double theta, double gamma, double pt, double pg, double ps) {
      const std::size_t slot = order[ti];
      table.theta[j][slot][i] = theta;
      table.gamma[j][slot][i] = gamma;
      table.plugin_theta[j][slot][i] = pt;
      table.plugin_gamma[j][slot][i] = pg;
      if (j == 0) table.plugin_survival[slot][i] = ps;
    });
  });
  return table;
}

namespace {

InfluenceVector from_table(const InfluenceTable& table, Family family, int cause, std::size_t ti) {
  InfluenceVector iv;
  const std::size_t j = static_cast<std::size_t>(cause - 1);
  iv.values = family == Family::theta ? table.theta[j][ti] : table.gamma[j][ti];
  iv.plugin = family == Family::theta ? table.plugin_theta[j][ti] : table.plugin_gamma[j][ti];
  return iv;
}

void check_target(const Target& t) {
  if (t.cause != 1 && t.cause != 2) throw DataError("target cause must be 1 or 2");
}

}  // namespace

InfluenceVector influence_theta(const Cohort& cohort, const NuisanceSet& ns, int arm, Cause cause, double t,
                                Mode mode) {
  Target target{Family::theta, static_cast<int>(cause), arm == 1 ? Arm::treated : Arm::control, t, mode};
  return influence(cohort, ns, target);
}

InfluenceVector influence_gamma(const Cohort& cohort, const NuisanceSet& ns, int arm, Cause cause, double t,
                                Mode mode) {
  Target target{Family::gamma, static_cast<int>(cause), arm == 1 ? Arm::treated : Arm::control, t, mode};
  return influence(cohort, ns, target);
}

InfluenceVector influence(const Cohort& cohort, const NuisanceSet& ns, const Target& target) {
  std::vector<InfluenceVector> out;
  estimate_all(cohort, ns, std::span<const Target>(&target, 1), &out);
  return std::move(out.front());
}

EstimateReport summarize(const Cohort& cohort, const InfluenceVector& iv) {
  if (iv.values.size() != cohort.size()) throw std::invalid_argument("influence length differs from cohort size");
  EstimateReport rep;
  rep.target = iv.target;
  rep.n_used = cohort.size();
  rep.estimate = iv.mean();
  const auto n = static_cast<double>(cohort.size());
  rep.std_error = std::sqrt(influence_second_moment(cohort, iv)) / std::sqrt(n);
  rep.ci_low = rep.estimate - wald_z * rep.std_error;
  rep.ci_high = rep.estimate + wald_z * rep.std_error;
  return rep;
}

double influence_second_moment(const Cohort& cohort, const InfluenceVector& iv) {
  const double est = iv.mean();
  const double inv_alpha = 1.0 / cohort.alpha_hat();
  double total = 0.0;
  for (std::size_t i = 0; i < iv.values.size(); ++i) {
    const double phi = iv.values[i] - cohort[i].pop * inv_alpha * est;
    total += phi * phi;
  }
  return total / static_cast<double>(iv.values.size());
}

EstimateReport estimate(const Cohort& cohort, const NuisanceSet& ns, const Target& target) {
  return estimate_all(cohort, ns, std::span<const Target>(&target, 1)).front();
}

std::vector<EstimateReport> estimate_all(const Cohort& cohort, const NuisanceSet& ns,
                                         std::span<const Target> targets,
                                         std::vector<InfluenceVector>* influence_out) {
  std::vector<double> times;
  for (const auto& t : targets) {
    check_target(t);
    times.push_back(t.time);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  auto time_index = [&](double t) {
    return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
  };

  // One pass per (arm, mode); the treated arm does not depend on the mode.
  std::optional<InfluenceTable> control_fusion, control_rct, treated;
  auto control_table = [&](Mode mode) -> const InfluenceTable& {
    auto& slot = mode == Mode::fusion ? control_fusion : control_rct;
    if (!slot) slot = influence_table(cohort, ns, 0, mode, times);
    return *slot;
  };
  auto treated_table = [&]() -> const InfluenceTable& {
    if (!treated) treated = influence_table(cohort, ns, 1, Mode::rct_only, times);
    return *treated;
  };

  std::vector<EstimateReport> reports;
  if (influence_out) influence_out->clear();
  for (const auto& target : targets) {
    const std::size_t ti = time_index(target.time);
    InfluenceVector iv;
    switch (target.arm) {
      case Arm::control: iv = from_table(control_table(target.mode), target.family, target.cause, ti); break;
      case Arm::treated: iv = from_table(treated_table(), target.family, target.cause, ti); break;
      case Arm::effect: {
        iv = from_table(treated_table(), target.family, target.cause, ti);
        const InfluenceVector ctrl = from_table(control_table(target.mode), target.family, target.cause, ti);
        for (std::size_t i = 0; i < iv.values.size(); ++i) {
          iv.values[i] -= ctrl.values[i];
          iv.plugin[i] -= ctrl.plugin[i];
        }
        break;
      }
    }
    iv.target = target;
    reports.push_back(summarize(cohort, iv));
    if (influence_out) influence_out->push_back(std::move(iv));
  }
  return reports;
}

ReductionReport variance_reduction(const Cohort& cohort, const NuisanceSet& ns, double t) {
  const double times[] = {t};
  check_times(cohort, times);
  const PassModels pm = select_models(ns, 0, Mode::fusion);
  const Grid grid = merge_grid(pm, t);
  const double inv_alpha = 1.0 / ns.alpha_hat;
  std::vector<double> per_record(cohort.size(), 0.0);

  parallel_for(cohort.size(), [&](std::size_t i) {
    const EventRecord& r = cohort[i];
    const RecordSetup rs = setup_record(r, ns, pm);
    const double pi = rs.pi;
    if (pi * (1.0 - pi) == 0.0) return;
    double s1 = 1.0, s0 = 1.0, sc = 1.0, s0c = 1.0, f = 0.0;
    double uu = 0.0, uv = 0.0, vv = 0.0;
    for (std::size_t g = 0; g < grid.times.size(); ++g) {
      const auto& inc = grid.increments[g];
      std::array<double, n_slots> delta{};
      for (std::size_t m = 0; m < n_slots; ++m)
        if (inc[m] != 0.0) {
          const double raw = inc[m] * rs.risk[m];
          delta[m] = pm.model[m]->clamp ? clamp_jump(raw) : raw;
        }
      const double d1 = delta[interest];
      const double f_s = f + s1 * d1;
      if (d1 > 0.0) {
        const double h1 = rs.e_arm * s1 * sc;
        const double hdot = pi * h1 + (1.0 - pi) * s0 * s0c;
        const double w = s0 * s0c * capped_inverse(h1, ns.weight_cap, r, grid.times[g]) *
                         capped_inverse(hdot, ns.weight_cap, r, grid.times[g]) * (1.0 - d1) * d1;
        const double inv = 1.0 - d1 > 0.0 ? 1.0 / (1.0 - d1) : 0.0;
        const double u = s1 + f_s * inv;
        uu += w * u * u;
        uv += w * u * inv;
        vv += w * inv * inv;
      }
      f = f_s;
      s1 *= (1.0 - d1) * (1.0 - delta[competing]);
      s0 *= (1.0 - d1) * (1.0 - delta[ext_competing]);
      sc *= 1.0 - delta[censoring];
      s0c *= 1.0 - delta[ext_censoring];
    }
    const double w2 = uu - 2.0 * f * uv + f * f * vv;
    per_record[i] = pi * (1.0 - pi) * inv_alpha * inv_alpha * w2;
  });

  ReductionReport rep;
  double total = 0.0;
  for (double v : per_record) total += v;
  rep.reduction_estimate = total / static_cast<double>(cohort.size());
  const InfluenceVector rct = influence_theta(cohort, ns, 0, Cause::interest, t, Mode::rct_only);
  const double rct_var = influence_second_moment(cohort, rct);
  rep.relative = rct_var > 0.0 ? rep.reduction_estimate / rct_var : 0.0;
  return rep;
}

}  // namespace cif
