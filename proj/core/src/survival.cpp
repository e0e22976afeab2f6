#include "cif_fusion/survival.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cif_fusion/errors.hpp"

namespace cif {

Cohort::Cohort(std::vector<EventRecord> records, std::size_t covariate_dim, double tau)
    : records_(std::move(records)), covariate_dim_(covariate_dim), tau_(tau) {
  if (!(tau_ > 0.0) || !std::isfinite(tau_)) throw DataError("tau must be positive and finite");
  for (const auto& r : records_) {
    if (!(r.time > 0.0) || !std::isfinite(r.time))
      throw DataError("record " + r.id + ": time must be positive and finite");
    if (r.pop != 0 && r.pop != 1) throw DataError("record " + r.id + ": pop must be 0 or 1");
    if (r.treat.has_value() != (r.pop == 1))
      throw DataError("record " + r.id + ": treat must be present exactly when pop = 1");
    if (r.treat && *r.treat != 0 && *r.treat != 1)
      throw DataError("record " + r.id + ": treat must be 0 or 1");
    if (r.covariates.size() != covariate_dim_)
      throw DataError("record " + r.id + ": expected " + std::to_string(covariate_dim_) + " covariates");
    if (r.pop == 1) ++n_rct_;
  }
  if (n_rct_ == 0) throw DataError("cohort has no RCT records");
  if (has_cross_cause_ties(records_)) throw DataError("tied cross-cause event times");
}

bool has_cross_cause_ties(std::span<const EventRecord> records) {
  std::vector<std::pair<double, int>> events;
  for (const auto& r : records)
    if (r.cause != Cause::censored) events.emplace_back(r.time, static_cast<int>(r.cause));
  std::sort(events.begin(), events.end());
  for (std::size_t i = 1; i < events.size(); ++i)
    if (events[i].first == events[i - 1].first && events[i].second != events[i - 1].second) return true;
  return false;
}

CumulativeHazard::CumulativeHazard(std::vector<double> jump_times, std::vector<double> jump_sizes)
    : times_(std::move(jump_times)), sizes_(std::move(jump_sizes)) {
  if (times_.size() != sizes_.size())
    throw std::invalid_argument("jump_times and jump_sizes differ in length");
  cumulative_.resize(times_.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < times_.size(); ++k) {
    if (!(times_[k] > 0.0) || !std::isfinite(times_[k]))
      throw std::invalid_argument("jump times must be positive and finite");
    if (k > 0 && !(times_[k] > times_[k - 1]))
      throw std::invalid_argument("jump times must be strictly increasing");
    if (!(sizes_[k] >= 0.0 && sizes_[k] <= 1.0))
      throw std::invalid_argument("jump size outside [0, 1] at t=" + std::to_string(times_[k]));
    acc += sizes_[k];
    cumulative_[k] = acc;
  }
}

double CumulativeHazard::eval(double t) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  return it == times_.begin() ? 0.0 : cumulative_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double CumulativeHazard::eval_left(double t) const {
  const auto it = std::lower_bound(times_.begin(), times_.end(), t);
  return it == times_.begin() ? 0.0 : cumulative_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double CumulativeHazard::jump_at(double t) const {
  const auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.end() || *it != t) return 0.0;
  return sizes_[static_cast<std::size_t>(it - times_.begin())];
}

CumulativeHazard operator+(const CumulativeHazard& a, const CumulativeHazard& b) {
  std::vector<double> times;
  std::vector<double> sizes;
  const auto ta = a.jump_times(), sa = a.jump_sizes();
  const auto tb = b.jump_times(), sb = b.jump_sizes();
  std::size_t i = 0, j = 0;
  while (i < ta.size() || j < tb.size()) {
    if (j == tb.size() || (i < ta.size() && ta[i] < tb[j])) {
      times.push_back(ta[i]);
      sizes.push_back(sa[i++]);
    } else if (i == ta.size() || tb[j] < ta[i]) {
      times.push_back(tb[j]);
      sizes.push_back(sb[j++]);
    } else {
      times.push_back(ta[i]);
      sizes.push_back(sa[i++] + sb[j++]);
    }
  }
  return {std::move(times), std::move(sizes)};
}

namespace {

double product_through(const CumulativeHazard& a, std::size_t count) {
  double p = 1.0;
  const auto sizes = a.jump_sizes();
  for (std::size_t k = 0; k < count; ++k) p *= 1.0 - sizes[k];
  return p;
}

std::size_t count_le(const CumulativeHazard& a, double t) {
  const auto times = a.jump_times();
  return static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
}

std::size_t count_lt(const CumulativeHazard& a, double t) {
  const auto times = a.jump_times();
  return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
}

// Prod over jumps u < s <= t of (1 - dA(s)).
double product_between(const CumulativeHazard& a, double u, double t) {
  double p = 1.0;
  const auto times = a.jump_times();
  const auto sizes = a.jump_sizes();
  for (std::size_t k = count_le(a, u); k < times.size() && times[k] <= t; ++k) p *= 1.0 - sizes[k];
  return p;
}

std::vector<double> union_times(const CumulativeHazard& a, const CumulativeHazard& b, double t) {
  std::vector<double> out;
  for (double s : a.jump_times())
    if (s <= t) out.push_back(s);
  for (double s : b.jump_times())
    if (s <= t) out.push_back(s);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

double product_integral(const CumulativeHazard& a, double t) { return product_through(a, count_le(a, t)); }

double product_integral_left(const CumulativeHazard& a, double t) { return product_through(a, count_lt(a, t)); }

double duhamel_residual(const CumulativeHazard& a, const CumulativeHazard& b, double t) {
  const double lhs = product_integral(a, t) - product_integral(b, t);
  double rhs = 0.0;
  for (double u : union_times(a, b, t))
    rhs += product_integral_left(a, u) * (b.jump_at(u) - a.jump_at(u)) * product_between(b, u, t);
  return lhs - rhs;
}

double backward_residual(const CumulativeHazard& a, double t) {
  const double lhs = product_integral(a, t) - 1.0;
  double rhs = 0.0;
  const auto times = a.jump_times();
  const auto sizes = a.jump_sizes();
  for (std::size_t k = 0; k < times.size() && times[k] <= t; ++k)
    rhs -= product_between(a, times[k], t) * sizes[k];
  return lhs - rhs;
}

double integration_by_parts_residual(const CumulativeHazard& f, const CumulativeHazard& g, double s,
                                     double t) {
  const double lhs = f.eval(t) * g.eval(t) - f.eval(s) * g.eval(s);
  double rhs = 0.0;
  for (double u : union_times(f, g, t)) {
    if (u <= s) continue;
    rhs += f.eval_left(u) * g.jump_at(u) + g.eval(u) * f.jump_at(u);
  }
  return lhs - rhs;
}

CumulativeHazard nelson_aalen(const Cohort& cohort, Cause cause, const RecordFilter& subset) {
  std::map<double, std::pair<std::size_t, std::size_t>> by_time;  // time -> (events, exits)
  std::size_t at_risk = 0;
  for (const auto& r : cohort.records()) {
    if (subset && !subset(r)) continue;
    ++at_risk;
    auto& slot = by_time[r.time];
    ++slot.second;
    if (r.cause == cause) ++slot.first;
  }
  if (at_risk == 0) throw DataError("empty risk set");
  std::vector<double> times, sizes;
  for (const auto& [time, counts] : by_time) {
    if (counts.first > 0) {
      times.push_back(time);
      sizes.push_back(static_cast<double>(counts.first) / static_cast<double>(at_risk));
    }
    at_risk -= counts.second;
  }
  return {std::move(times), std::move(sizes)};
}

double aalen_johansen(const CumulativeHazard& haz_interest, const CumulativeHazard& haz_competing,
                      double t) {
  const auto t1 = haz_interest.jump_times(), s1 = haz_interest.jump_sizes();
  const auto t2 = haz_competing.jump_times(), s2 = haz_competing.jump_sizes();
  double surv = 1.0;
  double cif = 0.0;
  std::size_t i = 0, j = 0;
  while (i < t1.size() || j < t2.size()) {
    const bool take1 = j == t2.size() || (i < t1.size() && t1[i] <= t2[j]);
    const double s = take1 ? t1[i] : t2[j];
    if (s > t) break;
    if (i < t1.size() && j < t2.size() && t1[i] == t2[j] && s1[i] > 0.0 && s2[j] > 0.0)
      throw DataError("tied cross-cause event times");
    if (take1) {
      double d1 = s1[i++];
      double d2 = 0.0;
      if (j < t2.size() && t2[j] == s) d2 = s2[j++];
      cif += surv * d1;
      surv *= 1.0 - d1 - d2;
    } else {
      surv *= 1.0 - s2[j++];
    }
  }
  return cif;
}

}  // namespace cif
