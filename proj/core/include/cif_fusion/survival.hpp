#pragma once

// Counting-process data model and step-function hazard calculus.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cif {

enum class Cause : int { censored = 0, interest = 1, competing = 2 };

// One observed tuple (time, cause, treatment, population, covariates).
struct EventRecord {
  std::string id;
  double time = 0.0;
  Cause cause = Cause::censored;
  std::optional<int> treat;  // present iff pop == 1
  int pop = 1;               // 1 = trial, 0 = external control
  std::vector<double> covariates;

  // Treatment as observed in the pooled sample (D * A): external controls are 0.
  int arm() const { return treat.value_or(0); }
  bool is_rct() const { return pop == 1; }
};

using RecordFilter = std::function<bool(const EventRecord&)>;

class Cohort {
 public:
  Cohort(std::vector<EventRecord> records, std::size_t covariate_dim, double tau);

  const std::vector<EventRecord>& records() const { return records_; }
  const EventRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  std::size_t covariate_dim() const { return covariate_dim_; }
  double tau() const { return tau_; }
  std::size_t n_rct() const { return n_rct_; }
  std::size_t n_external() const { return records_.size() - n_rct_; }
  double alpha_hat() const { return static_cast<double>(n_rct_) / static_cast<double>(records_.size()); }

 private:
  std::vector<EventRecord> records_;
  std::size_t covariate_dim_;
  double tau_;
  std::size_t n_rct_ = 0;
};

// True when two records with different causes in {1,2} share an event time.
bool has_cross_cause_ties(std::span<const EventRecord> records);

// Right-continuous step function A(t) = sum of jumps at times <= t, every jump in [0, 1].
class CumulativeHazard {
 public:
  CumulativeHazard() = default;
  CumulativeHazard(std::vector<double> jump_times, std::vector<double> jump_sizes);

  double eval(double t) const;
  double eval_left(double t) const;
  double jump_at(double t) const;

  std::span<const double> jump_times() const { return times_; }
  std::span<const double> jump_sizes() const { return sizes_; }
  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }

 private:
  std::vector<double> times_;
  std::vector<double> sizes_;
  std::vector<double> cumulative_;
};

// Pointwise sum; fails if a merged jump exceeds one.
CumulativeHazard operator+(const CumulativeHazard& a, const CumulativeHazard& b);

// (Pi A)(t) = prod over jumps s <= t of (1 - dA(s)).
double product_integral(const CumulativeHazard& a, double t);
// (Pi A)(t-).
double product_integral_left(const CumulativeHazard& a, double t);

// Sum over jumps from < s <= to of f(s) dA(s). The caller supplies left-limit forms explicitly.
template <class Fn>
double stieltjes_integral(Fn&& f, const CumulativeHazard& a, double from, double to) {
  double total = 0.0;
  const auto times = a.jump_times();
  const auto sizes = a.jump_sizes();
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] <= from) continue;
    if (times[k] > to) break;
    total += f(times[k]) * sizes[k];
  }
  return total;
}

// LHS - RHS of the Duhamel equation for (Pi A)(t) - (Pi B)(t).
double duhamel_residual(const CumulativeHazard& a, const CumulativeHazard& b, double t);
// LHS - RHS of the backward equation (Pi A)(t) - 1 = -int (Pi A)_(u,t] dA(u).
double backward_residual(const CumulativeHazard& a, double t);
// LHS - RHS of integration by parts for the product F G over (s, t].
double integration_by_parts_residual(const CumulativeHazard& f, const CumulativeHazard& g, double s,
                                     double t);

// Nelson-Aalen estimate of the cause-specific hazard on the records selected by `subset`.
CumulativeHazard nelson_aalen(const Cohort& cohort, Cause cause, const RecordFilter& subset);

// int_0^t (Pi (A1 + A2))(s-) dA1(s); requires disjoint jump times.
double aalen_johansen(const CumulativeHazard& haz_interest, const CumulativeHazard& haz_competing,
                      double t);

}  // namespace cif
