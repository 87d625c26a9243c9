#pragma once

// Exhaustive reference solver over the explicit constraint system. Used as a
// test oracle for the exact solver.

#include <span>

#include "celltrack/constraints.hpp"
#include "celltrack/features.hpp"
#include "celltrack/solve_report.hpp"

namespace celltrack {

inline constexpr std::size_t kBruteForceMaxIndicators = 24;

namespace detail {

// Enumerates assignments in lexicographic order (0 before 1, canonical
// indicator order). A constraint is checked as soon as its last indicator is
// assigned, so only infeasible subtrees are skipped.
class Enumerator {
 public:
  Enumerator(const ConstraintSystem& cs, std::span<const double> costs) : cs_(cs), costs_(costs) {
    const std::size_t n = cs.num_indicators();
    closing_.assign(n + 1, {});
    for (std::size_t k = 0; k < cs.size(); ++k) {
      std::size_t last = 0;
      bool any = false;
      for (auto [i, c] : cs.constraints()[k].terms) {
        last = std::max(last, i);
        any = true;
      }
      closing_[any ? last + 1 : 0].push_back(k);
    }
    y_.assign(n, 0);
  }

  /// Calls visit(y, value) for every feasible assignment in lexicographic
  /// order; visit returns false to stop.
  template <class Visit>
  void run(Visit&& visit) {
    for (auto k : closing_[0])
      if (!cs_.constraints()[k].satisfied_by(y_)) return;
    stop_ = false;
    recurse(0, 0.0, visit);
  }

 private:
  template <class Visit>
  void recurse(std::size_t i, double value, Visit& visit) {
    if (stop_) return;
    if (i == y_.size()) {
      if (!visit(std::as_const(y_), value)) stop_ = true;
      return;
    }
    for (std::uint8_t b = 0; b <= 1 && !stop_; ++b) {
      y_[i] = b;
      bool ok = true;
      for (auto k : closing_[i + 1])
        if (!cs_.constraints()[k].satisfied_by(y_)) {
          ok = false;
          break;
        }
      if (ok) recurse(i + 1, value + (b ? costs_[i] : 0.0), visit);
    }
    y_[i] = 0;
  }

  const ConstraintSystem& cs_;
  std::span<const double> costs_;
  std::vector<std::vector<std::size_t>> closing_;
  IndicatorVector y_;
  bool stop_ = false;
};

}  // namespace detail

/// Exhaustive minimum of sum(costs_i * y_i) over the constraint system.
/// Among tied optima returns the lexicographically smallest y.
inline SolveReport brute_force_solve_costs(std::span<const double> costs, const ConstraintSystem& cs,
                                           std::size_t num_nodes = 0, std::size_t num_edges = 0) {
  Stopwatch clock;
  SolveReport rep;
  rep.num_nodes = num_nodes;
  rep.num_edges = num_edges;
  const std::size_t n = cs.num_indicators();
  if (costs.size() != n) throw std::invalid_argument("brute force: cost vector length mismatch");
  if (n > kBruteForceMaxIndicators)
    throw SolveError("brute force: " + std::to_string(n) + " indicators exceed the limit of " +
                         std::to_string(kBruteForceMaxIndicators),
                     rep);

  double best = std::numeric_limits<double>::infinity();
  detail::Enumerator en(cs, costs);
  en.run([&](const IndicatorVector&, double v) {
    best = std::min(best, v);
    return true;
  });
  if (!std::isfinite(best)) {
    rep.status = SolveStatus::infeasible;
    rep.wall_seconds = clock.seconds();
    return rep;
  }
  const double limit = best + tie_tolerance(best);
  en.run([&](const IndicatorVector& y, double v) {
    if (v <= limit) {
      rep.y = y;
      return false;
    }
    return true;
  });
  rep.objective = linear_value(costs, rep.y);
  rep.status = SolveStatus::optimal;
  rep.wall_seconds = clock.seconds();
  return rep;
}

inline SolveReport brute_force_solve(const CandidateGraph& g, const FeatureMatrix& s, const WeightVector& w,
                                     const ConstraintSystem& cs) {
  const auto costs = s.multiply(w);
  return brute_force_solve_costs(costs, cs, g.num_nodes(), g.num_edges());
}

}  // namespace celltrack
