#pragma once

// Explicit linear constraint system over the indicator vector.

#include <optional>
#include <span>

#include "celltrack/types.hpp"

namespace celltrack {

enum class Relation : std::uint8_t { less_equal, equal, greater_equal };

enum class ConstraintKind : std::uint8_t {
  edge_needs_source,    // y_edge <= y_node(u)
  edge_needs_target,    // y_edge <= y_node(v)
  single_parent,        // sum of incoming edges <= 1
  binary_branching,     // sum of outgoing edges <= 2
  track_start_lower,    // y_track >= y_node - sum incoming
  track_start_upper,    // y_track <= y_node
  one_state,            // parent + daughter + continue - node = 0
  parent_to_daughter,   // parent(u) + edge - daughter(v) <= 1
  daughter_from_parent, // daughter(v) + edge - parent(u) <= 1
  division_is_parent,   // sum outgoing - 1 <= parent(u)
  fixed                 // y_i = value
};

inline const char* to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::edge_needs_source: return "edge-needs-source";
    case ConstraintKind::edge_needs_target: return "edge-needs-target";
    case ConstraintKind::single_parent: return "single-parent";
    case ConstraintKind::binary_branching: return "binary-branching";
    case ConstraintKind::track_start_lower: return "track-start-lower";
    case ConstraintKind::track_start_upper: return "track-start-upper";
    case ConstraintKind::one_state: return "one-state";
    case ConstraintKind::parent_to_daughter: return "parent-to-daughter";
    case ConstraintKind::daughter_from_parent: return "daughter-from-parent";
    case ConstraintKind::division_is_parent: return "division-is-parent";
    case ConstraintKind::fixed: return "fixed";
  }
  return "?";
}

struct LinearConstraint {
  std::vector<std::pair<std::size_t, int>> terms;  // (indicator, coefficient)
  Relation relation = Relation::less_equal;
  int bound = 0;
  ConstraintKind kind = ConstraintKind::fixed;
  std::size_t anchor = 0;  // node or edge index the constraint was emitted for

  bool satisfied_by(std::span<const std::uint8_t> y) const {
    int lhs = 0;
    for (auto [i, c] : terms) lhs += c * static_cast<int>(y[i]);
    switch (relation) {
      case Relation::less_equal: return lhs <= bound;
      case Relation::equal: return lhs == bound;
      case Relation::greater_equal: return lhs >= bound;
    }
    return false;
  }
};

class ConstraintSystem {
 public:
  ConstraintSystem() = default;
  explicit ConstraintSystem(std::size_t num_indicators) : size_(num_indicators) {}

  std::size_t num_indicators() const { return size_; }
  const std::vector<LinearConstraint>& constraints() const { return constraints_; }
  std::size_t size() const { return constraints_.size(); }

  void add(LinearConstraint c) {
    for (auto [i, coef] : c.terms)
      if (i >= size_)
        throw std::out_of_range("constraint references indicator " + std::to_string(i) + " out of range " +
                                std::to_string(size_));
    constraints_.push_back(std::move(c));
  }

  /// Appends y_i = value.
  void fix(std::size_t i, bool value) {
    add({{{i, 1}}, Relation::equal, value ? 1 : 0, ConstraintKind::fixed, i});
  }

  /// Unit equalities as a per-indicator vector (-1 = free). Conflicting unit
  /// equalities yield std::nullopt.
  std::optional<std::vector<std::int8_t>> fixings() const {
    std::vector<std::int8_t> f(size_, -1);
    for (const auto& c : constraints_) {
      if (c.terms.size() != 1 || c.relation != Relation::equal || c.terms[0].second != 1) continue;
      const std::size_t i = c.terms[0].first;
      if (c.bound != 0 && c.bound != 1) return std::nullopt;
      if (f[i] >= 0 && f[i] != c.bound) return std::nullopt;
      f[i] = static_cast<std::int8_t>(c.bound);
    }
    return f;
  }

  /// Index of the first violated constraint, if any.
  std::optional<std::size_t> first_violation(std::span<const std::uint8_t> y) const {
    if (y.size() != size_) throw std::invalid_argument("constraint check: indicator length mismatch");
    for (std::size_t k = 0; k < constraints_.size(); ++k)
      if (!constraints_[k].satisfied_by(y)) return k;
    return std::nullopt;
  }

  bool feasible(std::span<const std::uint8_t> y) const {
    for (auto v : y)
      if (v > 1) return false;
    return !first_violation(y).has_value();
  }

  std::string describe(std::size_t k) const {
    const auto& c = constraints_[k];
    std::ostringstream os;
    os << to_string(c.kind) << " #" << c.anchor << ":";
    for (auto [i, coef] : c.terms) os << ' ' << (coef >= 0 ? "+" : "") << coef << "*y[" << i << ']';
    os << (c.relation == Relation::less_equal ? " <= " : c.relation == Relation::equal ? " = " : " >= ") << c.bound;
    return os.str();
  }

 private:
  std::size_t size_ = 0;
  std::vector<LinearConstraint> constraints_;
};

/// Base feasibility constraints plus the cell-state constraints for the
/// canonical indicator order of `g`.
inline ConstraintSystem build_constraints(const CandidateGraph& g) {
  const IndicatorLayout L(g);
  ConstraintSystem cs(L.size());
  const std::size_t n = g.num_nodes();

  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const auto& ed = g.edge(e);
    cs.add({{{L.edge(e), 1}, {L.node(ed.source), -1}}, Relation::less_equal, 0, ConstraintKind::edge_needs_source, e});
    cs.add({{{L.edge(e), 1}, {L.node(ed.target), -1}}, Relation::less_equal, 0, ConstraintKind::edge_needs_target, e});
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (!g.in_edges(v).empty()) {
      LinearConstraint c{{}, Relation::less_equal, 1, ConstraintKind::single_parent, v};
      for (auto e : g.in_edges(v)) c.terms.emplace_back(L.edge(e), 1);
      cs.add(std::move(c));
    }
    if (g.out_edges(v).size() > 2) {
      LinearConstraint c{{}, Relation::less_equal, 2, ConstraintKind::binary_branching, v};
      for (auto e : g.out_edges(v)) c.terms.emplace_back(L.edge(e), 1);
      cs.add(std::move(c));
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    // y_track - y_node + sum_in y_edge >= 0
    LinearConstraint lo{{{L.track(v), 1}, {L.node(v), -1}}, Relation::greater_equal, 0,
                        ConstraintKind::track_start_lower, v};
    for (auto e : g.in_edges(v)) lo.terms.emplace_back(L.edge(e), 1);
    cs.add(std::move(lo));
    cs.add({{{L.track(v), 1}, {L.node(v), -1}}, Relation::less_equal, 0, ConstraintKind::track_start_upper, v});
  }
  for (std::size_t v = 0; v < n; ++v) {
    cs.add({{{L.parent(v), 1}, {L.daughter(v), 1}, {L.continuation(v), 1}, {L.node(v), -1}},
            Relation::equal,
            0,
            ConstraintKind::one_state,
            v});
  }
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const auto& ed = g.edge(e);
    cs.add({{{L.parent(ed.source), 1}, {L.edge(e), 1}, {L.daughter(ed.target), -1}},
            Relation::less_equal,
            1,
            ConstraintKind::parent_to_daughter,
            e});
    cs.add({{{L.daughter(ed.target), 1}, {L.edge(e), 1}, {L.parent(ed.source), -1}},
            Relation::less_equal,
            1,
            ConstraintKind::daughter_from_parent,
            e});
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (g.out_edges(v).size() < 2) continue;
    // sum_out y_edge - y_parent <= 1
    LinearConstraint c{{}, Relation::less_equal, 1, ConstraintKind::division_is_parent, v};
    for (auto e : g.out_edges(v)) c.terms.emplace_back(L.edge(e), 1);
    c.terms.emplace_back(L.parent(v), -1);
    cs.add(std::move(c));
  }
  return cs;
}

}  // namespace celltrack
