#pragma once

// Temporal tiling: solve consecutive frame windows, freezing every decision
// made by earlier windows (including their overlap with the current one).

#include "celltrack/solver.hpp"

namespace celltrack {

struct BlockSpec {
  int block_len = 0;
  int overlap = 0;
};

/// Stitched solution of consecutive temporal blocks. The result is checked
/// against the full constraint system.
inline SolveReport solve_blockwise(const CandidateGraph& g, const FeatureMatrix& s, const WeightVector& w,
                                   const ConstraintSystem& cs, BlockSpec blocks, const SolverLimits& limits = {}) {
  if (blocks.overlap < 1 || blocks.block_len <= blocks.overlap)
    throw std::invalid_argument("solve_blockwise: need block_len > overlap >= 1");
  const IndicatorLayout L(g);
  if (s.rows() != L.size() || cs.num_indicators() != L.size())
    throw std::invalid_argument("solve_blockwise: dimensions do not match the graph");
  Stopwatch clock;
  const auto base = cs.fixings();
  SolveReport rep;
  rep.num_nodes = g.num_nodes();
  rep.num_edges = g.num_edges();
  if (!base) {
    rep.status = SolveStatus::infeasible;
    return rep;
  }
  const auto costs = s.multiply(w);
  const int first = g.first_frame(), last = g.last_frame();
  const int step = blocks.block_len - blocks.overlap;
  IndicatorVector y(L.size(), 0);
  int frozen_until = first - 1;  // frames <= this are final
  std::size_t branch_nodes = 0;

  for (int start = first;; start += step) {
    const int end = start + blocks.block_len - 1;
    Fixings fix = *base;
    auto set = [&](std::size_t i, int v) {
      if (fix[i] >= 0 && fix[i] != v) return false;
      fix[i] = static_cast<std::int8_t>(v);
      return true;
    };
    bool ok = true;
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      const int f = g.node(v).frame;
      for (int b = 0; b < 5; ++b) {
        const std::size_t i = static_cast<std::size_t>(b) * L.nodes + v;
        if (f <= frozen_until) ok &= set(i, y[i]);
        else if (f > end) ok &= set(i, 0);
      }
    }
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      const int fs = g.node(g.edge(e).source).frame;
      const int ft = g.node(g.edge(e).target).frame;
      if (ft <= frozen_until) ok &= set(L.edge(e), y[L.edge(e)]);
      else if (ft > end || fs > end) ok &= set(L.edge(e), 0);
    }
    if (!ok) {
      rep.y = y;
      throw SolveError("solve_blockwise: frozen selections conflict with fixed indicators in block starting at frame " +
                           std::to_string(start),
                       rep);
    }
    const SolveReport r = solve_costs(g, costs, fix, limits);
    branch_nodes += r.branch_nodes;
    if (r.status != SolveStatus::optimal) {
      rep.y = y;
      throw SolveError("solve_blockwise: block starting at frame " + std::to_string(start) + " is infeasible", rep);
    }
    y = r.y;
    if (end >= last) break;
    frozen_until = end;
  }

  rep.y = std::move(y);
  rep.objective = linear_value(costs, rep.y);
  rep.branch_nodes = branch_nodes;
  rep.wall_seconds = clock.seconds();
  if (auto k = cs.first_violation(rep.y))
    throw SolveError("solve_blockwise: stitched assignment violates " + cs.describe(*k), rep);
  rep.status = SolveStatus::optimal;
  return rep;
}

struct BlockwiseComparison {
  SolveReport stitched;
  SolveReport global;
  double gap = 0.0;         ///< stitched objective minus global objective
  bool suboptimal = false;  ///< gap beyond the tie tolerance
};

inline BlockwiseComparison compare_blockwise(const CandidateGraph& g, const FeatureMatrix& s, const WeightVector& w,
                                             const ConstraintSystem& cs, BlockSpec blocks,
                                             const SolverLimits& limits = {}) {
  BlockwiseComparison c;
  c.global = solve(g, s, w, cs, limits);
  c.stitched = solve_blockwise(g, s, w, cs, blocks, limits);
  c.gap = c.stitched.objective - c.global.objective;
  c.suboptimal = c.gap > tie_tolerance(c.global.objective);
  return c;
}

}  // namespace celltrack
