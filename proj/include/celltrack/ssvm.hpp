#pragma once

// Structured-SVM weight learning: best-effort targets, Hamming loss,
// loss-augmented inference, subgradient fitting and the grid-search baseline.

#include "celltrack/assignment.hpp"
#include "celltrack/decode.hpp"
#include "celltrack/evaluation.hpp"
#include "celltrack/solver.hpp"

namespace celltrack {

/// Per-block costs for false positives (target 0, picked 1) and false
/// negatives (target 1, picked 0). Blocks follow IndicatorBlock.
struct HammingCosts {
  std::array<double, kNumBlocks> fp{1, 1, 1, 1, 1, 1};
  std::array<double, kNumBlocks> fn{1, 1, 1, 1, 1, 1};

  static HammingCosts uniform(double c_fp, double c_fn) {
    HammingCosts h;
    h.fp.fill(c_fp);
    h.fn.fill(c_fn);
    h.check();
    return h;
  }

  void check() const {
    for (int b = 0; b < kNumBlocks; ++b)
      if (!(fp[b] >= 0.0) || !(fn[b] >= 0.0) || !std::isfinite(fp[b]) || !std::isfinite(fn[b]))
        throw std::invalid_argument("Hamming costs must be finite and non-negative");
  }
};

inline double hamming(std::span<const std::uint8_t> yp, std::span<const std::uint8_t> y, const IndicatorLayout& layout,
                      const HammingCosts& costs) {
  if (yp.size() != y.size() || y.size() != layout.size())
    throw std::invalid_argument("hamming: length mismatch (" + std::to_string(yp.size()) + " vs " +
                                std::to_string(y.size()) + ")");
  double d = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (yp[i] == y[i]) continue;
    const auto b = static_cast<std::size_t>(layout.block_of(i));
    d += yp[i] ? costs.fn[b] : costs.fp[b];
  }
  return d;
}

// ---------------------------------------------------------------------------
// Best-effort target

struct BestEffort {
  IndicatorVector y;
  std::vector<std::size_t> gt_to_node;  ///< candidate node per GT node index, or kUnmatched
  std::vector<std::int64_t> unmatched_gt;
  std::vector<std::pair<std::int64_t, std::int64_t>> unreachable_edges;  ///< GT (parent id, child id)
};

/// Feasible indicator vector closest to ground truth given the candidates.
inline BestEffort best_effort(const CandidateGraph& g, const LineageForest& gt, double match_radius = 15.0) {
  if (!(match_radius >= 0.0)) throw std::invalid_argument("best_effort: radius must be non-negative");
  const IndicatorLayout L(g);
  BestEffort be;
  be.y.assign(L.size(), 0);
  be.gt_to_node.assign(gt.num_nodes(), kUnmatched);
  std::vector<std::size_t> node_to_gt(g.num_nodes(), kUnmatched);

  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> frames;
  for (std::size_t j = 0; j < gt.num_nodes(); ++j) frames[gt.node(j).frame].first.push_back(j);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) frames[g.node(v).frame].second.push_back(v);
  for (const auto& [f, sides] : frames) {
    const auto& [gs, cs] = sides;
    if (gs.empty() || cs.empty()) continue;
    std::vector<std::vector<double>> cost(gs.size(), std::vector<double>(cs.size(), kForbidden));
    for (std::size_t a = 0; a < gs.size(); ++a)
      for (std::size_t b = 0; b < cs.size(); ++b) {
        const double d = distance(gt.node(gs[a]).position, g.node(cs[b]).position);
        if (d <= match_radius) cost[a][b] = d;
      }
    const auto assign = max_matching_min_cost(cost);
    for (std::size_t a = 0; a < gs.size(); ++a) {
      if (assign[a] < 0) continue;
      const std::size_t v = cs[static_cast<std::size_t>(assign[a])];
      be.gt_to_node[gs[a]] = v;
      node_to_gt[v] = gs[a];
    }
  }
  for (std::size_t j = 0; j < gt.num_nodes(); ++j)
    if (be.gt_to_node[j] == kUnmatched) be.unmatched_gt.push_back(gt.node(j).id);

  auto gt_state = [&](std::size_t j) {
    if (gt.children_of(j).size() == 2) return CellState::parent;
    const std::size_t p = gt.parent_of(j);
    if (p != LineageForest::npos && gt.children_of(p).size() == 2) return CellState::daughter;
    return CellState::continuation;
  };
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (node_to_gt[v] == kUnmatched) continue;
    be.y[L.node(v)] = 1;
    be.y[L.state(v, gt_state(node_to_gt[v]))] = 1;
  }
  for (auto [p, c] : gt.edges()) {
    const std::size_t u = be.gt_to_node[p], v = be.gt_to_node[c];
    const std::size_t e = (u == kUnmatched || v == kUnmatched) ? CandidateGraph::npos : g.find_edge(u, v);
    if (e == CandidateGraph::npos)
      be.unreachable_edges.emplace_back(gt.node(p).id, gt.node(c).id);
    else
      be.y[L.edge(e)] = 1;
  }

  // Repair: drop selected edges involved in a violated constraint until the
  // vector is feasible. Node states are never changed.
  const ConstraintSystem cs = build_constraints(g);
  auto set_tracks = [&] {
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      bool linked = false;
      for (auto e : g.in_edges(v)) linked |= be.y[L.edge(e)] != 0;
      be.y[L.track(v)] = be.y[L.node(v)] && !linked;
    }
  };
  set_tracks();
  while (auto k = cs.first_violation(be.y)) {
    std::size_t drop = CandidateGraph::npos;
    for (auto [i, coef] : cs.constraints()[*k].terms)
      if (L.block_of(i) == IndicatorBlock::edge && be.y[i]) drop = i;
    if (drop == CandidateGraph::npos)
      throw std::logic_error("best_effort: cannot repair " + cs.describe(*k));
    be.y[drop] = 0;
    const auto& ed = g.edge(L.element_of(drop));
    be.unreachable_edges.emplace_back(gt.node(node_to_gt[ed.source]).id, gt.node(node_to_gt[ed.target]).id);
    warn("best_effort: dropped GT edge " + std::to_string(gt.node(node_to_gt[ed.source]).id) + "->" +
         std::to_string(gt.node(node_to_gt[ed.target]).id) + " to keep the target feasible");
    set_tracks();
  }
  std::sort(be.unreachable_edges.begin(), be.unreachable_edges.end());
  return be;
}

// ---------------------------------------------------------------------------
// Loss-augmented inference and the sSVM loss

/// argmin over feasible y of <S w, y> - Delta(y', y). The reported objective
/// includes the constant part of -Delta. Any optimal y may be returned.
inline SolveReport loss_augmented_solve(const CandidateGraph& g, const FeatureMatrix& s, const WeightVector& w,
                                        const ConstraintSystem& cs, std::span<const std::uint8_t> yp,
                                        const HammingCosts& costs, const SolverLimits& limits = {}) {
  const IndicatorLayout L(g);
  if (yp.size() != L.size()) throw std::invalid_argument("loss_augmented_solve: target length mismatch");
  costs.check();
  auto c = s.multiply(w);
  double constant = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto b = static_cast<std::size_t>(L.block_of(i));
    if (yp[i]) {
      c[i] += costs.fn[b];
      constant -= costs.fn[b];
    } else {
      c[i] -= costs.fp[b];
    }
  }
  SolverLimits lim = limits;
  lim.lexicographic_ties = false;
  SolveReport rep = solve_with_costs(g, c, cs, lim);
  if (rep.status == SolveStatus::optimal) rep.objective += constant;
  return rep;
}

struct LossValue {
  double loss = 0.0;
  std::array<double, 8> subgradient{};
  IndicatorVector y_hat;
  double delta = 0.0;  ///< Delta(y', y_hat)
};

/// L(w) = <S w, y'> - min_y [<S w, y> - Delta(y', y)] + lambda |w|^2 and the
/// subgradient S^T y' - S^T y_hat + 2 lambda w.
inline LossValue ssvm_loss(const CandidateGraph& g, const FeatureMatrix& s, const ConstraintSystem& cs,
                           std::span<const std::uint8_t> yp, const HammingCosts& costs, const WeightVector& w,
                           double lambda, const SolverLimits& limits = {}) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("ssvm_loss: lambda must be non-negative");
  const SolveReport r = loss_augmented_solve(g, s, w, cs, yp, costs, limits);
  if (r.status != SolveStatus::optimal) throw std::runtime_error("ssvm_loss: loss-augmented problem is infeasible");
  LossValue out;
  out.y_hat = r.y;
  out.delta = hamming(yp, r.y, IndicatorLayout(g), costs);
  out.loss = objective_value(s, w, yp) - r.objective + lambda * w.squared_norm();
  const auto a = s.transpose_multiply(yp);
  const auto b = s.transpose_multiply(r.y);
  for (int k = 0; k < 8; ++k) out.subgradient[k] = a[k] - b[k] + 2.0 * lambda * w[k];
  return out;
}

// ---------------------------------------------------------------------------
// Fitting

struct LearnConfig {
  double lambda = 0.001;
  int max_iters = 500;
  double eta0 = 1.0;       ///< initial step length, in units of the largest Hamming cost
  double kappa = 50.0;     ///< step decay: eta_k = eta0 / (1 + k / kappa)
  double tolerance = 1e-6; ///< relative improvement that resets patience
  int patience = 100;
  int divergence_window = 60;  ///< consecutive increases of L treated as divergence
  /// Starting point. At w = 0 loss-augmented inference only maximizes the
  /// disagreement with y', a highly symmetric problem that is slow to solve
  /// exactly on large graphs, so the default is a plain tracking prior.
  WeightVector initial{{-1.0, -1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.1}};

  void check() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("learn config: lambda must be non-negative");
    if (max_iters < 0) throw std::invalid_argument("learn config: max_iters must be non-negative");
    if (!(eta0 > 0.0) || !(kappa > 0.0)) throw std::invalid_argument("learn config: step parameters must be positive");
    if (!(tolerance >= 0.0) || patience < 1 || divergence_window < 1)
      throw std::invalid_argument("learn config: invalid stopping rule");
    initial.check();
  }
};

struct TraceEntry {
  int iter = 0;
  double loss = 0.0;
  double best = 0.0;  ///< best loss up to and including this iteration
};

struct FitResult {
  WeightVector w;
  double loss = 0.0;
  std::vector<TraceEntry> trace;
};

class LearnError : public std::runtime_error {
 public:
  LearnError(const std::string& what, std::vector<TraceEntry> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<TraceEntry>& trace() const { return trace_; }

 private:
  std::vector<TraceEntry> trace_;
};

/// Subgradient descent on L(w). Steps move a distance eta_k along the
/// normalized subgradient. Returns the iterate with the lowest loss.
inline FitResult fit_weights(const CandidateGraph& g, const FeatureMatrix& s, const ConstraintSystem& cs,
                             std::span<const std::uint8_t> yp, const HammingCosts& costs, const LearnConfig& cfg,
                             const SolverLimits& limits = {}) {
  cfg.check();
  FitResult res;
  WeightVector w = cfg.initial;
  LossValue lv = ssvm_loss(g, s, cs, yp, costs, w, cfg.lambda, limits);
  res.w = w;
  res.loss = lv.loss;
  res.trace.push_back({0, lv.loss, lv.loss});
  int since_improvement = 0, rising = 0;
  double prev = lv.loss;
  // Scaling every Hamming cost by c scales the minimiser by roughly c.
  const double scale = std::max(std::ranges::max(costs.fp), std::ranges::max(costs.fn));
  for (int k = 0; k < cfg.max_iters; ++k) {
    double norm = 0.0;
    for (double x : lv.subgradient) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0 || res.loss <= 0.0) break;
    const double eta = cfg.eta0 * (scale > 0.0 ? scale : 1.0) / (1.0 + k / cfg.kappa);
    for (int j = 0; j < 8; ++j) w[j] -= eta * lv.subgradient[j] / norm;
    lv = ssvm_loss(g, s, cs, yp, costs, w, cfg.lambda, limits);
    if (lv.loss < res.loss - cfg.tolerance * (1.0 + std::abs(res.loss))) {
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
    if (lv.loss < res.loss) {
      res.loss = lv.loss;
      res.w = w;
    }
    res.trace.push_back({k + 1, lv.loss, res.loss});
    rising = lv.loss > prev ? rising + 1 : 0;
    prev = lv.loss;
    if (rising >= cfg.divergence_window)
      throw LearnError("fit_weights: loss increased for " + std::to_string(rising) + " consecutive iterations",
                       res.trace);
    if (since_improvement >= cfg.patience) break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridRow {
  WeightVector w;
  ErrorReport errors;
};

struct GridResult {
  WeightVector best;
  std::size_t best_row = 0;
  std::vector<GridRow> table;
};

/// Solves and evaluates every grid point; the best row has the lowest error
/// sum, then fewer division errors, then the lexicographically smaller w.
inline GridResult grid_search(const CandidateGraph& g, const FeatureMatrix& s, const ConstraintSystem& cs,
                              const LineageForest& gt, const std::vector<WeightVector>& grid,
                              const EvaluationConfig& eval = {}, const SolverLimits& limits = {}) {
  if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
  GridResult res;
  for (const auto& w : grid) {
    const SolveReport r = solve(g, s, w, cs, limits);
    const LineageForest pred = decode_validated(g, r.y);
    res.table.push_back({w, evaluate(pred, gt, eval).errors});
  }
  auto key = [&](const GridRow& r) { return std::make_tuple(r.errors.sum(), r.errors.div(), r.w); };
  for (std::size_t i = 1; i < res.table.size(); ++i)
    if (key(res.table[i]) < key(res.table[res.best_row])) res.best_row = i;
  res.best = res.table[res.best_row].w;
  return res;
}

/// Cartesian product of per-coordinate value lists.
inline std::vector<WeightVector> grid_product(const std::array<std::vector<double>, 8>& axes) {
  std::vector<WeightVector> out{WeightVector{}};
  for (int k = 0; k < 8; ++k) {
    if (axes[k].empty()) throw std::invalid_argument(std::string("grid axis ") + kWeightNames[k] + " is empty");
    std::vector<WeightVector> next;
    for (const auto& w : out)
      for (double v : axes[k]) {
        WeightVector x = w;
        x[k] = v;
        next.push_back(x);
      }
    out.swap(next);
  }
  return out;
}

}  // namespace celltrack
