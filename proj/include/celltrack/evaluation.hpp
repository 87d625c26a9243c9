#pragma once

// Comparison of a predicted lineage against ground truth: node matching, edge
// and division errors, DET/TRA-style scores and tracklet correctness.

#include <set>

#include "celltrack/assignment.hpp"
#include "celltrack/types.hpp"

namespace celltrack {

inline constexpr std::size_t kUnmatched = static_cast<std::size_t>(-1);

struct NodeMatching {
  std::vector<std::size_t> pred_to_gt;  ///< gt index per predicted node, or kUnmatched
  std::vector<std::size_t> gt_to_pred;
  std::vector<std::int64_t> unmatched_pred;  ///< ids
  std::vector<std::int64_t> unmatched_gt;
};

/// Per-frame one-to-one matching of points closer than `radius` (inclusive):
/// as many pairs as possible, then minimum total distance.
inline NodeMatching match_nodes(const LineageForest& pred, const LineageForest& gt, double radius) {
  if (!(radius >= 0.0)) throw std::invalid_argument("match_nodes: radius must be non-negative");
  NodeMatching m;
  m.pred_to_gt.assign(pred.num_nodes(), kUnmatched);
  m.gt_to_pred.assign(gt.num_nodes(), kUnmatched);
  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> frames;
  for (std::size_t i = 0; i < pred.num_nodes(); ++i) frames[pred.node(i).frame].first.push_back(i);
  for (std::size_t j = 0; j < gt.num_nodes(); ++j) frames[gt.node(j).frame].second.push_back(j);
  for (const auto& [f, sides] : frames) {
    const auto& [ps, gs] = sides;
    if (ps.empty() || gs.empty()) continue;
    std::vector<std::vector<double>> cost(ps.size(), std::vector<double>(gs.size(), kForbidden));
    for (std::size_t a = 0; a < ps.size(); ++a)
      for (std::size_t b = 0; b < gs.size(); ++b) {
        const double d = distance(pred.node(ps[a]).position, gt.node(gs[b]).position);
        if (d <= radius) cost[a][b] = d;
      }
    const auto assign = max_matching_min_cost(cost);
    for (std::size_t a = 0; a < ps.size(); ++a) {
      if (assign[a] < 0) continue;
      const std::size_t b = gs[static_cast<std::size_t>(assign[a])];
      m.pred_to_gt[ps[a]] = b;
      m.gt_to_pred[b] = ps[a];
    }
  }
  for (std::size_t i = 0; i < pred.num_nodes(); ++i)
    if (m.pred_to_gt[i] == kUnmatched) m.unmatched_pred.push_back(pred.node(i).id);
  for (std::size_t j = 0; j < gt.num_nodes(); ++j)
    if (m.gt_to_pred[j] == kUnmatched) m.unmatched_gt.push_back(gt.node(j).id);
  return m;
}

enum class EdgeClass : std::uint8_t { true_positive, false_positive, identity_switch };

struct ErrorReport {
  std::size_t fp_edges = 0;
  std::size_t fn_edges = 0;
  std::size_t is = 0;
  std::size_t fp_div = 0;
  std::size_t fn_div = 0;
  std::size_t fp_nodes = 0;
  std::size_t fn_nodes = 0;
  std::size_t gt_edges = 0;
  std::size_t gt_nodes = 0;
  double det = 0.0;
  double tra = 0.0;
  /// GT edges with no candidate counterpart (set by callers that know the graph).
  std::vector<std::pair<std::int64_t, std::int64_t>> unreachable_gt;

  std::size_t div() const { return fp_div + fn_div; }
  std::size_t sum() const { return fp_edges + fn_edges + is + div(); }
  /// Count per 1000 GT edges.
  double per_thousand(std::size_t count) const {
    return gt_edges ? static_cast<double>(count) * 1000.0 / static_cast<double>(gt_edges) : 0.0;
  }
};

/// Edge-level comparison shared by the error counts, DET/TRA and tracklets.
struct EdgeComparison {
  std::vector<EdgeClass> pred_class;  ///< per predicted edge
  std::vector<bool> gt_found;         ///< GT edge reconstructed by a TP edge
  std::vector<bool> gt_missed;        ///< FN: neither reconstructed nor explained by an IS edge
  std::vector<bool> pred_fp_div;      ///< per predicted node
  std::vector<bool> gt_fn_div;        ///< per GT node
};

namespace detail {

// GT nodes within `tol` generations of `g` (ancestors and descendants, g included).
inline void track_neighbourhood(const LineageForest& f, std::size_t g, int tol, std::vector<std::size_t>& out) {
  out.clear();
  out.push_back(g);
  std::size_t a = g;
  for (int k = 0; k < tol; ++k) {
    a = f.parent_of(a);
    if (a == LineageForest::npos) break;
    out.push_back(a);
  }
  std::vector<std::size_t> layer{g}, next;
  for (int k = 0; k < tol && !layer.empty(); ++k) {
    next.clear();
    for (auto x : layer)
      for (auto c : f.children_of(x)) next.push_back(c);
    out.insert(out.end(), next.begin(), next.end());
    layer.swap(next);
  }
}

inline std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_index(const LineageForest& f) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> idx;
  for (std::size_t e = 0; e < f.num_edges(); ++e) idx[f.edges()[e]] = e;
  return idx;
}

}  // namespace detail

inline EdgeComparison compare_edges(const LineageForest& pred, const LineageForest& gt, const NodeMatching& m,
                                    int division_tolerance) {
  if (division_tolerance < 0) throw std::invalid_argument("division tolerance must be non-negative");
  if (m.pred_to_gt.size() != pred.num_nodes() || m.gt_to_pred.size() != gt.num_nodes())
    throw std::invalid_argument("node matching does not belong to these forests");
  EdgeComparison c;
  const auto gt_idx = detail::edge_index(gt);
  c.pred_class.assign(pred.num_edges(), EdgeClass::false_positive);
  c.gt_found.assign(gt.num_edges(), false);
  std::vector<bool> is_target(pred.num_nodes(), false);
  for (std::size_t e = 0; e < pred.num_edges(); ++e) {
    const auto [a, b] = pred.edges()[e];
    const std::size_t ga = m.pred_to_gt[a], gb = m.pred_to_gt[b];
    if (ga == kUnmatched || gb == kUnmatched) continue;
    auto it = gt_idx.find({ga, gb});
    if (it != gt_idx.end()) {
      c.pred_class[e] = EdgeClass::true_positive;
      c.gt_found[it->second] = true;
    } else {
      c.pred_class[e] = EdgeClass::identity_switch;
      is_target[b] = true;
    }
  }
  c.gt_missed.assign(gt.num_edges(), false);
  for (std::size_t e = 0; e < gt.num_edges(); ++e) {
    if (c.gt_found[e]) continue;
    const std::size_t pc = m.gt_to_pred[gt.edges()[e].second];
    c.gt_missed[e] = !(pc != kUnmatched && is_target[pc]);
  }

  std::vector<std::size_t> hood;
  c.pred_fp_div.assign(pred.num_nodes(), false);
  for (std::size_t a = 0; a < pred.num_nodes(); ++a) {
    if (!pred.is_division(a)) continue;
    bool ok = false;
    if (m.pred_to_gt[a] != kUnmatched) {
      detail::track_neighbourhood(gt, m.pred_to_gt[a], division_tolerance, hood);
      ok = std::any_of(hood.begin(), hood.end(), [&](std::size_t x) { return gt.is_division(x); });
    }
    c.pred_fp_div[a] = !ok;
  }
  c.gt_fn_div.assign(gt.num_nodes(), false);
  for (std::size_t g = 0; g < gt.num_nodes(); ++g) {
    if (!gt.is_division(g)) continue;
    detail::track_neighbourhood(gt, g, division_tolerance, hood);
    const bool ok = std::any_of(hood.begin(), hood.end(), [&](std::size_t x) {
      return m.gt_to_pred[x] != kUnmatched && pred.is_division(m.gt_to_pred[x]);
    });
    c.gt_fn_div[g] = !ok;
  }
  return c;
}

namespace detail {

struct AogmWeights {
  double ns = 5.0, fn = 10.0, fp = 1.0, ed = 1.0, ea = 1.5, ec = 1.0;
};

inline std::pair<double, double> det_tra_from(const LineageForest& pred, const LineageForest& gt,
                                              const NodeMatching& m, const EdgeComparison& c) {
  if (gt.num_nodes() == 0) throw std::invalid_argument("det_tra: ground truth is empty");
  const AogmWeights w;
  const double ns = 0.0;  // one-to-one point matching never splits a node
  const double fn = static_cast<double>(m.unmatched_gt.size());
  const double fp = static_cast<double>(m.unmatched_pred.size());
  double ed = 0.0, ea = 0.0, ec = 0.0;
  for (std::size_t e = 0; e < pred.num_edges(); ++e)
    if (c.pred_class[e] == EdgeClass::identity_switch) ed += 1.0;
  for (std::size_t e = 0; e < gt.num_edges(); ++e)
    if (!c.gt_found[e]) ea += 1.0;
  for (std::size_t e = 0; e < pred.num_edges(); ++e) {
    if (c.pred_class[e] != EdgeClass::true_positive) continue;
    const auto [a, b] = pred.edges()[e];
    if (pred.is_division(a) != gt.is_division(m.pred_to_gt[a])) ec += 1.0;
  }
  const double node_term = w.ns * ns + w.fn * fn + w.fp * fp;
  const double n_gt = static_cast<double>(gt.num_nodes());
  const double e_gt = static_cast<double>(gt.num_edges());
  const double det = 1.0 - node_term / (w.fn * n_gt);
  const double tra = 1.0 - (node_term + w.ed * ed + w.ea * ea + w.ec * ec) / (w.fn * n_gt + w.ea * e_gt);
  return {std::clamp(det, 0.0, 1.0), std::clamp(tra, 0.0, 1.0)};
}

}  // namespace detail

/// Edge, identity-switch and division error counts plus DET/TRA. DET and TRA
/// are left at zero when the ground truth is empty.
inline ErrorReport count_errors(const LineageForest& pred, const LineageForest& gt, const NodeMatching& m,
                                int division_tolerance = 1) {
  const auto c = compare_edges(pred, gt, m, division_tolerance);
  ErrorReport r;
  r.gt_edges = gt.num_edges();
  r.gt_nodes = gt.num_nodes();
  r.fp_nodes = m.unmatched_pred.size();
  r.fn_nodes = m.unmatched_gt.size();
  for (auto k : c.pred_class) {
    if (k == EdgeClass::false_positive) ++r.fp_edges;
    if (k == EdgeClass::identity_switch) ++r.is;
  }
  r.fn_edges = static_cast<std::size_t>(std::count(c.gt_missed.begin(), c.gt_missed.end(), true));
  r.fp_div = static_cast<std::size_t>(std::count(c.pred_fp_div.begin(), c.pred_fp_div.end(), true));
  r.fn_div = static_cast<std::size_t>(std::count(c.gt_fn_div.begin(), c.gt_fn_div.end(), true));
  if (gt.num_nodes() > 0) std::tie(r.det, r.tra) = detail::det_tra_from(pred, gt, m, c);
  return r;
}

/// DET/TRA-style scores with AOGM weights (NS, FN, FP, ED, EA, EC) = (5, 10, 1, 1, 1.5, 1).
inline std::pair<double, double> det_tra(const LineageForest& pred, const LineageForest& gt, const NodeMatching& m) {
  if (gt.num_nodes() == 0) throw std::invalid_argument("det_tra: ground truth is empty");
  return detail::det_tra_from(pred, gt, m, compare_edges(pred, gt, m, 0));
}

/// Fraction of error-free GT tracklets for window lengths 1..W (in edges). A
/// tracklet is any downward GT path of that many edges. The curve stops at the
/// longest GT path.
inline std::vector<double> tracklet_fraction(const LineageForest& pred, const LineageForest& gt, const NodeMatching& m,
                                             int max_window, int division_tolerance = 1) {
  if (max_window < 1) throw std::invalid_argument("tracklet_fraction: window must be >= 1");
  const auto c = compare_edges(pred, gt, m, division_tolerance);
  const std::size_t n = gt.num_nodes();

  // Predicted nodes touched by a wrong edge.
  std::vector<bool> pred_bad(pred.num_nodes(), false);
  for (std::size_t e = 0; e < pred.num_edges(); ++e) {
    if (c.pred_class[e] == EdgeClass::true_positive) continue;
    pred_bad[pred.edges()[e].first] = true;
    pred_bad[pred.edges()[e].second] = true;
  }
  std::vector<bool> node_ok(n);
  for (std::size_t g = 0; g < n; ++g) {
    const std::size_t p = m.gt_to_pred[g];
    node_ok[g] = p != kUnmatched && !pred_bad[p] && !c.pred_fp_div[p] && !c.gt_fn_div[g];
  }
  std::vector<bool> edge_ok(n, false);  // indexed by child: the GT edge into it is reconstructed
  for (std::size_t e = 0; e < gt.num_edges(); ++e) edge_ok[gt.edges()[e].second] = c.gt_found[e];

  // depth[g] = longest downward path (edges) from g; good[g][l] counts error-free
  // paths of l edges starting at g, total[g][l] all paths.
  std::vector<int> depth(n, 0);
  for (std::size_t g = n; g-- > 0;)
    for (auto ch : gt.children_of(g)) depth[g] = std::max(depth[g], depth[ch] + 1);
  const int longest = n ? *std::max_element(depth.begin(), depth.end()) : 0;
  const int W = std::min(max_window, longest);
  std::vector<double> curve;
  if (W < 1) return curve;

  std::vector<std::vector<double>> good(n, std::vector<double>(W + 1, 0.0)), total = good;
  for (std::size_t g = n; g-- > 0;) {
    total[g][0] = 1.0;
    good[g][0] = node_ok[g] ? 1.0 : 0.0;
    for (auto ch : gt.children_of(g))
      for (int l = 1; l <= W; ++l) {
        total[g][l] += total[ch][l - 1];
        if (node_ok[g] && edge_ok[ch]) good[g][l] += good[ch][l - 1];
      }
  }
  for (int l = 1; l <= W; ++l) {
    double ok = 0.0, all = 0.0;
    for (std::size_t g = 0; g < n; ++g) {
      ok += good[g][l];
      all += total[g][l];
    }
    curve.push_back(all > 0.0 ? ok / all : 0.0);
  }
  return curve;
}

struct EvaluationConfig {
  double match_radius = 15.0;
  int division_tolerance = 1;
  int max_window = 20;
  bool exclude_polar_bodies = false;
};

struct Evaluation {
  NodeMatching matching;
  ErrorReport errors;
  std::vector<double> tracklets;
};

/// Full comparison; polar-body nodes are dropped from both sides first when
/// configured.
inline Evaluation evaluate(const LineageForest& pred_in, const LineageForest& gt_in, const EvaluationConfig& cfg) {
  auto is_polar = [](const LineageNode& n) { return n.polar; };
  const LineageForest pred = cfg.exclude_polar_bodies ? pred_in.without(is_polar) : pred_in;
  const LineageForest gt = cfg.exclude_polar_bodies ? gt_in.without(is_polar) : gt_in;
  Evaluation ev;
  ev.matching = match_nodes(pred, gt, cfg.match_radius);
  ev.errors = count_errors(pred, gt, ev.matching, cfg.division_tolerance);
  ev.tracklets = tracklet_fraction(pred, gt, ev.matching, cfg.max_window, cfg.division_tolerance);
  return ev;
}

}  // namespace celltrack
