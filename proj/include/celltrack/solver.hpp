#pragma once

// Exact solver for the lineage ILP.
//
// Every node chooses a local configuration (selected or not, one state, track
// flag, one incoming link, up to two outgoing links). Incident edges carry a
// three-valued label: off, continuation link (source not a parent, target not
// a daughter) or division link (source parent, target daughter). The label of
// an edge is shared by its two end nodes; the ILP is exactly the set of
// configurations on which both ends agree.
//
// Lower bounds come from a dual decomposition over node configurations,
// tightened by min-marginal averaging on the shared edge labels. Bounds are
// valid for any reparametrization, so branch-and-bound over them is exact.
// A second pass fixes indicators in canonical order to pick the
// lexicographically smallest optimum.

#include <array>
#include <limits>
#include <numeric>
#include <optional>
#include <span>

#include "celltrack/constraints.hpp"
#include "celltrack/features.hpp"
#include "celltrack/solve_report.hpp"

namespace celltrack {

struct SolverLimits {
  double time_limit_seconds = 600.0;
  std::size_t max_branch_nodes = 2'000'000;
  int max_sweeps = 400;  ///< dual sweeps per branch-and-bound node
  /// When false, any optimal y may be returned instead of the
  /// lexicographically smallest one.
  bool lexicographic_ties = true;
};

/// Per-indicator fixing: -1 free, 0 or 1 fixed.
using Fixings = std::vector<std::int8_t>;

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum EdgeLabel : int { kOff = 0, kLink = 1, kSplit = 2 };
enum NodeStateIdx : int { kP = 0, kD = 1, kC = 2 };

constexpr std::uint8_t label_bit(int l) { return static_cast<std::uint8_t>(1u << l); }
inline constexpr std::uint8_t kOnLabels = label_bit(kLink) | label_bit(kSplit);

struct EdgeVals {
  std::array<double, 3> v{kInf, kInf, kInf};
};

struct NodeCost {
  double node = 0.0;
  double track = 0.0;
  std::array<double, 3> state{};
};

// sel: bit0 unselected allowed, bit1 selected allowed.
// state: bit per NodeStateIdx. track: bit0 value 0 allowed, bit1 value 1 allowed.
struct NodeDomain {
  std::uint8_t sel = 3;
  std::uint8_t state = 7;
  std::uint8_t track = 3;
};

struct NodeChoice {
  bool selected = false;
  int state = kC;
  int track = 0;
  int in_pos = -1;
};

inline double rel_eps(double x, double scale) { return scale * (1.0 + std::abs(x)); }

/// Minimum reparametrized cost of one node configuration.
inline double eval_node(const NodeCost& c, const NodeDomain& d, std::span<const EdgeVals> in,
                        std::span<const EdgeVals> out, NodeChoice* choice) {
  double best = kInf;
  NodeChoice bc;
  if ((d.sel & 1) && (d.track & 1)) {
    double v = 0.0;
    for (const auto& e : in) v += e.v[kOff];
    for (const auto& e : out) v += e.v[kOff];
    if (v < best) {
      best = v;
      bc = NodeChoice{};
    }
  }
  if (!(d.sel & 2)) {
    if (choice) *choice = bc;
    return best;
  }

  // Incoming part, shared by all states except for the label type.
  double in_off = 0.0;
  int in_must = -1, n_in_must = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i].v[kOff] == kInf) {
      ++n_in_must;
      in_must = static_cast<int>(i);
    } else {
      in_off += in[i].v[kOff];
    }
  }
  double t_edge = kInf;
  int t_edge_val = 0;
  if (d.track & 1) t_edge = 0.0;
  if ((d.track & 2) && c.track < t_edge) {
    t_edge = c.track;
    t_edge_val = 1;
  }
  const double t_none = (d.track & 2) ? c.track : kInf;

  double out_off = 0.0;
  int n_out_must = 0;
  for (const auto& e : out)
    if (e.v[kOff] == kInf)
      ++n_out_must;
    else
      out_off += e.v[kOff];

  static constexpr int kStateOrder[3] = {kC, kD, kP};
  for (int s : kStateOrder) {
    if (!(d.state & (1u << s))) continue;
    const double base = c.node + c.state[s];
    if (base == kInf) continue;

    // incoming
    const int tau = (s == kD) ? kSplit : kLink;
    double in_cost = kInf;
    int in_pos = -1, track = 1;
    if (n_in_must >= 2) {
      continue;
    } else if (n_in_must == 1) {
      in_cost = in_off + in[in_must].v[tau] + t_edge;
      in_pos = in_must;
      track = t_edge_val;
    } else {
      for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
        const double cand = in_off + (in[i].v[tau] - in[i].v[kOff]) + t_edge;
        if (cand < in_cost) {
          in_cost = cand;
          in_pos = i;
          track = t_edge_val;
        }
      }
      const double cand_none = in_off + t_none;
      if (cand_none < in_cost) {
        in_cost = cand_none;
        in_pos = -1;
        track = 1;
      }
    }
    if (in_cost == kInf) continue;

    // outgoing
    const int tau_o = (s == kP) ? kSplit : kLink;
    const int cap = (s == kP) ? 2 : 1;
    if (n_out_must > cap) continue;
    double out_cost = out_off;
    double d1 = 0.0, d2 = 0.0;  // two most negative optional deltas
    for (const auto& e : out) {
      if (e.v[kOff] == kInf) {
        out_cost += e.v[tau_o];
      } else {
        const double dv = e.v[tau_o] - e.v[kOff];
        if (dv < d1) {
          d2 = d1;
          d1 = dv;
        } else if (dv < d2) {
          d2 = dv;
        }
      }
    }
    const int free_slots = cap - n_out_must;
    if (free_slots >= 1) out_cost += d1;
    if (free_slots >= 2) out_cost += d2;

    const double total = base + in_cost + out_cost;
    if (total < best) {
      best = total;
      bc.selected = true;
      bc.state = s;
      bc.track = track;
      bc.in_pos = in_pos;
    }
  }
  if (choice) *choice = bc;
  return best;
}

// Smoothed minimum: -T log(exp(-a/T) + exp(-b/T)).
inline double softmin2(double a, double b, double t) {
  if (a == kInf) return b;
  if (b == kInf) return a;
  return std::min(a, b) - t * std::log1p(std::exp(-std::abs(a - b) / t));
}

/// Entropy-smoothed counterpart of eval_node at temperature t: the soft
/// minimum over all node configurations.
inline double soft_eval_node(const NodeCost& c, const NodeDomain& d, std::span<const EdgeVals> in,
                             std::span<const EdgeVals> out, double t) {
  double total = kInf;
  if ((d.sel & 1) && (d.track & 1)) {
    double v = 0.0;
    for (const auto& e : in) v += e.v[kOff];
    for (const auto& e : out) v += e.v[kOff];
    total = v;
  }
  if (!(d.sel & 2)) return total;

  double in_off = 0.0;
  int in_must = -1, n_in_must = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i].v[kOff] == kInf) {
      ++n_in_must;
      in_must = static_cast<int>(i);
    } else {
      in_off += in[i].v[kOff];
    }
  }
  if (n_in_must >= 2) return total;
  const double t_edge = softmin2((d.track & 1) ? 0.0 : kInf, (d.track & 2) ? c.track : kInf, t);
  const double t_none = (d.track & 2) ? c.track : kInf;

  double out_off = 0.0;
  int n_out_must = 0;
  for (const auto& e : out)
    if (e.v[kOff] == kInf)
      ++n_out_must;
    else
      out_off += e.v[kOff];

  for (int s = 0; s < 3; ++s) {
    if (!(d.state & (1u << s))) continue;
    const double base = c.node + c.state[s];
    const int tau = (s == kD) ? kSplit : kLink;
    double sin;
    if (n_in_must == 1) {
      sin = in_off + in[in_must].v[tau] + t_edge;
    } else {
      sin = in_off + t_none;
      for (const auto& e : in) sin = softmin2(sin, in_off + (e.v[tau] - e.v[kOff]) + t_edge, t);
    }
    if (sin == kInf) continue;

    const int tau_o = (s == kP) ? kSplit : kLink;
    const int cap = (s == kP) ? 2 : 1;
    if (n_out_must > cap) continue;
    double sout = out_off;
    double e1 = kInf, e2 = kInf;
    for (const auto& e : out) {
      if (e.v[kOff] == kInf) {
        sout += e.v[tau_o];
        continue;
      }
      const double dl = e.v[tau_o] - e.v[kOff];
      if (dl == kInf) continue;
      e2 = softmin2(e2, e1 + dl, t);
      e1 = softmin2(e1, dl, t);
    }
    if (sout == kInf) continue;
    const int free_slots = cap - n_out_must;
    double sub = 0.0;
    if (free_slots >= 1) sub = softmin2(sub, e1, t);
    if (free_slots >= 2) sub = softmin2(sub, e2, t);
    total = softmin2(total, base + sin + sout + sub, t);
  }
  return total;
}

class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Budget {
  const SolverLimits* limits = nullptr;
  const Stopwatch* clock = nullptr;
  std::size_t nodes = 0;

  void tick() {
    ++nodes;
    if (nodes > limits->max_branch_nodes) throw BudgetExceeded("branch-and-bound node limit reached");
    if ((nodes & 15u) == 1 && clock->seconds() > limits->time_limit_seconds)
      throw BudgetExceeded("time limit reached");
  }
};

struct DualState {
  std::vector<std::array<double, 3>> src;  // source-side share of each edge label cost
  std::vector<std::array<double, 3>> dst;  // target-side share
  std::vector<std::uint8_t> edom;
  std::vector<NodeDomain> ndom;
  bool infeasible = false;
};

/// One connected component of the candidate graph with its own indicator
/// layout; local indices preserve canonical order.
class ComponentProblem {
 public:
  ComponentProblem(const CandidateGraph& g, const std::vector<std::size_t>& nodes, const std::vector<std::size_t>& edges,
                   std::span<const double> costs)
      : global_nodes_(nodes), global_edges_(edges), layout_(nodes.size(), edges.size()) {
    const IndicatorLayout G(g);
    const std::size_t n = nodes.size(), m = edges.size();
    std::unordered_map<std::size_t, std::size_t> local;
    for (std::size_t i = 0; i < n; ++i) local[nodes[i]] = i;
    node_cost_.resize(n);
    frame_.resize(n);
    for (std::size_t i = 0; i < n; ++i) frame_[i] = g.node(nodes[i]).frame;
    in_.assign(n, {});
    out_.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t v = nodes[i];
      node_cost_[i].node = costs[G.node(v)];
      node_cost_[i].track = costs[G.track(v)];
      node_cost_[i].state[kP] = costs[G.parent(v)];
      node_cost_[i].state[kD] = costs[G.daughter(v)];
      node_cost_[i].state[kC] = costs[G.continuation(v)];
    }
    src_.resize(m);
    dst_.resize(m);
    edge_cost_.resize(m);
    src_pos_.resize(m);
    dst_pos_.resize(m);
    for (std::size_t f = 0; f < m; ++f) {
      const auto& e = g.edge(edges[f]);
      src_[f] = local.at(e.source);
      dst_[f] = local.at(e.target);
      edge_cost_[f] = costs[G.edge(edges[f])];
      src_pos_[f] = out_[src_[f]].size();
      out_[src_[f]].push_back(f);
      dst_pos_[f] = in_[dst_[f]].size();
      in_[dst_[f]].push_back(f);
    }
    local_costs_.assign(layout_.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      local_costs_[layout_.node(i)] = node_cost_[i].node;
      local_costs_[layout_.track(i)] = node_cost_[i].track;
      local_costs_[layout_.parent(i)] = node_cost_[i].state[kP];
      local_costs_[layout_.daughter(i)] = node_cost_[i].state[kD];
      local_costs_[layout_.continuation(i)] = node_cost_[i].state[kC];
    }
    for (std::size_t f = 0; f < m; ++f) local_costs_[layout_.edge(f)] = edge_cost_[f];
    std::size_t maxdeg = 1;
    for (std::size_t i = 0; i < n; ++i) maxdeg = std::max({maxdeg, in_[i].size(), out_[i].size()});
    scratch_in_.resize(maxdeg);
    scratch_out_.resize(maxdeg);
    for (double q : {1.0, 0.5, 0.25, 0.125, 0.1, 0.05, 0.01}) {
      if (std::all_of(local_costs_.begin(), local_costs_.end(), [q](double c) {
            const double r = c / q;
            return std::abs(r - std::round(r)) <= 1e-9 * (1.0 + std::abs(r));
          })) {
        quantum_ = q;
        break;
      }
    }
  }

  /// Rounds a lower bound up to the next attainable value when every cost is a
  /// multiple of a common step.
  double snap(double b) const {
    if (quantum_ == 0.0 || b == kInf) return b;
    return quantum_ * std::ceil(b / quantum_ - 1e-6);
  }

  const IndicatorLayout& layout() const { return layout_; }
  std::size_t global_index(const IndicatorLayout& G, std::size_t local_var) const {
    const auto blk = layout_.block_of(local_var);
    const std::size_t el = layout_.element_of(local_var);
    if (blk == IndicatorBlock::edge) return G.edge(global_edges_[el]);
    return static_cast<std::size_t>(blk) * G.nodes + global_nodes_[el];
  }

  DualState initial_state() const {
    DualState st;
    const std::size_t m = src_.size();
    st.src.assign(m, {0.0, 0.0, 0.0});
    st.dst.resize(m);
    for (std::size_t f = 0; f < m; ++f) st.dst[f] = {0.0, edge_cost_[f], edge_cost_[f]};
    st.edom.assign(m, 7);
    st.ndom.assign(node_cost_.size(), NodeDomain{});
    return st;
  }

  /// Restricts the domain for local indicator `var`. Returns false when a
  /// domain becomes empty.
  bool apply_fix(DualState& st, std::size_t var, int value) const {
    const auto blk = layout_.block_of(var);
    const std::size_t el = layout_.element_of(var);
    if (blk == IndicatorBlock::edge) {
      st.edom[el] &= value ? kOnLabels : label_bit(kOff);
      if (!st.edom[el]) st.infeasible = true;
      return !st.infeasible;
    }
    NodeDomain& d = st.ndom[el];
    switch (blk) {
      case IndicatorBlock::node: d.sel &= value ? 2 : 1; break;
      case IndicatorBlock::track:
        if (value) {
          d.track &= 2;
          d.sel &= 2;
        } else {
          d.track &= 1;
        }
        break;
      default: {
        const int s = static_cast<int>(blk) - static_cast<int>(IndicatorBlock::parent);
        if (value) {
          d.state &= static_cast<std::uint8_t>(1u << s);
          d.sel &= 2;
        } else {
          d.state &= static_cast<std::uint8_t>(~(1u << s));
        }
      }
    }
    if (!d.state) d.sel &= 1;
    if (!(d.track & 2) && !(d.track & 1)) d.sel = 0;
    if (!d.sel) st.infeasible = true;
    return !st.infeasible;
  }

  /// Node minimum; optionally forces one incident edge (given as local edge
  /// index) to a single label.
  double eval(const DualState& st, std::size_t v, std::size_t forced_edge = kNone, int forced_label = 0,
              NodeChoice* choice = nullptr) const {
    const auto& ins = in_[v];
    const auto& outs = out_[v];
    for (std::size_t k = 0; k < ins.size(); ++k) scratch_in_[k] = masked(st.dst[ins[k]], st.edom[ins[k]]);
    for (std::size_t k = 0; k < outs.size(); ++k) scratch_out_[k] = masked(st.src[outs[k]], st.edom[outs[k]]);
    if (forced_edge != kNone) {
      EdgeVals* ev = nullptr;
      if (dst_[forced_edge] == v) ev = &scratch_in_[dst_pos_[forced_edge]];
      if (src_[forced_edge] == v) ev = &scratch_out_[src_pos_[forced_edge]];
      for (int l = 0; l < 3; ++l)
        if (l != forced_label) ev->v[l] = kInf;
    }
    return eval_node(node_cost_[v], st.ndom[v], {scratch_in_.data(), ins.size()}, {scratch_out_.data(), outs.size()},
                     choice);
  }

  double eval_with_domain(const DualState& st, std::size_t v, const NodeDomain& d) const {
    const auto& ins = in_[v];
    const auto& outs = out_[v];
    for (std::size_t k = 0; k < ins.size(); ++k) scratch_in_[k] = masked(st.dst[ins[k]], st.edom[ins[k]]);
    for (std::size_t k = 0; k < outs.size(); ++k) scratch_out_[k] = masked(st.src[outs[k]], st.edom[outs[k]]);
    return eval_node(node_cost_[v], d, {scratch_in_.data(), ins.size()}, {scratch_out_.data(), outs.size()},
                     nullptr);
  }

  double bound(const DualState& st) const {
    if (st.infeasible) return kInf;
    double b = 0.0;
    for (std::size_t v = 0; v < node_cost_.size(); ++v) {
      b += eval(st, v);
      if (b == kInf) return kInf;
    }
    return b;
  }

  void update_edge(DualState& st, std::size_t f) const {
    const std::size_t u = src_[f], v = dst_[f];
    std::array<double, 3> mu{kInf, kInf, kInf}, mv{kInf, kInf, kInf};
    std::uint8_t dom = st.edom[f];
    for (int l = 0; l < 3; ++l) {
      if (!(dom & label_bit(l))) continue;
      mu[l] = eval(st, u, f, l);
      mv[l] = mu[l] == kInf ? kInf : eval(st, v, f, l);
      if (mu[l] == kInf || mv[l] == kInf) dom &= static_cast<std::uint8_t>(~label_bit(l));
    }
    st.edom[f] = dom;
    if (!dom) {
      st.infeasible = true;
      return;
    }
    for (int l = 0; l < 3; ++l) {
      if (!(dom & label_bit(l))) continue;
      const double avg = 0.5 * (mu[l] + mv[l]);
      st.src[f][l] += avg - mu[l];
      st.dst[f][l] += avg - mv[l];
    }
  }

  double soft_eval(const DualState& st, std::size_t v, std::size_t forced_edge, int forced_label, double t) const {
    const auto& ins = in_[v];
    const auto& outs = out_[v];
    for (std::size_t k = 0; k < ins.size(); ++k) scratch_in_[k] = masked(st.dst[ins[k]], st.edom[ins[k]]);
    for (std::size_t k = 0; k < outs.size(); ++k) scratch_out_[k] = masked(st.src[outs[k]], st.edom[outs[k]]);
    if (forced_edge != kNone) {
      EdgeVals* ev = dst_[forced_edge] == v ? &scratch_in_[dst_pos_[forced_edge]] : &scratch_out_[src_pos_[forced_edge]];
      for (int l = 0; l < 3; ++l)
        if (l != forced_label) ev->v[l] = kInf;
    }
    return soft_eval_node(node_cost_[v], st.ndom[v], {scratch_in_.data(), ins.size()},
                          {scratch_out_.data(), outs.size()}, t);
  }

  void soft_update_edge(DualState& st, std::size_t f, double t) const {
    const std::size_t u = src_[f], v = dst_[f];
    std::array<double, 3> mu{kInf, kInf, kInf}, mv{kInf, kInf, kInf};
    std::uint8_t dom = st.edom[f];
    for (int l = 0; l < 3; ++l) {
      if (!(dom & label_bit(l))) continue;
      mu[l] = soft_eval(st, u, f, l, t);
      mv[l] = mu[l] == kInf ? kInf : soft_eval(st, v, f, l, t);
      if (mu[l] == kInf || mv[l] == kInf) dom &= static_cast<std::uint8_t>(~label_bit(l));
    }
    st.edom[f] = dom;
    if (!dom) {
      st.infeasible = true;
      return;
    }
    for (int l = 0; l < 3; ++l) {
      if (!(dom & label_bit(l))) continue;
      const double avg = 0.5 * (mu[l] + mv[l]);
      st.src[f][l] += avg - mu[l];
      st.dst[f][l] += avg - mv[l];
    }
  }

  double soft_bound(const DualState& st, double t) const {
    double b = 0.0;
    for (std::size_t v = 0; v < node_cost_.size(); ++v) b += soft_eval(st, v, kNone, 0, t);
    return b;
  }

  /// Annealed smoothed ascent from temperature t_hi down to t_lo (relative to
  /// the largest cost): escapes the non-optimal fixed points that plain
  /// min-marginal averaging can stall in.
  /// Every level's rounding is tried; the best is kept in `best`/`best_y`.
  void anneal(DualState& st, double t_hi, double t_lo, int max_sweeps_per_level, double& best,
              IndicatorVector& best_y) const {
    double scale = 0.0;
    for (double c : local_costs_) scale = std::max(scale, std::abs(c));
    if (scale == 0.0 || src_.empty()) return;
    IndicatorVector y;
    const std::size_t m = src_.size();
    for (double t = t_hi * scale; t >= t_lo * scale && !st.infeasible; t *= 0.25) {
      double prev = soft_bound(st, t);
      for (int sweep = 0; sweep < max_sweeps_per_level && !st.infeasible; ++sweep) {
        for (std::size_t f = 0; f < m && !st.infeasible; ++f) soft_update_edge(st, f, t);
        for (std::size_t f = m; f-- > 0 && !st.infeasible;) soft_update_edge(st, f, t);
        const double cur = soft_bound(st, t);
        const bool flat = cur - prev <= 1e-3 * t;
        prev = cur;
        if (flat) break;
      }
      const double v = decode(st, y);
      if (v < best) {
        best = v;
        best_y = y;
      }
    }
  }

  /// Block-coordinate ascent on the dual. Stops early once the bound reaches
  /// `stop_at`, or when two consecutive sweeps each gain less than 5% of the
  /// distance still missing to it.
  double dual(DualState& st, double stop_at, int max_sweeps) const {
    double b = bound(st);
    if (b == kInf || snap(b) >= stop_at) return snap(b);
    const std::size_t m = src_.size();
    if (m == 0) return snap(b);
    int stall = 0;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      for (std::size_t f = 0; f < m && !st.infeasible; ++f) update_edge(st, f);
      for (std::size_t f = m; f-- > 0 && !st.infeasible;) update_edge(st, f);
      if (st.infeasible) return kInf;
      const double nb = bound(st);
      if (nb == kInf || snap(nb) >= stop_at) return snap(nb);
      const bool slow = stop_at != kInf && nb - b <= 0.05 * (stop_at - nb);
      if (nb - b <= rel_eps(nb, 1e-10) || slow) {
        if (++stall >= 2) {
          b = std::max(b, nb);
          break;
        }
      } else {
        stall = 0;
      }
      b = std::max(b, nb);
    }
    return snap(b);
  }

  /// Forward rounding in canonical order guided by the reparametrized costs.
  /// Returns the true value of the decoded assignment, or infinity.
  double decode(const DualState& st, IndicatorVector& y) const {
    if (st.infeasible) return kInf;
    const std::size_t n = node_cost_.size();
    y.assign(layout_.size(), 0);
    std::vector<std::int8_t> state(n, -1);  // -1 unselected
    std::vector<int> cap(n, 0), must(n, 0);
    for (std::size_t v = 0; v < n; ++v) {
      const auto& ins = in_[v];
      const auto& outs = out_[v];
      for (std::size_t k = 0; k < ins.size(); ++k) {
        const std::size_t f = ins[k];
        const std::size_t u = src_[f];
        EdgeVals ev;
        const std::uint8_t dom = st.edom[f];
        if (dom & label_bit(kOff)) ev.v[kOff] = st.dst[f][kOff];
        if (state[u] >= 0) {
          const int l = state[u] == kP ? kSplit : kLink;
          const bool forced = !(dom & label_bit(kOff));
          const bool room = forced ? cap[u] > 0 : cap[u] > must[u];
          if ((dom & label_bit(l)) && room) ev.v[l] = st.dst[f][l];
        }
        scratch_in_[k] = ev;
      }
      for (std::size_t k = 0; k < outs.size(); ++k) scratch_out_[k] = masked(st.src[outs[k]], st.edom[outs[k]]);
      NodeChoice ch;
      const double val = eval_node(node_cost_[v], st.ndom[v], {scratch_in_.data(), ins.size()},
                                   {scratch_out_.data(), outs.size()}, &ch);
      if (val == kInf) return kInf;
      if (!ch.selected) continue;
      state[v] = static_cast<std::int8_t>(ch.state);
      cap[v] = ch.state == kP ? 2 : 1;
      for (auto f : outs)
        if (!(st.edom[f] & label_bit(kOff))) ++must[v];
      y[layout_.node(v)] = 1;
      y[layout_.track(v)] = static_cast<std::uint8_t>(ch.track);
      y[(2 + static_cast<std::size_t>(ch.state)) * n + v] = 1;
      if (ch.in_pos >= 0) {
        const std::size_t f = ins[static_cast<std::size_t>(ch.in_pos)];
        const std::size_t u = src_[f];
        y[layout_.edge(f)] = 1;
        --cap[u];
        if (!(st.edom[f] & label_bit(kOff))) --must[u];
      }
    }
    for (std::size_t v = 0; v < n; ++v)
      if (must[v] > 0) return kInf;
    return linear_value(local_costs_, y);
  }

  /// Reparametrized cost node v pays under the complete assignment y. Over all
  /// nodes these sum to the value of y.
  double node_cost_at(const DualState& st, std::size_t v, const IndicatorVector& y) const {
    const std::size_t n = node_cost_.size();
    auto label = [&](std::size_t f) -> int {
      if (!y[layout_.edge(f)]) return kOff;
      return y[layout_.daughter(dst_[f])] ? kSplit : kLink;
    };
    double c = 0.0;
    if (y[layout_.node(v)]) {
      const auto& nc = node_cost_[v];
      c += nc.node + (y[layout_.track(v)] ? nc.track : 0.0);
      for (int s = 0; s < 3; ++s)
        if (y[(2 + static_cast<std::size_t>(s)) * n + v]) c += nc.state[s];
    }
    for (auto f : in_[v]) c += st.dst[f][label(f)];
    for (auto f : out_[v]) c += st.src[f][label(f)];
    return c;
  }

  /// Undecided edge with the smallest min-marginal difference among `edges`.
  template <class Edges>
  std::size_t most_ambiguous(const DualState& st, const Edges& edges) const {
    std::size_t best_edge = kNone;
    double best_gap = kInf;
    for (std::size_t f : edges) {
      const std::uint8_t dom = st.edom[f];
      if (!(dom & label_bit(kOff)) || !(dom & kOnLabels)) continue;
      double m_off = eval(st, src_[f], f, kOff) + eval(st, dst_[f], f, kOff);
      double m_on = kInf;
      for (int l : {kLink, kSplit})
        if (dom & label_bit(l)) m_on = std::min(m_on, eval(st, src_[f], f, l) + eval(st, dst_[f], f, l));
      const double gap = std::abs(m_off - m_on);
      if (gap < best_gap) {
        best_gap = gap;
        best_edge = f;
      }
    }
    return best_edge;
  }

  std::size_t undecided_node_var(const DualState& st, std::size_t v) const {
    const NodeDomain& d = st.ndom[v];
    if (d.sel == 3) return layout_.node(v);
    if (d.sel == 2) {
      for (int s = 0; s < 3; ++s)
        if ((d.state & (1u << s)) && (d.state & ~(1u << s))) return (2 + static_cast<std::size_t>(s)) * layout_.nodes + v;
      if (d.track == 3) return layout_.track(v);
    }
    return kNone;
  }

  /// Up to k undecided indicators to branch on; empty when every domain is a
  /// singleton. Given a decoded y, looks first at the nodes where y pays the
  /// most above their local minimum, since the gap to the bound sits there.
  std::vector<std::size_t> branch_candidates(const DualState& st, const IndicatorVector* y, std::size_t k) const {
    std::vector<std::size_t> out;
    auto push = [&](std::size_t var) {
      if (var != kNone && out.size() < k && std::ranges::find(out, var) == out.end()) out.push_back(var);
    };
    if (y) {
      std::vector<std::pair<double, std::size_t>> slack;
      for (std::size_t v = 0; v < node_cost_.size(); ++v) {
        const double sl = node_cost_at(st, v, *y) - eval(st, v);
        if (sl > 1e-9) slack.emplace_back(-sl, v);
      }
      std::sort(slack.begin(), slack.end());
      for (auto [neg, v] : slack) {
        if (out.size() >= k) break;
        std::vector<std::size_t> incident = in_[v];
        incident.insert(incident.end(), out_[v].begin(), out_[v].end());
        if (const std::size_t f = most_ambiguous(st, incident); f != kNone) push(layout_.edge(f));
        push(undecided_node_var(st, v));
      }
    }
    if (!out.empty()) return out;
    std::vector<std::size_t> all(src_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (const std::size_t f = most_ambiguous(st, all); f != kNone) return {layout_.edge(f)};
    for (std::size_t v = 0; v < node_cost_.size(); ++v)
      if (const std::size_t var = undecided_node_var(st, v); var != kNone) return {var};
    return out;
  }

  struct SearchResult {
    bool found = false;
    double value = kInf;
    IndicatorVector y;
  };

  /// Depth-first branch-and-bound. With first_hit, stops at the first
  /// assignment with value <= target; otherwise keeps the best assignment
  /// strictly below target. `res` holds the best find so far even when the
  /// budget runs out.
  void search(DualState root, double target, bool first_hit, Budget& budget, int max_sweeps,
              SearchResult& res) const {
    // Each candidate is probed with this many sweeps on both sides; the
    // branch whose weaker child has the higher bound wins.
    constexpr std::size_t kCandidates = 8;
    constexpr int kProbeSweeps = 10;
    double best = target;
    std::vector<DualState> stack;
    stack.push_back(std::move(root));
    IndicatorVector y;
    while (!stack.empty()) {
      DualState st = std::move(stack.back());
      stack.pop_back();
      budget.tick();
      const double stop_at = first_hit ? best + rel_eps(best, 1e-12) : best - rel_eps(best, 1e-12);
      const double b = dual(st, stop_at, max_sweeps);
      if (b == kInf || b >= stop_at) continue;
      const double val = decode(st, y);
      if (val != kInf) {
        if (first_hit && val <= target) {
          res = {true, val, y};
          return;
        }
        if (!first_hit && val < best - rel_eps(best, 1e-12)) {
          best = val;
          res = {true, val, y};
        }
        if (val <= b + rel_eps(b, 1e-11)) continue;
      }
      const auto cands = branch_candidates(st, val != kInf ? &y : nullptr, val != kInf ? kCandidates : 1);
      if (cands.empty()) continue;
      std::size_t var = cands.front();
      std::array<DualState, 2> kids;
      if (cands.size() == 1) {
        kids = {st, std::move(st)};
        apply_fix(kids[0], var, 0);
        apply_fix(kids[1], var, 1);
      } else {
        double best_score = -kInf;
        for (std::size_t c : cands) {
          std::array<DualState, 2> probe = {st, st};
          std::array<double, 2> kb{};
          for (int v = 0; v < 2; ++v) {
            apply_fix(probe[v], c, v);
            kb[v] = probe[v].infeasible ? kInf : dual(probe[v], stop_at, kProbeSweeps);
            budget.tick();
          }
          const double score = std::min(kb[0], kb[1]) + 1e-3 * std::min(std::max(kb[0], kb[1]), 1e300);
          if (score > best_score) {
            best_score = score;
            var = c;
            kids = std::move(probe);
          }
          if (std::max(kb[0], kb[1]) >= stop_at) break;
        }
      }
      const int first = (val != kInf) ? y[var] : 0;
      if (!kids[1 - first].infeasible) stack.push_back(std::move(kids[1 - first]));
      if (!kids[first].infeasible) stack.push_back(std::move(kids[first]));
    }
  }

  SearchResult search(DualState root, double target, bool first_hit, Budget& budget, int max_sweeps) const {
    SearchResult res;
    search(std::move(root), target, first_hit, budget, max_sweeps, res);
    return res;
  }

  /// Fixes every indicator of nodes outside frames [a, b], and of edges
  /// between two such nodes, to its value in `y`. False when that empties a
  /// domain.
  bool freeze_outside(DualState& st, const IndicatorVector& y, int a, int b) const {
    auto outside = [&](std::size_t v) { return frame_[v] < a || frame_[v] > b; };
    for (std::size_t v = 0; v < frame_.size() && !st.infeasible; ++v) {
      if (!outside(v)) continue;
      for (std::size_t i :
           {layout_.node(v), layout_.track(v), layout_.parent(v), layout_.daughter(v), layout_.continuation(v)})
        apply_fix(st, i, y[i]);
    }
    for (std::size_t f = 0; f < src_.size() && !st.infeasible; ++f)
      if (outside(src_[f]) && outside(dst_[f])) apply_fix(st, layout_.edge(f), y[layout_.edge(f)]);
    return !st.infeasible;
  }

  /// Large-neighbourhood improvement of `y`: slides a window of frames over
  /// the component, freezes everything outside it and re-solves the window
  /// with a small node budget.
  void polish(const DualState& base, IndicatorVector& y, double& val, double target, Budget& budget,
              int max_sweeps) const {
    if (frame_.empty()) return;
    constexpr int kWindow = 4, kStride = 2, kPasses = 3;
    constexpr std::size_t kWindowNodes = 200;
    const int lo = frame_.front(), hi = frame_.back();
    for (int pass = 0; pass < kPasses; ++pass) {
      bool improved = false;
      for (int a = lo; a <= std::max(lo, hi - kWindow + 1); a += kStride) {
        if (val <= target + rel_eps(target, 1e-11)) return;
        const int b = a + kWindow - 1;
        DualState st = base;
        if (!freeze_outside(st, y, a, b)) continue;
        SolverLimits lim = *budget.limits;
        lim.max_branch_nodes = kWindowNodes;
        Budget sub{&lim, budget.clock, 0};
        SearchResult r;
        try {
          search(std::move(st), val, false, sub, max_sweeps, r);
        } catch (const BudgetExceeded&) {
          if (budget.clock->seconds() > budget.limits->time_limit_seconds) throw;
        }
        if (r.found) {
          y = std::move(r.y);
          val = r.value;
          improved = true;
        }
        budget.nodes += sub.nodes;
        if (budget.nodes > budget.limits->max_branch_nodes) throw BudgetExceeded("branch-and-bound node limit reached");
      }
      if (!improved) return;
    }
  }

  /// Optimal lexicographically smallest assignment for the component under
  /// the given local fixings, or nullopt when infeasible.
  std::optional<IndicatorVector> solve(const Fixings& fix, Budget& budget, int max_sweeps, bool lexicographic) const {
    DualState root = initial_state();
    for (std::size_t i = 0; i < fix.size(); ++i)
      if (fix[i] >= 0) apply_fix(root, i, fix[i]);
    if (root.infeasible) return std::nullopt;
    budget.tick();

    // y = 0 is feasible unless a fixing demands a one.
    double incumbent = kInf;
    IndicatorVector best;
    if (std::none_of(fix.begin(), fix.end(), [](std::int8_t f) { return f == 1; })) {
      incumbent = 0.0;
      best.assign(layout_.size(), 0);
    }
    auto closed = [&](double b) { return incumbent != kInf && incumbent <= b + rel_eps(b, 1e-11); };
    double b = dual(root, kInf, max_sweeps);
    if (root.infeasible || b == kInf) return std::nullopt;
    IndicatorVector y;
    if (const double v = decode(root, y); v < incumbent) {
      incumbent = v;
      best = y;
    }
    if (!closed(b)) {
      anneal(root, 0.5, 1e-6, 100, incumbent, best);
      b = dual(root, kInf, max_sweeps);
      if (root.infeasible || b == kInf) return std::nullopt;
      if (const double v = decode(root, y); v < incumbent) {
        incumbent = v;
        best = y;
      }
    }
    if (incumbent != kInf && !closed(b)) polish(root, best, incumbent, b, budget, max_sweeps);
    if (!closed(b)) {
      auto r = search(root, incumbent, false, budget, max_sweeps);
      if (r.found) {
        incumbent = r.value;
        best = std::move(r.y);
      }
    }
    if (incumbent == kInf) return std::nullopt;
    if (!lexicographic) return best;
    return lexicographic_pass(std::move(root), fix, std::move(best), incumbent, budget, max_sweeps);
  }


 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  static EdgeVals masked(const std::array<double, 3>& phi, std::uint8_t dom) {
    EdgeVals ev;
    for (int l = 0; l < 3; ++l)
      if (dom & label_bit(l)) ev.v[l] = phi[l];
    return ev;
  }

  // Lower bound on the value of any assignment consistent with `st` that has
  // local indicator `var` equal to zero.
  double bound_with_zero(const DualState& st, const std::vector<double>& mins, double total, std::size_t var) const {
    const auto blk = layout_.block_of(var);
    const std::size_t el = layout_.element_of(var);
    if (blk == IndicatorBlock::edge) {
      if (!(st.edom[el] & label_bit(kOff))) return kInf;
      const double a = eval(st, src_[el], el, kOff) - mins[src_[el]];
      const double b = eval(st, dst_[el], el, kOff) - mins[dst_[el]];
      return total + a + b;
    }
    NodeDomain d = st.ndom[el];
    switch (blk) {
      case IndicatorBlock::node: d.sel &= 1; break;
      case IndicatorBlock::track: d.track &= 1; break;
      default: d.state &= static_cast<std::uint8_t>(~(1u << (static_cast<int>(blk) - 2)));
    }
    if (!d.state) d.sel &= 1;
    return total + eval_with_domain(st, el, d) - mins[el];
  }

  void refresh_mins(const DualState& st, std::size_t var, std::vector<double>& mins) const {
    const std::size_t el = layout_.element_of(var);
    if (layout_.block_of(var) == IndicatorBlock::edge) {
      mins[src_[el]] = eval(st, src_[el]);
      mins[dst_[el]] = eval(st, dst_[el]);
    } else {
      mins[el] = eval(st, el);
    }
  }

  // First-hit search with everything outside a few frames around the element
  // of `var` frozen to `y`.
  SearchResult local_search(const DualState& st, const IndicatorVector& y, std::size_t var, double limit,
                            Budget& budget, int max_sweeps) const {
    constexpr int kReach = 2;
    const std::size_t el = layout_.element_of(var);
    const int f = layout_.block_of(var) == IndicatorBlock::edge ? frame_[src_[el]] : frame_[el];
    DualState trial = st;
    if (!freeze_outside(trial, y, f - kReach, f + kReach)) return {};
    return search(std::move(trial), limit, true, budget, max_sweeps);
  }

  IndicatorVector lexicographic_pass(DualState st, const Fixings& fix, IndicatorVector y, double optimum,
                                     Budget& budget, int max_sweeps) const {
    const double limit = optimum + tie_tolerance(optimum);
    std::vector<double> mins(node_cost_.size());
    for (std::size_t v = 0; v < mins.size(); ++v) mins[v] = eval(st, v);
    IndicatorVector trial_y;
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      if (fix[i] >= 0) continue;
      if (y[i] == 0) {
        apply_fix(st, i, 0);
        refresh_mins(st, i, mins);
        continue;
      }
      const double total = std::accumulate(mins.begin(), mins.end(), 0.0);
      bool zero_ok = false;
      if (snap(bound_with_zero(st, mins, total, i)) <= limit) {
        DualState trial = st;
        if (apply_fix(trial, i, 0)) {
          const double v = decode(trial, trial_y);
          if (v <= limit) {
            zero_ok = true;
            y = trial_y;
          } else {
            auto r = local_search(trial, y, i, limit, budget, max_sweeps);
            if (!r.found) r = search(trial, limit, true, budget, max_sweeps);
            if (r.found) {
              zero_ok = true;
              y = std::move(r.y);
            }
          }
        }
      }
      apply_fix(st, i, zero_ok ? 0 : 1);
      refresh_mins(st, i, mins);
    }
    return y;
  }

  std::vector<std::size_t> global_nodes_, global_edges_;
  IndicatorLayout layout_;
  std::vector<NodeCost> node_cost_;
  std::vector<std::vector<std::size_t>> in_, out_;
  std::vector<std::size_t> src_, dst_, src_pos_, dst_pos_;
  std::vector<double> edge_cost_;
  std::vector<double> local_costs_;
  std::vector<int> frame_;
  double quantum_ = 0.0;
  mutable std::vector<EdgeVals> scratch_in_, scratch_out_;
};

struct Components {
  std::vector<std::vector<std::size_t>> nodes;
  std::vector<std::vector<std::size_t>> edges;
};

inline Components connected_components(const CandidateGraph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : g.edges()) {
    const auto a = find(e.source), b = find(e.target);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  Components c;
  std::vector<std::size_t> comp_of(n);
  std::unordered_map<std::size_t, std::size_t> id;
  for (std::size_t v = 0; v < n; ++v) {
    const auto r = find(v);
    auto [it, fresh] = id.emplace(r, c.nodes.size());
    if (fresh) {
      c.nodes.emplace_back();
      c.edges.emplace_back();
    }
    comp_of[v] = it->second;
    c.nodes[it->second].push_back(v);
  }
  for (std::size_t e = 0; e < g.num_edges(); ++e) c.edges[comp_of[g.edge(e).source]].push_back(e);
  return c;
}

}  // namespace detail

/// Exact minimizer of sum(costs_i * y_i) over feasible lineages, honoring
/// per-indicator fixings. Ties resolve to the lexicographically smallest y.
inline SolveReport solve_costs(const CandidateGraph& g, std::span<const double> costs, const Fixings& fixings,
                               const SolverLimits& limits = {}) {
  Stopwatch clock;
  const IndicatorLayout G(g);
  if (costs.size() != G.size())
    throw std::invalid_argument("solve: cost vector has " + std::to_string(costs.size()) + " entries, expected " +
                                std::to_string(G.size()));
  if (!fixings.empty() && fixings.size() != G.size()) throw std::invalid_argument("solve: fixings length mismatch");
  for (double c : costs)
    if (!std::isfinite(c)) throw std::invalid_argument("solve: non-finite cost");

  SolveReport rep;
  rep.num_nodes = g.num_nodes();
  rep.num_edges = g.num_edges();
  rep.y.assign(G.size(), 0);
  detail::Budget budget{&limits, &clock, 0};
  const auto comps = detail::connected_components(g);
  try {
    for (std::size_t c = 0; c < comps.nodes.size(); ++c) {
      detail::ComponentProblem prob(g, comps.nodes[c], comps.edges[c], costs);
      const auto& L = prob.layout();
      Fixings local(L.size(), -1);
      if (!fixings.empty())
        for (std::size_t i = 0; i < L.size(); ++i) local[i] = fixings[prob.global_index(G, i)];
      auto y = prob.solve(local, budget, limits.max_sweeps, limits.lexicographic_ties);
      if (!y) {
        rep.status = SolveStatus::infeasible;
        rep.y.clear();
        rep.objective = 0.0;
        rep.branch_nodes = budget.nodes;
        rep.wall_seconds = clock.seconds();
        return rep;
      }
      for (std::size_t i = 0; i < L.size(); ++i) rep.y[prob.global_index(G, i)] = (*y)[i];
    }
  } catch (const detail::BudgetExceeded& e) {
    rep.objective = linear_value(costs, rep.y);
    rep.branch_nodes = budget.nodes;
    rep.wall_seconds = clock.seconds();
    throw SolveError(std::string("solve: ") + e.what(), rep);
  }
  rep.objective = linear_value(costs, rep.y);
  rep.status = SolveStatus::optimal;
  rep.branch_nodes = budget.nodes;
  rep.wall_seconds = clock.seconds();
  return rep;
}

/// Solves with an explicit constraint system; unit equalities in `cs` act as
/// fixings and the returned assignment is checked against every constraint.
inline SolveReport solve_with_costs(const CandidateGraph& g, std::span<const double> costs, const ConstraintSystem& cs,
                                    const SolverLimits& limits = {}) {
  if (cs.num_indicators() != IndicatorLayout(g).size())
    throw std::invalid_argument("solve: constraint system does not match the graph");
  const auto fix = cs.fixings();
  if (!fix) {
    SolveReport rep;
    rep.status = SolveStatus::infeasible;
    rep.num_nodes = g.num_nodes();
    rep.num_edges = g.num_edges();
    return rep;
  }
  SolveReport rep = solve_costs(g, costs, *fix, limits);
  if (rep.status == SolveStatus::optimal) {
    if (auto k = cs.first_violation(rep.y))
      throw SolveError("solve: assignment violates " + cs.describe(*k) + " (unsupported constraint)", rep);
  }
  return rep;
}

/// min <S w, y> subject to the constraint system.
inline SolveReport solve(const CandidateGraph& g, const FeatureMatrix& s, const WeightVector& w,
                         const ConstraintSystem& cs, const SolverLimits& limits = {}) {
  if (s.rows() != IndicatorLayout(g).size()) throw std::invalid_argument("solve: feature matrix does not match graph");
  const auto costs = s.multiply(w);
  return solve_with_costs(g, costs, cs, limits);
}

}  // namespace celltrack
