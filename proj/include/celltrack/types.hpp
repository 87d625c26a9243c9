#pragma once

// Shared domain types: detections, the candidate graph, indicator layout and
// lineage forests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace celltrack {

/// World-unit coordinates ordered (z, y, x).
using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

inline double distance(const Vec3& a, const Vec3& b) {
  return std::sqrt(squared_distance(a, b));
}

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

// ---------------------------------------------------------------------------
// Warnings

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "[celltrack] warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

// ---------------------------------------------------------------------------
// Detection

enum class CellState : std::uint8_t { parent = 0, daughter = 1, continuation = 2 };

inline const char* to_string(CellState s) {
  switch (s) {
    case CellState::parent: return "parent";
    case CellState::daughter: return "daughter";
    case CellState::continuation: return "continue";
  }
  return "?";
}

/// Column of Detection::state_scores.
enum StateScore : int { kParentScore = 0, kDaughterScore = 1, kContinueScore = 2, kPolarScore = 3 };

struct Detection {
  std::int64_t id = 0;
  int frame = 0;
  Vec3 position{};
  double score = 0.0;
  std::array<double, 4> state_scores{};
  /// Offset pointing to the same (or parent) cell in the previous frame.
  Vec3 movement{};

  friend bool operator==(const Detection&, const Detection&) = default;
};

namespace detail {
inline double clamp_score(double v, std::int64_t id, const char* what) {
  if (std::isnan(v)) throw std::invalid_argument("detection " + std::to_string(id) + ": " + what + " is NaN");
  if (v < 0.0 || v > 1.0) {
    const double c = std::clamp(v, 0.0, 1.0);
    std::ostringstream os;
    os << "detection " << id << ": " << what << " " << v << " clamped to " << c;
    warn(os.str());
    return c;
  }
  return v;
}
}  // namespace detail

/// Clamps scores into [0,1] (with a warning) and rejects non-finite values.
inline Detection sanitized(Detection d) {
  if (d.frame < 0) throw std::invalid_argument("detection " + std::to_string(d.id) + ": negative frame");
  for (double c : d.position)
    if (!std::isfinite(c)) throw std::invalid_argument("detection " + std::to_string(d.id) + ": non-finite position");
  for (double c : d.movement)
    if (!std::isfinite(c)) throw std::invalid_argument("detection " + std::to_string(d.id) + ": non-finite movement");
  d.score = detail::clamp_score(d.score, d.id, "score");
  static constexpr const char* names[4] = {"parent score", "daughter score", "continue score", "polar-body score"};
  for (int k = 0; k < 4; ++k) d.state_scores[k] = detail::clamp_score(d.state_scores[k], d.id, names[k]);
  return d;
}

// ---------------------------------------------------------------------------
// Candidate graph

struct CandidateEdge {
  std::size_t source = 0;  ///< canonical node index, frame t
  std::size_t target = 0;  ///< canonical node index, frame t+1
  double cost = 0.0;
};

/// Immutable candidate graph. Nodes are kept in canonical (frame, id) order and
/// edges in (source index, target index) order.
class CandidateGraph {
 public:
  struct EdgeSpec {
    std::int64_t source_id;
    std::int64_t target_id;
    double cost;
  };

  CandidateGraph() = default;

  CandidateGraph(std::vector<Detection> nodes, const std::vector<EdgeSpec>& edges) {
    for (auto& d : nodes) d = sanitized(std::move(d));
    std::sort(nodes.begin(), nodes.end(), [](const Detection& a, const Detection& b) {
      return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
    });
    nodes_ = std::move(nodes);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!index_.emplace(nodes_[i].id, i).second)
        throw std::invalid_argument("duplicate detection id " + std::to_string(nodes_[i].id));
    }
    edges_.reserve(edges.size());
    for (const auto& e : edges) {
      auto s = index_.find(e.source_id);
      auto t = index_.find(e.target_id);
      if (s == index_.end() || t == index_.end())
        throw std::invalid_argument("edge " + std::to_string(e.source_id) + "->" + std::to_string(e.target_id) +
                                    " references a missing node");
      if (nodes_[t->second].frame != nodes_[s->second].frame + 1)
        throw std::invalid_argument("edge " + std::to_string(e.source_id) + "->" + std::to_string(e.target_id) +
                                    " does not span exactly one frame forward");
      if (!std::isfinite(e.cost) || e.cost < 0.0)
        throw std::invalid_argument("edge " + std::to_string(e.source_id) + "->" + std::to_string(e.target_id) +
                                    " has invalid cost");
      edges_.push_back({s->second, t->second, e.cost});
    }
    std::sort(edges_.begin(), edges_.end(), [](const CandidateEdge& a, const CandidateEdge& b) {
      return a.source != b.source ? a.source < b.source : a.target < b.target;
    });
    for (std::size_t i = 1; i < edges_.size(); ++i) {
      if (edges_[i].source == edges_[i - 1].source && edges_[i].target == edges_[i - 1].target)
        throw std::invalid_argument("duplicate edge " + std::to_string(nodes_[edges_[i].source].id) + "->" +
                                    std::to_string(nodes_[edges_[i].target].id));
    }
    in_.assign(nodes_.size(), {});
    out_.assign(nodes_.size(), {});
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      out_[edges_[e].source].push_back(e);
      in_[edges_[e].target].push_back(e);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Detection>& nodes() const { return nodes_; }
  const std::vector<CandidateEdge>& edges() const { return edges_; }
  const Detection& node(std::size_t i) const { return nodes_[i]; }
  const CandidateEdge& edge(std::size_t e) const { return edges_[e]; }
  const std::vector<std::size_t>& in_edges(std::size_t v) const { return in_[v]; }
  const std::vector<std::size_t>& out_edges(std::size_t v) const { return out_[v]; }

  bool contains(std::int64_t id) const { return index_.count(id) != 0; }
  std::size_t index_of(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::out_of_range("no detection with id " + std::to_string(id));
    return it->second;
  }

  /// Edge index for (source index, target index), or npos.
  std::size_t find_edge(std::size_t source, std::size_t target) const {
    for (std::size_t e : out_[source])
      if (edges_[e].target == target) return e;
    return npos;
  }

  int first_frame() const { return nodes_.empty() ? 0 : nodes_.front().frame; }
  int last_frame() const { return nodes_.empty() ? -1 : nodes_.back().frame; }

  std::vector<EdgeSpec> edge_specs() const {
    std::vector<EdgeSpec> out;
    out.reserve(edges_.size());
    for (const auto& e : edges_) out.push_back({nodes_[e.source].id, nodes_[e.target].id, e.cost});
    return out;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<Detection> nodes_;
  std::vector<CandidateEdge> edges_;
  std::unordered_map<std::int64_t, std::size_t> index_;
  std::vector<std::vector<std::size_t>> in_, out_;
};

// ---------------------------------------------------------------------------
// Indicator layout: [node | track | parent | daughter | continue | edge]

using IndicatorVector = std::vector<std::uint8_t>;

enum class IndicatorBlock : int { node = 0, track = 1, parent = 2, daughter = 3, continuation = 4, edge = 5 };

inline constexpr int kNumBlocks = 6;

inline const char* to_string(IndicatorBlock b) {
  static constexpr const char* names[] = {"node", "track", "parent", "daughter", "continue", "edge"};
  return names[static_cast<int>(b)];
}

struct IndicatorLayout {
  std::size_t nodes = 0;
  std::size_t edges = 0;

  IndicatorLayout() = default;
  IndicatorLayout(std::size_t n, std::size_t m) : nodes(n), edges(m) {}
  explicit IndicatorLayout(const CandidateGraph& g) : nodes(g.num_nodes()), edges(g.num_edges()) {}

  std::size_t size() const { return 5 * nodes + edges; }
  std::size_t node(std::size_t v) const { return v; }
  std::size_t track(std::size_t v) const { return nodes + v; }
  std::size_t parent(std::size_t v) const { return 2 * nodes + v; }
  std::size_t daughter(std::size_t v) const { return 3 * nodes + v; }
  std::size_t continuation(std::size_t v) const { return 4 * nodes + v; }
  std::size_t state(std::size_t v, CellState s) const { return (2 + static_cast<std::size_t>(s)) * nodes + v; }
  std::size_t edge(std::size_t e) const { return 5 * nodes + e; }

  IndicatorBlock block_of(std::size_t i) const {
    if (i >= 5 * nodes) return IndicatorBlock::edge;
    return static_cast<IndicatorBlock>(i / nodes);
  }
  /// Node or edge index the indicator belongs to.
  std::size_t element_of(std::size_t i) const { return i >= 5 * nodes ? i - 5 * nodes : i % nodes; }
};

// ---------------------------------------------------------------------------
// Weights

enum WeightIndex : int {
  kNodeSelection = 0,
  kNodeScore = 1,
  kTrack = 2,
  kDivision = 3,
  kParent = 4,
  kDaughter = 5,
  kContinue = 6,
  kEdge = 7
};

inline constexpr std::array<const char*, 8> kWeightNames = {"node_sel", "node_score", "track",    "div",
                                                            "parent",   "daughter",   "continue", "edge"};

struct WeightVector {
  std::array<double, 8> values{};

  WeightVector() = default;
  explicit WeightVector(const std::array<double, 8>& v) : values(v) { check(); }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  void check() const {
    for (double v : values)
      if (!std::isfinite(v)) throw std::invalid_argument("weight vector has a non-finite entry");
  }
  double squared_norm() const {
    double s = 0;
    for (double v : values) s += v * v;
    return s;
  }
  friend bool operator==(const WeightVector&, const WeightVector&) = default;
  friend auto operator<=>(const WeightVector& a, const WeightVector& b) { return a.values <=> b.values; }
};

inline std::ostream& operator<<(std::ostream& os, const WeightVector& w) {
  os << '(';
  for (int k = 0; k < 8; ++k) os << (k ? ", " : "") << w[k];
  return os << ')';
}

// ---------------------------------------------------------------------------
// Lineage forest

struct LineageNode {
  std::int64_t id = 0;
  int frame = 0;
  Vec3 position{};
  CellState state = CellState::continuation;
  std::int64_t track = 0;
  bool polar = false;

  friend bool operator==(const LineageNode&, const LineageNode&) = default;
};

/// A selected lineage: nodes in (frame, id) order and parent->child edges.
/// Also the in-memory form of ground truth.
class LineageForest {
 public:
  LineageForest() = default;

  /// Builds the forest; edges are (parent id, child id). Track ids are assigned
  /// from topology; states are kept as given.
  LineageForest(std::vector<LineageNode> nodes, const std::vector<std::pair<std::int64_t, std::int64_t>>& edges) {
    std::sort(nodes.begin(), nodes.end(), [](const LineageNode& a, const LineageNode& b) {
      return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
    });
    nodes_ = std::move(nodes);
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!index_.emplace(nodes_[i].id, i).second)
        throw std::invalid_argument("lineage: duplicate node id " + std::to_string(nodes_[i].id));
    parent_.assign(nodes_.size(), npos);
    children_.assign(nodes_.size(), {});
    for (auto [p, c] : edges) {
      auto pi = index_.find(p), ci = index_.find(c);
      if (pi == index_.end() || ci == index_.end())
        throw std::invalid_argument("lineage: edge " + std::to_string(p) + "->" + std::to_string(c) +
                                    " references a missing node");
      edges_.emplace_back(pi->second, ci->second);
    }
    std::sort(edges_.begin(), edges_.end());
    for (auto [p, c] : edges_) {
      if (parent_[c] != npos)
        throw std::invalid_argument("lineage: node " + std::to_string(nodes_[c].id) + " has two parents");
      parent_[c] = p;
      children_[p].push_back(c);
    }
    assign_tracks();
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<LineageNode>& nodes() const { return nodes_; }
  const LineageNode& node(std::size_t i) const { return nodes_[i]; }
  /// (parent index, child index) pairs.
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
  std::size_t parent_of(std::size_t i) const { return parent_[i]; }
  const std::vector<std::size_t>& children_of(std::size_t i) const { return children_[i]; }
  bool contains(std::int64_t id) const { return index_.count(id) != 0; }
  std::size_t index_of(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::out_of_range("lineage: no node " + std::to_string(id));
    return it->second;
  }
  bool is_division(std::size_t i) const { return children_[i].size() == 2; }

  /// Overwrites states from topology: two children -> parent, child of a
  /// two-child node -> daughter, otherwise continue. Parent wins if both apply.
  void label_states_from_topology() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (children_[i].size() == 2)
        nodes_[i].state = CellState::parent;
      else if (parent_[i] != npos && children_[parent_[i]].size() == 2)
        nodes_[i].state = CellState::daughter;
      else
        nodes_[i].state = CellState::continuation;
    }
  }

  /// Returns an empty string when the forest invariants hold, else a diagnostic.
  std::string validate() const {
    for (auto [p, c] : edges_) {
      if (nodes_[c].frame != nodes_[p].frame + 1)
        return "edge " + std::to_string(nodes_[p].id) + "->" + std::to_string(nodes_[c].id) +
               " does not go one frame forward";
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (children_[i].size() > 2) return "node " + std::to_string(nodes_[i].id) + " has more than two children";
      if (children_[i].size() == 2 && nodes_[i].state != CellState::parent)
        return "node " + std::to_string(nodes_[i].id) + " divides but is not labeled parent";
    }
    return {};
  }

  /// Drops nodes matching the predicate together with their incident edges.
  LineageForest without(const std::function<bool(const LineageNode&)>& drop) const {
    std::vector<LineageNode> keep;
    for (const auto& n : nodes_)
      if (!drop(n)) keep.push_back(n);
    std::vector<std::pair<std::int64_t, std::int64_t>> e;
    for (auto [p, c] : edges_)
      if (!drop(nodes_[p]) && !drop(nodes_[c])) e.emplace_back(nodes_[p].id, nodes_[c].id);
    LineageForest f(std::move(keep), e);
    return f;
  }

  std::vector<std::pair<std::int64_t, std::int64_t>> edge_ids() const {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (auto [p, c] : edges_) out.emplace_back(nodes_[p].id, nodes_[c].id);
    return out;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  // A track segment starts at a root or at a child of a dividing node and
  // runs through single-child links.
  void assign_tracks() {
    std::int64_t next = 1;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const std::size_t p = parent_[i];
      if (p == npos || children_[p].size() != 1)
        nodes_[i].track = next++;
      else
        nodes_[i].track = nodes_[p].track;
    }
  }

  std::vector<LineageNode> nodes_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::unordered_map<std::int64_t, std::size_t> index_;
  std::vector<std::size_t> parent_;
  std::vector<std::vector<std::size_t>> children_;
};

}  // namespace celltrack
