#pragma once

// Indicator vector -> lineage forest.

#include "celltrack/types.hpp"

namespace celltrack {

/// Reads selected nodes, their states and selected edges out of `y`. Throws
/// if `y` is not a consistent selection (wrong length, a selected node without
/// exactly one state, an edge touching an unselected node).
inline LineageForest decode(const CandidateGraph& g, std::span<const std::uint8_t> y) {
  const IndicatorLayout L(g);
  if (y.size() != L.size())
    throw std::invalid_argument("decode: indicator length " + std::to_string(y.size()) + ", expected " +
                                std::to_string(L.size()));
  std::vector<LineageNode> nodes;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const Detection& d = g.node(v);
    const int states = y[L.parent(v)] + y[L.daughter(v)] + y[L.continuation(v)];
    if (!y[L.node(v)]) {
      if (states || y[L.track(v)])
        throw std::invalid_argument("decode: unselected node " + std::to_string(d.id) + " carries a state or track");
      continue;
    }
    if (states != 1)
      throw std::invalid_argument("decode: node " + std::to_string(d.id) + " has " + std::to_string(states) +
                                  " states");
    LineageNode n;
    n.id = d.id;
    n.frame = d.frame;
    n.position = d.position;
    n.state = y[L.parent(v)] ? CellState::parent : y[L.daughter(v)] ? CellState::daughter : CellState::continuation;
    nodes.push_back(n);
  }
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    if (!y[L.edge(e)]) continue;
    const auto& ed = g.edge(e);
    if (!y[L.node(ed.source)] || !y[L.node(ed.target)])
      throw std::invalid_argument("decode: edge " + std::to_string(g.node(ed.source).id) + "->" +
                                  std::to_string(g.node(ed.target).id) + " touches an unselected node");
    edges.emplace_back(g.node(ed.source).id, g.node(ed.target).id);
  }
  return LineageForest(std::move(nodes), edges);
}

/// decode followed by LineageForest::validate; throws on any violation.
inline LineageForest decode_validated(const CandidateGraph& g, std::span<const std::uint8_t> y) {
  LineageForest f = decode(g, y);
  if (auto msg = f.validate(); !msg.empty()) throw std::logic_error("decoded lineage is invalid: " + msg);
  return f;
}

}  // namespace celltrack
