#pragma once

// Candidate graph construction from detections.

#include <optional>

#include "celltrack/types.hpp"

namespace celltrack {

struct GraphBuildConfig {
  double score_threshold = 0.2;
  int max_edge_candidates = 4;
  double max_edge_distance = 0.0;
  std::optional<double> polar_body_threshold;  ///< empty = no polar-body filtering

  void check() const {
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
      throw std::invalid_argument("graph config: score_threshold must lie in [0,1]");
    if (max_edge_candidates < 1) throw std::invalid_argument("graph config: max_edge_candidates must be >= 1");
    if (!(max_edge_distance > 0.0) || !std::isfinite(max_edge_distance))
      throw std::invalid_argument("graph config: max_edge_distance must be positive");
    if (polar_body_threshold && !(*polar_body_threshold >= 0.0 && *polar_body_threshold <= 1.0))
      throw std::invalid_argument("graph config: polar_body_threshold must lie in [0,1]");
  }
};

/// Keeps detections with score >= threshold and, when enabled, polar-body
/// score < polar threshold. Order is preserved.
inline std::vector<Detection> filter_detections(const std::vector<Detection>& dets, const GraphBuildConfig& cfg) {
  std::vector<Detection> out;
  for (const auto& d : dets) {
    if (d.score < cfg.score_threshold) continue;
    if (cfg.polar_body_threshold && d.state_scores[kPolarScore] >= *cfg.polar_body_threshold) continue;
    out.push_back(d);
  }
  return out;
}

/// Links every detection to its k nearest predecessors around the movement
/// target p = position + movement; the edge cost is the distance to p.
inline CandidateGraph build_graph(std::vector<Detection> dets, const GraphBuildConfig& cfg) {
  cfg.check();
  std::map<int, std::vector<std::size_t>> by_frame;
  for (std::size_t i = 0; i < dets.size(); ++i) by_frame[dets[i].frame].push_back(i);
  std::vector<CandidateGraph::EdgeSpec> edges;
  std::vector<std::pair<double, std::int64_t>> cand;
  for (const auto& d : dets) {
    auto prev = by_frame.find(d.frame - 1);
    if (prev == by_frame.end()) continue;
    const Vec3 target = d.position + d.movement;
    cand.clear();
    for (std::size_t j : prev->second) {
      const double dist = distance(dets[j].position, target);
      if (dist <= cfg.max_edge_distance) cand.emplace_back(dist, dets[j].id);
    }
    const std::size_t k = std::min(cand.size(), static_cast<std::size_t>(cfg.max_edge_candidates));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t c = 0; c < k; ++c) edges.push_back({cand[c].second, d.id, cand[c].first});
  }
  return CandidateGraph(std::move(dets), edges);
}

}  // namespace celltrack
