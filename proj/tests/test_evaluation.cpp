#include <gtest/gtest.h>

#include <random>

#include "celltrack/evaluation.hpp"
#include "celltrack/simulator.hpp"

using namespace celltrack;

namespace {

LineageNode node(std::int64_t id, int frame, Vec3 pos, bool polar = false) {
  LineageNode n;
  n.id = id;
  n.frame = frame;
  n.position = pos;
  n.polar = polar;
  return n;
}

using Edges = std::vector<std::pair<std::int64_t, std::int64_t>>;

LineageForest forest(std::vector<LineageNode> nodes, const Edges& edges) {
  LineageForest f(std::move(nodes), edges);
  f.label_states_from_topology();
  return f;
}

// Two parallel tracks, ids 1..4 at y = 0 and 11..14 at y = 10.
std::vector<LineageNode> two_track_nodes() {
  std::vector<LineageNode> n;
  for (int t = 0; t < 4; ++t) {
    n.push_back(node(1 + t, t, {0, 0, double(t)}));
    n.push_back(node(11 + t, t, {0, 10, double(t)}));
  }
  return n;
}

const Edges kTwoTracks = {{1, 2}, {2, 3}, {3, 4}, {11, 12}, {12, 13}, {13, 14}};

// Track 1-2-3-4 dividing into 5 and 6 at frame 4; `at` selects which node
// divides (3 or 4). Daughters keep the same positions either way.
LineageForest dividing_track(int at) {
  std::vector<LineageNode> n;
  for (int t = 0; t < 4; ++t) n.push_back(node(1 + t, t, {0, 0, double(t)}));
  n.push_back(node(5, 4, {0, 5, 4}));
  n.push_back(node(6, 4, {0, -5, 4}));
  n.push_back(node(7, 5, {0, 5, 5}));
  n.push_back(node(8, 5, {0, -5, 5}));
  n.push_back(node(9, 4, {0, 0, 4}));
  Edges e = {{1, 2}, {2, 3}, {3, 4}, {5, 7}, {6, 8}};
  if (at == 4) {
    n.pop_back();
    e.push_back({4, 5});
    e.push_back({4, 6});
  } else {
    // Division one frame early: 3 divides into 4 and 9, which continue to 5
    // and 6.
    e = {{1, 2}, {2, 3}, {3, 4}, {3, 9}, {4, 5}, {9, 6}, {5, 7}, {6, 8}};
    n.back().position = {0, -2, 3};
    n.back().frame = 3;
    n[3].position = {0, 2, 3};
  }
  return forest(std::move(n), e);
}

LineageForest single_track(int len) {
  std::vector<LineageNode> n;
  Edges e;
  for (int t = 0; t < len; ++t) {
    n.push_back(node(t + 1, t, {0, 0, double(t)}));
    if (t) e.push_back({t, t + 1});
  }
  return forest(std::move(n), e);
}

ErrorReport errors(const LineageForest& pred, const LineageForest& gt, int tol = 1, double radius = 1.0) {
  return count_errors(pred, gt, match_nodes(pred, gt, radius), tol);
}

// Copy of `f` with some edges and nodes dropped, some positions moved and some
// nodes added.
LineageForest perturb(const LineageForest& f, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<LineageNode> nodes;
  std::set<std::int64_t> kept;
  for (const auto& n : f.nodes()) {
    if (u(rng) < 0.05) continue;
    LineageNode c = n;
    if (u(rng) < 0.1) c.position = c.position + Vec3{0, 20, 0};
    nodes.push_back(c);
    kept.insert(n.id);
  }
  std::int64_t next = 1'000'000;
  for (int k = 0; k < 5; ++k) nodes.push_back(node(next++, static_cast<int>(rng() % 10), {u(rng) * 50, 0, 0}));
  Edges e;
  for (auto [p, c] : f.edge_ids())
    if (kept.count(p) && kept.count(c) && u(rng) > 0.05) e.emplace_back(p, c);
  return forest(std::move(nodes), e);
}

LineageForest relabel(const LineageForest& f, const std::unordered_map<std::int64_t, std::int64_t>& map) {
  std::vector<LineageNode> nodes = f.nodes();
  for (auto& n : nodes) n.id = map.at(n.id);
  Edges e;
  for (auto [p, c] : f.edge_ids()) e.emplace_back(map.at(p), map.at(c));
  return forest(std::move(nodes), e);
}

LineageForest simulated_gt(std::uint64_t seed) {
  SimConfig c;
  c.seed = seed;
  c.n_frames = 10;
  c.initial_cells = 5;
  c.division_prob = 0.1;
  c.motion_std = 2.0;
  return simulate_gt(c);
}

}  // namespace

TEST(Matching, IdenticalForestsMatchPerfectly) {
  const auto gt = forest(two_track_nodes(), kTwoTracks);
  const auto m = match_nodes(gt, gt, 15.0);
  EXPECT_TRUE(m.unmatched_gt.empty());
  EXPECT_TRUE(m.unmatched_pred.empty());
  for (std::size_t i = 0; i < gt.num_nodes(); ++i) EXPECT_EQ(m.pred_to_gt[i], i);
}

TEST(Matching, RadiusIsInclusive) {
  const auto gt = forest({node(1, 0, {0, 0, 0})}, {});
  const auto at = forest({node(2, 0, {0, 0, 15.0})}, {});
  const auto beyond = forest({node(2, 0, {0, 0, std::nextafter(15.0, 16.0)})}, {});
  EXPECT_TRUE(match_nodes(at, gt, 15.0).unmatched_gt.empty());
  const auto m = match_nodes(beyond, gt, 15.0);
  EXPECT_EQ(m.unmatched_gt, std::vector<std::int64_t>{1});
  EXPECT_EQ(m.unmatched_pred, std::vector<std::int64_t>{2});
}

// Greedy nearest-pair matching would take (g2, p1) at distance 1.5 and then
// (g1, p2) at 6.5; the optimal assignment costs 2.5 + 2.5.
TEST(Matching, MinimisesTotalDistance) {
  const auto gt = forest({node(1, 0, {0, 0, 0}), node(2, 0, {0, 0, 4})}, {});
  const auto pred = forest({node(11, 0, {0, 0, 2.5}), node(12, 0, {0, 0, 6.5})}, {});
  const auto m = match_nodes(pred, gt, 10.0);
  EXPECT_EQ(gt.node(m.pred_to_gt[pred.index_of(11)]).id, 1);
  EXPECT_EQ(gt.node(m.pred_to_gt[pred.index_of(12)]).id, 2);
}

TEST(Matching, PrefersMoreMatches) {
  // p1 is closest to g1 but only p1 can reach g2.
  const auto gt = forest({node(1, 0, {0, 0, 0}), node(2, 0, {0, 0, 9})}, {});
  const auto pred = forest({node(11, 0, {0, 0, 4}), node(12, 0, {0, 0, -3})}, {});
  const auto m = match_nodes(pred, gt, 5.0);
  EXPECT_TRUE(m.unmatched_gt.empty());
}

TEST(Errors, IdenticalForestsHaveNoErrors) {
  const auto gt = dividing_track(4);
  const auto r = errors(gt, gt);
  EXPECT_EQ(r.sum(), 0u);
  EXPECT_EQ(r.fp_nodes + r.fn_nodes, 0u);
  EXPECT_EQ(r.det, 1.0);
  EXPECT_EQ(r.tra, 1.0);
}

TEST(Errors, SwappedContinuationsAreIdentitySwitches) {
  const auto gt = forest(two_track_nodes(), kTwoTracks);
  const auto pred = forest(two_track_nodes(), {{1, 2}, {2, 13}, {3, 4}, {11, 12}, {12, 3}, {13, 14}});
  const auto r = errors(pred, gt);
  EXPECT_EQ(r.is, 2u);
  EXPECT_EQ(r.fp_edges, 0u);
  EXPECT_EQ(r.fn_edges, 0u);
  EXPECT_EQ(r.div(), 0u);
  EXPECT_EQ(r.sum(), 2u);
  EXPECT_LT(r.tra, 1.0);
  EXPECT_EQ(r.det, 1.0);
}

TEST(Errors, MissingAndExtraEdges) {
  const auto gt = forest(two_track_nodes(), kTwoTracks);
  auto nodes = two_track_nodes();
  nodes.push_back(node(50, 1, {0, 40, 0}));
  const auto pred = forest(nodes, {{1, 2}, {3, 4}, {11, 12}, {12, 13}, {13, 14}, {1, 50}});
  const auto r = errors(pred, gt);
  EXPECT_EQ(r.fn_edges, 1u);  // 2->3
  EXPECT_EQ(r.fp_edges, 1u);  // 1->50, 50 is unmatched
  EXPECT_EQ(r.is, 0u);
  EXPECT_EQ(r.fp_div, 1u);    // 1 has two children
  EXPECT_EQ(r.fp_nodes, 1u);
}

TEST(Errors, ShiftedDivisionWithinTolerance) {
  const auto gt = dividing_track(4);
  const auto pred = dividing_track(3);
  const auto at1 = errors(pred, gt, 1, 3.0);
  EXPECT_EQ(at1.fp_div, 0u);
  EXPECT_EQ(at1.fn_div, 0u);
  EXPECT_EQ(at1.div(), 0u);
  const auto at0 = errors(pred, gt, 0, 3.0);
  EXPECT_EQ(at0.fp_div, 1u);
  EXPECT_EQ(at0.fn_div, 1u);
  EXPECT_EQ(at0.div(), 2u);
}

TEST(Errors, SumAndNormalisation) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const auto gt = simulated_gt(100 + trial);
    const auto pred = perturb(gt, rng);
    const auto r = errors(pred, gt, 1, 3.0);
    EXPECT_EQ(r.sum(), r.fp_edges + r.fn_edges + r.is + r.fp_div + r.fn_div);
    EXPECT_EQ(r.div(), r.fp_div + r.fn_div);
    EXPECT_DOUBLE_EQ(r.per_thousand(r.sum()), 1000.0 * r.sum() / gt.num_edges());
    EXPECT_GE(r.det, 0.0);
    EXPECT_LE(r.det, 1.0);
    EXPECT_GE(r.tra, 0.0);
    EXPECT_LE(r.tra, 1.0);
  }
}

TEST(Errors, InvariantUnderRelabelling) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const auto gt = simulated_gt(200 + trial);
    const auto pred = perturb(gt, rng);
    auto permutation = [&](const LineageForest& f, std::int64_t offset) {
      std::vector<std::int64_t> ids;
      for (const auto& n : f.nodes()) ids.push_back(n.id);
      auto shuffled = ids;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      std::unordered_map<std::int64_t, std::int64_t> map;
      for (std::size_t i = 0; i < ids.size(); ++i) map[ids[i]] = shuffled[i] + offset;
      return map;
    };
    const auto gt2 = relabel(gt, permutation(gt, 7));
    const auto pred2 = relabel(pred, permutation(pred, 3));
    const auto a = errors(pred, gt, 1, 3.0), b = errors(pred2, gt2, 1, 3.0);
    EXPECT_EQ(a.fp_edges, b.fp_edges);
    EXPECT_EQ(a.fn_edges, b.fn_edges);
    EXPECT_EQ(a.is, b.is);
    EXPECT_EQ(a.fp_div, b.fp_div);
    EXPECT_EQ(a.fn_div, b.fn_div);
    EXPECT_DOUBLE_EQ(a.det, b.det);
    EXPECT_DOUBLE_EQ(a.tra, b.tra);
  }
}

TEST(Errors, PerfectScoresExactlyWhenNoDiscrepancy) {
  std::mt19937_64 rng(10);
  int perfect = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto gt = simulated_gt(300 + trial);
    const auto pred = trial % 3 == 0 ? gt : perturb(gt, rng);
    const auto r = errors(pred, gt, 1, 3.0);
    const bool clean = r.fp_nodes == 0 && r.fn_nodes == 0 && r.fp_edges == 0 && r.fn_edges == 0 && r.is == 0;
    EXPECT_EQ(clean, r.det == 1.0 && r.tra == 1.0);
    perfect += clean;
  }
  EXPECT_GT(perfect, 0);
}

TEST(DetTra, OneMissingNodeOfHundred) {
  std::vector<LineageNode> gt_nodes, pred_nodes;
  Edges gt_edges, pred_edges;
  for (int k = 0; k < 10; ++k)
    for (int t = 0; t < 10; ++t) {
      const std::int64_t id = k * 10 + t + 1;
      gt_nodes.push_back(node(id, t, {0, 30.0 * k, double(t)}));
      if (t) gt_edges.push_back({id - 1, id});
      if (k == 0 && t == 9) continue;
      pred_nodes.push_back(gt_nodes.back());
      if (t) pred_edges.push_back({id - 1, id});
    }
  const auto gt = forest(gt_nodes, gt_edges), pred = forest(pred_nodes, pred_edges);
  const auto [det, tra] = det_tra(pred, gt, match_nodes(pred, gt, 1.0));
  EXPECT_DOUBLE_EQ(det, 1.0 - 10.0 / (10.0 * 100));
  // One node (10) and one link (1.5) missing out of 100 nodes and 90 links.
  EXPECT_DOUBLE_EQ(tra, 1.0 - (10.0 + 1.5) / (10.0 * 100 + 1.5 * 90));
}

TEST(DetTra, EmptyPredictionScoresZero) {
  const auto gt = dividing_track(4);
  const LineageForest empty;
  const auto [det, tra] = det_tra(empty, gt, match_nodes(empty, gt, 15.0));
  EXPECT_EQ(det, 0.0);
  EXPECT_EQ(tra, 0.0);
  EXPECT_THROW(det_tra(gt, empty, match_nodes(gt, empty, 15.0)), std::invalid_argument);
}

TEST(Tracklets, PerfectPredictionIsAllOnes) {
  const auto gt = dividing_track(4);
  const auto curve = tracklet_fraction(gt, gt, match_nodes(gt, gt, 1.0), 20);
  ASSERT_EQ(curve.size(), 5u);  // longest path: 1-2-3-4-5-7
  for (double v : curve) EXPECT_EQ(v, 1.0);
}

TEST(Tracklets, EmptyPredictionIsAllZeros) {
  const auto gt = single_track(6);
  const LineageForest empty;
  for (double v : tracklet_fraction(empty, gt, match_nodes(empty, gt, 1.0), 10)) EXPECT_EQ(v, 0.0);
}

TEST(Tracklets, SingleMissingEdgeCountsCoveringWindows) {
  const int len = 12;
  const auto gt = single_track(len);
  for (int bad = 0; bad < len - 1; ++bad) {
    Edges e;
    for (int t = 1; t < len; ++t)
      if (t - 1 != bad) e.push_back({t, t + 1});
    std::vector<LineageNode> nodes = gt.nodes();
    const auto pred = forest(nodes, e);
    const auto curve = tracklet_fraction(pred, gt, match_nodes(pred, gt, 1.0), 8);
    ASSERT_EQ(curve.size(), 8u);
    const int edges = len - 1;
    EXPECT_DOUBLE_EQ(curve[0], 1.0 - 1.0 / edges);
    for (int l = 1; l <= 8; ++l) {
      int windows = 0, clean = 0;
      for (int s = 0; s + l <= edges; ++s) {
        ++windows;
        if (bad < s || bad >= s + l) ++clean;
      }
      EXPECT_DOUBLE_EQ(curve[l - 1], double(clean) / windows) << "bad " << bad << " l " << l;
      if (l > 1) {
        EXPECT_LE(curve[l - 1], curve[l - 2]);
      }
    }
  }
}

TEST(Tracklets, InvalidWindow) {
  const auto gt = single_track(3);
  EXPECT_THROW(tracklet_fraction(gt, gt, match_nodes(gt, gt, 1.0), 0), std::invalid_argument);
}

TEST(Evaluate, PolarBodiesExcludedWhenRequested) {
  auto nodes = two_track_nodes();
  for (int t = 0; t < 3; ++t) nodes.push_back(node(40 + t, t, {0, 50, 0}, true));
  const auto gt = forest(nodes, {{1, 2}, {2, 3}, {3, 4}, {11, 12}, {12, 13}, {13, 14}, {40, 41}, {41, 42}});
  const auto pred = forest(two_track_nodes(), kTwoTracks);
  EvaluationConfig cfg;
  cfg.match_radius = 1.0;
  const auto with = evaluate(pred, gt, cfg);
  EXPECT_EQ(with.errors.fn_edges, 2u);
  EXPECT_EQ(with.errors.fn_nodes, 3u);
  cfg.exclude_polar_bodies = true;
  const auto without = evaluate(pred, gt, cfg);
  EXPECT_EQ(without.errors.sum(), 0u);
  EXPECT_EQ(without.errors.gt_nodes, 8u);
  EXPECT_EQ(without.errors.det, 1.0);
}
