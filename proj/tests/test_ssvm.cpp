#include <gtest/gtest.h>

#include <random>

#include "celltrack/brute_force.hpp"
#include "celltrack/graph_build.hpp"
#include "celltrack/simulator.hpp"
#include "celltrack/ssvm.hpp"
#include "random_instances.hpp"

using namespace celltrack;

namespace {

Detection det(std::int64_t id, int frame, Vec3 pos = {}, std::array<double, 4> states = {0, 0, 1, 0}) {
  Detection d;
  d.id = id;
  d.frame = frame;
  d.position = pos;
  d.score = 1.0;
  d.state_scores = states;
  return d;
}

LineageNode gt_node(std::int64_t id, int frame, Vec3 pos) {
  LineageNode n;
  n.id = id;
  n.frame = frame;
  n.position = pos;
  return n;
}

LineageForest gt_forest(std::vector<LineageNode> nodes, const std::vector<std::pair<std::int64_t, std::int64_t>>& e) {
  LineageForest f(std::move(nodes), e);
  f.label_states_from_topology();
  return f;
}

// A feasible target: the exhaustive optimum under some random weights.
IndicatorVector random_feasible(std::mt19937_64& rng, const CandidateGraph& g, const FeatureMatrix& s,
                                const ConstraintSystem& cs) {
  return brute_force_solve(g, s, fixtures::random_weights(rng, false), cs).y;
}

HammingCosts random_costs(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  HammingCosts h;
  for (int b = 0; b < kNumBlocks; ++b) {
    h.fp[b] = u(rng);
    h.fn[b] = u(rng);
  }
  return h;
}

// Exhaustive min of <S w, y> - Delta(y', y), evaluated directly per assignment.
double exhaustive_loss_augmented(const CandidateGraph& g, const FeatureMatrix& s, const WeightVector& w,
                                 const ConstraintSystem& cs, const IndicatorVector& yp, const HammingCosts& h) {
  const auto zero = std::vector<double>(cs.num_indicators(), 0.0);
  detail::Enumerator en(cs, zero);
  double best = std::numeric_limits<double>::infinity();
  const IndicatorLayout L(g);
  en.run([&](const IndicatorVector& y, double) {
    best = std::min(best, objective_value(s, w, y) - hamming(yp, y, L, h));
    return true;
  });
  return best;
}

struct Instance {
  LineageForest gt;
  CandidateGraph g;
  FeatureMatrix s;
  ConstraintSystem cs;
  BestEffort be;
};

Instance simulated(const SimConfig& c, double max_dist = 20.0) {
  Instance in;
  in.gt = simulate_gt(c);
  GraphBuildConfig gc;
  gc.max_edge_distance = max_dist;
  in.g = build_graph(filter_detections(render_detections(in.gt, c), gc), gc);
  in.s = build_feature_matrix(in.g);
  in.cs = build_constraints(in.g);
  in.be = best_effort(in.g, in.gt);
  return in;
}

SimConfig clean_config(std::uint64_t seed) {
  SimConfig c;
  c.seed = seed;
  c.n_frames = 15;
  c.initial_cells = 4;
  c.division_prob = 0.08;
  c.box = {30, 80, 80};
  return c;
}

SimConfig noisy_config(std::uint64_t seed) {
  SimConfig c = clean_config(seed);
  c.dropout = 0.05;
  c.clutter_rate = 2.0;
  c.jitter_std = 1.0;
  c.movement_noise_std = 1.0;
  c.cell_score_std = 0.1;
  c.clutter_score_std = 0.2;
  c.state_score_noise = 0.1;
  return c;
}

std::size_t node_false_positives(const CandidateGraph& g, const IndicatorVector& yp, const IndicatorVector& y) {
  std::size_t n = 0;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) n += y[v] && !yp[v];
  return n;
}

}  // namespace

TEST(Hamming, Examples) {
  const IndicatorLayout L(2, 2);
  const IndicatorVector a = {1, 1, 1, 0, 0, 0, 0, 0, 1, 1, 1, 0};
  EXPECT_EQ(hamming(a, a, L, HammingCosts{}), 0.0);
  IndicatorVector b = a;
  b[0] = 0;
  b[3] = 1;
  b[11] = 1;
  EXPECT_EQ(hamming(a, b, L, HammingCosts{}), 3.0);
  // Two extra selections at cost 100 and one missing at cost 1.
  EXPECT_EQ(hamming(a, b, L, HammingCosts::uniform(100.0, 1.0)), 201.0);
  EXPECT_THROW(hamming(a, IndicatorVector(11, 0), L, HammingCosts{}), std::invalid_argument);
  EXPECT_THROW(HammingCosts::uniform(-1.0, 1.0), std::invalid_argument);
}

TEST(Hamming, UnitCostMetric) {
  std::mt19937_64 rng(1);
  const IndicatorLayout L(4, 6);
  auto draw = [&] {
    IndicatorVector y(L.size());
    for (auto& x : y) x = rng() & 1;
    return y;
  };
  for (int trial = 0; trial < 500; ++trial) {
    const auto x = draw(), y = draw(), z = draw();
    const HammingCosts h;
    EXPECT_EQ(hamming(x, y, L, h), hamming(y, x, L, h));
    EXPECT_LE(hamming(x, z, L, h), hamming(x, y, L, h) + hamming(y, z, L, h));
    EXPECT_EQ(hamming(x, y, L, h) == 0.0, x == y);
  }
}

TEST(BestEffort, NoiseFreeReproducesGroundTruth) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SimConfig c = clean_config(seed);
    const auto gt = simulate_gt(c);
    std::vector<std::int64_t> src;
    const auto dets = render_detections(gt, c, &src);
    GraphBuildConfig gc;
    gc.max_edge_distance = 20.0;
    const auto g = build_graph(dets, gc);
    const auto be = best_effort(g, gt);
    EXPECT_TRUE(be.unmatched_gt.empty());
    EXPECT_TRUE(be.unreachable_edges.empty());
    ASSERT_TRUE(build_constraints(g).feasible(be.y));

    std::unordered_map<std::int64_t, std::int64_t> to_gt;
    for (std::size_t i = 0; i < dets.size(); ++i) to_gt[dets[i].id] = src[i];
    const auto pred = decode_validated(g, be.y);
    ASSERT_EQ(pred.num_nodes(), gt.num_nodes());
    std::vector<std::pair<std::int64_t, std::int64_t>> mapped;
    for (auto [p, q] : pred.edge_ids()) mapped.emplace_back(to_gt.at(p), to_gt.at(q));
    std::sort(mapped.begin(), mapped.end());
    auto expected = gt.edge_ids();
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(mapped, expected);
    for (const auto& n : pred.nodes()) EXPECT_EQ(n.state, gt.node(gt.index_of(to_gt.at(n.id))).state);
  }
}

TEST(BestEffort, DistantCandidateIsUnmatched) {
  const auto gt = gt_forest({gt_node(1, 0, {0, 0, 0}), gt_node(2, 1, {0, 0, 0}), gt_node(3, 2, {0, 0, 0})},
                            {{1, 2}, {2, 3}});
  const CandidateGraph g({det(11, 0), det(12, 1, {0, 0, 20}), det(13, 2)}, {{11, 12, 0.0}, {12, 13, 0.0}});
  const auto be = best_effort(g, gt, 15.0);
  EXPECT_EQ(be.unmatched_gt, std::vector<std::int64_t>{2});
  EXPECT_EQ(be.unreachable_edges, (std::vector<std::pair<std::int64_t, std::int64_t>>{{1, 2}, {2, 3}}));
  const IndicatorLayout L(g);
  EXPECT_EQ(be.y[L.node(1)], 0);
  EXPECT_EQ(be.y[L.track(0)], 1);
  EXPECT_EQ(be.y[L.track(2)], 1);
  EXPECT_TRUE(build_constraints(g).feasible(be.y));
}

TEST(BestEffort, DivisionWithMissingDaughter) {
  const auto gt = gt_forest({gt_node(1, 0, {0, 0, 0}), gt_node(2, 1, {0, 5, 0}), gt_node(3, 1, {0, -5, 0})},
                            {{1, 2}, {1, 3}});
  const CandidateGraph g({det(11, 0), det(12, 1, {0, 5, 0})}, {{11, 12, 0.0}});
  const auto be = best_effort(g, gt);
  const IndicatorLayout L(g);
  EXPECT_EQ(be.unreachable_edges, (std::vector<std::pair<std::int64_t, std::int64_t>>{{1, 3}}));
  EXPECT_EQ(be.y[L.parent(0)], 1);
  EXPECT_EQ(be.y[L.daughter(1)], 1);
  EXPECT_EQ(be.y[L.edge(0)], 1);
  EXPECT_TRUE(build_constraints(g).feasible(be.y));
}

TEST(LossAugmented, ZeroCostsEqualPlainSolve) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = fixtures::random_small_graph(rng, false);
    const auto s = build_feature_matrix(g);
    const auto cs = build_constraints(g);
    const auto w = fixtures::random_weights(rng, false);
    const auto yp = random_feasible(rng, g, s, cs);
    const auto a = loss_augmented_solve(g, s, w, cs, yp, HammingCosts::uniform(0, 0));
    const auto b = solve(g, s, w, cs);
    EXPECT_NEAR(a.objective, b.objective, 1e-9);
  }
}

TEST(LossAugmented, MatchesExhaustiveArgmin) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const bool coarse = trial % 2 == 0;
    const auto g = fixtures::random_small_graph(rng, coarse);
    const auto s = build_feature_matrix(g);
    const auto cs = build_constraints(g);
    const auto w = trial % 5 == 0 ? WeightVector{} : fixtures::random_weights(rng, coarse);
    const auto yp = random_feasible(rng, g, s, cs);
    const auto h = trial % 3 == 0 ? HammingCosts{} : random_costs(rng);
    const auto r = loss_augmented_solve(g, s, w, cs, yp, h);
    ASSERT_EQ(r.status, SolveStatus::optimal);
    EXPECT_TRUE(cs.feasible(r.y));
    const double direct = objective_value(s, w, r.y) - hamming(yp, r.y, IndicatorLayout(g), h);
    EXPECT_NEAR(r.objective, direct, 1e-9);
    EXPECT_NEAR(r.objective, exhaustive_loss_augmented(g, s, w, cs, yp, h), 1e-9) << "trial " << trial;
    EXPECT_LE(r.objective, objective_value(s, w, yp) + 1e-9);
  }
}

TEST(Loss, NonNegativeWithoutRegulariser) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 60; ++trial) {
    const auto g = fixtures::random_small_graph(rng, trial % 2 == 0);
    const auto s = build_feature_matrix(g);
    const auto cs = build_constraints(g);
    const auto yp = random_feasible(rng, g, s, cs);
    const auto lv = ssvm_loss(g, s, cs, yp, random_costs(rng), fixtures::random_weights(rng, false), 0.0);
    EXPECT_GE(lv.loss, -1e-9);
  }
}

TEST(Loss, TargetAsArgminLeavesOnlyRegulariser) {
  // A three-frame chain that any strongly selecting w tracks completely.
  const CandidateGraph g({det(1, 0), det(2, 1), det(3, 2)}, {{1, 2, 0.0}, {2, 3, 0.0}});
  const auto s = build_feature_matrix(g);
  const auto cs = build_constraints(g);
  const WeightVector w({-20, 0, 20, 20, 20, 20, -20, 0});
  const auto yp = solve(g, s, w, cs).y;
  const auto lv = ssvm_loss(g, s, cs, yp, HammingCosts{}, w, 0.001);
  EXPECT_EQ(lv.y_hat, yp);
  EXPECT_EQ(lv.delta, 0.0);
  EXPECT_NEAR(lv.loss, 0.001 * w.squared_norm(), 1e-9);
}

TEST(Loss, SubgradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const double h = 1e-5, lambda = 0.01;
  int checked = 0;
  for (int trial = 0; trial < 400 && checked < 20; ++trial) {
    const auto g = fixtures::random_small_graph(rng, false);
    const auto s = build_feature_matrix(g);
    const auto cs = build_constraints(g);
    const auto yp = random_feasible(rng, g, s, cs);
    const auto costs = random_costs(rng);
    const auto w = fixtures::random_weights(rng, false);
    const auto at = ssvm_loss(g, s, cs, yp, costs, w, lambda);
    std::array<double, 8> fd{};
    bool stable = true;
    for (int k = 0; k < 8 && stable; ++k) {
      WeightVector up = w, down = w;
      up[k] += h;
      down[k] -= h;
      const auto a = ssvm_loss(g, s, cs, yp, costs, up, lambda);
      const auto b = ssvm_loss(g, s, cs, yp, costs, down, lambda);
      stable = a.y_hat == at.y_hat && b.y_hat == at.y_hat;
      fd[k] = (a.loss - b.loss) / (2 * h);
    }
    if (!stable) continue;
    ++checked;
    for (int k = 0; k < 8; ++k)
      EXPECT_NEAR(fd[k], at.subgradient[k], 1e-4 * std::max(1.0, std::abs(at.subgradient[k])))
          << "trial " << trial << " coordinate " << kWeightNames[k];
  }
  EXPECT_EQ(checked, 20);
}

TEST(Fit, ZeroIterationsReturnInitial) {
  const auto in = simulated(clean_config(7));
  LearnConfig cfg;
  cfg.max_iters = 0;
  cfg.initial = WeightVector({-1, 0, 1, 1, 0, 0, 0, 0.1});
  const auto r = fit_weights(in.g, in.s, in.cs, in.be.y, HammingCosts{}, cfg);
  EXPECT_EQ(r.w, cfg.initial);
  EXPECT_NEAR(r.loss, ssvm_loss(in.g, in.s, in.cs, in.be.y, HammingCosts{}, cfg.initial, cfg.lambda).loss, 1e-12);
  ASSERT_EQ(r.trace.size(), 1u);
}

TEST(Fit, SeparableInstanceIsRecovered) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto in = simulated(clean_config(seed));
    const auto r = fit_weights(in.g, in.s, in.cs, in.be.y, HammingCosts{}, LearnConfig{});
    const auto y = solve(in.g, in.s, r.w, in.cs).y;
    EXPECT_EQ(hamming(in.be.y, y, IndicatorLayout(in.g), HammingCosts{}), 0.0) << "seed " << seed << " w " << r.w;
    for (std::size_t k = 1; k < r.trace.size(); ++k) {
      EXPECT_LE(r.trace[k].best, r.trace[k - 1].best);
      EXPECT_LE(r.trace[k].best, r.trace[k].loss);
    }
    EXPECT_EQ(r.trace.back().best, r.loss);
  }
}

TEST(Fit, RegulariserShrinksWeights) {
  const auto in = simulated(noisy_config(21));
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-3, 1.0, 1e3}) {
    LearnConfig cfg;
    cfg.lambda = lambda;
    cfg.max_iters = 200;
    const auto r = fit_weights(in.g, in.s, in.cs, in.be.y, HammingCosts{}, cfg);
    const double norm = std::sqrt(r.w.squared_norm());
    EXPECT_LE(norm, prev) << "lambda " << lambda;
    prev = norm;
  }
}

TEST(Fit, InvalidConfigRejected) {
  const auto in = simulated(clean_config(7));
  LearnConfig cfg;
  cfg.lambda = -1;
  EXPECT_THROW(fit_weights(in.g, in.s, in.cs, in.be.y, HammingCosts{}, cfg), std::invalid_argument);
}

TEST(Fit, HeavierNodeFalsePositivesNeverAddNodeFalsePositives) {
  const auto in = simulated(noisy_config(31));
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (double factor : {1.0, 10.0, 100.0}) {
    HammingCosts h;
    h.fp[static_cast<int>(IndicatorBlock::node)] = factor;
    LearnConfig cfg;
    cfg.max_iters = 200;
    const auto r = fit_weights(in.g, in.s, in.cs, in.be.y, h, cfg);
    const auto fp = node_false_positives(in.g, in.be.y, solve(in.g, in.s, r.w, in.cs).y);
    EXPECT_LE(fp, prev) << "factor " << factor;
    prev = fp;
  }
}

TEST(Grid, SingletonReturnsItsPoint) {
  const auto in = simulated(clean_config(8));
  const WeightVector w({-1, -1, 1, 1, 0, 0, 0, 0.1});
  const auto r = grid_search(in.g, in.s, in.cs, in.gt, {w});
  EXPECT_EQ(r.best, w);
  EXPECT_EQ(r.table.size(), 1u);
}

TEST(Grid, SelectsLowestSumThenDivisionsThenWeights) {
  const auto in = simulated(noisy_config(9));
  LearnConfig cfg;
  cfg.max_iters = 100;
  const auto learned = fit_weights(in.g, in.s, in.cs, in.be.y, HammingCosts{}, cfg).w;
  std::vector<WeightVector> grid = {learned};
  for (int k = 0; k < 8; ++k)
    for (double d : {-0.5, 0.5}) {
      WeightVector p = learned;
      p[k] += d;
      grid.push_back(p);
    }
  grid.push_back(learned);  // exact duplicate ties on every key but position
  const auto r = grid_search(in.g, in.s, in.cs, in.gt, grid);
  ASSERT_EQ(r.table.size(), grid.size());
  for (const auto& row : r.table) {
    const auto& b = r.table[r.best_row].errors;
    EXPECT_LE(b.sum(), row.errors.sum());
    if (b.sum() == row.errors.sum()) {
      EXPECT_LE(b.div(), row.errors.div());
      if (b.div() == row.errors.div()) {
        EXPECT_LE(r.best, row.w);
      }
    }
  }
  EXPECT_EQ(r.best, r.table[r.best_row].w);
  EXPECT_EQ(r.table.front().errors.sum(), r.table.back().errors.sum());
  EXPECT_THROW(grid_search(in.g, in.s, in.cs, in.gt, {}), std::invalid_argument);
}

TEST(Grid, ExposesFalsePositiveFalseNegativeTrade) {
  SimConfig c = noisy_config(10);
  c.clutter_rate = 4.0;
  c.clutter_score_mean = 0.6;
  c.dropout = 0.1;
  const auto in = simulated(c);
  // Eager selection tracks clutter; reluctant selection leaves weak cells out.
  const WeightVector eager({-3, -1, 0.5, 1, 0, 0, 0, 0.05});
  const WeightVector reluctant({1, -1.5, 0.5, 1, 0, 0, 0, 0.05});
  const auto r = grid_search(in.g, in.s, in.cs, in.gt, {eager, reluctant});
  const auto& a = r.table[0].errors;
  const auto& b = r.table[1].errors;
  EXPECT_GT(a.fp_edges, b.fp_edges);
  EXPECT_LT(a.fn_edges, b.fn_edges);
  EXPECT_EQ(r.best_row, a.sum() <= b.sum() ? 0u : 1u);
}
