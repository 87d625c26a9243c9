#include <gtest/gtest.h>

#include <random>

#include "celltrack/pipeline.hpp"

using namespace celltrack;

namespace {

SimConfig noisy_sim(std::uint64_t seed) {
  SimConfig c;
  c.seed = seed;
  c.n_frames = 20;
  c.initial_cells = 4;
  c.division_prob = 0.08;
  c.polar_bodies = 1;
  c.polar_lifetime = 8;
  c.dropout = 0.1;
  c.clutter_rate = 2.0;
  c.jitter_std = 1.3;
  c.movement_noise_std = 0.7;
  c.cell_score_std = 0.2;
  c.clutter_score_std = 0.3;
  c.state_score_noise = 0.2;
  return c;
}

std::vector<Detection> roundtrip(const std::vector<Detection>& d) {
  std::stringstream ss;
  write_detections(ss, d);
  return read_detections(ss, "mem");
}

LineageForest roundtrip(const LineageForest& f) {
  std::stringstream t, n;
  write_tracks(t, n, f);
  return read_tracks(t, "tracks", n, "nodes");
}

std::string parse_error(const std::string& tracks, const std::string& nodes) {
  std::stringstream t(tracks), n(nodes);
  try {
    read_tracks(t, "T", n, "N");
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

std::string detections_error(const std::string& text) {
  std::stringstream ss(text);
  try {
    read_detections(ss, "D");
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

const std::string kHeader = std::string(kDetectionsHeader) + "\n";

}  // namespace

TEST(Detections, EmptyTableWithHeader) {
  std::stringstream ss(kHeader);
  EXPECT_TRUE(read_detections(ss, "mem").empty());
  std::stringstream blank("");
  EXPECT_THROW(read_detections(blank, "mem"), ParseError);
}

TEST(Detections, RoundtripIsBitExact) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto d = simulate_dataset(noisy_sim(seed)).detections;
    ASSERT_FALSE(d.empty());
    EXPECT_EQ(roundtrip(d), d) << "seed " << seed;
  }
  Detection odd;
  odd.id = -5;
  odd.position = {1e-300, -0.0, 5e-324};
  odd.movement = {0.1 + 0.2, 1.0 / 3.0, -1e300};
  odd.score = std::nextafter(1.0, 0.0);
  EXPECT_EQ(roundtrip({odd}), std::vector<Detection>{odd});
}

TEST(Detections, Diagnostics) {
  EXPECT_EQ(detections_error("id,frame\n"), "D:1:3: expected 13 fields, found 2");
  EXPECT_EQ(detections_error("id,frame,z,y,x,score,s_parent,s_daughter,s_continue,s_polar,mz,my,mq\n"),
            "D:1:13: header field 'mq', expected 'mx'");
  EXPECT_EQ(detections_error(kHeader + "1,0,0,0,0,1,0,0,1,0,0,0,0\n1,1,0,0,0,1,0,0,1,0,0,0,0\n"),
            "D:3:1: duplicate id 1 (first on line 2)");
  EXPECT_EQ(detections_error(kHeader + "1,0,0,nan,0,1,0,0,1,0,0,0,0\n"), "D:2:4: non-finite value 'nan'");
  EXPECT_EQ(detections_error(kHeader + "1,0,0,0,0,1,0,0,1,0,0,0\n"), "D:2:13: expected 13 fields, found 12");
  EXPECT_EQ(detections_error(kHeader + "1,0,0,0,0,x,0,0,1,0,0,0,0\n"), "D:2:6: 'x' is not a number");
  EXPECT_EQ(detections_error(kHeader + "1,-2,0,0,0,1,0,0,1,0,0,0,0\n"), "D:2:2: frame -2 out of range");
  EXPECT_EQ(detections_error(kHeader + "1.5,0,0,0,0,1,0,0,1,0,0,0,0\n"), "D:2:1: '1.5' is not an integer");
}

TEST(Graph, RoundtripThroughFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "celltrack_test_io_graph";
  std::filesystem::remove_all(dir);
  const auto ds = simulate_dataset(noisy_sim(3));
  GraphBuildConfig gc;
  gc.max_edge_distance = 20.0;
  const auto g = build_graph(filter_detections(ds.detections, gc), gc);
  save_graph(dir / "graph", g);
  const auto h = load_graph(dir / "graph");
  EXPECT_EQ(h.nodes(), g.nodes());
  ASSERT_EQ(h.num_edges(), g.num_edges());
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    EXPECT_EQ(h.edge(e).source, g.edge(e).source);
    EXPECT_EQ(h.edge(e).target, g.edge(e).target);
    EXPECT_EQ(h.edge(e).cost, g.edge(e).cost);
  }
  std::filesystem::remove_all(dir);
}

TEST(Tracks, RoundtripOfSimulatedLineages) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto gt = simulate_dataset(noisy_sim(seed)).gt;
    const auto back = roundtrip(gt);
    EXPECT_EQ(back.nodes(), gt.nodes()) << "seed " << seed;
    EXPECT_EQ(back.edge_ids(), gt.edge_ids()) << "seed " << seed;
  }
}

TEST(Tracks, RoundtripThroughFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "celltrack_test_io_tracks";
  std::filesystem::remove_all(dir);
  const auto gt = simulate_dataset(noisy_sim(4)).gt;
  save_tracks(dir / "gt", gt);
  EXPECT_TRUE(std::filesystem::exists(dir / "gt.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "gt_nodes.txt"));
  const auto back = load_tracks(dir / "gt");
  EXPECT_EQ(back.nodes(), gt.nodes());
  EXPECT_EQ(back.edge_ids(), gt.edge_ids());
  std::filesystem::remove_all(dir);
}

TEST(Tracks, DivisionBecomesThreeSegments) {
  std::vector<LineageNode> nodes;
  auto add = [&](std::int64_t id, int frame) {
    LineageNode n;
    n.id = id;
    n.frame = frame;
    nodes.push_back(n);
  };
  add(1, 0), add(2, 1), add(3, 2), add(4, 2), add(5, 3);
  LineageForest f(nodes, {{1, 2}, {2, 3}, {2, 4}, {3, 5}});
  f.label_states_from_topology();
  std::stringstream t, n;
  write_tracks(t, n, f);
  EXPECT_EQ(t.str(), "1 0 1 0 0\n2 2 3 1 0\n3 2 2 1 0\n");
}

TEST(Tracks, Diagnostics) {
  const std::string nodes = "1 0 0 0 0 10\n1 1 0 0 0 11\n2 3 0 0 0 12\n";
  EXPECT_EQ(parse_error("1 0 1 0 0\n2 3 3 1 0\n", nodes),
            "T:2:2: track 2 begins at frame 3 but its parent 1 ends at frame 1");
  EXPECT_EQ(parse_error("1 0 1 0 0\n2 2 2 9 0\n", "1 0 0 0 0 10\n1 1 0 0 0 11\n2 2 0 0 0 12\n"),
            "T:2:4: track 2 names missing parent 9");
  EXPECT_EQ(parse_error("1 0 1 0 0\n1 2 2 0 0\n", nodes), "T:2:1: duplicate track label 1 (first on line 1)");
  EXPECT_EQ(parse_error("1 2 1 0 0\n", ""), "T:1:3: track 1 ends before it begins");
  EXPECT_EQ(parse_error("1 0 1 0 2\n", ""), "T:1:5: polar flag must be 0 or 1");
  EXPECT_EQ(parse_error("1 0 1 0 0\n", "1 0 0 0 0 10\n"), "T:1:2: track 1 has no node in frame 1 in N");
  EXPECT_EQ(parse_error("1 0 1 0 0\n", "1 0 0 0 0 10\n1 0 0 0 0 11\n"), "N:2:2: track 1 has two nodes in frame 0");
  EXPECT_EQ(parse_error("1 0 1 0 0\n", "1 0 0 0 0 10\n1 5 0 0 0 11\n"), "N:2:2: frame 5 outside track 1 [0, 1]");
  EXPECT_EQ(parse_error("1 0 1 0 0\n", "1 0 0 0 0 10\n1 1 0 0 0 10\n"), "N:2:6: duplicate node id 10 (first on line 1)");
  EXPECT_EQ(parse_error("1 0 0 0 0\n", "2 0 0 0 0 10\n"), "N:1:1: unknown track label 2");
  EXPECT_EQ(parse_error("1 0 0 0 0\n", "1 0 0 inf 0 10\n"), "N:1:4: non-finite value 'inf'");
  const std::string three_children = "1 0 0 0 0\n2 1 1 1 0\n3 1 1 1 0\n4 1 1 1 0\n";
  EXPECT_EQ(parse_error(three_children, "1 0 0 0 0 1\n2 1 0 0 0 2\n3 1 0 0 0 3\n4 1 0 0 0 4\n"),
            "T:4:4: parent 1 has more than two children");
}

TEST(Tracks, LinkSkippingFrameIsNotWritable) {
  LineageNode a, b;
  a.id = 1;
  b.id = 2;
  b.frame = 2;
  const LineageForest f({a, b}, {{1, 2}});
  std::stringstream t, n;
  EXPECT_THROW(write_tracks(t, n, f), std::invalid_argument);
}

TEST(Config, DefaultsRoundtrip) {
  const RunConfig c;
  const Json j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)).dump(), j.dump());
  EXPECT_EQ(to_json(config_from_json(Json::object())).dump(), j.dump());
}

TEST(Config, FullRoundtrip) {
  RunConfig c;
  c.seed = 99;
  c.sim.n_frames = 12;
  c.sim.box = {10, 20, 30};
  c.graph.polar_body_threshold = 0.6;
  c.delta.fp[2] = 7.5;
  c.blocks = BlockSpec{10, 3};
  c.grid = std::array<std::vector<double>, 8>{{{-1}, {-2, -1}, {1}, {1}, {0}, {0}, {0}, {0.1, 0.2}}};
  c.learn.initial = WeightVector({1, 2, 3, 4, 5, 6, 7, 8});
  const RunConfig d = config_from_json(to_json(c));
  EXPECT_EQ(to_json(d).dump(), to_json(c).dump());
  EXPECT_EQ(d.blocks->block_len, 10);
  EXPECT_EQ(*d.graph.polar_body_threshold, 0.6);
  EXPECT_EQ(d.grid->at(1), (std::vector<double>{-2, -1}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto error = [](const std::string& text) {
    try {
      config_from_json(Json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(error(R"({"sed": 1})"), "config: unknown key 'sed'");
  EXPECT_EQ(error(R"({"sim": {"frames": 3}})"), "config.sim: unknown key 'frames'");
  EXPECT_EQ(error(R"({"sim": {"n_frames": "3"}})"), "config.sim.n_frames: expected an integer");
  EXPECT_EQ(error(R"({"sim": {"n_frames": 3.5}})"), "config.sim.n_frames: expected an integer");
  EXPECT_EQ(error(R"({"seed": -1})"), "config.seed: expected a non-negative integer");
  EXPECT_EQ(error(R"({"sim": {"dropout": 2}})"), "sim config: dropout must lie in [0,1]");
  EXPECT_EQ(error(R"({"blocks": {"length": 4, "overlap": 4}})"), "config: blocks need length >= 2 and 1 <= overlap < length");
  EXPECT_EQ(error(R"({"learn": {"initial": {"node_sel": 1}}})"), "config.learn.initial: missing 'node_score'");
  EXPECT_EQ(error(R"({"grid": {"node_sel": []}})"), "config.grid: 'node_sel' must be a non-empty list of numbers");
  EXPECT_EQ(error(R"({"eval": {"exclude_polar_bodies": 1}})"), "config.eval.exclude_polar_bodies: expected true or false");
  EXPECT_EQ(error(R"({"sim": {"box": [1, 2]}})"), "config.sim.box: expected [z, y, x]");
  EXPECT_EQ(error(R"({"sim": {"n_frames": 99999999999}})"), "config.sim.n_frames: integer out of range");
}

TEST(Config, DeltaShorthand) {
  const auto c = config_from_json(Json::parse(R"({"delta": {"fp": 10, "fn": {"edge": 3}}})"));
  for (int b = 0; b < kNumBlocks; ++b) EXPECT_EQ(c.delta.fp[b], 10.0);
  EXPECT_EQ(c.delta.fn[static_cast<int>(IndicatorBlock::edge)], 3.0);
  EXPECT_EQ(c.delta.fn[static_cast<int>(IndicatorBlock::node)], 1.0);
}

TEST(Pipeline, ZeroNoiseReconstructsTestSplit) {
  RunConfig c;
  c.seed = 3;
  c.sim.n_frames = 15;
  c.sim.initial_cells = 3;
  c.sim.division_prob = 0.08;
  c.sim.polar_bodies = 1;
  c.sim.polar_lifetime = 6;
  c.learn.max_iters = 100;
  const auto r = run_pipeline(c);
  EXPECT_EQ(r.evaluation.errors.sum(), 0u);
  EXPECT_EQ(r.evaluation.errors.det, 1.0);
  EXPECT_EQ(r.report["test"]["evaluation"]["sum"], 0);
}

TEST(Pipeline, DeterministicOutputs) {
  RunConfig c;
  c.sim = noisy_sim(0);
  c.sim.n_frames = 12;
  c.seed = 8;
  c.learn.max_iters = 40;
  const auto dir = std::filesystem::temp_directory_path() / "celltrack_test_io_pipeline";
  std::filesystem::remove_all(dir);
  const auto a = run_pipeline(c, dir / "a");
  const auto b = run_pipeline(c, dir / "b");
  EXPECT_EQ(a.report.dump(), b.report.dump());
  for (const char* f : {"weights.json", "report.json", "train/detections.csv", "train/graph_edges.csv",
                        "test/pred_tracks.txt", "test/pred_tracks_nodes.txt", "test/gt_tracks.txt"}) {
    std::ifstream x(dir / "a" / f), y(dir / "b" / f);
    ASSERT_TRUE(x && y) << f;
    std::stringstream sx, sy;
    sx << x.rdbuf();
    sy << y.rdbuf();
    EXPECT_EQ(sx.str(), sy.str()) << f;
  }
  // Every written table parses back.
  EXPECT_NO_THROW(load_tracks(dir / "a" / "test" / "pred_tracks"));
  EXPECT_NO_THROW(load_graph(dir / "a" / "train" / "graph"));
  EXPECT_NO_THROW(config_from_json(read_json_file(dir / "a" / "report.json")["config"]));
  std::filesystem::remove_all(dir);
}
