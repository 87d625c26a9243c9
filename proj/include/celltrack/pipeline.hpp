#pragma once

// End-to-end runs: simulate, build the candidate graph, learn weights, solve
// and evaluate, plus the JSON records written for each step. Records never
// contain timings, so identical inputs give identical files.

#include <iomanip>

#include "celltrack/config.hpp"
#include "celltrack/decode.hpp"
#include "celltrack/io.hpp"

namespace celltrack {

struct Dataset {
  LineageForest gt;
  std::vector<Detection> detections;
};

inline Dataset simulate_dataset(const SimConfig& cfg) {
  Dataset d;
  d.gt = simulate_gt(cfg);
  d.detections = render_detections(d.gt, cfg);
  return d;
}

/// Candidate graph with its feature matrix and constraint system.
struct Problem {
  CandidateGraph graph;
  FeatureMatrix features;
  ConstraintSystem constraints;
};

inline Problem make_problem(CandidateGraph g) {
  Problem p{std::move(g), {}, {}};
  p.features = build_feature_matrix(p.graph);
  p.constraints = build_constraints(p.graph);
  return p;
}

inline Problem build_problem(const std::vector<Detection>& dets, const GraphBuildConfig& cfg) {
  return make_problem(build_graph(filter_detections(dets, cfg), cfg));
}

/// Global solve, or the stitched block-wise solve when blocks are given.
inline SolveReport solve_problem(const Problem& p, const WeightVector& w, const SolverLimits& limits,
                                 const std::optional<BlockSpec>& blocks) {
  SolveReport r = blocks ? solve_blockwise(p.graph, p.features, w, p.constraints, *blocks, limits)
                         : solve(p.graph, p.features, w, p.constraints, limits);
  if (r.status != SolveStatus::optimal) throw SolveError("solve: the selection problem is infeasible", r);
  return r;
}

/// Polar bodies leave the ground-truth side as soon as they are filtered from
/// the detections.
inline EvaluationConfig effective_eval(const RunConfig& c) {
  EvaluationConfig e = c.eval;
  e.exclude_polar_bodies = e.exclude_polar_bodies || c.graph.polar_body_threshold.has_value();
  return e;
}

// ---------------------------------------------------------------------------
// Records

inline Json solve_json(const SolveReport& r) {
  std::size_t selected = 0, links = 0;
  const IndicatorLayout L(r.num_nodes, r.num_edges);
  for (std::size_t i = 0; i < r.y.size(); ++i) {
    if (L.block_of(i) == IndicatorBlock::node) selected += r.y[i];
    if (L.block_of(i) == IndicatorBlock::edge) links += r.y[i];
  }
  return {{"status", to_string(r.status)},
          {"objective", r.objective},
          {"candidate_nodes", r.num_nodes},
          {"candidate_edges", r.num_edges},
          {"selected_nodes", selected},
          {"selected_edges", links},
          {"branch_nodes", r.branch_nodes}};
}

inline Json errors_json(const ErrorReport& e) {
  Json j = {{"fp_edges", e.fp_edges}, {"fn_edges", e.fn_edges}, {"is", e.is},
            {"fp_div", e.fp_div},     {"fn_div", e.fn_div},     {"div", e.div()},
            {"sum", e.sum()},         {"fp_nodes", e.fp_nodes}, {"fn_nodes", e.fn_nodes},
            {"gt_edges", e.gt_edges}, {"gt_nodes", e.gt_nodes}, {"det", e.det},
            {"tra", e.tra}};
  j["per_thousand"] = {{"fp_edges", e.per_thousand(e.fp_edges)}, {"fn_edges", e.per_thousand(e.fn_edges)},
                       {"is", e.per_thousand(e.is)},             {"div", e.per_thousand(e.div())},
                       {"sum", e.per_thousand(e.sum())}};
  return j;
}

inline Json evaluation_json(const Evaluation& ev) {
  Json j = errors_json(ev.errors);
  j["tracklets"] = ev.tracklets;
  return j;
}

inline Json fit_json(const FitResult& f, const BestEffort& be) {
  Json trace = Json::array();
  for (const auto& t : f.trace) trace.push_back({t.iter, t.loss, t.best});
  Json unreachable = Json::array();
  for (auto [p, c] : be.unreachable_edges) unreachable.push_back({p, c});
  return {{"weights", weights_json(f.w)},
          {"loss", f.loss},
          {"iterations", f.trace.empty() ? 0 : f.trace.back().iter},
          {"unmatched_gt_nodes", be.unmatched_gt},
          {"unreachable_gt_edges", unreachable},
          {"trace", trace}};
}

inline std::string grid_csv(const GridResult& r) {
  std::ostringstream os;
  for (const char* n : kWeightNames) os << n << ',';
  os << "fp_edges,fn_edges,is,fp_div,fn_div,sum,best\n";
  for (std::size_t i = 0; i < r.table.size(); ++i) {
    const auto& row = r.table[i];
    for (int k = 0; k < 8; ++k) os << format_number(row.w[k]) << ',';
    const auto& e = row.errors;
    os << e.fp_edges << ',' << e.fn_edges << ',' << e.is << ',' << e.fp_div << ',' << e.fn_div << ',' << e.sum() << ','
       << (i == r.best_row ? 1 : 0) << '\n';
  }
  return os.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  auto out = detail::open_out(p);
  out << text;
  detail::close_out(out, p);
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineResult {
  Json report;
  std::string summary;
  WeightVector weights;
  Evaluation evaluation;
};

/// Trains on the dataset simulated with `seed` and tests on the one simulated
/// with `seed + 1`. Artifacts go under `out` when it is non-empty.
inline PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& out = {}) {
  cfg.check();
  const bool write = !out.empty();
  Stopwatch total;
  std::ostringstream timing;
  timing << std::fixed << std::setprecision(2);

  SimConfig train_sim = cfg.sim, test_sim = cfg.sim;
  train_sim.seed = cfg.seed;
  test_sim.seed = cfg.seed + 1;
  const Dataset train = simulate_dataset(train_sim), test = simulate_dataset(test_sim);
  const Problem train_p = build_problem(train.detections, cfg.graph);
  const Problem test_p = build_problem(test.detections, cfg.graph);
  if (write) {
    save_tracks(out / "train" / "gt_tracks", train.gt);
    save_detections(out / "train" / "detections.csv", train.detections);
    save_graph(out / "train" / "graph", train_p.graph);
    save_tracks(out / "test" / "gt_tracks", test.gt);
    save_detections(out / "test" / "detections.csv", test.detections);
    save_graph(out / "test" / "graph", test_p.graph);
  }

  Stopwatch clock;
  const BestEffort be = best_effort(train_p.graph, train.gt, cfg.eval.match_radius);
  const FitResult fit =
      fit_weights(train_p.graph, train_p.features, train_p.constraints, be.y, cfg.delta, cfg.learn, cfg.solver);
  timing << "fit-weights  " << clock.seconds() << " s (" << fit.trace.size() - 1 << " iterations)\n";

  clock = Stopwatch();
  const SolveReport sol = solve_problem(test_p, fit.w, cfg.solver, cfg.blocks);
  const LineageForest pred = decode_validated(test_p.graph, sol.y);
  timing << "solve        " << clock.seconds() << " s\n";

  PipelineResult res;
  res.weights = fit.w;
  res.evaluation = evaluate(pred, test.gt, effective_eval(cfg));
  if (write) {
    save_tracks(out / "test" / "pred_tracks", pred);
    write_json_file(out / "weights.json", weights_json(fit.w));
  }

  res.report = {{"config", to_json(cfg)},
                {"train", {{"seed", train_sim.seed},
                           {"gt_nodes", train.gt.num_nodes()},
                           {"gt_edges", train.gt.num_edges()},
                           {"detections", train.detections.size()},
                           {"candidate_nodes", train_p.graph.num_nodes()},
                           {"candidate_edges", train_p.graph.num_edges()}}},
                {"fit", fit_json(fit, be)},
                {"test", {{"seed", test_sim.seed},
                          {"gt_nodes", test.gt.num_nodes()},
                          {"gt_edges", test.gt.num_edges()},
                          {"detections", test.detections.size()},
                          {"solve", solve_json(sol)},
                          {"evaluation", evaluation_json(res.evaluation)}}}};

  const auto& e = res.evaluation.errors;
  std::ostringstream s;
  s << "train seed " << train_sim.seed << ": " << train_p.graph.num_nodes() << " candidates, "
    << train_p.graph.num_edges() << " edges, " << be.unreachable_edges.size() << " unreachable GT edges\n";
  s << "test seed " << test_sim.seed << ": " << test_p.graph.num_nodes() << " candidates, "
    << test_p.graph.num_edges() << " edges\n";
  s << "weights " << fit.w << "\n";
  s << "final loss " << fit.loss << "\n\n";
  s << "FP " << e.fp_edges << "  FN " << e.fn_edges << "  IS " << e.is << "  FPdiv " << e.fp_div << "  FNdiv "
    << e.fn_div << "  sum " << e.sum() << "  (GT edges " << e.gt_edges << ")\n";
  s << "DET " << e.det << "  TRA " << e.tra << "\n\n";
  s << timing.str() << "total        " << std::fixed << std::setprecision(2) << total.seconds() << " s\n";
  res.summary = s.str();
  if (write) {
    write_json_file(out / "report.json", res.report);
    write_text_file(out / "summary.txt", res.summary);
  }
  return res;
}

}  // namespace celltrack
