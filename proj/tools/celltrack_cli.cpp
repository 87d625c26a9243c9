// Command-line front end: simulate, build-graph, solve, fit-weights,
// grid-search, evaluate and pipeline.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "celltrack/pipeline.hpp"

namespace fs = std::filesystem;
using namespace celltrack;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string blocks;
  std::optional<double> polar_filter;
  std::string delta;
};

BlockSpec parse_blocks(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument("");
    std::size_t a = 0, b = 0;
    BlockSpec spec{std::stoi(s.substr(0, colon), &a), std::stoi(s.substr(colon + 1), &b)};
    if (a != colon || b != s.size() - colon - 1) throw std::invalid_argument("");
    return spec;
  } catch (const std::logic_error&) {
    throw ConfigError("--blocks expects LEN:OVERLAP, got '" + s + "'");
  }
}

/// "fp=F,fn=N" scales the configured per-block costs.
void apply_delta(const std::string& s, HammingCosts& h) {
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    const std::string key = item.substr(0, eq);
    double v = 0.0;
    try {
      if (eq == std::string::npos) throw std::invalid_argument("");
      std::size_t used = 0;
      v = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument("");
    } catch (const std::logic_error&) {
      throw ConfigError("--delta expects fp=F,fn=N, got '" + s + "'");
    }
    auto& target = key == "fp" ? h.fp : key == "fn" ? h.fn : throw ConfigError("--delta: unknown key '" + key + "'");
    for (double& c : target) c *= v;
  }
  h.check();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (!c.blocks.empty()) cfg.blocks = parse_blocks(c.blocks);
  if (c.polar_filter) cfg.graph.polar_body_threshold = *c.polar_filter;
  if (!c.delta.empty()) apply_delta(c.delta, cfg.delta);
  try {
    cfg.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

WeightVector load_weights(const std::string& path) { return weights_from_json(read_json_file(path), path); }

void add_config(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "run configuration (JSON)")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  auto log = spdlog::stderr_color_mt("celltrack");
  log->set_pattern("[%l] %v");
  warning_sink() = [log](const std::string& m) { log->warn("{}", m); };

  CLI::App app{"Cell lineage tracking by integer linear programming"};
  app.require_subcommand(1);
  Common c;
  std::string detections, graph, gt, pred, weights, grid;

  auto* sim = app.add_subcommand("simulate", "simulate ground truth and detections");
  add_config(sim, c);
  sim->add_option("--seed", c.seed, "random seed");

  auto* build = app.add_subcommand("build-graph", "build a candidate graph from detections");
  add_config(build, c);
  build->add_option("--detections", detections, "detections table")->required()->check(CLI::ExistingFile);
  build->add_option("--polar-filter", c.polar_filter, "drop detections with polar-body score >= THRESH");

  auto* solve_cmd = app.add_subcommand("solve", "select lineages on a candidate graph");
  add_config(solve_cmd, c);
  solve_cmd->add_option("--graph", graph, "graph prefix (PREFIX_nodes.csv, PREFIX_edges.csv)")->required();
  solve_cmd->add_option("--weights", weights, "weights (JSON)")->required()->check(CLI::ExistingFile);
  solve_cmd->add_option("--blocks", c.blocks, "solve in temporal blocks LEN:OVERLAP");

  auto* fit = app.add_subcommand("fit-weights", "learn weights from ground truth");
  add_config(fit, c);
  fit->add_option("--graph", graph, "graph prefix")->required();
  fit->add_option("--gt", gt, "ground-truth track prefix")->required();
  fit->add_option("--weights", weights, "initial weights (JSON)")->check(CLI::ExistingFile);
  fit->add_option("--delta", c.delta, "Hamming cost multipliers fp=F,fn=N");

  auto* gs = app.add_subcommand("grid-search", "evaluate a grid of weights against ground truth");
  add_config(gs, c);
  gs->add_option("--graph", graph, "graph prefix")->required();
  gs->add_option("--gt", gt, "ground-truth track prefix")->required();
  gs->add_option("--grid", grid, "grid (JSON, one value list per weight)")->check(CLI::ExistingFile);
  gs->add_option("--blocks", c.blocks, "solve in temporal blocks LEN:OVERLAP");

  auto* ev = app.add_subcommand("evaluate", "compare predicted tracks with ground truth");
  add_config(ev, c);
  ev->add_option("--pred", pred, "predicted track prefix")->required();
  ev->add_option("--gt", gt, "ground-truth track prefix")->required();

  auto* pipe = app.add_subcommand("pipeline", "simulate, learn on one split, solve and evaluate the other");
  add_config(pipe, c);
  pipe->add_option("--seed", c.seed, "random seed of the training split; the test split uses seed + 1");
  pipe->add_option("--blocks", c.blocks, "solve in temporal blocks LEN:OVERLAP");
  pipe->add_option("--polar-filter", c.polar_filter, "drop detections with polar-body score >= THRESH");
  pipe->add_option("--delta", c.delta, "Hamming cost multipliers fp=F,fn=N");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = resolve(c);
    const fs::path out = cfg.out;

    if (sim->parsed()) {
      SimConfig s = cfg.sim;
      s.seed = cfg.seed;
      const Dataset d = simulate_dataset(s);
      save_tracks(out / "gt_tracks", d.gt);
      save_detections(out / "detections.csv", d.detections);
      write_json_file(out / "config.json", to_json(cfg));
      log->info("simulated {} GT nodes, {} detections into {}", d.gt.num_nodes(), d.detections.size(), out.string());
    } else if (build->parsed()) {
      const Problem p = build_problem(load_detections(detections), cfg.graph);
      save_graph(out / "graph", p.graph);
      log->info("graph: {} nodes, {} edges", p.graph.num_nodes(), p.graph.num_edges());
    } else if (solve_cmd->parsed()) {
      const Problem p = make_problem(load_graph(graph));
      const SolveReport r = solve_problem(p, load_weights(weights), cfg.solver, cfg.blocks);
      save_tracks(out / "pred_tracks", decode_validated(p.graph, r.y));
      write_json_file(out / "solve.json", solve_json(r));
      log->info("objective {} in {:.2f} s", r.objective, r.wall_seconds);
    } else if (fit->parsed()) {
      const Problem p = make_problem(load_graph(graph));
      LearnConfig lc = cfg.learn;
      if (!weights.empty()) lc.initial = load_weights(weights);
      const BestEffort be = best_effort(p.graph, load_tracks(gt), cfg.eval.match_radius);
      const FitResult f = fit_weights(p.graph, p.features, p.constraints, be.y, cfg.delta, lc, cfg.solver);
      write_json_file(out / "weights.json", weights_json(f.w));
      write_json_file(out / "fit.json", fit_json(f, be));
      log->info("loss {} after {} iterations", f.loss, f.trace.back().iter);
    } else if (gs->parsed()) {
      std::array<std::vector<double>, 8> axes;
      if (!grid.empty())
        axes = grid_from_json(read_json_file(grid), grid);
      else if (cfg.grid)
        axes = *cfg.grid;
      else
        throw ConfigError("grid-search needs --grid or a grid in the configuration");
      const Problem p = make_problem(load_graph(graph));
      const auto points = grid_product(axes);
      const auto r = grid_search(p.graph, p.features, p.constraints, load_tracks(gt), points, cfg.eval, cfg.solver);
      write_text_file(out / "grid.csv", grid_csv(r));
      write_json_file(out / "grid_best.json", weights_json(r.best));
      log->info("{} grid points, best sum {}", points.size(), r.table[r.best_row].errors.sum());
    } else if (ev->parsed()) {
      const Evaluation e = evaluate(load_tracks(pred), load_tracks(gt), effective_eval(cfg));
      const Json j = evaluation_json(e);
      if (c.out.empty())
        std::cout << j.dump(2) << '\n';
      else
        write_json_file(out / "evaluation.json", j);
    } else if (pipe->parsed()) {
      const PipelineResult r = run_pipeline(cfg, out);
      std::cout << r.summary;
    }
  } catch (const SolveError& e) {
    log->error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return 2;
  }
  return 0;
}
