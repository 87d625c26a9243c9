#pragma once

// Run configuration and weight/grid files, all JSON. Unknown keys are
// rejected; every omitted key keeps the default shown by `to_json`.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include <json.hpp>

#include "celltrack/blockwise.hpp"
#include "celltrack/graph_build.hpp"
#include "celltrack/simulator.hpp"
#include "celltrack/ssvm.hpp"

namespace celltrack {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "out";
  SimConfig sim;
  GraphBuildConfig graph{0.2, 4, 20.0, std::nullopt};
  SolverLimits solver;
  LearnConfig learn;
  HammingCosts delta;
  EvaluationConfig eval;
  std::optional<BlockSpec> blocks;
  std::optional<std::array<std::vector<double>, 8>> grid;

  void check() const {
    sim.check();
    graph.check();
    learn.check();
    delta.check();
    if (!(eval.match_radius >= 0.0) || eval.division_tolerance < 0 || eval.max_window < 1)
      throw ConfigError("config: invalid evaluation settings");
    if (!(solver.time_limit_seconds > 0.0) || solver.max_sweeps < 1)
      throw ConfigError("config: invalid solver limits");
    if (blocks && (blocks->block_len < 2 || blocks->overlap < 1 || blocks->overlap >= blocks->block_len))
      throw ConfigError("config: blocks need length >= 2 and 1 <= overlap < length");
  }
};

namespace detail {

/// Reads keys of one JSON object and fails on anything left unread.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
  }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

  template <class T>
  void get(const std::string& key, T& out) {
    if (const Json* v = find(key)) out = convert<T>(*v, at(key));
  }

  template <class T>
  static T convert(const Json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
      } else {
        const bool fits = v.is_number_unsigned()
                              ? v.get<std::uint64_t>() <= static_cast<std::uint64_t>(std::numeric_limits<T>::max())
                              : v.get<std::int64_t>() >= std::numeric_limits<T>::min() &&
                                    v.get<std::int64_t>() <= std::numeric_limits<T>::max();
        if (!fits) throw ConfigError(where + ": integer out of range");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
    }
    return v.get<T>();
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Json vec3_json(const Vec3& v) { return Json::array({v[0], v[1], v[2]}); }

inline Vec3 vec3_from(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected [z, y, x]");
  Vec3 v;
  for (int k = 0; k < 3; ++k) v[k] = ObjectReader::convert<double>(j[k], where);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Weights

inline Json weights_json(const WeightVector& w) {
  Json j = Json::object();
  for (int k = 0; k < 8; ++k) j[kWeightNames[k]] = w[k];
  return j;
}

/// All eight names are required.
inline WeightVector weights_from_json(const Json& j, const std::string& where = "weights") {
  detail::ObjectReader r(j, where);
  WeightVector w;
  for (int k = 0; k < 8; ++k) {
    const Json* v = r.find(kWeightNames[k]);
    if (!v) throw ConfigError(where + ": missing '" + kWeightNames[k] + "'");
    w[k] = detail::ObjectReader::convert<double>(*v, r.at(kWeightNames[k]));
  }
  w.check();
  return w;
}

// ---------------------------------------------------------------------------
// Hamming costs: a number applies to every block, an object names blocks.

inline Json block_costs_json(const std::array<double, kNumBlocks>& c) {
  Json j = Json::object();
  for (int b = 0; b < kNumBlocks; ++b) j[to_string(static_cast<IndicatorBlock>(b))] = c[b];
  return j;
}

inline void block_costs_from(const Json& j, const std::string& where, std::array<double, kNumBlocks>& c) {
  if (j.is_number()) {
    c.fill(j.get<double>());
    return;
  }
  detail::ObjectReader r(j, where);
  for (int b = 0; b < kNumBlocks; ++b) r.get(to_string(static_cast<IndicatorBlock>(b)), c[b]);
}

// ---------------------------------------------------------------------------
// Grid: per-weight value lists whose product is the grid.

inline Json grid_json(const std::array<std::vector<double>, 8>& axes) {
  Json j = Json::object();
  for (int k = 0; k < 8; ++k) j[kWeightNames[k]] = axes[k];
  return j;
}

inline std::array<std::vector<double>, 8> grid_from_json(const Json& j, const std::string& where = "grid") {
  detail::ObjectReader r(j, where);
  std::array<std::vector<double>, 8> axes;
  for (int k = 0; k < 8; ++k) {
    const Json* v = r.find(kWeightNames[k]);
    if (!v || !v->is_array() || v->empty())
      throw ConfigError(where + ": '" + kWeightNames[k] + "' must be a non-empty list of numbers");
    for (const auto& x : *v) axes[k].push_back(detail::ObjectReader::convert<double>(x, r.at(kWeightNames[k])));
  }
  return axes;
}

// ---------------------------------------------------------------------------
// Run configuration

inline Json to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  const SimConfig& s = c.sim;
  Json confusion = Json::array();
  for (const auto& row : s.confusion) confusion.push_back(row);
  j["sim"] = {{"n_frames", s.n_frames},
              {"initial_cells", s.initial_cells},
              {"division_prob", s.division_prob},
              {"min_division_age", s.min_division_age},
              {"max_cells", s.max_cells},
              {"motion_std", s.motion_std},
              {"division_displacement", s.division_displacement},
              {"box", detail::vec3_json(s.box)},
              {"polar_bodies", s.polar_bodies},
              {"polar_lifetime", s.polar_lifetime},
              {"polar_motion_std", s.polar_motion_std},
              {"dropout", s.dropout},
              {"clutter_rate", s.clutter_rate},
              {"jitter_std", s.jitter_std},
              {"jitter_scale", detail::vec3_json(s.jitter_scale)},
              {"movement_noise_std", s.movement_noise_std},
              {"cell_score_mean", s.cell_score_mean},
              {"cell_score_std", s.cell_score_std},
              {"clutter_score_mean", s.clutter_score_mean},
              {"clutter_score_std", s.clutter_score_std},
              {"confusion", confusion},
              {"state_score_noise", s.state_score_noise}};
  j["graph"] = {{"score_threshold", c.graph.score_threshold},
                {"max_edge_candidates", c.graph.max_edge_candidates},
                {"max_edge_distance", c.graph.max_edge_distance},
                {"polar_body_threshold",
                 c.graph.polar_body_threshold ? Json(*c.graph.polar_body_threshold) : Json(nullptr)}};
  j["solver"] = {{"time_limit_seconds", c.solver.time_limit_seconds},
                 {"max_branch_nodes", c.solver.max_branch_nodes},
                 {"max_sweeps", c.solver.max_sweeps}};
  j["learn"] = {{"lambda", c.learn.lambda},
                {"max_iters", c.learn.max_iters},
                {"eta0", c.learn.eta0},
                {"kappa", c.learn.kappa},
                {"tolerance", c.learn.tolerance},
                {"patience", c.learn.patience},
                {"divergence_window", c.learn.divergence_window},
                {"initial", weights_json(c.learn.initial)}};
  j["delta"] = {{"fp", block_costs_json(c.delta.fp)}, {"fn", block_costs_json(c.delta.fn)}};
  j["eval"] = {{"match_radius", c.eval.match_radius},
               {"division_tolerance", c.eval.division_tolerance},
               {"max_window", c.eval.max_window},
               {"exclude_polar_bodies", c.eval.exclude_polar_bodies}};
  j["blocks"] = c.blocks ? Json{{"length", c.blocks->block_len}, {"overlap", c.blocks->overlap}} : Json(nullptr);
  j["grid"] = c.grid ? grid_json(*c.grid) : Json(nullptr);
  return j;
}

inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  detail::ObjectReader top(j, "config");
  top.get("seed", c.seed);
  top.get("out", c.out);
  if (const Json* v = top.find("sim")) {
    detail::ObjectReader r(*v, "config.sim");
    SimConfig& s = c.sim;
    r.get("n_frames", s.n_frames);
    r.get("initial_cells", s.initial_cells);
    r.get("division_prob", s.division_prob);
    r.get("min_division_age", s.min_division_age);
    r.get("max_cells", s.max_cells);
    r.get("motion_std", s.motion_std);
    r.get("division_displacement", s.division_displacement);
    if (const Json* b = r.find("box")) s.box = detail::vec3_from(*b, r.at("box"));
    r.get("polar_bodies", s.polar_bodies);
    r.get("polar_lifetime", s.polar_lifetime);
    r.get("polar_motion_std", s.polar_motion_std);
    r.get("dropout", s.dropout);
    r.get("clutter_rate", s.clutter_rate);
    r.get("jitter_std", s.jitter_std);
    if (const Json* b = r.find("jitter_scale")) s.jitter_scale = detail::vec3_from(*b, r.at("jitter_scale"));
    r.get("movement_noise_std", s.movement_noise_std);
    r.get("cell_score_mean", s.cell_score_mean);
    r.get("cell_score_std", s.cell_score_std);
    r.get("clutter_score_mean", s.clutter_score_mean);
    r.get("clutter_score_std", s.clutter_score_std);
    if (const Json* m = r.find("confusion")) {
      if (!m->is_array() || m->size() != 4) throw ConfigError(r.at("confusion") + ": expected a 4x4 matrix");
      for (int a = 0; a < 4; ++a) {
        if (!(*m)[a].is_array() || (*m)[a].size() != 4)
          throw ConfigError(r.at("confusion") + ": expected a 4x4 matrix");
        for (int b = 0; b < 4; ++b) s.confusion[a][b] = detail::ObjectReader::convert<double>((*m)[a][b], r.at("confusion"));
      }
    }
    r.get("state_score_noise", s.state_score_noise);
  }
  if (const Json* v = top.find("graph")) {
    detail::ObjectReader r(*v, "config.graph");
    r.get("score_threshold", c.graph.score_threshold);
    r.get("max_edge_candidates", c.graph.max_edge_candidates);
    r.get("max_edge_distance", c.graph.max_edge_distance);
    if (const Json* p = r.find("polar_body_threshold"))
      c.graph.polar_body_threshold =
          p->is_null() ? std::nullopt
                       : std::optional<double>(detail::ObjectReader::convert<double>(*p, r.at("polar_body_threshold")));
  }
  if (const Json* v = top.find("solver")) {
    detail::ObjectReader r(*v, "config.solver");
    r.get("time_limit_seconds", c.solver.time_limit_seconds);
    r.get("max_branch_nodes", c.solver.max_branch_nodes);
    r.get("max_sweeps", c.solver.max_sweeps);
  }
  if (const Json* v = top.find("learn")) {
    detail::ObjectReader r(*v, "config.learn");
    r.get("lambda", c.learn.lambda);
    r.get("max_iters", c.learn.max_iters);
    r.get("eta0", c.learn.eta0);
    r.get("kappa", c.learn.kappa);
    r.get("tolerance", c.learn.tolerance);
    r.get("patience", c.learn.patience);
    r.get("divergence_window", c.learn.divergence_window);
    if (const Json* w = r.find("initial")) c.learn.initial = weights_from_json(*w, r.at("initial"));
  }
  if (const Json* v = top.find("delta")) {
    detail::ObjectReader r(*v, "config.delta");
    if (const Json* x = r.find("fp")) block_costs_from(*x, r.at("fp"), c.delta.fp);
    if (const Json* x = r.find("fn")) block_costs_from(*x, r.at("fn"), c.delta.fn);
  }
  if (const Json* v = top.find("eval")) {
    detail::ObjectReader r(*v, "config.eval");
    r.get("match_radius", c.eval.match_radius);
    r.get("division_tolerance", c.eval.division_tolerance);
    r.get("max_window", c.eval.max_window);
    r.get("exclude_polar_bodies", c.eval.exclude_polar_bodies);
  }
  if (const Json* v = top.find("blocks"); v && !v->is_null()) {
    detail::ObjectReader r(*v, "config.blocks");
    BlockSpec b;
    r.get("length", b.block_len);
    r.get("overlap", b.overlap);
    c.blocks = b;
  }
  if (const Json* v = top.find("grid"); v && !v->is_null()) c.grid = grid_from_json(*v, "config.grid");
  try {
    c.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline Json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string() + " for reading");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& p, const Json& j) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  out << j.dump(2) << '\n';
  out.close();
  if (!out) throw std::runtime_error("error writing " + p.string());
}

inline RunConfig load_config(const std::filesystem::path& p) {
  try {
    return config_from_json(read_json_file(p));
  } catch (const ConfigError& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

}  // namespace celltrack
