#pragma once

// Synthetic lineages and noisy detections derived from them.

#include <random>

#include "celltrack/types.hpp"

namespace celltrack {

struct SimConfig {
  std::uint64_t seed = 1;
  int n_frames = 50;
  int initial_cells = 4;
  double division_prob = 0.02;
  /// Frames a daughter must live before it may divide. With 0 a daughter may
  /// be labeled parent in its birth frame, which no feasible lineage allows.
  int min_division_age = 1;
  int max_cells = 0;  ///< divisions stop once this many cells exist; 0 = no cap
  double motion_std = 1.0;
  double division_displacement = 4.0;
  Vec3 box{50.0, 200.0, 200.0};  ///< (z, y, x) extent, reflective walls at 0 and box
  int polar_bodies = 0;
  int polar_lifetime = 20;
  double polar_motion_std = 0.05;

  double dropout = 0.0;
  double clutter_rate = 0.0;
  double jitter_std = 0.0;
  Vec3 jitter_scale{1.0, 1.0, 1.0};  ///< per-axis anisotropy of the jitter
  double movement_noise_std = 0.0;

  double cell_score_mean = 0.9;
  double cell_score_std = 0.0;
  double clutter_score_mean = 0.4;
  double clutter_score_std = 0.0;
  /// Rows: true parent, daughter, continue, polar body. Columns follow StateScore.
  std::array<std::array<double, 4>, 4> confusion{{{0.85, 0.05, 0.10, 0.0},
                                                  {0.05, 0.85, 0.10, 0.0},
                                                  {0.05, 0.05, 0.90, 0.0},
                                                  {0.0, 0.0, 0.10, 0.90}}};
  double state_score_noise = 0.0;

  void check() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("sim config: ") + name + " must lie in [0,1]");
    };
    auto nonneg = [](double s, const char* name) {
      if (!(s >= 0.0) || !std::isfinite(s))
        throw std::invalid_argument(std::string("sim config: ") + name + " must be non-negative");
    };
    if (n_frames < 1) throw std::invalid_argument("sim config: n_frames must be >= 1");
    if (initial_cells < 0 || polar_bodies < 0 || max_cells < 0 || min_division_age < 0)
      throw std::invalid_argument("sim config: counts must be non-negative");
    if (polar_lifetime < 1) throw std::invalid_argument("sim config: polar_lifetime must be >= 1");
    prob(division_prob, "division_prob");
    prob(dropout, "dropout");
    prob(cell_score_mean, "cell_score_mean");
    prob(clutter_score_mean, "clutter_score_mean");
    nonneg(clutter_rate, "clutter_rate");
    nonneg(motion_std, "motion_std");
    nonneg(division_displacement, "division_displacement");
    nonneg(polar_motion_std, "polar_motion_std");
    nonneg(jitter_std, "jitter_std");
    nonneg(movement_noise_std, "movement_noise_std");
    nonneg(cell_score_std, "cell_score_std");
    nonneg(clutter_score_std, "clutter_score_std");
    nonneg(state_score_noise, "state_score_noise");
    for (int k = 0; k < 3; ++k) {
      if (!(box[k] > 0.0)) throw std::invalid_argument("sim config: box extents must be positive");
      nonneg(jitter_scale[k], "jitter_scale");
    }
    for (const auto& row : confusion) {
      double s = 0.0;
      for (double v : row) {
        prob(v, "confusion entry");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("sim config: confusion rows must sum to 1");
    }
  }
};

namespace detail {

inline double reflect(double v, double hi) {
  if (hi <= 0.0) return 0.0;
  const double period = 2.0 * hi;
  v = std::fmod(v, period);
  if (v < 0.0) v += period;
  return v > hi ? period - v : v;
}

inline Vec3 reflect(const Vec3& p, const Vec3& box) {
  return {reflect(p[0], box[0]), reflect(p[1], box[1]), reflect(p[2], box[2])};
}

inline Vec3 gaussian3(std::mt19937_64& rng, double sd) {
  if (sd == 0.0) return {0.0, 0.0, 0.0};
  std::normal_distribution<double> n(0.0, sd);
  const double z = n(rng), y = n(rng), x = n(rng);
  return {z, y, x};
}

inline Vec3 uniform_in(std::mt19937_64& rng, const Vec3& box) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double z = u(rng), y = u(rng), x = u(rng);
  return {z * box[0], y * box[1], x * box[2]};
}

inline Vec3 unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const double z = n(rng), y = n(rng), x = n(rng);
    const double len = std::sqrt(z * z + y * y + x * x);
    if (len > 1e-12) return {z / len, y / len, x / len};
  }
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline double noisy(std::mt19937_64& rng, double mean, double sd) {
  if (sd == 0.0) return mean;
  std::normal_distribution<double> n(mean, sd);
  return n(rng);
}

}  // namespace detail

/// Ground-truth lineage: Brownian cells in a reflective box that divide into
/// two daughters, plus near-static polar bodies. States follow topology.
inline LineageForest simulate_gt(const SimConfig& cfg) {
  cfg.check();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct Cell {
    std::int64_t node;
    Vec3 pos;
    int age;
  };
  std::vector<LineageNode> nodes;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  std::int64_t next_id = 1;
  auto add_node = [&](int frame, const Vec3& p, bool polar) {
    LineageNode n;
    n.id = next_id++;
    n.frame = frame;
    n.position = p;
    n.polar = polar;
    nodes.push_back(n);
    return n.id;
  };

  std::vector<Cell> alive;
  for (int i = 0; i < cfg.initial_cells; ++i) {
    const Vec3 p = detail::uniform_in(rng, cfg.box);
    alive.push_back({add_node(0, p, false), p, cfg.min_division_age});
  }
  for (int t = 0; t + 1 < cfg.n_frames; ++t) {
    std::vector<Cell> next;
    std::size_t count = alive.size();
    for (const Cell& c : alive) {
      const bool may_divide = c.age >= cfg.min_division_age && (cfg.max_cells == 0 || count < static_cast<std::size_t>(cfg.max_cells));
      if (may_divide && unit(rng) < cfg.division_prob) {
        const Vec3 centre = c.pos + detail::gaussian3(rng, cfg.motion_std);
        const Vec3 dir = detail::unit_vector(rng);
        const Vec3 off{dir[0] * cfg.division_displacement, dir[1] * cfg.division_displacement,
                       dir[2] * cfg.division_displacement};
        for (const Vec3& p : {centre + off, centre - off}) {
          const Vec3 q = detail::reflect(p, cfg.box);
          const auto id = add_node(t + 1, q, false);
          edges.emplace_back(c.node, id);
          next.push_back({id, q, 0});
        }
        ++count;
      } else {
        const Vec3 q = detail::reflect(c.pos + detail::gaussian3(rng, cfg.motion_std), cfg.box);
        const auto id = add_node(t + 1, q, false);
        edges.emplace_back(c.node, id);
        next.push_back({id, q, c.age + 1});
      }
    }
    alive.swap(next);
  }

  for (int b = 0; b < cfg.polar_bodies; ++b) {
    const int lifetime = std::min(cfg.polar_lifetime, cfg.n_frames);
    const int start = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.n_frames - lifetime + 1));
    Vec3 p = detail::uniform_in(rng, cfg.box);
    std::int64_t prev = 0;
    for (int t = start; t < start + lifetime; ++t) {
      if (t > start) p = detail::reflect(p + detail::gaussian3(rng, cfg.polar_motion_std), cfg.box);
      const auto id = add_node(t, p, true);
      if (prev) edges.emplace_back(prev, id);
      prev = id;
    }
  }

  LineageForest f(std::move(nodes), edges);
  f.label_states_from_topology();
  return f;
}

/// Noisy detections of `gt`. When `sources` is given it receives, per
/// detection, the GT node id it was rendered from (0 for clutter).
inline std::vector<Detection> render_detections(const LineageForest& gt, const SimConfig& cfg,
                                                std::vector<std::int64_t>* sources = nullptr) {
  cfg.check();
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Detection> out;
  if (sources) sources->clear();
  std::int64_t next_id = 1;

  auto state_scores = [&](const std::array<double, 4>& row) {
    std::array<double, 4> s{};
    for (int k = 0; k < 4; ++k) s[k] = detail::clamp01(detail::noisy(rng, row[k], cfg.state_score_noise));
    return s;
  };

  for (std::size_t i = 0; i < gt.num_nodes(); ++i) {
    const LineageNode& n = gt.node(i);
    if (cfg.dropout > 0.0 && unit(rng) < cfg.dropout) continue;
    Detection d;
    d.id = next_id++;
    d.frame = n.frame;
    const Vec3 jit = detail::gaussian3(rng, cfg.jitter_std);
    d.position = {n.position[0] + jit[0] * cfg.jitter_scale[0], n.position[1] + jit[1] * cfg.jitter_scale[1],
                  n.position[2] + jit[2] * cfg.jitter_scale[2]};
    const std::size_t p = gt.parent_of(i);
    const Vec3 back = p == LineageForest::npos ? Vec3{0.0, 0.0, 0.0} : gt.node(p).position - n.position;
    d.movement = back + detail::gaussian3(rng, cfg.movement_noise_std);
    d.score = detail::clamp01(detail::noisy(rng, cfg.cell_score_mean, cfg.cell_score_std));
    const int row = n.polar ? 3 : static_cast<int>(n.state);
    d.state_scores = state_scores(cfg.confusion[static_cast<std::size_t>(row)]);
    out.push_back(d);
    if (sources) sources->push_back(n.id);
  }

  if (cfg.clutter_rate > 0.0) {
    std::poisson_distribution<int> pois(cfg.clutter_rate);
    std::exponential_distribution<double> expo(1.0);
    for (int t = 0; t < cfg.n_frames; ++t) {
      const int k = pois(rng);
      for (int c = 0; c < k; ++c) {
        Detection d;
        d.id = next_id++;
        d.frame = t;
        d.position = detail::uniform_in(rng, cfg.box);
        d.movement = detail::gaussian3(rng, std::max(cfg.motion_std, 1.0) * 3.0);
        d.score = detail::clamp01(detail::noisy(rng, cfg.clutter_score_mean, cfg.clutter_score_std));
        std::array<double, 4> w{};
        double s = 0.0;
        for (auto& x : w) s += (x = expo(rng));
        for (auto& x : w) x /= s;
        d.state_scores = state_scores(w);
        out.push_back(d);
        if (sources) sources->push_back(0);
      }
    }
  }
  return out;
}

}  // namespace celltrack
