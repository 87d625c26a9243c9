#pragma once

#include <chrono>

#include "celltrack/types.hpp"

namespace celltrack {

enum class SolveStatus : std::uint8_t { optimal, infeasible };

inline const char* to_string(SolveStatus s) { return s == SolveStatus::optimal ? "optimal" : "infeasible"; }

struct SolveReport {
  IndicatorVector y;
  double objective = 0.0;
  SolveStatus status = SolveStatus::optimal;
  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;
  double wall_seconds = 0.0;
  std::size_t branch_nodes = 0;
};

/// Raised on timeouts, oversized instances and stitching failures. Carries
/// whatever was available at the time.
class SolveError : public std::runtime_error {
 public:
  SolveError(const std::string& what, SolveReport partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const SolveReport& partial() const { return partial_; }

 private:
  SolveReport partial_;
};

/// Two objective values within this distance of the optimum count as tied.
inline double tie_tolerance(double optimum) { return 1e-9 * (1.0 + std::abs(optimum)); }

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace celltrack
