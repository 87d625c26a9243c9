#pragma once

// Rectangular linear assignment (Hungarian method with potentials).

#include <limits>
#include <optional>
#include <vector>

namespace celltrack {

/// Cost entry that forbids a pairing.
inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

/// Maximum-cardinality assignment of rows to columns among allowed pairs; among
/// those, minimum total cost. Returns the column of each row, or -1.
inline std::vector<int> max_matching_min_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t rows = cost.size();
  const std::size_t cols = rows ? cost[0].size() : 0;
  std::vector<int> result(rows, -1);
  if (!rows || !cols) return result;

  // Allowed pairs get a large bonus so that every extra match beats any
  // distance saving; forbidden pairs stay at zero and are dropped afterwards.
  double span = 0.0;
  for (const auto& r : cost)
    for (double c : r)
      if (c != kForbidden) span = std::max(span, std::abs(c));
  const double bonus = (span + 1.0) * static_cast<double>(std::min(rows, cols) + 1);

  const std::size_t n = std::max(rows, cols);
  auto a = [&](std::size_t i, std::size_t j) -> double {
    if (i >= rows || j >= cols || cost[i][j] == kForbidden) return 0.0;
    return cost[i][j] - bonus;
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i == 0 || i > rows || j > cols) continue;
    if (cost[i - 1][j - 1] != kForbidden) result[i - 1] = static_cast<int>(j - 1);
  }
  return result;
}

}  // namespace celltrack
