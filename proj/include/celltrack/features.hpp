#pragma once

// Sparse feature matrix S (one row per indicator, 8 columns) and the linear
// objective <S w, y>.

#include <span>

#include "celltrack/types.hpp"

namespace celltrack {

/// Row-compressed sparse matrix with 8 columns. Every row has at most two
/// nonzeros (the parent row carries the division constant and the parent score).
class FeatureMatrix {
 public:
  static constexpr std::size_t kCols = 8;

  FeatureMatrix() : row_ptr_{0} {}

  std::size_t rows() const { return row_ptr_.size() - 1; }
  std::size_t cols() const { return kCols; }
  std::size_t nonzeros() const { return values_.size(); }

  void push_row(std::initializer_list<std::pair<int, double>> entries) {
    for (auto [c, v] : entries) {
      cols_.push_back(c);
      values_.push_back(v);
    }
    row_ptr_.push_back(values_.size());
  }

  double entry(std::size_t r, std::size_t c) const {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      if (static_cast<std::size_t>(cols_[k]) == c) return values_[k];
    return 0.0;
  }

  template <class F>
  void for_each_in_row(std::size_t r, F&& f) const {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) f(static_cast<std::size_t>(cols_[k]), values_[k]);
  }

  /// Per-indicator costs S w.
  std::vector<double> multiply(const WeightVector& w) const {
    std::vector<double> out(rows(), 0.0);
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out[r] += values_[k] * w[cols_[k]];
    return out;
  }

  /// S^T y.
  std::array<double, 8> transpose_multiply(std::span<const std::uint8_t> y) const {
    if (y.size() != rows()) throw std::invalid_argument("S^T y: dimension mismatch");
    std::array<double, 8> out{};
    for (std::size_t r = 0; r < rows(); ++r) {
      if (!y[r]) continue;
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out[cols_[k]] += values_[k];
    }
    return out;
  }

  std::vector<std::array<double, 8>> dense() const {
    std::vector<std::array<double, 8>> out(rows());
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out[r][cols_[k]] = values_[k];
    return out;
  }

 private:
  std::vector<std::size_t> row_ptr_;
  std::vector<int> cols_;
  std::vector<double> values_;
};

/// Rows follow IndicatorLayout; columns follow WeightIndex. The polar-body
/// score has no column.
inline FeatureMatrix build_feature_matrix(const CandidateGraph& g) {
  FeatureMatrix s;
  const auto& nodes = g.nodes();
  for (const auto& d : nodes) s.push_row({{kNodeSelection, 1.0}, {kNodeScore, d.score}});
  for (std::size_t v = 0; v < nodes.size(); ++v) s.push_row({{kTrack, 1.0}});
  for (const auto& d : nodes) s.push_row({{kDivision, 1.0}, {kParent, d.state_scores[kParentScore]}});
  for (const auto& d : nodes) s.push_row({{kDaughter, d.state_scores[kDaughterScore]}});
  for (const auto& d : nodes) s.push_row({{kContinue, d.state_scores[kContinueScore]}});
  for (const auto& e : g.edges()) s.push_row({{kEdge, e.cost}});
  return s;
}

/// <S w, y>. Feasibility is not checked.
inline double objective_value(const FeatureMatrix& s, const WeightVector& w, std::span<const std::uint8_t> y) {
  if (y.size() != s.rows())
    throw std::invalid_argument("objective_value: indicator length " + std::to_string(y.size()) +
                                " does not match " + std::to_string(s.rows()) + " feature rows");
  double total = 0.0;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    if (!y[r]) continue;
    s.for_each_in_row(r, [&](std::size_t c, double v) { total += v * w[c]; });
  }
  return total;
}

/// Sum of costs over selected indicators.
inline double linear_value(std::span<const double> costs, std::span<const std::uint8_t> y) {
  if (costs.size() != y.size()) throw std::invalid_argument("linear_value: dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i]) total += costs[i];
  return total;
}

}  // namespace celltrack
