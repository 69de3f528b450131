#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vmfcoop/error.hpp"

namespace vmfcoop {

/// Tolerance for "this row is on the unit sphere" checks.
inline constexpr double kUnitTolerance = 1e-6;
/// Clamp for norms in row normalization.
inline constexpr double kNormalizeEps = 1e-12;
/// The small constant of the concentration estimator and the symmetric CE.
inline constexpr double kFieldEps = 1e-8;
/// Resultants shorter than this are treated as exact cancellation.
inline constexpr double kDegenerateNorm = 1e-10;

// All reductions below run strictly left to right so results are
// bit-reproducible for a given input.

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

/// Dense row-major real matrix with no further invariants.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::DimMismatch,
            "matrix data has " + std::to_string(data_.size()) + " values, expected " +
                std::to_string(rows_ * cols_));
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == cols, ErrorKind::DimMismatch, "ragged rows");
      for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A direction on S^{d-1}.
class UnitVector {
 public:
  explicit UnitVector(std::vector<double> coords) : coords_(std::move(coords)) {
    require(coords_.size() >= 2, ErrorKind::InvalidSpec, "unit vector needs d >= 2");
    require(all_finite(coords_), ErrorKind::NonFiniteInput, "unit vector has non-finite entries");
    const double n = norm(coords_);
    require(std::abs(n - 1.0) <= kUnitTolerance, ErrorKind::InvalidSpec,
            "vector norm " + std::to_string(n) + " is not 1");
  }

  /// Projects an arbitrary nonzero vector onto the sphere.
  static UnitVector from_direction(std::vector<double> v) {
    const double n = norm(v);
    require(std::isfinite(n), ErrorKind::NonFiniteInput, "direction has non-finite entries");
    require(n >= kDegenerateNorm, ErrorKind::InvalidSpec, "cannot normalize a zero vector");
    for (double& x : v) x /= n;
    return UnitVector(std::move(v));
  }

  static UnitVector basis(std::size_t d, std::size_t k) {
    std::vector<double> v(d, 0.0);
    v.at(k) = 1.0;
    return UnitVector(std::move(v));
  }

  std::size_t dims() const noexcept { return coords_.size(); }
  std::span<const double> coords() const noexcept { return coords_; }
  double operator[](std::size_t i) const { return coords_[i]; }

  bool operator==(const UnitVector&) const = default;

 private:
  std::vector<double> coords_;
};

/// N x d directional data. Rows are checked for finiteness on construction
/// and, when flagged normalized, for unit norm.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(Matrix values, bool normalized) : values_(std::move(values)), normalized_(normalized) {
    require(values_.rows() >= 1, ErrorKind::InvalidSpec, "embedding matrix needs at least one row");
    require(values_.cols() >= 2, ErrorKind::InvalidSpec, "embedding matrix needs d >= 2");
    require(all_finite(values_.data()), ErrorKind::NonFiniteInput, "embedding matrix has non-finite entries");
    if (normalized_) {
      for (std::size_t i = 0; i < values_.rows(); ++i) {
        const double n = norm(values_.row(i));
        require(std::abs(n - 1.0) <= kUnitTolerance, ErrorKind::InvalidSpec,
                "row " + std::to_string(i) + " has norm " + std::to_string(n) + " but matrix is flagged normalized");
      }
    }
  }

  static EmbeddingMatrix from_rows(const std::vector<std::vector<double>>& rows, bool normalized) {
    return EmbeddingMatrix(Matrix::from_rows(rows), normalized);
  }

  std::size_t rows() const noexcept { return values_.rows(); }
  std::size_t dims() const noexcept { return values_.cols(); }
  bool normalized() const noexcept { return normalized_; }

  std::span<const double> row(std::size_t i) const { return values_.row(i); }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }
  const Matrix& values() const noexcept { return values_; }

  /// Rows picked by index, in the given order.
  EmbeddingMatrix select(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), dims());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      auto src = row(indices[k]);
      std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return EmbeddingMatrix(std::move(out), normalized_);
  }

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  Matrix values_;
  bool normalized_ = false;
};

struct NormalizedRows {
  EmbeddingMatrix matrix;
  /// Rows whose norm fell below eps; they are left as scaled-by-1/eps values
  /// and the result is not flagged normalized.
  std::vector<std::size_t> degenerate_rows;
};

inline NormalizedRows normalize_rows(const Matrix& m, double eps = kNormalizeEps) {
  require(all_finite(m.data()), ErrorKind::NonFiniteInput, "normalize_rows: non-finite entry");
  Matrix out = m;
  std::vector<std::size_t> degenerate;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double n = norm(r);
    if (n < eps) degenerate.push_back(i);
    const double scale = n > eps ? n : eps;
    for (double& x : r) x /= scale;
  }
  const bool unit = degenerate.empty();
  return {EmbeddingMatrix(std::move(out), unit), std::move(degenerate)};
}

inline NormalizedRows normalize_rows(const EmbeddingMatrix& m, double eps = kNormalizeEps) {
  return normalize_rows(m.values(), eps);
}

/// out(i, j) = <a_i, b_j> for row-normalized a and b.
inline Matrix cosine_matrix(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  require(a.dims() == b.dims(), ErrorKind::DimMismatch,
          "cosine_matrix: dims " + std::to_string(a.dims()) + " vs " + std::to_string(b.dims()));
  require(a.normalized() && b.normalized(), ErrorKind::InvalidSpec, "cosine_matrix expects normalized rows");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

struct MeanResultant {
  UnitVector direction;
  double length;  // R in [0, 1]
};

/// Mean direction and mean resultant length R = |mean of rows|.
inline MeanResultant mean_resultant(const EmbeddingMatrix& m) {
  require(m.normalized(), ErrorKind::InvalidSpec, "mean_resultant expects normalized rows");
  std::vector<double> mean(m.dims(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += r[j];
  }
  const double inv_n = 1.0 / static_cast<double>(m.rows());
  for (double& x : mean) x *= inv_n;
  const double length = norm(mean);
  require(length >= kDegenerateNorm, ErrorKind::DegenerateMean,
          "mean resultant length " + std::to_string(length) + " is too small to define a direction");
  for (double& x : mean) x /= length;
  // Rounding can push |mean| a hair above 1 for identical rows.
  return {UnitVector(std::move(mean)), std::min(length, 1.0)};
}

}  // namespace vmfcoop
