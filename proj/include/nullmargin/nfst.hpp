#pragma once

// Null Foley-Sammon transform: directions with zero within-class scatter and
// positive between-class scatter, which collapse every class to one point.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "nullmargin/error.hpp"
#include "nullmargin/scatter.hpp"
#include "nullmargin/types.hpp"

namespace nullmargin {

/// Extends an orthonormal basis (first `kept` columns of `basis`) with the
/// span of new columns by Gram-Schmidt with reorthogonalization. Columns are
/// processed in blocks: each block is projected twice against the basis built
/// so far (two GEMM passes), then orthogonalized internally by modified
/// Gram-Schmidt, again twice. A column whose residual norm falls below
/// drop_tol * (its input norm) is dependent and dropped. `basis` grows as needed.
inline void extend_basis(Matrix& basis, Index& kept, const Matrix& columns, double drop_tol = 1e-12,
                         Index block = 32) {
  const Index d = columns.rows();
  const Index n = columns.cols();
  if (basis.rows() != d || basis.cols() < std::min(d, kept + n)) basis.conservativeResize(d, std::min(d, kept + n));

  for (Index start = 0; start < n; start += block) {
    const Index width = std::min(block, n - start);
    Matrix v = columns.middleCols(start, width);
    const Vector input_norms = v.colwise().norm().transpose();

    for (int pass = 0; pass < 2 && kept > 0; ++pass) {
      const Matrix h = basis.leftCols(kept).transpose() * v;
      v.noalias() -= basis.leftCols(kept) * h;
    }

    const Index block_start = kept;
    for (Index j = 0; j < width; ++j) {
      auto col = v.col(j);
      for (int pass = 0; pass < 2; ++pass)
        for (Index q = block_start; q < kept; ++q) col -= basis.col(q).dot(col) * basis.col(q);

      double norm = col.norm();
      if (!(norm > drop_tol * input_norms(j)) || input_norms(j) == 0.0) continue;
      // Heavy cancellation amplifies the residual of the block-level projection;
      // such columns get one more full pass against everything kept so far.
      if (norm < 1e-4 * input_norms(j)) {
        const Vector h = basis.leftCols(kept).transpose() * col;
        col -= basis.leftCols(kept) * h;
        norm = col.norm();
        if (!(norm > drop_tol * input_norms(j))) continue;
      }
      if (kept == basis.cols()) return;
      basis.col(kept++) = col / norm;
    }
  }
}

/// Orthonormal basis for the span of the given columns; may have fewer
/// columns than the input when some are dependent.
inline Matrix orthonormal_basis(const Matrix& columns, double drop_tol = 1e-12, Index block = 32) {
  Matrix basis(columns.rows(), std::min(columns.rows(), columns.cols()));
  Index kept = 0;
  extend_basis(basis, kept, columns, drop_tol, block);
  return basis.leftCols(kept);
}

/// Fitted null space. `directions` (W_N, d x (c-1)) is the only part needed
/// to project; `basis` (U) and `coefficients` (B, with W_N = U B) are kept
/// from fitting for inspection and are empty on a model read back from disk.
struct NullProjector {
  Matrix directions;
  Vector mean;
  Matrix basis;
  Matrix coefficients;
  /// Number of eigenvalues of U^T S_w U under the null tolerance. More than
  /// c-1 means the data was near-degenerate and only the c-1 smallest were kept.
  std::size_t null_candidates = 0;

  Index input_dim() const { return directions.rows(); }
  Index output_dim() const { return directions.cols(); }
};

struct NfstOptions {
  double null_tolerance = 1e-10;  // relative to the largest eigenvalue of U^T S_w U
  // Eigenvalues under zero_tolerance * trace(S_t) also count as null. Without
  // this floor a within-class scatter that is zero up to rounding (every class
  // repeats one point) would be judged against its own rounding noise.
  double zero_tolerance = 1e-12;
  double drop_tolerance = 1e-12;  // Gram-Schmidt dependence threshold
};

namespace detail {

/// Null coefficients B from centered coordinates g (r x n) in an orthonormal
/// basis of the centered data. `total` is the squared norm of g, i.e. trace(S_t).
inline Matrix null_coefficients(Matrix g, std::span<const int> labels, int c, double total, const NfstOptions& opts,
                                std::size_t& nulls) {
  const Index r = g.rows();
  const Index n = g.cols();
  // U^T S_w U = (U^T W)(U^T W)^T with W the class-centered data; U^T W is the
  // projected data with projected class means removed.
  Matrix means = Matrix::Zero(r, c);
  std::vector<double> counts(static_cast<std::size_t>(c), 0.0);
  for (Index j = 0; j < n; ++j) {
    const auto l = labels[static_cast<std::size_t>(j)];
    means.col(l) += g.col(j);
    counts[static_cast<std::size_t>(l)] += 1.0;
  }
  for (int i = 0; i < c; ++i) means.col(i) /= counts[static_cast<std::size_t>(i)];
  for (Index j = 0; j < n; ++j) g.col(j) -= means.col(labels[static_cast<std::size_t>(j)]);

  const Matrix within = g * g.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(within);
  if (eig.info() != Eigen::Success) throw NumericalError("fit_nfst: eigensolver failed on projected within-class scatter");

  const Vector& values = eig.eigenvalues();  // ascending
  const double top = r > 0 ? std::max(values(r - 1), 0.0) : 0.0;
  const double floor = std::max(opts.null_tolerance * top, opts.zero_tolerance * total);
  nulls = 0;
  for (Index i = 0; i < r; ++i)
    if (values(i) <= floor) ++nulls;

  const auto wanted = static_cast<std::size_t>(c - 1);
  if (nulls < wanted) throw DegenerateDataError(nulls, wanted);
  return eig.eigenvectors().leftCols(c - 1);
}

inline int checked_class_count(Index n, std::span<const int> labels) {
  if (static_cast<std::size_t>(n) != labels.size()) throw DataError("fit_nfst: label count does not match sample count");
  const int c = count_classes(labels);
  if (c < 2) throw InsufficientSamplesError("fit_nfst: need at least two classes");
  class_counts(labels, c);
  if (n - 1 < c - 1) throw InsufficientSamplesError("fit_nfst: fewer samples than classes");
  return c;
}

}  // namespace detail

inline NullProjector fit_nfst(const RowMatrix& x, std::span<const int> labels, const NfstOptions& opts = {}) {
  const Index n = x.rows();
  const int c = detail::checked_class_count(n, labels);

  NullProjector p;
  p.mean = x.colwise().mean().transpose();
  Matrix centered = x.transpose();
  centered.colwise() -= p.mean;

  // Centered columns sum to zero, so the first n-1 already span everything.
  p.basis = orthonormal_basis(centered.leftCols(n - 1), opts.drop_tolerance);
  p.coefficients = detail::null_coefficients(p.basis.transpose() * centered, labels, c, centered.squaredNorm(), opts,
                                             p.null_candidates);
  p.directions = p.basis * p.coefficients;
  return p;
}

/// Null-space fitting for a training set that only grows by appended rows,
/// as in self-training. The basis spans the differences to the first row,
/// which is the span of the centered data, so appending k rows to n costs
/// O(k n d) instead of a refit from scratch. Samples are carried as
/// coordinates in that basis.
class NullspaceWorkspace {
 public:
  explicit NullspaceWorkspace(NfstOptions opts = {}) : opts_(opts) {}

  std::size_t size() const noexcept { return static_cast<std::size_t>(coords_.cols()); }
  Index rank() const noexcept { return kept_; }

  void append(const RowMatrix& rows) {
    if (rows.rows() == 0) return;
    if (coords_.cols() == 0) origin_ = rows.row(0).transpose();
    if (rows.cols() != origin_.size())
      throw DimensionMismatch(static_cast<std::size_t>(origin_.size()), static_cast<std::size_t>(rows.cols()), "nullspace workspace");
    const Index old_rank = kept_;
    const Matrix diff = differences(rows);
    extend_basis(basis_, kept_, diff, opts_.drop_tolerance);

    Matrix coords = Matrix::Zero(kept_, coords_.cols() + rows.rows());
    // Earlier rows lie in the old span: their new coordinates are zero.
    coords.topLeftCorner(old_rank, coords_.cols()) = coords_;
    coords.rightCols(rows.rows()).noalias() = basis_.leftCols(kept_).transpose() * diff;
    coords_ = std::move(coords);
  }

  /// Basis coordinates of arbitrary rows, relative to the first training row.
  /// Existing columns of `coords` are kept; only columns for basis vectors
  /// added since it was last extended are computed.
  void extend_coordinates(RowMatrix& coords, const RowMatrix& rows) const {
    const Index have = coords.rows() == rows.rows() ? coords.cols() : 0;
    if (have == 0) coords.resize(rows.rows(), 0);
    if (have >= kept_) return;
    coords.conservativeResize(rows.rows(), kept_);
    coords.rightCols(kept_ - have).noalias() =
        differences(rows).transpose() * basis_.middleCols(have, kept_ - have);
  }

  struct Fit {
    NullProjector projector;  // basis left empty: it is the workspace's
    Vector coordinate_mean;
    RowMatrix training_projection;

    /// W_N^T (y - m) from basis coordinates of y.
    RowMatrix project(const RowMatrix& coords) const {
      return (coords.leftCols(coordinate_mean.size()).rowwise() - coordinate_mean.transpose()) *
             projector.coefficients;
    }
  };

  Fit fit(std::span<const int> labels) const {
    const int c = detail::checked_class_count(coords_.cols(), labels);
    Fit f;
    f.coordinate_mean = coords_.rowwise().mean();
    Matrix g = coords_;
    g.colwise() -= f.coordinate_mean;
    f.projector.coefficients = detail::null_coefficients(g, labels, c, g.squaredNorm(), opts_, f.projector.null_candidates);
    f.projector.mean = origin_ + basis_.leftCols(kept_) * f.coordinate_mean;
    f.projector.directions = basis_.leftCols(kept_) * f.projector.coefficients;
    f.training_projection = g.transpose() * f.projector.coefficients;
    return f;
  }

 private:
  Matrix differences(const RowMatrix& rows) const {
    Matrix diff = rows.transpose();
    diff.colwise() -= origin_;
    return diff;
  }

  NfstOptions opts_;
  Vector origin_;
  Matrix basis_;
  Index kept_ = 0;
  Matrix coords_;  // rank x n
};

/// W_N^T (x - m). Centering by the training mean only translates the projected cloud.
inline Vector project_null(const NullProjector& p, const Eigen::Ref<const Vector>& x) {
  if (x.size() != p.input_dim())
    throw DimensionMismatch(static_cast<std::size_t>(p.input_dim()), static_cast<std::size_t>(x.size()), "project_null");
  return p.directions.transpose() * (x - p.mean);
}

/// Row-wise projection of a sample matrix.
inline RowMatrix project_null_rows(const NullProjector& p, const RowMatrix& x) {
  if (x.cols() != p.input_dim())
    throw DimensionMismatch(static_cast<std::size_t>(p.input_dim()), static_cast<std::size_t>(x.cols()), "project_null");
  RowMatrix centered = x;
  centered.rowwise() -= p.mean.transpose();
  return centered * p.directions;
}

}  // namespace nullmargin
