#pragma once

// Normalized kernel maximum margin criterion: maximize a^T (P - Q) a subject to
// a^T K a = 1, i.e. the symmetric-definite generalized eigenproblem
// (P - Q) a = lambda K a, keeping every positive-eigenvalue direction.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nullmargin/error.hpp"
#include "nullmargin/scatter.hpp"
#include "nullmargin/types.hpp"

namespace nullmargin {

enum class KernelKind { rbf, linear };

inline std::string to_string(KernelKind k) { return k == KernelKind::rbf ? "rbf" : "linear"; }

inline KernelKind parse_kernel_kind(std::string_view s) {
  if (s == "rbf") return KernelKind::rbf;
  if (s == "linear") return KernelKind::linear;
  throw ConfigError("unknown kernel '" + std::string(s) + "' (expected rbf or linear)");
}

struct KernelSpec {
  KernelKind kind = KernelKind::rbf;
  std::optional<double> bandwidth;  // unset = mean pairwise distance of the training points

  void validate() const {
    if (bandwidth && !(*bandwidth > 0)) throw ConfigError("kernel bandwidth must be positive");
  }
};

struct KernelDiscriminantModel {
  RowMatrix train_points;  // m x p
  KernelSpec kernel;
  double resolved_bandwidth = 1.0;  // unused by the linear kernel
  Matrix coefficients;              // m x l, one expansion vector per column
  Vector eigenvalues;               // l, positive, descending
  std::vector<int> class_index;     // m

  Index input_dim() const { return train_points.cols(); }
  Index output_dim() const { return coefficients.cols(); }
};

namespace detail {

inline double squared_distance(const double* a, const double* b, Index p) {
  double s = 0.0;
  for (Index i = 0; i < p; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

}  // namespace detail

/// Mean Euclidean distance over all m(m-1)/2 point pairs.
inline double resolve_bandwidth(const RowMatrix& points) {
  const Index m = points.rows();
  if (m < 2) throw DataError("resolve_bandwidth: need at least two points");
  double sum = 0.0;
  for (Index i = 0; i < m; ++i)
    for (Index j = i + 1; j < m; ++j)
      sum += std::sqrt(detail::squared_distance(points.row(i).data(), points.row(j).data(), points.cols()));
  const double pairs = static_cast<double>(m) * static_cast<double>(m - 1) / 2.0;
  const double mean = sum / pairs;
  if (!(mean > 0)) throw DataError("resolve_bandwidth: all points coincide (zero mean distance)");
  return mean;
}

/// Entry (i, j) = k(a_i, b_j). rbf: exp(-|a - b|^2 / (2 sigma^2)); linear: a . b.
inline Matrix gram(const RowMatrix& a, const RowMatrix& b, KernelKind kind, double bandwidth) {
  if (a.cols() != b.cols())
    throw DimensionMismatch(static_cast<std::size_t>(a.cols()), static_cast<std::size_t>(b.cols()), "gram");
  if (kind == KernelKind::linear) return a * b.transpose();
  const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
  Matrix k(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j)
      k(i, j) = std::exp(scale * detail::squared_distance(a.row(i).data(), b.row(j).data(), a.cols()));
  return k;
}

/// The matrices of one margin problem, exposed for diagnostics and oracles.
struct MarginProblem {
  Matrix kernel;    // K
  Matrix margin;    // P - Q
  Matrix jittered;  // K + jitter * trace(K)/m * I
};

/// Builds P - Q from the kernel matrix and labels with prior weights n_i/m:
///   Q = (1/m) sum_i K_i (I - 11^T/n_i) K_i^T
///   P = sum_i (n_i/m) (mt_i - mt)(mt_i - mt)^T
/// where K_i holds the class-i columns of K, mt_i their mean and mt = K 1/m.
inline MarginProblem build_margin_problem(Matrix kernel, std::span<const int> labels, double jitter = 1e-8) {
  const Index m = kernel.rows();
  if (kernel.cols() != m || static_cast<std::size_t>(m) != labels.size())
    throw DataError("build_margin_problem: kernel/label size mismatch");
  const int c = count_classes(labels);
  const auto counts = class_counts(labels, c);

  Matrix class_means = Matrix::Zero(m, c);
  for (Index j = 0; j < m; ++j) class_means.col(labels[static_cast<std::size_t>(j)]) += kernel.col(j);
  for (int i = 0; i < c; ++i) class_means.col(i) /= static_cast<double>(counts[static_cast<std::size_t>(i)]);

  Matrix within = kernel;
  for (Index j = 0; j < m; ++j) within.col(j) -= class_means.col(labels[static_cast<std::size_t>(j)]);

  const double md = static_cast<double>(m);
  const Vector mean = kernel.rowwise().sum() / md;
  Matrix between(m, c);
  for (int i = 0; i < c; ++i)
    between.col(i) = std::sqrt(static_cast<double>(counts[static_cast<std::size_t>(i)]) / md) * (class_means.col(i) - mean);

  MarginProblem prob;
  prob.margin = between * between.transpose() - (within * within.transpose()) / md;
  prob.margin = 0.5 * (prob.margin + prob.margin.transpose()).eval();
  prob.jittered = kernel;
  prob.jittered.diagonal().array() += jitter * kernel.trace() / md;
  prob.kernel = std::move(kernel);
  return prob;
}

struct NkmmcOptions {
  double jitter = 1e-8;
  double positive_tolerance = 1e-9;  // relative to the largest eigenvalue
  double min_kernel_share = 0.5;     // of a^T K_jittered a carried by K itself
};

inline KernelDiscriminantModel fit_nkmmc(const RowMatrix& points, std::span<const int> labels, const KernelSpec& kernel,
                                         const NkmmcOptions& opts = {}) {
  kernel.validate();
  const Index m = points.rows();
  if (static_cast<std::size_t>(m) != labels.size()) throw DataError("fit_nkmmc: label count does not match point count");
  const int c = count_classes(labels);
  if (c < 2) throw DataError("fit_nkmmc: need at least two classes");
  class_counts(labels, c);

  KernelDiscriminantModel model;
  model.train_points = points;
  model.kernel = kernel;
  model.class_index.assign(labels.begin(), labels.end());
  if (kernel.kind == KernelKind::rbf) model.resolved_bandwidth = kernel.bandwidth ? *kernel.bandwidth : resolve_bandwidth(points);

  auto prob = build_margin_problem(gram(points, points, kernel.kind, model.resolved_bandwidth), labels, opts.jitter);

  Eigen::LLT<Matrix> llt(prob.jittered);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("fit_nkmmc: Cholesky of the jittered kernel matrix failed (m=" + std::to_string(m) +
                         ", min diagonal=" + std::to_string(prob.jittered.diagonal().minCoeff()) +
                         ", trace=" + std::to_string(prob.kernel.trace()) + ")");
  }
  // C = L^{-1} (P - Q) L^{-T}
  const Matrix half = llt.matrixL().solve(prob.margin);
  Matrix reduced = llt.matrixL().solve(half.transpose());
  reduced = 0.5 * (reduced + reduced.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Matrix> eig(reduced);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("fit_nkmmc: symmetric eigensolver failed on the reduced problem (norm=" +
                         std::to_string(reduced.norm()) + ")");
  }
  const Vector& values = eig.eigenvalues();  // ascending
  const double top = values(m - 1);
  if (!(top > 0)) throw EmptyModelError("fit_nkmmc: no positive generalized eigenvalue");
  const double floor = opts.positive_tolerance * std::abs(top);

  std::vector<Index> keep;
  for (Index i = m - 1; i >= 0 && values(i) > floor; --i) keep.push_back(i);

  // a^T K_jittered a = 1 for every back-transformed vector. Directions whose
  // norm comes mostly from the jitter lie in the null space of K (duplicated
  // training points) and carry only rounding noise.
  std::vector<Vector> dirs;
  std::vector<double> vals;
  for (Index i : keep) {
    Vector a = llt.matrixU().solve(eig.eigenvectors().col(i));
    const double norm2 = a.dot(prob.kernel * a);
    if (!(norm2 > opts.min_kernel_share * a.dot(prob.jittered * a))) continue;
    dirs.push_back(a / std::sqrt(norm2));
    vals.push_back(values(i));
  }
  if (dirs.empty()) throw EmptyModelError("fit_nkmmc: every positive direction lies in the null space of K");

  model.coefficients.resize(m, static_cast<Index>(dirs.size()));
  model.eigenvalues.resize(static_cast<Index>(dirs.size()));
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    Vector& a = dirs[k];
    // Sign convention: first significant coefficient positive.
    const double big = a.cwiseAbs().maxCoeff();
    for (Index j = 0; j < m; ++j) {
      if (std::abs(a(j)) > 1e-10 * big) {
        if (a(j) < 0) a = -a;
        break;
      }
    }
    model.coefficients.col(static_cast<Index>(k)) = a;
    model.eigenvalues(static_cast<Index>(k)) = vals[k];
  }
  return model;
}

/// Rows of x mapped onto every discriminant: gram(x, train) * A.
inline RowMatrix project_kernel_rows(const KernelDiscriminantModel& model, const RowMatrix& x) {
  if (x.cols() != model.input_dim())
    throw DimensionMismatch(static_cast<std::size_t>(model.input_dim()), static_cast<std::size_t>(x.cols()), "project_kernel");
  return gram(x, model.train_points, model.kernel.kind, model.resolved_bandwidth) * model.coefficients;
}

inline Vector project_kernel(const KernelDiscriminantModel& model, const Eigen::Ref<const Vector>& x) {
  if (x.size() != model.input_dim())
    throw DimensionMismatch(static_cast<std::size_t>(model.input_dim()), static_cast<std::size_t>(x.size()), "project_kernel");
  RowMatrix row = x.transpose();
  return project_kernel_rows(model, row).row(0).transpose();
}

}  // namespace nullmargin
