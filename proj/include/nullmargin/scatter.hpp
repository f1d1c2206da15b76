#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "nullmargin/dataio.hpp"
#include "nullmargin/error.hpp"
#include "nullmargin/types.hpp"

namespace nullmargin {

/// Dense class labels 0..c-1 for a sample set.
struct ClassAssignment {
  std::vector<int> labels;
  int classes = 0;
};

/// Maps arbitrary ordered keys to dense labels, numbering classes in key order.
template <class Key>
ClassAssignment assign_classes(const std::vector<Key>& keys) {
  std::map<Key, int> index;
  for (const auto& k : keys) index.emplace(k, 0);
  int next = 0;
  for (auto& [k, v] : index) v = next++;
  ClassAssignment out;
  out.classes = next;
  out.labels.reserve(keys.size());
  for (const auto& k : keys) out.labels.push_back(index.at(k));
  return out;
}

/// Counts per class; throws if labels are out of range or a class is empty.
inline std::vector<std::size_t> class_counts(std::span<const int> labels, int classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(classes, 0)), 0);
  for (int l : labels) {
    if (l < 0 || l >= classes) throw DataError("class label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] == 0) throw DataError("class " + std::to_string(i) + " has no samples");
  return counts;
}

inline int count_classes(std::span<const int> labels) {
  int c = 0;
  for (int l : labels) c = std::max(c, l + 1);
  return c;
}

/// Class-conditional scatter, kept in factored form:
///   S_t = C C^T, S_w = W W^T, S_b = B B^T
/// with C the globally centered data, W the class-centered data and B the
/// sqrt(n_i)-weighted centered class means. The dense d x d matrices are only
/// materialized on request. Scatter is unnormalized (sums, not means).
struct ScatterStats {
  Matrix centered;         // d x n
  Matrix within_centered;  // d x n
  Matrix between_factor;   // d x c
  Matrix class_means;      // d x c
  std::vector<std::size_t> class_counts;
  std::vector<double> class_priors;
  Vector global_mean;

  Index dim() const { return global_mean.size(); }
  std::size_t classes() const { return class_counts.size(); }

  Matrix between() const { return between_factor * between_factor.transpose(); }
  Matrix within() const { return within_centered * within_centered.transpose(); }
  Matrix total() const { return centered * centered.transpose(); }

  double between_quadratic(const Vector& w) const { return (between_factor.transpose() * w).squaredNorm(); }
  double within_quadratic(const Vector& w) const { return (within_centered.transpose() * w).squaredNorm(); }
  double total_quadratic(const Vector& w) const { return (centered.transpose() * w).squaredNorm(); }

  // Frobenius norms via the small Gram matrices: ||F F^T||_F = ||F^T F||_F.
  double within_norm() const { return (within_centered.transpose() * within_centered).norm(); }
  double between_norm() const { return (between_factor.transpose() * between_factor).norm(); }
  double within_trace() const { return within_centered.squaredNorm(); }
};

inline ScatterStats compute_scatter(const RowMatrix& x, std::span<const int> labels) {
  if (x.rows() == 0) throw DataError("compute_scatter: empty input");
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw DataError("compute_scatter: label count does not match sample count");
  const int c = count_classes(labels);
  if (c < 2) throw DataError("compute_scatter: need at least two classes");
  const auto counts = class_counts(labels, c);
  const Index n = x.rows();
  const Index d = x.cols();

  ScatterStats s;
  s.class_counts = counts;
  s.global_mean = x.colwise().mean().transpose();
  s.class_means = Matrix::Zero(d, c);
  for (Index j = 0; j < n; ++j) s.class_means.col(labels[static_cast<std::size_t>(j)]) += x.row(j).transpose();
  for (int i = 0; i < c; ++i) s.class_means.col(i) /= static_cast<double>(counts[static_cast<std::size_t>(i)]);

  s.centered = x.transpose();
  s.centered.colwise() -= s.global_mean;
  s.within_centered = x.transpose();
  for (Index j = 0; j < n; ++j) s.within_centered.col(j) -= s.class_means.col(labels[static_cast<std::size_t>(j)]);

  s.between_factor.resize(d, c);
  for (int i = 0; i < c; ++i) {
    const double ni = static_cast<double>(counts[static_cast<std::size_t>(i)]);
    s.between_factor.col(i) = std::sqrt(ni) * (s.class_means.col(i) - s.global_mean);
    s.class_priors.push_back(ni / static_cast<double>(n));
  }
  return s;
}

/// Scatter of the labeled rows of a table, classes numbered by ascending identity.
inline ScatterStats compute_scatter(const FeatureTable& table) {
  std::vector<std::size_t> rows;
  std::vector<IdentityId> ids;
  for (std::size_t i = 0; i < table.size(); ++i)
    if (const auto& id = table.info(i).identity) {
      rows.push_back(i);
      ids.push_back(*id);
    }
  if (rows.empty()) throw DataError("compute_scatter: no labeled samples");
  const auto sub = table.subset(rows);
  const auto assignment = assign_classes(ids);
  return compute_scatter(sub.features(), assignment.labels);
}

/// Fisher ratio (w^T S_b w)/(w^T S_w w) for a unit direction. Returns +infinity
/// when the direction is in the within-class null space but carries
/// between-class scatter; throws UndefinedValueError for 0/0.
inline double fisher_value(const ScatterStats& s, const Vector& w) {
  if (w.size() != s.dim()) throw DimensionMismatch(static_cast<std::size_t>(s.dim()), static_cast<std::size_t>(w.size()), "fisher_value");
  const double ww = w.squaredNorm();
  const double num = s.between_quadratic(w);
  const double den = s.within_quadratic(w);
  const double den_floor = 1e-12 * s.within_norm() * ww;
  if (den <= den_floor) {
    if (num > 1e-12 * s.between_norm() * ww && num > 0) return std::numeric_limits<double>::infinity();
    throw UndefinedValueError("fisher_value: both between- and within-class scatter vanish along w");
  }
  return num / den;
}

}  // namespace nullmargin
