#pragma once

// Cross-view pseudo-class mining on unlabeled data: anchor camera selection,
// a secondary margin space over the anchor camera's identities, and mutual
// (k-reciprocal) nearest-neighbor matching of identity centroids.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <vector>

#include "nullmargin/dataio.hpp"
#include "nullmargin/detail/text.hpp"
#include "nullmargin/kmmc.hpp"
#include "nullmargin/nk3ml.hpp"

namespace nullmargin {

// ---------------------------------------------------------------------------
// Neighbors

struct NeighborSets {
  /// nearest[q]: the k closest gallery indices of query q, ascending distance.
  std::vector<std::vector<std::size_t>> nearest;
  /// reciprocal[q]: members g of nearest[q] that also have q among their k nearest.
  std::vector<std::vector<std::size_t>> reciprocal;
};

namespace detail {

/// k nearest gallery rows for each query; ties by gallery index. skip_self
/// drops index q for query q (queries and gallery are the same set).
inline std::vector<std::vector<std::size_t>> nearest_lists(const RowMatrix& queries, const RowMatrix& gallery,
                                                           std::size_t k, bool skip_self) {
  if (k < 1) throw ConfigError("knn: k must be at least 1");
  if (gallery.rows() == 0) throw DataError("knn: empty gallery");
  if (queries.cols() != gallery.cols())
    throw DimensionMismatch(static_cast<std::size_t>(gallery.cols()), static_cast<std::size_t>(queries.cols()), "knn");
  const auto g = static_cast<std::size_t>(gallery.rows());
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(queries.rows()));
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t q = 0; q < out.size(); ++q) {
    dist.clear();
    for (std::size_t j = 0; j < g; ++j) {
      if (skip_self && j == q) continue;
      dist.emplace_back(squared_distance(queries.row(static_cast<Index>(q)).data(),
                                         gallery.row(static_cast<Index>(j)).data(), queries.cols()),
                        j);
    }
    const auto take = std::min(k, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
    for (std::size_t i = 0; i < take; ++i) out[q].push_back(dist[i].second);
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> mutual(const std::vector<std::vector<std::size_t>>& forward,
                                                     const std::vector<std::vector<std::size_t>>& backward) {
  std::vector<std::vector<std::size_t>> out(forward.size());
  for (std::size_t q = 0; q < forward.size(); ++q)
    for (auto g : forward[q]) {
      const auto& back = backward[g];
      if (std::find(back.begin(), back.end(), q) != back.end()) out[q].push_back(g);
    }
  return out;
}

}  // namespace detail

inline NeighborSets knn(const RowMatrix& queries, const RowMatrix& gallery, std::size_t k) {
  return {detail::nearest_lists(queries, gallery, k, false), {}};
}

/// R_k(q) = { g in N_k(q) : q in N_k(g) }, where N_k(g) searches the queries.
inline NeighborSets k_reciprocal(const RowMatrix& queries, const RowMatrix& gallery, std::size_t k) {
  NeighborSets s;
  s.nearest = detail::nearest_lists(queries, gallery, k, false);
  if (queries.rows() == 0) return s;
  s.reciprocal = detail::mutual(s.nearest, detail::nearest_lists(gallery, queries, k, false));
  return s;
}

/// k-reciprocal sets within one point set (a point is not its own neighbor).
inline NeighborSets k_reciprocal_within(const RowMatrix& points, std::size_t k) {
  NeighborSets s;
  s.nearest = detail::nearest_lists(points, points, k, true);
  s.reciprocal = detail::mutual(s.nearest, s.nearest);
  return s;
}

// ---------------------------------------------------------------------------
// Anchor view

/// Camera with the most distinct within-view identities; ties to the lowest id.
inline CameraId select_anchor(const FeatureTable& unlabeled) {
  std::map<CameraId, std::set<std::uint64_t>> stamps;
  for (const auto& s : unlabeled.info()) stamps[s.camera].insert(s.within_view_id);
  if (stamps.size() < 2) throw DataError("select_anchor: need samples from at least two cameras");
  CameraId best = stamps.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [cam, ids] : stamps)
    if (ids.size() > best_count) {
      best = cam;
      best_count = ids.size();
    }
  return best;
}

/// Distinct within-view identities per camera.
inline std::map<CameraId, std::size_t> view_identity_counts(const FeatureTable& t) {
  std::map<CameraId, std::set<std::uint64_t>> stamps;
  for (const auto& s : t.info()) stamps[s.camera].insert(s.within_view_id);
  std::map<CameraId, std::size_t> out;
  for (const auto& [c, s] : stamps) out[c] = s.size();
  return out;
}

/// Secondary margin space: the same criterion, trained on primary-space
/// embeddings of the anchor camera with within-view identities as classes.
inline KernelDiscriminantModel fit_secondary(const RowMatrix& anchor_embeddings, std::span<const int> anchor_classes,
                                             const KernelSpec& kernel, const NkmmcOptions& opts = {}) {
  if (count_classes(anchor_classes) < 2) throw DataError("fit_secondary: need at least two anchor identities");
  return fit_nkmmc(anchor_embeddings, anchor_classes, kernel, opts);
}

struct AnchorContext {
  CameraId anchor_camera = 0;
  std::vector<ViewIdentity> anchor_classes;  // class index -> identity
  KernelDiscriminantModel secondary;
};

namespace detail {

/// Row order by (camera, within_view_id, sample_id); makes mining independent of input order.
inline std::vector<std::size_t> canonical_rows(const FeatureTable& t) {
  std::vector<std::size_t> rows(t.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = t.info(a);
    const auto& y = t.info(b);
    return std::tie(x.camera, x.within_view_id, x.sample_id) < std::tie(y.camera, y.within_view_id, y.sample_id);
  });
  return rows;
}

}  // namespace detail

/// `embeddings` holds the primary-space embedding of every row of `unlabeled`.
inline AnchorContext build_anchor_context(const FeatureTable& unlabeled, const RowMatrix& embeddings,
                                          const KernelSpec& kernel, const NkmmcOptions& opts = {}) {
  if (unlabeled.empty()) throw DataError("mining: empty unlabeled set");
  if (static_cast<std::size_t>(embeddings.rows()) != unlabeled.size())
    throw DataError("mining: embedding count does not match unlabeled rows");
  AnchorContext ctx;
  ctx.anchor_camera = select_anchor(unlabeled);
  std::vector<std::size_t> rows;
  for (auto i : detail::canonical_rows(unlabeled))
    if (unlabeled.info(i).camera == ctx.anchor_camera) rows.push_back(i);
  std::vector<ViewIdentity> keys;
  RowMatrix anchor(static_cast<Index>(rows.size()), embeddings.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    keys.push_back(unlabeled.info(rows[i]).view_identity());
    anchor.row(static_cast<Index>(i)) = embeddings.row(static_cast<Index>(rows[i]));
  }
  const auto assignment = assign_classes(keys);
  std::set<ViewIdentity> distinct(keys.begin(), keys.end());
  ctx.anchor_classes.assign(distinct.begin(), distinct.end());
  ctx.secondary = fit_secondary(anchor, assignment.labels, kernel, opts);
  return ctx;
}

inline AnchorContext build_anchor_context(const FeatureTable& unlabeled, const Nk3mlModel& primary,
                                          const KernelSpec& kernel, const NkmmcOptions& opts = {}) {
  if (unlabeled.empty()) throw DataError("mining: empty unlabeled set");
  return build_anchor_context(unlabeled, embed_rows(primary, unlabeled.features()), kernel, opts);
}

// ---------------------------------------------------------------------------
// Pseudo-classes

struct PseudoClass {
  ViewIdentity anchor;
  ViewIdentity matched;
  double affinity = 0.0;
  std::size_t iteration_found = 0;
};

/// Identity centroids in the secondary space, keyed by view identity.
inline std::map<ViewIdentity, Vector> secondary_centroids(const AnchorContext& ctx, const FeatureTable& unlabeled,
                                                          const RowMatrix& embeddings) {
  const auto rows = detail::canonical_rows(unlabeled);
  RowMatrix ordered(static_cast<Index>(rows.size()), embeddings.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) ordered.row(static_cast<Index>(i)) = embeddings.row(static_cast<Index>(rows[i]));
  const RowMatrix emb = project_kernel_rows(ctx.secondary, ordered);
  std::map<ViewIdentity, Vector> sums;
  std::map<ViewIdentity, double> counts;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto key = unlabeled.info(rows[i]).view_identity();
    auto it = sums.find(key);
    if (it == sums.end()) it = sums.emplace(key, Vector::Zero(emb.cols())).first;
    it->second += emb.row(static_cast<Index>(i)).transpose();
    counts[key] += 1.0;
  }
  for (auto& [k, v] : sums) v /= counts[k];
  return sums;
}

inline std::map<ViewIdentity, Vector> secondary_centroids(const AnchorContext& ctx, const FeatureTable& unlabeled,
                                                          const Nk3mlModel& primary) {
  return secondary_centroids(ctx, unlabeled, embed_rows(primary, unlabeled.features()));
}

/// Mines cross-view identity pairs: for each non-anchor camera B, anchor
/// identity centroids are matched against B's centroids under the k-reciprocal
/// constraint. Affinity is exp(-dist^2 / s^2) with s the mean anchor-to-B
/// centroid distance. Each identity ends up in at most one pair (greedy by
/// affinity). Output is sorted by affinity descending, then by ids.
inline std::vector<PseudoClass> mine_pseudo_classes(const AnchorContext& ctx, const FeatureTable& unlabeled,
                                                    const RowMatrix& embeddings, std::size_t k,
                                                    std::size_t iteration = 0) {
  if (k < 1) throw ConfigError("mining: k must be at least 1");
  if (unlabeled.empty()) throw DataError("mining: empty unlabeled set");
  if (static_cast<std::size_t>(embeddings.rows()) != unlabeled.size())
    throw DataError("mining: embedding count does not match unlabeled rows");
  const auto centroids = secondary_centroids(ctx, unlabeled, embeddings);

  std::map<CameraId, std::vector<ViewIdentity>> by_camera;
  for (const auto& [key, v] : centroids) by_camera[key.camera].push_back(key);
  const auto anchor_it = by_camera.find(ctx.anchor_camera);
  if (anchor_it == by_camera.end()) throw DataError("mining: anchor camera has no unlabeled samples");
  if (by_camera.size() < 2) throw DataError("mining: no non-anchor cameras");

  const auto stack = [&](const std::vector<ViewIdentity>& keys) {
    RowMatrix m(static_cast<Index>(keys.size()), ctx.secondary.output_dim());
    for (std::size_t i = 0; i < keys.size(); ++i) m.row(static_cast<Index>(i)) = centroids.at(keys[i]).transpose();
    return m;
  };
  const auto& anchors = anchor_it->second;
  const RowMatrix anchor_points = stack(anchors);

  std::vector<PseudoClass> candidates;
  for (const auto& [cam, others] : by_camera) {
    if (cam == ctx.anchor_camera) continue;
    const RowMatrix other_points = stack(others);
    double total = 0.0;
    for (Index i = 0; i < anchor_points.rows(); ++i)
      for (Index j = 0; j < other_points.rows(); ++j)
        total += std::sqrt(detail::squared_distance(anchor_points.row(i).data(), other_points.row(j).data(),
                                                    anchor_points.cols()));
    const double mean = total / static_cast<double>(anchor_points.rows() * other_points.rows());

    const auto sets = k_reciprocal(anchor_points, other_points, k);
    for (std::size_t q = 0; q < anchors.size(); ++q)
      for (auto g : sets.reciprocal[q]) {
        const double d2 = detail::squared_distance(anchor_points.row(static_cast<Index>(q)).data(),
                                                   other_points.row(static_cast<Index>(g)).data(), anchor_points.cols());
        double affinity = mean > 0 ? std::exp(-d2 / (mean * mean)) : 1.0;
        affinity = std::max(affinity, std::numeric_limits<double>::min());
        candidates.push_back({anchors[q], others[g], affinity, iteration});
      }
  }

  const auto order = [](const PseudoClass& a, const PseudoClass& b) {
    if (a.affinity != b.affinity) return a.affinity > b.affinity;
    return std::tie(a.anchor, a.matched) < std::tie(b.anchor, b.matched);
  };
  std::sort(candidates.begin(), candidates.end(), order);
  std::set<ViewIdentity> used;
  std::vector<PseudoClass> out;
  for (const auto& c : candidates) {
    if (used.count(c.anchor) || used.count(c.matched)) continue;
    used.insert(c.anchor);
    used.insert(c.matched);
    out.push_back(c);
  }
  return out;
}

inline std::vector<PseudoClass> mine_pseudo_classes(const AnchorContext& ctx, const FeatureTable& unlabeled,
                                                    const Nk3mlModel& primary, std::size_t k,
                                                    std::size_t iteration = 0) {
  if (unlabeled.empty()) throw DataError("mining: empty unlabeled set");
  return mine_pseudo_classes(ctx, unlabeled, embed_rows(primary, unlabeled.features()), k, iteration);
}

inline void write_pseudo_classes_csv(std::ostream& os, std::span<const PseudoClass> pairs) {
  os << "iteration,anchor_camera,anchor_id,matched_camera,matched_id,affinity\n";
  for (const auto& p : pairs)
    os << p.iteration_found << ',' << p.anchor.camera << ',' << p.anchor.within_view_id << ',' << p.matched.camera
       << ',' << p.matched.within_view_id << ',' << detail::format_double(p.affinity) << '\n';
}

}  // namespace nullmargin
