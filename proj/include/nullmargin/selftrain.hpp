#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "nullmargin/dataio.hpp"
#include "nullmargin/mining.hpp"
#include "nullmargin/nk3ml.hpp"

namespace nullmargin {

struct LoopConfig {
  std::size_t k = 1;
  double quantile = 0.25;  // fraction of each round's mined pairs to accept
  std::size_t max_iterations = 20;
  std::size_t min_new_classes = 1;
  KernelSpec kernel;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw ConfigError("loop.k must be at least 1");
    if (!(quantile > 0 && quantile <= 1)) throw ConfigError("loop.quantile must lie in (0, 1]");
    if (max_iterations < 1) throw ConfigError("loop.max_iterations must be at least 1");
    kernel.validate();
  }
};

/// One fit of the primary space, plus the mining round that followed it (if any).
struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t labeled_classes = 0;
  std::size_t labeled_samples = 0;
  std::size_t unlabeled_identities = 0;
  bool mining_performed = false;
  std::optional<CameraId> anchor_camera;
  std::size_t mined = 0;
  std::size_t accepted = 0;
  std::optional<double> threshold;
  double resolved_bandwidth = 0.0;
  std::uint64_t model_checksum = 0;
};

struct LoopTrace {
  std::vector<IterationRecord> records;
  std::string stop_reason;

  std::size_t mining_rounds() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.mining_performed ? 1 : 0;
    return n;
  }
};

inline nlohmann::json to_json(const IterationRecord& r) {
  nlohmann::json j;
  j["iteration"] = r.iteration;
  j["labeled_classes"] = r.labeled_classes;
  j["labeled_samples"] = r.labeled_samples;
  j["unlabeled_identities"] = r.unlabeled_identities;
  j["mining_performed"] = r.mining_performed;
  j["anchor_camera"] = r.anchor_camera ? nlohmann::json(*r.anchor_camera) : nlohmann::json(nullptr);
  j["mined"] = r.mined;
  j["accepted"] = r.accepted;
  j["threshold"] = r.threshold ? nlohmann::json(*r.threshold) : nlohmann::json(nullptr);
  j["resolved_bandwidth"] = r.resolved_bandwidth;
  j["model_checksum"] = r.model_checksum;
  return j;
}

/// Pseudo-class labels live in their own namespace, apart from ground truth.
struct ClassKey {
  enum class Origin : std::uint8_t { ground_truth, pseudo };
  Origin origin = Origin::ground_truth;
  std::uint64_t id = 0;
  auto operator<=>(const ClassKey&) const = default;
};

struct SelfTrainingResult {
  Nk3mlModel model;
  LoopTrace trace;
  std::vector<PseudoClass> accepted;
  /// Class of every training row of the final model, in training order.
  std::vector<ClassKey> training_classes;
  std::vector<std::string> training_sample_ids;
};

/// A fit failure inside the loop; carries the trace up to the failure.
class SelfTrainingError : public Error {
 public:
  SelfTrainingError(const Error& cause, LoopTrace trace)
      : Error(cause.kind(), std::string("self-training aborted: ") + cause.what()), trace_(std::move(trace)) {}
  const LoopTrace& trace() const noexcept { return trace_; }

 private:
  LoopTrace trace_;
};

/// Number of pairs to accept from a round that mined `mined` pairs.
inline std::size_t accept_count(std::size_t mined, const LoopConfig& cfg) {
  if (mined == 0) return 0;
  if (mined < 4) return mined;
  auto n = static_cast<std::size_t>(std::ceil(cfg.quantile * static_cast<double>(mined) - 1e-9));
  n = std::max(n, std::min(cfg.min_new_classes, mined));
  return std::clamp<std::size_t>(n, 1, mined);
}

/// Recursive metric learning: fit the primary space, mine cross-view pairs
/// from the unlabeled pool, accept the best quantile as new classes, refit,
/// until a round mines nothing, the pool cannot supply an anchor view with two
/// identities, or max_iterations mining rounds have run. Accepted pairs are
/// never revoked.
inline SelfTrainingResult run_self_training(const FeatureTable& labeled, const FeatureTable& unlabeled,
                                            const LoopConfig& cfg, const Nk3mlOptions& opts = {}) {
  cfg.validate();
  if (labeled.dim() != unlabeled.dim()) throw DimensionMismatch(static_cast<std::size_t>(labeled.dim()), static_cast<std::size_t>(unlabeled.dim()), "self-training");

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    if (labeled.info(i).identity) rows.push_back(i);
  FeatureTable training = labeled.subset(rows);
  std::vector<ClassKey> keys;
  for (const auto& s : training.info()) keys.push_back({ClassKey::Origin::ground_truth, *s.identity});

  FeatureTable pool = unlabeled.without_identities();
  SelfTrainingResult result;
  NullspaceWorkspace workspace(opts.nfst);
  workspace.append(training.features());
  RowMatrix pool_coords;  // pool rows in the workspace basis, extended as it grows
  NullspaceWorkspace::Fit null_fit;
  std::uint64_t next_pseudo = 0;

  for (std::size_t round = 0;; ++round) {
    IterationRecord rec;
    rec.iteration = round;
    rec.labeled_samples = training.size();
    std::size_t pool_ids = 0;
    for (const auto& [cam, n] : view_identity_counts(pool)) pool_ids += n;
    rec.unlabeled_identities = pool_ids;

    try {
      const auto assignment = assign_classes(keys);
      rec.labeled_classes = static_cast<std::size_t>(assignment.classes);
      if (assignment.classes < 2) throw InsufficientSamplesError("self-training: need at least two labeled classes");
      std::tie(result.model, null_fit) = fit_nk3ml(workspace, assignment.labels, cfg.kernel, opts);
    } catch (const Error& e) {
      throw SelfTrainingError(e, result.trace);
    }
    rec.resolved_bandwidth = result.model.margin.resolved_bandwidth;
    rec.model_checksum = model_checksum(result.model);

    const auto finish = [&](std::string reason) {
      result.trace.records.push_back(rec);
      result.trace.stop_reason = std::move(reason);
    };
    if (round >= cfg.max_iterations) { finish("max_iterations"); break; }
    const auto counts = view_identity_counts(pool);
    std::size_t best = 0;
    for (const auto& [cam, n] : counts) best = std::max(best, n);
    if (counts.size() < 2 || best < 2) { finish("pool_exhausted"); break; }

    std::vector<PseudoClass> mined;
    try {
      workspace.extend_coordinates(pool_coords, pool.features());
      const RowMatrix embeddings = project_kernel_rows(result.model.margin, null_fit.project(pool_coords));
      const auto ctx = build_anchor_context(pool, embeddings, cfg.kernel, opts.nkmmc);
      rec.anchor_camera = ctx.anchor_camera;
      mined = mine_pseudo_classes(ctx, pool, embeddings, cfg.k, round);
    } catch (const Error& e) {
      throw SelfTrainingError(e, result.trace);
    }
    rec.mining_performed = true;
    rec.mined = mined.size();
    if (mined.empty()) { finish("no_pseudo_classes"); break; }

    const auto take = accept_count(mined.size(), cfg);
    rec.accepted = take;
    rec.threshold = mined[take - 1].affinity;
    result.trace.records.push_back(rec);

    std::map<ViewIdentity, ClassKey> assigned;
    for (std::size_t i = 0; i < take; ++i) {
      const ClassKey key{ClassKey::Origin::pseudo, next_pseudo++};
      assigned[mined[i].anchor] = key;
      assigned[mined[i].matched] = key;
      result.accepted.push_back(mined[i]);
    }
    std::vector<std::size_t> move, stay;
    for (std::size_t i = 0; i < pool.size(); ++i)
      (assigned.count(pool.info(i).view_identity()) ? move : stay).push_back(i);
    const auto moved = pool.subset(move);
    for (const auto& s : moved.info()) keys.push_back(assigned.at(s.view_identity()));
    training = concat(training, moved);
    workspace.append(moved.features());
    pool = pool.subset(stay);
    pool_coords = pool_coords(stay, Eigen::all).eval();
  }

  result.training_classes = keys;
  for (const auto& s : training.info()) result.training_sample_ids.push_back(s.sample_id);
  return result;
}

inline void write_trace_jsonl(std::ostream& os, const LoopTrace& trace, std::optional<std::size_t> trial = {}) {
  for (const auto& r : trace.records) {
    auto j = to_json(r);
    if (trial) j["trial"] = *trial;
    os << j.dump() << '\n';
  }
}

}  // namespace nullmargin
