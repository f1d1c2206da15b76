#pragma once

// Ranking evaluation (CMC) and the repeated-split experiment protocol.

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "nullmargin/dataio.hpp"
#include "nullmargin/detail/rng.hpp"
#include "nullmargin/detail/text.hpp"
#include "nullmargin/nk3ml.hpp"
#include "nullmargin/selftrain.hpp"

namespace nullmargin {

using Rankings = std::vector<std::vector<std::size_t>>;

/// Gallery indices per probe, ascending Euclidean distance, ties by index.
inline Rankings rank_embeddings(const RowMatrix& probe, const RowMatrix& gallery) {
  if (probe.rows() == 0 || gallery.rows() == 0) throw DataError("rank: probe and gallery must be nonempty");
  if (probe.cols() != gallery.cols())
    throw DimensionMismatch(static_cast<std::size_t>(gallery.cols()), static_cast<std::size_t>(probe.cols()), "rank");
  Rankings out(static_cast<std::size_t>(probe.rows()));
  std::vector<double> dist(static_cast<std::size_t>(gallery.rows()));
  for (Index p = 0; p < probe.rows(); ++p) {
    for (Index g = 0; g < gallery.rows(); ++g)
      dist[static_cast<std::size_t>(g)] = detail::squared_distance(probe.row(p).data(), gallery.row(g).data(), probe.cols());
    auto& order = out[static_cast<std::size_t>(p)];
    order.resize(dist.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  }
  return out;
}

inline Rankings rank_gallery(const Nk3mlModel& model, const FeatureTable& probe, const FeatureTable& gallery) {
  if (probe.empty() || gallery.empty()) throw DataError("rank_gallery: probe and gallery must be nonempty");
  if (probe.dim() != model.input_dim())
    throw DimensionMismatch(static_cast<std::size_t>(model.input_dim()), static_cast<std::size_t>(probe.dim()), "rank_gallery probe");
  if (gallery.dim() != model.input_dim())
    throw DimensionMismatch(static_cast<std::size_t>(model.input_dim()), static_cast<std::size_t>(gallery.dim()), "rank_gallery gallery");
  return rank_embeddings(embed_rows(model, probe.features()), embed_rows(model, gallery.features()));
}

struct CmcPoint {
  std::size_t rank = 0;
  double accuracy = 0.0;  // percent
};

struct CmcCurve {
  std::vector<CmcPoint> ranks;
  std::size_t trials_averaged = 1;

  double at(std::size_t n) const {
    for (const auto& p : ranks)
      if (p.rank == n) return p.accuracy;
    throw DataError("CMC curve has no rank " + std::to_string(n));
  }
};

/// accuracy(N) = 100 * #{probes whose first correct gallery position <= N} / #probes.
inline CmcCurve cmc(const Rankings& rankings, std::span<const IdentityId> probe_ids,
                    std::span<const IdentityId> gallery_ids, std::span<const std::size_t> ns) {
  if (rankings.size() != probe_ids.size()) throw DataError("cmc: rankings/probe identity count mismatch");
  if (rankings.empty()) throw DataError("cmc: no probes");
  std::set<IdentityId> in_gallery(gallery_ids.begin(), gallery_ids.end());
  std::vector<std::size_t> first(rankings.size());
  for (std::size_t p = 0; p < rankings.size(); ++p) {
    if (!in_gallery.count(probe_ids[p]))
      throw ProtocolError("cmc: probe identity " + std::to_string(probe_ids[p]) + " is absent from the gallery");
    std::size_t pos = 0;
    for (; pos < rankings[p].size(); ++pos)
      if (gallery_ids[rankings[p][pos]] == probe_ids[p]) break;
    if (pos == rankings[p].size())
      throw ProtocolError("cmc: ranking for probe " + std::to_string(p) + " omits its true match");
    first[p] = pos + 1;
  }
  CmcCurve curve;
  for (auto n : ns) {
    if (n < 1) throw ConfigError("cmc: ranks start at 1");
    const auto hits = std::count_if(first.begin(), first.end(), [n](std::size_t f) { return f <= n; });
    curve.ranks.push_back({n, 100.0 * static_cast<double>(hits) / static_cast<double>(first.size())});
  }
  return curve;
}

inline void write_cmc_csv(std::ostream& os, const CmcCurve& curve) {
  os << "N,accuracy\n";
  for (const auto& p : curve.ranks) os << p.rank << ',' << detail::format_double(p.accuracy) << '\n';
}

// ---------------------------------------------------------------------------
// Protocol

enum class Mode { labeled_only, semi_supervised };

inline std::string to_string(Mode m) { return m == Mode::labeled_only ? "labeled_only" : "semi_supervised"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "labeled_only") return Mode::labeled_only;
  if (s == "semi_supervised") return Mode::semi_supervised;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

struct ProtocolOptions {
  /// Ranks to report; empty = every rank 1..gallery size.
  std::vector<std::size_t> ranks;
  std::size_t threads = 1;
  /// Keep the fitted model of trial 0 in the result.
  bool keep_first_model = true;
};

struct TrialResult {
  std::size_t trial = 0;
  std::uint64_t split_seed = 0;
  std::size_t probes = 0;
  std::size_t gallery = 0;
  std::size_t labeled_identities = 0;
  std::size_t unlabeled_samples = 0;
  CmcCurve curve;
  std::uint64_t model_checksum = 0;
  double resolved_bandwidth = 0.0;
  std::size_t output_dim = 0;
  LoopTrace trace;
  std::vector<PseudoClass> accepted;
};

struct ProtocolResult {
  Mode mode = Mode::labeled_only;
  CmcCurve mean;
  std::vector<TrialResult> trials;
  std::optional<Nk3mlModel> first_model;
};

inline std::vector<IdentityId> identities_of(const FeatureTable& t) {
  std::vector<IdentityId> out;
  for (const auto& s : t.info()) {
    if (!s.identity) throw DataError("sample '" + s.sample_id + "' has no identity");
    out.push_back(*s.identity);
  }
  return out;
}

/// One protocol trial: split, single-shot reduction, fit, rank, CMC.
inline std::pair<TrialResult, Nk3mlModel> run_trial(const FeatureTable& table, const SplitSpec& spec,
                                                    const LoopConfig& cfg, Mode mode, std::size_t trial,
                                                    const std::vector<std::size_t>& ranks) {
  const auto split = make_split(table, spec, trial);
  auto rng = detail::make_rng(spec.seed, "single_shot", trial);
  const auto probe = single_shot(split.probe, rng);
  const auto gallery = single_shot(split.gallery, rng);

  TrialResult r;
  r.trial = trial;
  r.split_seed = split.split_seed;
  r.probes = probe.size();
  r.gallery = gallery.size();
  r.unlabeled_samples = split.unlabeled.size();
  {
    std::set<IdentityId> ids;
    for (const auto& s : split.labeled.info()) ids.insert(*s.identity);
    r.labeled_identities = ids.size();
  }

  Nk3mlModel model;
  if (mode == Mode::labeled_only) {
    model = fit_nk3ml(split.labeled, cfg.kernel);
  } else {
    auto st = run_self_training(split.labeled, split.unlabeled, cfg);
    model = std::move(st.model);
    r.trace = std::move(st.trace);
    r.accepted = std::move(st.accepted);
  }
  r.model_checksum = model_checksum(model);
  r.resolved_bandwidth = model.margin.resolved_bandwidth;
  r.output_dim = static_cast<std::size_t>(model.output_dim());

  std::vector<std::size_t> ns = ranks;
  if (ns.empty()) {
    ns.resize(gallery.size());
    std::iota(ns.begin(), ns.end(), std::size_t{1});
  }
  r.curve = cmc(rank_gallery(model, probe, gallery), identities_of(probe), identities_of(gallery), ns);
  return {std::move(r), std::move(model)};
}

/// Runs spec.trials independent trials (on up to `threads` threads) and
/// averages the accuracies by trial index. Results do not depend on the
/// thread count.
inline ProtocolResult run_protocol(const FeatureTable& table, const SplitSpec& spec, const LoopConfig& cfg, Mode mode,
                                   const ProtocolOptions& opts = {}) {
  spec.validate();
  cfg.validate();
  std::vector<std::size_t> ranks = opts.ranks;
  if (ranks.empty()) {
    // Full curve up to the smallest gallery across trials.
    std::size_t g = std::numeric_limits<std::size_t>::max();
    for (std::size_t t = 0; t < spec.trials; ++t) {
      const auto split = make_split(table, spec, t);
      std::set<std::pair<IdentityId, CameraId>> keys;
      for (const auto& s : split.gallery.info()) keys.insert({*s.identity, s.camera});
      g = std::min(g, keys.size());
    }
    ranks.resize(g);
    std::iota(ranks.begin(), ranks.end(), std::size_t{1});
  }

  ProtocolResult out;
  out.mode = mode;
  out.trials.resize(spec.trials);
  std::vector<std::exception_ptr> errors(spec.trials);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < spec.trials;) {
      try {
        auto [r, model] = run_trial(table, spec, cfg, mode, t, ranks);
        out.trials[t] = std::move(r);
        if (t == 0 && opts.keep_first_model) out.first_model = std::move(model);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const auto n_threads = std::clamp<std::size_t>(opts.threads, 1, spec.trials);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  out.mean.trials_averaged = spec.trials;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    double sum = 0.0;
    for (const auto& t : out.trials) sum += t.curve.ranks[i].accuracy;
    out.mean.ranks.push_back({ranks[i], sum / static_cast<double>(spec.trials)});
  }
  return out;
}

inline nlohmann::json to_json(const CmcCurve& c) {
  auto arr = nlohmann::json::array();
  for (const auto& p : c.ranks) arr.push_back({{"N", p.rank}, {"accuracy", p.accuracy}});
  return arr;
}

}  // namespace nullmargin
