#pragma once

// Feature tables, their CSV/binary encodings, experiment splits and the
// synthetic cross-view generator.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nullmargin/detail/binary_io.hpp"
#include "nullmargin/detail/rng.hpp"
#include "nullmargin/detail/text.hpp"
#include "nullmargin/error.hpp"
#include "nullmargin/types.hpp"

namespace nullmargin {

using CameraId = std::uint16_t;
using IdentityId = std::uint64_t;

/// A person as seen by one camera: the within-view stamp from intra-camera tracking.
struct ViewIdentity {
  CameraId camera = 0;
  std::uint64_t within_view_id = 0;
  auto operator<=>(const ViewIdentity&) const = default;
};

struct SampleInfo {
  std::string sample_id;
  CameraId camera = 0;
  std::optional<IdentityId> identity;  // absent = unlabeled
  std::uint64_t within_view_id = 0;

  ViewIdentity view_identity() const { return {camera, within_view_id}; }
  bool operator==(const SampleInfo&) const = default;
};

/// n samples with d features each plus per-sample metadata. Immutable once built.
class FeatureTable {
 public:
  explicit FeatureTable(Index dim = 1) : features_(0, dim) {
    if (dim < 1) throw DataError("feature dimension must be at least 1");
  }

  FeatureTable(std::vector<SampleInfo> info, RowMatrix features)
      : info_(std::move(info)), features_(std::move(features)) {
    if (features_.cols() < 1) throw DataError("feature dimension must be at least 1");
    if (static_cast<std::size_t>(features_.rows()) != info_.size())
      throw DataError("feature row count does not match sample metadata count");
    validate();
  }

  std::size_t size() const noexcept { return info_.size(); }
  bool empty() const noexcept { return info_.empty(); }
  Index dim() const noexcept { return features_.cols(); }

  const std::vector<SampleInfo>& info() const noexcept { return info_; }
  const SampleInfo& info(std::size_t i) const { return info_.at(i); }
  const RowMatrix& features() const noexcept { return features_; }
  auto row(std::size_t i) const { return features_.row(static_cast<Index>(i)); }

  /// Rows in the given order (indices may repeat only if ids stay unique).
  FeatureTable subset(const std::vector<std::size_t>& rows) const {
    std::vector<SampleInfo> info;
    info.reserve(rows.size());
    RowMatrix f(static_cast<Index>(rows.size()), dim());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      info.push_back(info_.at(rows[k]));
      f.row(static_cast<Index>(k)) = features_.row(static_cast<Index>(rows[k]));
    }
    if (rows.empty()) {
      FeatureTable t(dim());
      return t;
    }
    return FeatureTable(std::move(info), std::move(f));
  }

  /// Same samples with identity labels removed; features and within-view ids untouched.
  FeatureTable without_identities() const {
    auto info = info_;
    for (auto& s : info) s.identity.reset();
    if (info.empty()) return FeatureTable(dim());
    return FeatureTable(std::move(info), features_);
  }

  std::vector<CameraId> cameras() const {
    std::set<CameraId> s;
    for (const auto& i : info_) s.insert(i.camera);
    return {s.begin(), s.end()};
  }

  std::size_t labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(info_.begin(), info_.end(), [](const auto& s) { return s.identity.has_value(); }));
  }

 private:
  void validate() const {
    std::unordered_set<std::string> ids;
    std::map<ViewIdentity, std::optional<IdentityId>> groups;
    for (const auto& s : info_) {
      if (s.sample_id.empty()) throw DataError("empty sample_id");
      if (!ids.insert(s.sample_id).second) throw DataError("duplicate sample_id '" + s.sample_id + "'");
      if (!s.identity) continue;
      auto [it, fresh] = groups.emplace(s.view_identity(), s.identity);
      if (!fresh && it->second != s.identity)
        throw DataError("camera " + std::to_string(s.camera) + " within_view_id " +
                        std::to_string(s.within_view_id) + " groups samples of different identities");
    }
  }

  std::vector<SampleInfo> info_;
  RowMatrix features_;
};

/// Concatenates tables with equal dimension.
inline FeatureTable concat(const FeatureTable& a, const FeatureTable& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch(a.dim(), b.dim(), "concat");
  if (a.empty()) return b;
  if (b.empty()) return a;
  auto info = a.info();
  info.insert(info.end(), b.info().begin(), b.info().end());
  RowMatrix f(a.features().rows() + b.features().rows(), a.dim());
  f << a.features(), b.features();
  return FeatureTable(std::move(info), std::move(f));
}

// ---------------------------------------------------------------------------
// File formats

enum class TableFormat { csv, binary };

inline constexpr std::string_view kTableMagic = "SSML";
inline constexpr std::uint16_t kTableVersion = 1;

inline std::string encode_csv(const FeatureTable& t) {
  std::string out = "sample_id,camera_id,identity,within_view_id";
  for (Index j = 0; j < t.dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& s = t.info(i);
    out += s.sample_id;
    out += ',' + std::to_string(s.camera) + ',';
    if (s.identity) out += std::to_string(*s.identity);
    out += ',' + std::to_string(s.within_view_id);
    for (Index j = 0; j < t.dim(); ++j) {
      out += ',';
      out += detail::format_double(t.features()(static_cast<Index>(i), j));
    }
    out += '\n';
  }
  return out;
}

inline FeatureTable decode_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  for (auto line : detail::split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw FormatError("csv: missing header");

  const auto header = detail::split(lines[0], ',');
  static const char* kFixed[] = {"sample_id", "camera_id", "identity", "within_view_id"};
  if (header.size() < 5) throw FormatError("csv: malformed header (need metadata columns and at least f0)");
  for (std::size_t i = 0; i < 4; ++i)
    if (detail::trim(header[i]) != kFixed[i])
      throw FormatError("csv: malformed header, column " + std::to_string(i) + " should be '" + kFixed[i] + "'");
  const std::size_t d = header.size() - 4;
  for (std::size_t j = 0; j < d; ++j)
    if (detail::trim(header[4 + j]) != "f" + std::to_string(j))
      throw FormatError("csv: malformed header, expected 'f" + std::to_string(j) + "'");

  const std::size_t n = lines.size() - 1;
  std::vector<SampleInfo> info;
  info.reserve(n);
  RowMatrix f(static_cast<Index>(n), static_cast<Index>(d));
  for (std::size_t r = 0; r < n; ++r) {
    const auto cols = detail::split(lines[r + 1], ',');
    const auto where = "csv line " + std::to_string(r + 2);
    if (cols.size() < 4) throw FormatError(where + ": too few columns");
    if (cols.size() != 4 + d) throw DimensionMismatch(d, cols.size() - 4, where);
    SampleInfo s;
    s.sample_id = std::string(detail::trim(cols[0]));
    const auto cam = detail::parse_number<std::uint64_t>(cols[1]);
    if (!cam || *cam > 0xffff) throw FormatError(where + ": bad camera_id");
    s.camera = static_cast<CameraId>(*cam);
    if (!detail::trim(cols[2]).empty()) {
      const auto id = detail::parse_number<std::uint64_t>(cols[2]);
      if (!id) throw FormatError(where + ": bad identity");
      s.identity = *id;
    }
    const auto wv = detail::parse_number<std::uint64_t>(cols[3]);
    if (!wv) throw FormatError(where + ": bad within_view_id");
    s.within_view_id = *wv;
    for (std::size_t j = 0; j < d; ++j) {
      const auto v = detail::parse_number<double>(cols[4 + j]);
      if (!v) throw FormatError(where + ": bad feature f" + std::to_string(j));
      f(static_cast<Index>(r), static_cast<Index>(j)) = *v;
    }
    info.push_back(std::move(s));
  }
  if (n == 0) return FeatureTable(static_cast<Index>(d));
  return FeatureTable(std::move(info), std::move(f));
}

inline std::string encode_binary(const FeatureTable& t) {
  detail::ByteWriter w;
  w.bytes(kTableMagic);
  w.u16(kTableVersion);
  w.u64(t.size());
  w.u64(static_cast<std::uint64_t>(t.dim()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& s = t.info(i);
    w.u32(static_cast<std::uint32_t>(s.sample_id.size()));
    w.bytes(s.sample_id);
    w.u16(s.camera);
    w.u8(s.identity ? 1 : 0);
    if (s.identity) w.u64(*s.identity);
    w.u64(s.within_view_id);
    for (Index j = 0; j < t.dim(); ++j) w.f64(t.features()(static_cast<Index>(i), j));
  }
  return w.take();
}

inline FeatureTable decode_binary(std::string_view data) {
  detail::ByteReader r(data, "feature table");
  if (r.remaining() < 4 || r.bytes(4) != kTableMagic) throw FormatError("feature table: bad magic");
  const auto version = r.u16();
  if (version != kTableVersion)
    throw FormatError("feature table: unsupported version " + std::to_string(version));
  const auto n = r.u64();
  const auto d = r.u64();
  if (d < 1) throw FormatError("feature table: dimension must be at least 1");
  // Each row needs at least its features; reject absurd headers before allocating.
  if (n > r.remaining() / (8 * d)) throw FormatError("feature table: truncated (row count exceeds payload)");
  std::vector<SampleInfo> info;
  info.reserve(n);
  RowMatrix f(static_cast<Index>(n), static_cast<Index>(d));
  for (std::uint64_t i = 0; i < n; ++i) {
    SampleInfo s;
    const auto len = r.u32();
    s.sample_id = std::string(r.bytes(len));
    s.camera = r.u16();
    const auto has = r.u8();
    if (has > 1) throw FormatError("feature table: bad has_identity flag");
    if (has) s.identity = r.u64();
    s.within_view_id = r.u64();
    for (std::uint64_t j = 0; j < d; ++j) f(static_cast<Index>(i), static_cast<Index>(j)) = r.f64();
    info.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError("feature table: trailing bytes");
  if (n == 0) return FeatureTable(static_cast<Index>(d));
  return FeatureTable(std::move(info), std::move(f));
}

/// Binary if the file starts with the table magic, otherwise CSV.
inline TableFormat detect_format(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  char magic[4] = {};
  in.read(magic, 4);
  return (in.gcount() == 4 && std::string_view(magic, 4) == kTableMagic) ? TableFormat::binary
                                                                         : TableFormat::csv;
}

inline FeatureTable load_feature_table(const std::string& path, TableFormat format) {
  const auto data = detail::read_file(path);
  return format == TableFormat::csv ? decode_csv(data) : decode_binary(data);
}

inline FeatureTable load_feature_table(const std::string& path) {
  return load_feature_table(path, detect_format(path));
}

inline void save_feature_table(const FeatureTable& t, const std::string& path, TableFormat format) {
  detail::write_file(path, format == TableFormat::csv ? encode_csv(t) : encode_binary(t));
}

inline std::uint64_t table_checksum(const FeatureTable& t) { return detail::checksum(encode_binary(t)); }

// ---------------------------------------------------------------------------
// Splits

/// Exact non-negative rational, so that floor(fraction * count) has no rounding surprises.
struct Fraction {
  std::uint64_t num = 1;
  std::uint64_t den = 3;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::uint64_t floor_of(std::uint64_t count) const { return count * num / den; }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }

  /// Accepts "p/q" or a plain decimal like "0.5".
  static Fraction parse(std::string_view s) {
    s = detail::trim(s);
    if (const auto slash = s.find('/'); slash != std::string_view::npos) {
      const auto p = detail::parse_number<std::uint64_t>(s.substr(0, slash));
      const auto q = detail::parse_number<std::uint64_t>(s.substr(slash + 1));
      if (!p || !q || *q == 0) throw ConfigError("bad fraction '" + std::string(s) + "'");
      return {*p, *q};
    }
    const auto dot = s.find('.');
    const auto whole = s.substr(0, dot);
    const auto frac = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
    if (frac.size() > 18) throw ConfigError("bad fraction '" + std::string(s) + "'");
    const auto w = whole.empty() ? std::optional<std::uint64_t>(0) : detail::parse_number<std::uint64_t>(whole);
    const auto f = frac.empty() ? std::optional<std::uint64_t>(0) : detail::parse_number<std::uint64_t>(frac);
    if (!w || !f || (whole.empty() && frac.empty())) throw ConfigError("bad fraction '" + std::string(s) + "'");
    std::uint64_t den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
    return {*w * den + *f, den};
  }
};

struct SplitSpec {
  std::uint64_t seed = 0;
  Fraction labeled_fraction{1, 3};
  std::size_t trials = 10;

  void validate() const {
    if (labeled_fraction.den == 0 || labeled_fraction.num == 0 || labeled_fraction.num > labeled_fraction.den)
      throw ConfigError("labeled_fraction must lie in (0, 1]");
    if (trials < 1) throw ConfigError("trials must be at least 1");
  }
};

struct ExperimentSplit {
  FeatureTable labeled;
  FeatureTable unlabeled;
  FeatureTable probe;
  FeatureTable gallery;
  CameraId probe_camera = 0;
  std::uint64_t split_seed = 0;
  std::size_t train_identities = 0;
  std::size_t test_identities = 0;
};

/// Random half/half identity split following the small-scale re-ID protocol.
///
/// Identities seen by the probe camera (the lowest camera id) and at least one
/// other camera are shuffled with a stream keyed by (seed, trial); the first
/// half trains, the rest tests. floor(labeled_fraction * train) training
/// identities keep their labels (both views), the rest lose them. Test
/// identities split into probe (probe camera) and gallery (all other cameras).
/// Identities absent from the probe camera are gallery distractors; identities
/// seen only by the probe camera and unlabeled input rows join the unlabeled
/// pool. Every input row lands in exactly one part.
inline ExperimentSplit make_split(const FeatureTable& table, const SplitSpec& spec, std::size_t trial) {
  spec.validate();
  if (trial >= spec.trials) throw ConfigError("trial index out of range");
  const auto cams = table.cameras();
  if (cams.size() < 2) throw DataError("split needs at least two cameras");
  const CameraId probe_camera = cams.front();

  std::map<IdentityId, std::set<CameraId>> seen;
  for (const auto& s : table.info())
    if (s.identity) seen[*s.identity].insert(s.camera);

  std::vector<IdentityId> paired;
  std::set<IdentityId> distractors, probe_only;
  for (const auto& [id, c] : seen) {
    const bool in_probe = c.count(probe_camera) > 0;
    if (in_probe && c.size() >= 2) paired.push_back(id);
    else if (in_probe) probe_only.insert(id);
    else distractors.insert(id);
  }
  if (paired.size() < 4)
    throw DataError("split needs at least 4 cross-view identities, found " + std::to_string(paired.size()));

  const auto split_seed = detail::derive_seed(spec.seed, "split", trial);
  detail::Rng rng(split_seed);
  std::shuffle(paired.begin(), paired.end(), rng);

  const std::size_t n_train = paired.size() / 2;
  const std::size_t n_labeled = spec.labeled_fraction.floor_of(n_train);
  if (n_labeled == 0) throw ConfigError("labeled_fraction yields zero labeled identities");

  std::set<IdentityId> labeled_ids(paired.begin(), paired.begin() + static_cast<std::ptrdiff_t>(n_labeled));
  std::set<IdentityId> unlabeled_ids(paired.begin() + static_cast<std::ptrdiff_t>(n_labeled),
                                     paired.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::set<IdentityId> test_ids(paired.begin() + static_cast<std::ptrdiff_t>(n_train), paired.end());

  std::vector<std::size_t> lab, unl, probe, gal;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& s = table.info(i);
    if (!s.identity) { unl.push_back(i); continue; }
    const auto id = *s.identity;
    if (labeled_ids.count(id)) lab.push_back(i);
    else if (unlabeled_ids.count(id) || probe_only.count(id)) unl.push_back(i);
    else if (test_ids.count(id)) (s.camera == probe_camera ? probe : gal).push_back(i);
    else gal.push_back(i);  // distractor
  }

  return ExperimentSplit{table.subset(lab),
                         table.subset(unl).without_identities(),
                         table.subset(probe),
                         table.subset(gal),
                         probe_camera,
                         split_seed,
                         n_train,
                         paired.size() - n_train};
}

/// Reduces to one sample per (identity, camera), chosen uniformly with the given stream.
inline FeatureTable single_shot(const FeatureTable& t, detail::Rng& rng) {
  std::map<std::pair<IdentityId, CameraId>, std::vector<std::size_t>> groups;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& s = t.info(i);
    if (!s.identity) throw DataError("single_shot: sample '" + s.sample_id + "' has no identity");
    groups[{*s.identity, s.camera}].push_back(i);
  }
  for (auto& [key, rows] : groups) {
    if (rows.size() == 1) { keep.push_back(rows.front()); continue; }
    std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
    keep.push_back(rows[pick(rng)]);
  }
  std::sort(keep.begin(), keep.end());
  return t.subset(keep);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t identities = 100;
  std::size_t cameras = 2;
  std::size_t dim = 200;
  double per_camera_transform_strength = 0.5;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (identities < 2) throw ConfigError("synthetic: identities must be at least 2");
    if (cameras < 2) throw ConfigError("synthetic: cameras must be at least 2");
    if (cameras > 0xffff) throw ConfigError("synthetic: too many cameras");
    if (dim < 2) throw ConfigError("synthetic: dim must be at least 2");
    if (!(per_camera_transform_strength >= 0)) throw ConfigError("synthetic: transform strength must be >= 0");
    if (!(noise_sigma >= 0)) throw ConfigError("synthetic: noise_sigma must be >= 0");
  }
};

/// Each identity draws a latent N(0, I) vector; camera c observes it through
/// T_c = I + strength * G_c / sqrt(dim) (G_c standard normal) plus N(0, sigma^2)
/// noise. Within-view ids are a per-camera random permutation, so they carry
/// no cross-view information. Rows are ordered camera-major.
inline FeatureTable generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  auto rng = detail::make_rng(spec.seed, "synthetic", 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Index>(spec.dim);
  const auto ids = static_cast<Index>(spec.identities);

  Matrix latent(d, ids);
  for (Index i = 0; i < ids; ++i)
    for (Index j = 0; j < d; ++j) latent(j, i) = normal(rng);

  std::vector<SampleInfo> info;
  RowMatrix f(ids * static_cast<Index>(spec.cameras), d);
  const double scale = spec.per_camera_transform_strength / std::sqrt(static_cast<double>(spec.dim));
  for (std::size_t c = 0; c < spec.cameras; ++c) {
    Matrix view = latent;
    if (spec.per_camera_transform_strength > 0) {
      // G is drawn one row at a time; it is never stored whole.
      Eigen::RowVectorXd g(d);
      for (Index i = 0; i < d; ++i) {
        for (Index j = 0; j < d; ++j) g(j) = normal(rng);
        view.row(i).noalias() += scale * (g * latent);
      }
    }
    std::vector<std::uint64_t> stamps(spec.identities);
    std::iota(stamps.begin(), stamps.end(), 0);
    std::shuffle(stamps.begin(), stamps.end(), rng);
    for (Index i = 0; i < ids; ++i) {
      const auto row = static_cast<Index>(c) * ids + i;
      for (Index j = 0; j < d; ++j) {
        const double noise = normal(rng);
        f(row, j) = spec.noise_sigma > 0 ? view(j, i) + spec.noise_sigma * noise : view(j, i);
      }
      SampleInfo s;
      s.camera = static_cast<CameraId>(c);
      s.identity = static_cast<IdentityId>(i);
      s.within_view_id = stamps[static_cast<std::size_t>(i)];
      s.sample_id = "c" + std::to_string(c) + "_w" + std::to_string(s.within_view_id);
      info.push_back(std::move(s));
    }
  }
  return FeatureTable(std::move(info), std::move(f));
}

}  // namespace nullmargin
