#pragma once

// Primary discriminative space: null-space collapse followed by a kernel
// maximum-margin map of the collapsed points.

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "nullmargin/dataio.hpp"
#include "nullmargin/detail/binary_io.hpp"
#include "nullmargin/kmmc.hpp"
#include "nullmargin/nfst.hpp"
#include "nullmargin/scatter.hpp"

namespace nullmargin {

struct Nk3mlModel {
  NullProjector nullspace;
  KernelDiscriminantModel margin;
  std::size_t classes = 0;

  Index input_dim() const { return nullspace.input_dim(); }
  Index output_dim() const { return margin.output_dim(); }
};

struct Nk3mlOptions {
  NfstOptions nfst;
  NkmmcOptions nkmmc;
};

/// Fits on labels 0..c-1. The margin stage trains on every projected sample
/// (coinciding per class) with the bandwidth resolved on the projected points.
inline Nk3mlModel fit_nk3ml(const RowMatrix& x, std::span<const int> labels, const KernelSpec& kernel,
                            const Nk3mlOptions& opts = {}) {
  Nk3mlModel model;
  model.nullspace = fit_nfst(x, labels, opts.nfst);
  model.classes = static_cast<std::size_t>(count_classes(labels));
  const RowMatrix projected = project_null_rows(model.nullspace, x);
  model.margin = fit_nkmmc(projected, labels, kernel, opts.nkmmc);
  return model;
}

/// Same fit from an incremental workspace holding the training rows in
/// order. Also returns the workspace fit, which projects basis coordinates.
inline std::pair<Nk3mlModel, NullspaceWorkspace::Fit> fit_nk3ml(const NullspaceWorkspace& ws,
                                                                std::span<const int> labels, const KernelSpec& kernel,
                                                                const Nk3mlOptions& opts = {}) {
  auto nf = ws.fit(labels);
  Nk3mlModel model;
  model.classes = static_cast<std::size_t>(count_classes(labels));
  model.margin = fit_nkmmc(nf.training_projection, labels, kernel, opts.nkmmc);
  model.nullspace = std::move(nf.projector);
  nf.projector.coefficients = model.nullspace.coefficients;  // all that project() needs
  return {std::move(model), std::move(nf)};
}

/// Fits on the labeled rows of a table; classes are identities. Rows are put
/// in a canonical order first so the result does not depend on input order.
inline Nk3mlModel fit_nk3ml(const FeatureTable& table, const KernelSpec& kernel, const Nk3mlOptions& opts = {}) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < table.size(); ++i)
    if (table.info(i).identity) rows.push_back(i);
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = table.info(a);
    const auto& y = table.info(b);
    return std::tie(*x.identity, x.camera, x.sample_id) < std::tie(*y.identity, y.camera, y.sample_id);
  });
  const auto sub = table.subset(rows);
  std::vector<IdentityId> ids;
  for (const auto& s : sub.info()) ids.push_back(*s.identity);
  const auto assignment = assign_classes(ids);
  if (assignment.classes < 2) throw InsufficientSamplesError("fit_nk3ml: need at least two labeled identities");
  return fit_nk3ml(sub.features(), assignment.labels, kernel, opts);
}

inline RowMatrix embed_rows(const Nk3mlModel& model, const RowMatrix& x) {
  return project_kernel_rows(model.margin, project_null_rows(model.nullspace, x));
}

inline Vector embed(const Nk3mlModel& model, const Eigen::Ref<const Vector>& x) {
  return project_kernel(model.margin, project_null(model.nullspace, x));
}

// ---------------------------------------------------------------------------
// Container: "NK3M", u16 version, then length-prefixed blocks.
//   v1: null-space block, margin block
//   v2: v1 + metadata block (training class count, margin class index)

inline constexpr std::string_view kModelMagic = "NK3M";
inline constexpr std::uint16_t kModelVersion = 2;

namespace detail {

inline ByteWriter encode_nullspace(const NullProjector& p) {
  ByteWriter w;
  w.u64(static_cast<std::uint64_t>(p.input_dim()));
  w.u64(static_cast<std::uint64_t>(p.output_dim()));
  w.matrix(p.mean);
  w.matrix(p.directions);
  return w;
}

inline NullProjector decode_nullspace(ByteReader r) {
  NullProjector p;
  const auto d = r.u64();
  const auto k = r.u64();
  p.mean = r.matrix();
  p.directions = r.matrix();
  if (static_cast<std::uint64_t>(p.mean.size()) != d || p.mean.cols() != 1 ||
      static_cast<std::uint64_t>(p.directions.rows()) != d || static_cast<std::uint64_t>(p.directions.cols()) != k)
    throw FormatError("model: inconsistent null-space dimensions");
  return p;
}

inline ByteWriter encode_margin(const KernelDiscriminantModel& m) {
  ByteWriter w;
  w.u8(m.kernel.kind == KernelKind::rbf ? 0 : 1);
  w.u8(m.kernel.bandwidth ? 1 : 0);
  w.f64(m.kernel.bandwidth.value_or(0.0));
  w.f64(m.resolved_bandwidth);
  w.matrix(m.train_points);
  w.matrix(m.coefficients);
  w.matrix(m.eigenvalues);
  return w;
}

inline KernelDiscriminantModel decode_margin(ByteReader r) {
  KernelDiscriminantModel m;
  const auto kind = r.u8();
  if (kind > 1) throw FormatError("model: unknown kernel kind");
  m.kernel.kind = kind == 0 ? KernelKind::rbf : KernelKind::linear;
  const auto has_bw = r.u8();
  const auto bw = r.f64();
  if (has_bw) m.kernel.bandwidth = bw;
  m.resolved_bandwidth = r.f64();
  m.train_points = r.matrix();
  m.coefficients = r.matrix();
  m.eigenvalues = r.matrix();
  if (m.coefficients.rows() != m.train_points.rows() || m.eigenvalues.cols() != 1 ||
      m.eigenvalues.rows() != m.coefficients.cols())
    throw FormatError("model: inconsistent margin dimensions");
  return m;
}

}  // namespace detail

inline std::string serialize_model(const Nk3mlModel& model, std::uint16_t version = kModelVersion) {
  if (version < 1 || version > kModelVersion) throw ConfigError("unsupported model version " + std::to_string(version));
  detail::ByteWriter w;
  w.bytes(kModelMagic);
  w.u16(version);
  w.block(detail::encode_nullspace(model.nullspace));
  w.block(detail::encode_margin(model.margin));
  if (version >= 2) {
    detail::ByteWriter meta;
    meta.u64(model.classes);
    meta.u64(model.margin.class_index.size());
    for (int c : model.margin.class_index) meta.u64(static_cast<std::uint64_t>(c));
    w.block(meta);
  }
  return w.take();
}

inline Nk3mlModel deserialize_model(std::string_view data) {
  detail::ByteReader r(data, "model");
  if (r.remaining() < 4 || r.bytes(4) != kModelMagic) throw FormatError("model: bad magic (not an NK3M file)");
  const auto version = r.u16();
  if (version < 1 || version > kModelVersion)
    throw FormatError("model: unsupported version " + std::to_string(version) + " (reader supports 1.." +
                      std::to_string(kModelVersion) + ")");
  Nk3mlModel model;
  model.nullspace = detail::decode_nullspace(r.block("nullspace"));
  model.margin = detail::decode_margin(r.block("margin"));
  if (model.margin.train_points.cols() != model.nullspace.output_dim())
    throw FormatError("model: margin input dimension does not match null-space output");
  model.classes = static_cast<std::size_t>(model.nullspace.output_dim()) + 1;
  if (version >= 2) {
    auto meta = r.block("meta");
    model.classes = meta.u64();
    const auto m = meta.u64();
    if (m != static_cast<std::uint64_t>(model.margin.train_points.rows()))
      throw FormatError("model: class index length mismatch");
    for (std::uint64_t i = 0; i < m; ++i) model.margin.class_index.push_back(static_cast<int>(meta.u64()));
  }
  if (!r.done()) throw FormatError("model: trailing bytes");
  return model;
}

inline void save_model(const Nk3mlModel& model, const std::string& path, std::uint16_t version = kModelVersion) {
  detail::write_file(path, serialize_model(model, version));
}

inline Nk3mlModel load_model(const std::string& path) { return deserialize_model(detail::read_file(path)); }

inline std::uint64_t model_checksum(const Nk3mlModel& model) { return detail::checksum(serialize_model(model)); }

}  // namespace nullmargin
