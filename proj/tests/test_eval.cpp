#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "nullmargin/eval.hpp"
#include "oracles.hpp"

using namespace nullmargin;

namespace {

FeatureTable standard(double noise, std::size_t ids = 40) {
  SyntheticSpec spec;
  spec.identities = ids;
  spec.dim = 80;
  spec.noise_sigma = noise;
  spec.per_camera_transform_strength = noise > 0 ? 0.5 : 0.0;
  spec.seed = 12;
  return generate_synthetic(spec);
}

}  // namespace

TEST(Rank, SingleGallery) {
  const auto r = rank_embeddings(oracle::random_matrix(4, 3, 1), oracle::random_matrix(1, 3, 2));
  for (const auto& row : r) EXPECT_EQ(row, std::vector<std::size_t>{0});
}

TEST(Rank, ExactMatchComesFirst) {
  const auto g = oracle::random_matrix(6, 3, 3);
  const RowMatrix p = g.row(4);
  EXPECT_EQ(rank_embeddings(p, g)[0][0], 4u);
}

TEST(Rank, MatchesBruteForceSort) {
  const auto p = oracle::random_matrix(5, 4, 5), g = oracle::random_matrix(20, 4, 6);
  const auto got = rank_embeddings(p, g);
  for (Index i = 0; i < 5; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (Index j = 0; j < 20; ++j) d.emplace_back(oracle::dist2(oracle::row(p, i), oracle::row(g, j)), static_cast<std::size_t>(j));
    std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t k = 0; k < 20; ++k) EXPECT_EQ(got[static_cast<std::size_t>(i)][k], d[k].second);
  }
}

TEST(Rank, TiesKeepGalleryOrder) {
  RowMatrix g(3, 1);
  g << 1, -1, 1;
  RowMatrix p(1, 1);
  p << 0;
  EXPECT_EQ(rank_embeddings(p, g)[0], (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Cmc, PerfectRanking) {
  const std::vector<IdentityId> ids{1, 2, 3};
  const Rankings r{{0, 1, 2}, {1, 0, 2}, {2, 1, 0}};
  EXPECT_EQ(cmc(r, ids, ids, std::vector<std::size_t>{1}).at(1), 100.0);
}

TEST(Cmc, MatchAlwaysLast) {
  const std::vector<IdentityId> ids{1, 2, 3};
  const Rankings r{{1, 2, 0}, {2, 0, 1}, {0, 1, 2}};
  const auto c = cmc(r, ids, ids, std::vector<std::size_t>{2, 3});
  EXPECT_EQ(c.at(2), 0.0);
  EXPECT_EQ(c.at(3), 100.0);
}

TEST(Cmc, HandCountedPositions) {
  // True matches at positions 1, 2, 2, 5 in a gallery of 5.
  const std::vector<IdentityId> gallery{10, 11, 12, 13, 14};
  const std::vector<IdentityId> probes{10, 11, 12, 14};
  const Rankings r{{0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}, {0, 2, 1, 3, 4}, {0, 1, 2, 3, 4}};
  const auto c = cmc(r, probes, gallery, std::vector<std::size_t>{1, 2, 5});
  EXPECT_EQ(c.at(1), 25.0);
  EXPECT_EQ(c.at(2), 75.0);
  EXPECT_EQ(c.at(5), 100.0);
}

TEST(Cmc, MissingIdentityIsProtocolError) {
  const std::vector<IdentityId> probes{1}, gallery{2};
  EXPECT_THROW(cmc(Rankings{{0}}, probes, gallery, std::vector<std::size_t>{1}), ProtocolError);
}

TEST(Cmc, CsvFormat) {
  CmcCurve c;
  c.ranks = {{1, 25}, {2, 75.5}};
  std::ostringstream os;
  write_cmc_csv(os, c);
  EXPECT_EQ(os.str(), "N,accuracy\n1,25\n2,75.5\n");
}

TEST(Protocol, NoiseFreeLabeledOnlyIsPerfect) {
  SplitSpec spec;
  spec.trials = 2;
  const auto r = run_protocol(standard(0.0), spec, {}, Mode::labeled_only, {{1}, 1, true});
  EXPECT_EQ(r.mean.at(1), 100.0);
}

TEST(Protocol, SingleTrialEqualsManualRun) {
  const auto t = standard(0.5);
  SplitSpec spec;
  spec.trials = 1;
  spec.seed = 3;
  const std::vector<std::size_t> ranks{1, 5};
  const auto r = run_protocol(t, spec, {}, Mode::labeled_only, {ranks, 1, true});

  const auto split = make_split(t, spec, 0);
  auto rng = detail::make_rng(spec.seed, "single_shot", 0);
  const auto probe = single_shot(split.probe, rng);
  const auto gallery = single_shot(split.gallery, rng);
  const auto model = fit_nk3ml(split.labeled, {});
  const auto manual = cmc(rank_gallery(model, probe, gallery), identities_of(probe), identities_of(gallery), ranks);
  EXPECT_EQ(r.mean.at(1), manual.at(1));
  EXPECT_EQ(r.mean.at(5), manual.at(5));
  EXPECT_EQ(r.trials[0].model_checksum, model_checksum(model));
}

TEST(Protocol, ThreadCountDoesNotChangeResults) {
  const auto t = standard(0.5);
  SplitSpec spec;
  spec.trials = 3;
  const auto a = run_protocol(t, spec, {}, Mode::semi_supervised, {{}, 1, true});
  const auto b = run_protocol(t, spec, {}, Mode::semi_supervised, {{}, 3, true});
  ASSERT_EQ(a.mean.ranks.size(), b.mean.ranks.size());
  for (std::size_t i = 0; i < a.mean.ranks.size(); ++i) EXPECT_EQ(a.mean.ranks[i].accuracy, b.mean.ranks[i].accuracy);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.trials[i].model_checksum, b.trials[i].model_checksum);
}

TEST(Protocol, FullCurveIsMonotone) {
  SplitSpec spec;
  spec.trials = 2;
  const auto r = run_protocol(standard(0.8), spec, {}, Mode::labeled_only);
  ASSERT_EQ(r.mean.ranks.size(), 20u);
  for (std::size_t i = 1; i < r.mean.ranks.size(); ++i) EXPECT_GE(r.mean.ranks[i].accuracy, r.mean.ranks[i - 1].accuracy);
  EXPECT_EQ(r.mean.ranks.back().accuracy, 100.0);
}

TEST(Mode, Parse) {
  EXPECT_EQ(parse_mode("labeled_only"), Mode::labeled_only);
  EXPECT_THROW(parse_mode("both"), ConfigError);
}
