#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nullmargin/kmmc.hpp"
#include "oracles.hpp"

using namespace nullmargin;

namespace {

RowMatrix separable(std::uint64_t seed) {
  RowMatrix x = oracle::random_matrix(20, 4, seed, 0.3);
  for (Index i = 10; i < 20; ++i) x(i, 0) += 4.0;
  return x;
}

// P - Q from explicit sums over the kernel matrix.
Matrix naive_margin(const Matrix& k, const std::vector<int>& labels) {
  const auto m = static_cast<std::size_t>(k.rows());
  int c = 0;
  for (int l : labels) c = std::max(c, l + 1);
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(c));
  for (std::size_t j = 0; j < m; ++j) members[static_cast<std::size_t>(labels[j])].push_back(j);
  Matrix p = Matrix::Zero(k.rows(), k.rows()), q = p;
  for (const auto& mem : members) {
    const double ni = static_cast<double>(mem.size());
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b) {
        double kk = 0, sa = 0, sb = 0, ga = 0, gb = 0;
        for (auto j : mem) {
          kk += k(static_cast<Index>(a), static_cast<Index>(j)) * k(static_cast<Index>(b), static_cast<Index>(j));
          sa += k(static_cast<Index>(a), static_cast<Index>(j));
          sb += k(static_cast<Index>(b), static_cast<Index>(j));
        }
        for (std::size_t j = 0; j < m; ++j) {
          ga += k(static_cast<Index>(a), static_cast<Index>(j));
          gb += k(static_cast<Index>(b), static_cast<Index>(j));
        }
        const double md = static_cast<double>(m);
        q(static_cast<Index>(a), static_cast<Index>(b)) += (kk - sa * sb / ni) / md;
        p(static_cast<Index>(a), static_cast<Index>(b)) += ni / md * (sa / ni - ga / md) * (sb / ni - gb / md);
      }
  }
  return p - q;
}

}  // namespace

TEST(Bandwidth, TwoPoints) {
  RowMatrix x(2, 2);
  x << 0, 0, 0, 2;
  EXPECT_DOUBLE_EQ(resolve_bandwidth(x), 2.0);
}

TEST(Bandwidth, ThreeCollinear) {
  RowMatrix x(3, 1);
  x << 0, 1, 2;
  EXPECT_DOUBLE_EQ(resolve_bandwidth(x), 4.0 / 3.0);
}

TEST(Bandwidth, MatchesDoubleLoopExactly) {
  const auto x = oracle::random_matrix(50, 7, 17);
  EXPECT_EQ(resolve_bandwidth(x), oracle::mean_pairwise_distance(x));
}

TEST(Gram, RbfDiagonalIsOne) {
  const auto x = oracle::random_matrix(6, 3, 1);
  const auto k = gram(x, x, KernelKind::rbf, 0.7);
  for (Index i = 0; i < 6; ++i) EXPECT_EQ(k(i, i), 1.0);
}

TEST(Gram, WideBandwidthApproachesOne) {
  const auto x = oracle::random_matrix(6, 3, 1);
  const auto k = gram(x, x, KernelKind::rbf, 1e8);
  EXPECT_GE(k.minCoeff(), 1.0 - 1e-15);
}

TEST(Gram, RbfIsSymmetricPsd) {
  const auto x = oracle::random_matrix(10, 3, 2);
  const Matrix k = gram(x, x, KernelKind::rbf, 1.3);
  EXPECT_EQ((k - k.transpose()).norm(), 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * eig.eigenvalues().maxCoeff());
}

TEST(Gram, RbfMatchesFormula) {
  const auto a = oracle::random_matrix(3, 4, 5), b = oracle::random_matrix(2, 4, 6);
  const auto k = gram(a, b, KernelKind::rbf, 2.0);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 2; ++j)
      EXPECT_NEAR(k(i, j), std::exp(-oracle::dist2(oracle::row(a, i), oracle::row(b, j)) / 8.0), 1e-15);
}

TEST(MarginProblem, MatchesNaiveSums) {
  const auto x = oracle::random_matrix(9, 3, 8);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 0, 1};
  const Matrix k = gram(x, x, KernelKind::rbf, 1.0);
  const auto prob = build_margin_problem(k, labels);
  EXPECT_LE((prob.margin - naive_margin(k, labels)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(prob.jittered(0, 0) - k(0, 0), 1e-8 * k.trace() / 9, 1e-15);
}

TEST(Nkmmc, LinearKernelSeparatesTwoClasses) {
  RowMatrix x(6, 2);
  x << 0, 0, 0.2, 0.1, -0.1, 0.2, 5, 5, 5.2, 4.9, 4.8, 5.1;
  const std::vector<int> labels{0, 0, 0, 1, 1, 1};
  const auto model = fit_nkmmc(x, labels, {KernelKind::linear, {}});
  ASSERT_GE(model.output_dim(), 1);
  const auto y = project_kernel_rows(model, x);
  const double lo0 = y.col(0).head(3).minCoeff(), hi0 = y.col(0).head(3).maxCoeff();
  const double lo1 = y.col(0).tail(3).minCoeff(), hi1 = y.col(0).tail(3).maxCoeff();
  EXPECT_TRUE(hi0 < lo1 || hi1 < lo0);
}

TEST(Nkmmc, OneClassIsRejected) {
  EXPECT_THROW(fit_nkmmc(oracle::random_matrix(4, 2, 1), std::vector<int>{0, 0, 0, 0}, {}), DataError);
}

TEST(Nkmmc, ResidualsAndKOrthogonality) {
  const auto x = separable(3);
  const auto labels = oracle::block_labels(2, 10);
  const auto model = fit_nkmmc(x, labels, {});
  const auto prob = build_margin_problem(gram(x, x, KernelKind::rbf, model.resolved_bandwidth), labels);
  const double scale = prob.margin.norm();
  for (Index k = 0; k < model.output_dim(); ++k) {
    const Vector a = model.coefficients.col(k);
    const Vector r = prob.margin * a - model.eigenvalues(k) * (prob.jittered * a);
    EXPECT_LE(r.norm(), 1e-6 * scale * a.norm());
    EXPECT_NEAR(a.dot(prob.kernel * a), 1.0, 1e-10);
    for (Index j = 0; j < k; ++j) EXPECT_LE(std::abs(a.dot(prob.kernel * model.coefficients.col(j))), 1e-6);
  }
  for (Index k = 1; k < model.output_dim(); ++k) EXPECT_GE(model.eigenvalues(k - 1), model.eigenvalues(k));
}

TEST(Nkmmc, TopDirectionBeatsRandomVectors) {
  const auto x = oracle::random_matrix(15, 5, 9);
  const auto labels = oracle::block_labels(3, 5);
  const auto model = fit_nkmmc(x, labels, {});
  const auto prob = build_margin_problem(gram(x, x, KernelKind::rbf, model.resolved_bandwidth), labels);
  const Vector a = model.coefficients.col(0);
  const double best = a.dot(prob.margin * a);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int t = 0; t < 2000; ++t) {
    Vector r(15);
    for (auto& v : r) v = n(rng);
    r /= std::sqrt(r.dot(prob.kernel * r));
    EXPECT_LE(r.dot(prob.margin * r), best);
  }
}

TEST(Nkmmc, EigenvectorsInvariantUnderScaling) {
  const auto x = separable(4);
  const auto labels = oracle::block_labels(2, 10);
  const auto a = fit_nkmmc(x, labels, {});
  RowMatrix scaled = 3.0 * x;  // auto bandwidth scales along, so K is unchanged
  const auto b = fit_nkmmc(scaled, labels, {});
  ASSERT_EQ(a.output_dim(), b.output_dim());
  EXPECT_LE((a.coefficients.col(0) - b.coefficients.col(0)).norm(), 1e-6 * a.coefficients.col(0).norm());
}

TEST(Nkmmc, CollapsedClassesStillFit) {
  // Duplicated points make K singular; only genuine directions survive.
  RowMatrix x(9, 2);
  x << 0, 0, 0, 0, 0, 0, 1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1;
  const auto model = fit_nkmmc(x, oracle::block_labels(3, 3), {});
  EXPECT_GE(model.output_dim(), 1);
  EXPECT_LE(model.output_dim(), 3);
  const auto y = project_kernel_rows(model, x);
  EXPECT_GT((y.row(0) - y.row(3)).norm(), 1e-3);
  EXPECT_GT((y.row(3) - y.row(6)).norm(), 1e-3);
}

TEST(Nkmmc, MarginWitnessOnSeparableData) {
  const auto x = separable(5);
  const auto labels = oracle::block_labels(2, 10);
  const auto y = project_kernel_rows(fit_nkmmc(x, labels, {}), x);
  double inter = 0, intra = 0;
  int ni = 0, nw = 0;
  for (Index i = 0; i < 20; ++i)
    for (Index j = i + 1; j < 20; ++j) {
      const double d = (y.row(i) - y.row(j)).norm();
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) intra += d, ++nw;
      else inter += d, ++ni;
    }
  EXPECT_GE(inter / ni, intra / nw);
}

TEST(ProjectKernel, SinglePointModel) {
  KernelDiscriminantModel m;
  m.train_points = RowMatrix::Constant(1, 3, 0.5);
  m.coefficients = Matrix::Constant(1, 1, 2.5);
  m.resolved_bandwidth = 1.0;
  EXPECT_EQ(project_kernel(m, Vector::Constant(3, 0.5))(0), 2.5);
}

TEST(ProjectKernel, BatchEqualsLoop) {
  const auto x = separable(6);
  const auto model = fit_nkmmc(x, oracle::block_labels(2, 10), {});
  const auto batch = project_kernel_rows(model, x);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index k = 0; k < model.output_dim(); ++k) {
      double s = 0;
      for (Index j = 0; j < x.rows(); ++j)
        s += model.coefficients(j, k) *
             std::exp(-oracle::dist2(oracle::row(x, j), oracle::row(x, i)) /
                      (2 * model.resolved_bandwidth * model.resolved_bandwidth));
      EXPECT_NEAR(batch(i, k), s, 1e-9);
    }
}

TEST(ProjectKernel, FarPointVanishes) {
  const auto x = separable(7);
  const auto model = fit_nkmmc(x, oracle::block_labels(2, 10), {});
  const Vector far = Vector::Constant(4, 1e3 * model.resolved_bandwidth);
  EXPECT_LE(project_kernel(model, far).norm(), 1e-6 * model.coefficients.norm());
}

TEST(ProjectKernel, RowPermutationInvariance) {
  const auto x = separable(8);
  auto model = fit_nkmmc(x, oracle::block_labels(2, 10), {});
  const Vector q = Vector::Constant(4, 0.7);
  const Vector before = project_kernel(model, q);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(20);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 20, std::mt19937_64(2));
  model.train_points = perm * model.train_points;
  model.coefficients = perm * model.coefficients;
  EXPECT_LE((project_kernel(model, q) - before).norm(), 1e-12);
}

TEST(ProjectKernel, DimensionMismatch) {
  const auto model = fit_nkmmc(separable(9), oracle::block_labels(2, 10), {});
  EXPECT_THROW(project_kernel(model, Vector::Zero(3)), DimensionMismatch);
}

TEST(KernelSpec, Validation) {
  EXPECT_THROW(parse_kernel_kind("poly"), ConfigError);
  KernelSpec k{KernelKind::rbf, -1.0};
  EXPECT_THROW(k.validate(), ConfigError);
}
