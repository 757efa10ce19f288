#include "ncgen/etf.hpp"
#include "ncgen/margin.hpp"
#include "ncgen/ncmetrics.hpp"

#include <gtest/gtest.h>

using namespace ncgen;

namespace {

// Two classes on the x axis, classifier columns +-e1.
struct Toy {
  Matrix M;
  FeatureBatch z;
};

Toy toy() {
  Matrix M(2, 2);
  M << 1, -1, 0, 0;
  Matrix f(2, 4);
  f << 1, 2, -3, -1, 0, 1, 0, 5;
  return {M, FeatureBatch::make(f, {0, 0, 1, 1}, 2)};
}

}  // namespace

TEST(Margins, PairwiseAndGlobal) {
  const auto t = toy();
  const auto r = compute_margins(t.M, t.z);
  // <M0 - M1, z> = 2 x
  EXPECT_DOUBLE_EQ(r.pairwise(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(r.pairwise(1, 0), 2.0);
  EXPECT_TRUE(std::isnan(r.pairwise(0, 0)));
  EXPECT_DOUBLE_EQ(r.p_min, 2.0);
  EXPECT_TRUE(r.separable);
  EXPECT_DOUBLE_EQ(r.margin_std, 0.0);
  EXPECT_DOUBLE_EQ(r.normalized_pairwise(0, 1), 1.0);
}

TEST(Margins, NonSeparable) {
  auto t = toy();
  t.z.features(0, 0) = -0.5;
  const auto r = compute_margins(t.M, t.z);
  EXPECT_DOUBLE_EQ(r.p_min, -1.0);
  EXPECT_FALSE(r.separable);
  EXPECT_GT(r.margin_std, 0.0);
}

TEST(Margins, EmptyClassRejected) {
  const auto t = toy();
  const auto z = FeatureBatch::make(t.z.features, {0, 0, 0, 0}, 2);
  EXPECT_THROW(compute_margins(t.M, z), InvalidArgument);
}

TEST(Margins, RelabelInvariance) {
  // Permuting class names together with classifier columns permutes the
  // pairwise margin matrix and leaves p_min unchanged.
  Rng rng(1);
  const Matrix M = rng.gaussian(4, 3);
  const auto z = FeatureBatch::make(rng.gaussian(4, 9), FeatureBatch::grouped_labels(3, 3), 3);
  const IntVector pi{2, 0, 1};  // old class y becomes pi[y]
  Matrix M2(4, 3);
  IntVector labels2;
  for (int y = 0; y < 3; ++y) M2.col(pi[y]) = M.col(y);
  for (int l : z.labels) labels2.push_back(pi[static_cast<std::size_t>(l)]);
  const auto a = compute_margins(M, z);
  const auto b = compute_margins(M2, FeatureBatch::make(z.features, labels2, 3));
  EXPECT_DOUBLE_EQ(a.p_min, b.p_min);
  for (int y = 0; y < 3; ++y)
    for (int k = 0; k < 3; ++k)
      if (k != y) {
        EXPECT_DOUBLE_EQ(a.pairwise(y, k), b.pairwise(pi[y], pi[k]));
      }
}

TEST(Sandwich, EllMatchesClosedForm) {
  EXPECT_NEAR(ell(1.0, 1.0), std::log(1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(ell(3.0, 0.5), std::log(1.0 + 3.0 * std::exp(-0.5)), 1e-15);
  EXPECT_NEAR(ell(3.0, -800.0), 800.0 + std::log(3.0), 1e-9);
  EXPECT_GT(ell(1.0, 60.0), 0.0);
}

TEST(Sandwich, BracketsCeOnRandomInstances) {
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const int C = 2 + k % 5;
    const Matrix M = rng.gaussian(6, C, 1.0 + k % 3);
    const auto z = FeatureBatch::make(rng.gaussian(6, C * 3, 2.0), FeatureBatch::grouped_labels(C, 3), C);
    const auto m = compute_margins(M, z);
    const auto sw = sandwich_bounds(m.p_min, C, z.num_samples());
    const Matrix logits = M.transpose() * z.features;
    double ce = 0.0;
    for (int i = 0; i < z.num_samples(); ++i) {
      const double mx = logits.col(i).maxCoeff();
      ce += mx + std::log((logits.col(i).array() - mx).exp().sum()) - logits(z.labels[static_cast<std::size_t>(i)], i);
    }
    EXPECT_LE(sw.lower, ce + 1e-9);
    EXPECT_LE(ce, sw.upper + 1e-9);
  }
}

TEST(MarginLoss, CountsViolations) {
  const auto t = toy();
  Matrix g = Matrix::Constant(2, 2, 3.0);
  // Class 0 margins: 2, 4 -> one of two <= 3. Class 1 margins: 6, 2 -> one of two.
  EXPECT_DOUBLE_EQ(empirical_margin_loss(t.M, t.z, g), 0.5 * 0.5 + 0.5 * 0.5);
  g.setConstant(1.0);
  EXPECT_DOUBLE_EQ(empirical_margin_loss(t.M, t.z, g), 0.0);
  g(0, 1) = 0.0;
  EXPECT_THROW(empirical_margin_loss(t.M, t.z, g), InvalidArgument);
}

TEST(NcMetrics, CollapsedFeaturesOnEtf) {
  const auto etf = make_etf(4, 6, 1.0, 0);
  Matrix f(6, 12);
  for (int i = 0; i < 12; ++i) f.col(i) = 3.0 * etf.matrix.col(i / 3);
  const auto z = FeatureBatch::make(f, FeatureBatch::grouped_labels(4, 3), 4);
  const auto r = nc_report(etf.matrix, z);
  EXPECT_NEAR(r.nc1, 0.0, 1e-12);
  EXPECT_NEAR(r.nc2, 0.0, 1e-12);
  EXPECT_NEAR(r.nc3, 0.0, 1e-9);
  EXPECT_DOUBLE_EQ(r.nc4, 1.0);
}

TEST(NcMetrics, SpreadAndDisagreement) {
  const auto etf = make_etf(3, 3, 1.0, 1);
  Rng rng(3);
  const auto z = FeatureBatch::make(rng.gaussian(3, 30), FeatureBatch::grouped_labels(3, 10), 3);
  const auto r = nc_report(etf.matrix, z);
  EXPECT_GT(r.nc1, 0.1);
  EXPECT_GT(r.nc3, 0.0);
  EXPECT_GE(r.nc4, 0.0);
  EXPECT_LE(r.nc4, 1.0);
}

TEST(NcMetrics, ArgmaxAndNearestCenter) {
  Matrix M(2, 3);
  M << 1, 0, -1, 0, 1, 0;
  Vector z(2);
  z << 0.2, 0.9;
  EXPECT_EQ(argmax_logit(M, z), 1);
  EXPECT_EQ(nearest_center(M, z), 1);
}
