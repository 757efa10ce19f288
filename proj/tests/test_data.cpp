#include "ncgen/bounds.hpp"
#include "ncgen/data.hpp"

#include <gtest/gtest.h>

using namespace ncgen;

namespace {

SyntheticSpec spec_for(Family f, int C, int per_class, double radius = 2.0) {
  SyntheticSpec s;
  s.family = f;
  s.C = C;
  s.d_in = 2;
  s.per_class = per_class;
  s.support_radius.assign(static_cast<std::size_t>(C), radius);
  s.seed = 5;
  return s;
}

}  // namespace

TEST(Generate, OnePointPerClass) {
  const auto d = generate(spec_for(Family::TruncatedGaussianBlobs, 2, 1));
  EXPECT_EQ(d.train.num_samples(), 2);
  EXPECT_EQ(d.test.num_samples(), 2);
  EXPECT_EQ(d.train.labels, (IntVector{0, 1}));
}

TEST(Generate, SupportAndBalanceForEveryFamily) {
  for (auto f : {Family::TruncatedGaussianBlobs, Family::ConcentricRings, Family::AnisotropicBlobs}) {
    auto s = spec_for(f, 4, 60, 1.5);
    if (f == Family::ConcentricRings) s.support_radius = {1.6, 2.6, 3.6, 4.6};
    const auto d = generate(s);
    const Matrix centers = class_centers(s);
    for (const auto* ds : {&d.train, &d.test}) {
      IntVector counts(4, 0);
      for (int i = 0; i < ds->num_samples(); ++i) {
        const int y = ds->labels[static_cast<std::size_t>(i)];
        ++counts[static_cast<std::size_t>(y)];
        EXPECT_LE((ds->inputs.col(i) - centers.col(y)).norm(), s.support_radius[static_cast<std::size_t>(y)]);
      }
      EXPECT_EQ(counts, IntVector(4, 60));
    }
  }
}

TEST(Generate, DeterministicAndSplitsDiffer) {
  const auto s = spec_for(Family::AnisotropicBlobs, 3, 20);
  const auto a = generate(s);
  const auto b = generate(s);
  EXPECT_EQ(a.train.inputs, b.train.inputs);
  EXPECT_EQ(a.test.inputs, b.test.inputs);
  EXPECT_NE(a.train.inputs, a.test.inputs);
  auto s2 = s;
  s2.seed = 6;
  EXPECT_NE(generate(s2).train.inputs, a.train.inputs);
}

TEST(Generate, RejectionFailureNamesClass) {
  auto s = spec_for(Family::TruncatedGaussianBlobs, 3, 5, 5.0);
  s.support_radius[2] = 1e-6;
  try {
    generate(s);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("class 2"), std::string::npos);
  }
}

TEST(Generate, InvalidSpecRejected) {
  auto s = spec_for(Family::TruncatedGaussianBlobs, 3, 5);
  s.support_radius.pop_back();
  EXPECT_THROW(generate(s), InvalidArgument);
  s = spec_for(Family::TruncatedGaussianBlobs, 3, 0);
  EXPECT_THROW(generate(s), InvalidArgument);
}

TEST(Generate, TrainAndTestShareTheDistribution) {
  auto s = spec_for(Family::AnisotropicBlobs, 3, 5000, 3.0);
  const auto d = generate(s);
  for (int y = 0; y < 3; ++y) {
    const Vector a = class_support_points(d.train, y).rowwise().mean();
    const Vector b = class_support_points(d.test, y).rowwise().mean();
    EXPECT_LT((a - b).norm(), 0.1);
  }
}

TEST(Centers, SimilarityMatrixSetsDistances) {
  auto s = spec_for(Family::AnisotropicBlobs, 3, 1);
  s.center_distance = 4.0;
  Matrix sim(3, 3);
  sim << 0, 0.5, 0, 0.5, 0, 0, 0, 0, 0;
  s.similarity_matrix = sim;
  const Matrix c = class_centers(s);
  EXPECT_NEAR((c.col(0) - c.col(1)).norm(), 2.0, 1e-9);
  EXPECT_NEAR((c.col(0) - c.col(2)).norm(), 4.0, 1e-9);
  EXPECT_NEAR((c.col(1) - c.col(2)).norm(), 4.0, 1e-9);
}

TEST(Centers, DefaultLayoutHasOneTightPair) {
  auto s = spec_for(Family::AnisotropicBlobs, 6, 1);
  s.center_distance = 5.0;
  s.tight_similarity = 0.8;
  const Matrix c = class_centers(s);
  EXPECT_NEAR((c.col(0) - c.col(1)).norm(), 1.0, 1e-12);
  EXPECT_NEAR((c.col(2) - c.col(3)).norm(), 5.0, 1e-12);
}

TEST(SupportPoints, PerClassAndUnion) {
  const auto d = generate(spec_for(Family::TruncatedGaussianBlobs, 3, 25, 1.0));
  Eigen::Index total = 0;
  for (int y = 0; y < 3; ++y) {
    const Matrix pts = class_support_points(d.train, y);
    EXPECT_EQ(pts.cols(), 25);
    total += pts.cols();
    EXPECT_EQ(greedy_cover(pts, 2.0 * d.train.spec.support_radius[static_cast<std::size_t>(y)]).count, 1);
  }
  EXPECT_EQ(total, d.train.num_samples());
  EXPECT_THROW(class_support_points(d.train, 3), InvalidArgument);
}
