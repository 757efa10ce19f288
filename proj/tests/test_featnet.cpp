#include "ncgen/featnet.hpp"

#include <gtest/gtest.h>

using namespace ncgen;

namespace {

MlpParams hand_net() {
  // 2 -> 2 (relu) -> 1
  MlpParams p;
  p.widths = {2, 2, 1};
  p.activation = Activation::ReLU;
  Matrix w0(2, 2), w1(1, 2);
  w0 << 1, -2, -1, 3;
  w1 << 2, 5;
  Vector b0(2), b1(1);
  b0 << 0.5, 0.25;
  b1 << -1;
  p.weights = {w0, w1};
  p.biases = {b0, b1};
  return p;
}

double loss_at(const MlpParams& p, const Matrix& M, const Matrix& x, const IntVector& y) {
  return mlp_ce_grad(p, M, x, y).loss;
}

SyntheticSpec blobs2() {
  SyntheticSpec s;
  s.family = Family::TruncatedGaussianBlobs;
  s.C = 2;
  s.d_in = 2;
  s.per_class = 40;
  s.support_radius = {1.0, 1.0};
  s.class_std = 0.3;
  s.center_distance = 4.0;
  s.seed = 3;
  return s;
}

FitConfig quick_fit() {
  FitConfig f;
  f.epochs = 100;
  f.max_extra_epochs = 10;
  f.batch_size = 16;
  f.seed = 1;
  return f;
}

}  // namespace

TEST(Forward, ZeroNetGivesZero) {
  auto p = init_mlp({3, 4, 2}, Activation::ReLU, 0);
  for (auto& w : p.weights) w.setZero();
  Vector x(3);
  x << 1, 2, 3;
  EXPECT_EQ(forward(p, x), Vector::Zero(2));
}

TEST(Forward, SingleLinearLayer) {
  auto p = init_mlp({3, 2}, Activation::Tanh, 4);
  Vector x(3);
  x << 0.5, -1, 2;
  EXPECT_LE((forward(p, x) - p.weights[0] * x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forward, HandComputedTwoLayer) {
  Vector x(2);
  x << 1, 0;
  // hidden pre = (1.5, -0.75) -> relu (1.5, 0); out = 2 * 1.5 - 1 = 2
  EXPECT_DOUBLE_EQ(forward(hand_net(), x)[0], 2.0);
  Vector bad(3);
  EXPECT_THROW(forward(hand_net(), bad), InvalidArgument);
}

TEST(Backprop, MatchesCentralDifferences) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = init_mlp({3, 5, 4, 4}, Activation::Tanh, 20 + s);
    Rng rng(40 + s);
    const Matrix M = rng.gaussian(4, 3);
    const Matrix x = rng.gaussian(3, 6);
    const IntVector y{0, 1, 2, 0, 1, 2};
    const auto g = mlp_ce_grad(p, M, x, y);
    for (int dir = 0; dir < 3; ++dir) {
      MlpParams v = p;
      double analytic = 0.0;
      for (std::size_t l = 0; l < p.num_layers(); ++l) {
        v.weights[l] = rng.gaussian(p.weights[l].rows(), p.weights[l].cols());
        v.biases[l] = rng.gaussian(p.biases[l].size(), 1);
        analytic += (g.weights[l].array() * v.weights[l].array()).sum() + g.biases[l].dot(v.biases[l]);
      }
      const double h = 1e-5;
      auto shifted = [&](double t) {
        MlpParams q = p;
        for (std::size_t l = 0; l < p.num_layers(); ++l) {
          q.weights[l] += t * v.weights[l];
          q.biases[l] += t * v.biases[l];
        }
        return loss_at(q, M, x, y);
      };
      const double fd = (shifted(h) - shifted(-h)) / (2 * h);
      EXPECT_LE(std::abs(fd - analytic) / std::max(std::abs(fd), 1e-8), 1e-4) << "net " << s;
    }
  }
}

TEST(Backprop, ReluAwayFromKinks) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto p = init_mlp({3, 6, 5, 4}, Activation::ReLU, 60 + s);
    Rng rng(80 + s);
    for (auto& b : p.biases) b = rng.gaussian(b.size(), 1, 0.1);
    const Matrix M = rng.gaussian(4, 3);
    const Matrix x = rng.gaussian(3, 6);
    const IntVector y{0, 1, 2, 0, 1, 2};
    const auto g = mlp_ce_grad(p, M, x, y);
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
      const Matrix vw = rng.gaussian(p.weights[l].rows(), p.weights[l].cols());
      const Vector vb = rng.gaussian(p.biases[l].size(), 1);
      const double analytic = (g.weights[l].array() * vw.array()).sum() + g.biases[l].dot(vb);
      auto shifted = [&](double t) {
        MlpParams q = p;
        q.weights[l] += t * vw;
        q.biases[l] += t * vb;
        return loss_at(q, M, x, y);
      };
      const double h = 1e-6;
      const double fd = (shifted(h) - shifted(-h)) / (2 * h);
      EXPECT_LE(std::abs(fd - analytic) / std::max(std::abs(fd), 1e-8), 1e-4) << "net " << s << " layer " << l;
    }
  }
}

TEST(Fit, ReachesTerminalPhaseOnSeparableBlobs) {
  const auto data = generate(blobs2());
  const auto etf = make_etf(2, 2, 1.0, 0);
  const auto r = fit(init_mlp({2, 16, 2}, Activation::ReLU, 0), etf, data.train, quick_fit(), &data.test);
  EXPECT_TRUE(r.reached_tpt);
  EXPECT_DOUBLE_EQ(*r.trace.checkpoints.back().train_acc, 1.0);
  EXPECT_EQ(r.trace.checkpoints.back().step, r.tpt_epoch + 10);
  ASSERT_TRUE(r.best_test_checkpoint().has_value());
  EXPECT_TRUE(r.trace.checkpoints.back().test_acc.has_value());
}

TEST(Fit, ZeroLearningRateLeavesParameters) {
  const auto data = generate(blobs2());
  auto cfg = quick_fit();
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  const auto p0 = init_mlp({2, 8, 2}, Activation::ReLU, 2);
  EXPECT_EQ(fit(p0, make_etf(2, 2, 1.0, 0), data.train, cfg).params, p0);
}

TEST(Fit, Deterministic) {
  const auto data = generate(blobs2());
  const auto p0 = init_mlp({2, 8, 2}, Activation::ReLU, 2);
  const auto etf = make_etf(2, 2, 1.0, 0);
  const auto a = fit(p0, etf, data.train, quick_fit(), &data.test);
  const auto b = fit(p0, etf, data.train, quick_fit(), &data.test);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.params, b.params);
}

TEST(Fit, ClassifierIsNotModified) {
  const auto data = generate(blobs2());
  const auto etf = make_etf(2, 3, 1.0, 5);
  const Matrix before = etf.matrix;
  fit(init_mlp({2, 8, 3}, Activation::ReLU, 2), etf, data.train, quick_fit());
  EXPECT_EQ(etf.matrix, before);
}

TEST(Fit, RelabelingWithMatchingColumnsGivesSameLossTrace) {
  auto spec = blobs2();
  spec.C = 3;
  spec.support_radius = {1.0, 1.0, 1.0};
  const auto data = generate(spec);
  const auto etf = make_etf(3, 4, 1.0, 8);
  const IntVector pi{2, 0, 1};
  auto relabeled = data.train;
  for (auto& y : relabeled.labels) y = pi[static_cast<std::size_t>(y)];
  SimplexEtf moved = etf;
  for (int y = 0; y < 3; ++y) moved.matrix.col(pi[static_cast<std::size_t>(y)]) = etf.matrix.col(y);
  auto cfg = quick_fit();
  cfg.epochs = 15;
  const auto p0 = init_mlp({2, 8, 4}, Activation::ReLU, 6);
  const auto a = fit(p0, etf, data.train, cfg);
  const auto b = fit(p0, moved, relabeled, cfg);
  ASSERT_EQ(a.trace.checkpoints.size(), b.trace.checkpoints.size());
  for (std::size_t i = 0; i < a.trace.checkpoints.size(); ++i)
    EXPECT_NEAR(a.trace.checkpoints[i].ce_loss, b.trace.checkpoints[i].ce_loss,
                1e-9 * std::max(1.0, a.trace.checkpoints[i].ce_loss));
}

TEST(Fit, RejectsMismatchedShapes) {
  const auto data = generate(blobs2());
  EXPECT_THROW(fit(init_mlp({2, 8, 3}, Activation::ReLU, 2), make_etf(2, 2, 1.0, 0), data.train, quick_fit()),
               InvalidArgument);
}

TEST(LearningRate, ConstantUntilTerminalPhaseThenDecays) {
  FitConfig f;
  f.learning_rate = 1.0;
  f.max_extra_epochs = 100;
  EXPECT_DOUBLE_EQ(f.learning_rate_at(500, 0), 1.0);
  EXPECT_DOUBLE_EQ(f.learning_rate_at(60, 10), 1.0);
  EXPECT_DOUBLE_EQ(f.learning_rate_at(75, 10), 0.1);
  EXPECT_NEAR(f.learning_rate_at(95, 10), 0.01, 1e-15);
}

TEST(Lipschitz, DiagonalLinearLayer) {
  MlpParams p = init_mlp({2, 2}, Activation::ReLU, 0);
  p.weights[0] << 3, 0, 0, 1;
  EXPECT_NEAR(spectral_norm(p.weights[0]), 3.0, 1e-8);
  Rng rng(1);
  const auto est = lipschitz_estimate(p, rng.gaussian(2, 50));
  EXPECT_NEAR(est.upper, 3.0, 1e-8);
  EXPECT_LE(est.lower, est.upper);
}

TEST(Lipschitz, IdentityNetwork) {
  MlpParams p = init_mlp({3, 3, 3}, Activation::ReLU, 0);
  p.weights[0].setIdentity();
  p.weights[1].setIdentity();
  Matrix probe(3, 2);
  probe << 1, 2, 1, 3, 1, 4;  // positive inputs: relu acts as identity
  const auto est = lipschitz_estimate(p, probe);
  EXPECT_NEAR(est.upper, 1.0, 1e-8);
  EXPECT_NEAR(est.lower, 1.0, 1e-12);
}

TEST(Lipschitz, LowerNeverExceedsUpper) {
  Rng rng(2);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = init_mlp({2, 16, 16, 4}, Activation::ReLU, s);
    Matrix probe = rng.gaussian(2, 21);
    probe.col(20) = probe.col(0);  // duplicates are skipped
    const auto est = lipschitz_estimate(p, probe);
    EXPECT_LE(est.lower, est.upper);
    EXPECT_GT(est.lower, 0.0);
  }
}
