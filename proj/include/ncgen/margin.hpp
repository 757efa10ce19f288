// Pairwise class margins, the global train margin p_min, and the loss
// sandwich l_1(p_min) <= CE <= N * l_{C-1}(p_min).
#pragma once

#include "features.hpp"

#include <limits>

namespace ncgen {

/// Directional class-pair margins. Entry (y, y') is the minimum over class-y
/// samples of <M_y - M_y', z>; the matrix is not symmetric in general and
/// its diagonal is NaN.
struct MarginReport {
  Matrix pairwise;
  double p_min = 0.0;
  bool separable = false;
  /// Population standard deviation of the C(C-1) off-diagonal entries.
  double margin_std = 0.0;
  /// pairwise(y, y') / ||M_y - M_y'||.
  Matrix normalized_pairwise;

  [[nodiscard]] int num_classes() const { return static_cast<int>(pairwise.rows()); }

  /// min over y' != y of normalized_pairwise(y, y').
  [[nodiscard]] double min_normalized(int y) const {
    double m = std::numeric_limits<double>::infinity();
    for (int k = 0; k < num_classes(); ++k)
      if (k != y) m = std::min(m, normalized_pairwise(y, k));
    return m;
  }
};

inline MarginReport compute_margins(const Matrix& M, const FeatureBatch& z) {
  require(M.rows() == z.dim(), "compute_margins: feature dimension does not match classifier");
  require(M.cols() == z.num_classes(), "compute_margins: class count does not match classifier");
  z.require_all_classes_present("compute_margins");
  const int C = z.num_classes();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();

  // logits(c, i) = <M_c, z_i>; margin of sample i against y' is logit_y - logit_y'.
  const Matrix logits = M.transpose() * z.features;
  MarginReport r;
  r.pairwise = Matrix::Constant(C, C, inf);
  for (int i = 0; i < z.num_samples(); ++i) {
    const int y = z.labels[static_cast<std::size_t>(i)];
    for (int k = 0; k < C; ++k)
      if (k != y) r.pairwise(y, k) = std::min(r.pairwise(y, k), logits(y, i) - logits(k, i));
  }

  r.normalized_pairwise = Matrix::Constant(C, C, nan);
  r.p_min = inf;
  double sum = 0.0;
  for (int y = 0; y < C; ++y) {
    r.pairwise(y, y) = nan;
    for (int k = 0; k < C; ++k) {
      if (k == y) continue;
      r.p_min = std::min(r.p_min, r.pairwise(y, k));
      sum += r.pairwise(y, k);
      r.normalized_pairwise(y, k) = r.pairwise(y, k) / (M.col(y) - M.col(k)).norm();
    }
  }
  const double count = static_cast<double>(C) * (C - 1);
  const double mean = sum / count;
  double var = 0.0;
  for (int y = 0; y < C; ++y)
    for (int k = 0; k < C; ++k)
      if (k != y) var += (r.pairwise(y, k) - mean) * (r.pairwise(y, k) - mean);
  r.margin_std = std::sqrt(var / count);
  r.separable = r.p_min > 0.0;
  return r;
}

/// l_a(p) = log(1 + a e^{-p}).
inline double ell(double a, double p) { return log1p_scaled_exp(a, p); }

struct SandwichBounds {
  double lower = 0.0;
  double upper = 0.0;
};

inline SandwichBounds sandwich_bounds(double p_min, int C, int N) {
  require(C >= 2, "sandwich_bounds: need C >= 2");
  require(N >= 1, "sandwich_bounds: need N >= 1");
  return {ell(1.0, p_min), static_cast<double>(N) * ell(static_cast<double>(C - 1), p_min)};
}

/// Empirical margin-violation risk: sum_y p(y) sum_{y' != y} (1/N_y) #{x in S_y :
/// <M_y - M_y', z(x)> <= gamma(y, y')}, with p(y) the empirical class frequency.
inline double empirical_margin_loss(const Matrix& M, const FeatureBatch& z, const Matrix& gammas) {
  const int C = z.num_classes();
  require(M.cols() == C && M.rows() == z.dim(), "empirical_margin_loss: shape mismatch");
  require(gammas.rows() == C && gammas.cols() == C, "empirical_margin_loss: gammas must be C x C");
  z.require_all_classes_present("empirical_margin_loss");
  for (int y = 0; y < C; ++y)
    for (int k = 0; k < C; ++k)
      if (k != y) require(gammas(y, k) > 0.0, "empirical_margin_loss: gammas must be positive");

  const Matrix logits = M.transpose() * z.features;
  Matrix hits = Matrix::Zero(C, C);
  for (int i = 0; i < z.num_samples(); ++i) {
    const int y = z.labels[static_cast<std::size_t>(i)];
    for (int k = 0; k < C; ++k)
      if (k != y && logits(y, i) - logits(k, i) <= gammas(y, k)) hits(y, k) += 1.0;
  }
  const double N = z.num_samples();
  double total = 0.0;
  for (int y = 0; y < C; ++y) {
    const double n_y = z.class_counts[static_cast<std::size_t>(y)];
    double row = 0.0;
    for (int k = 0; k < C; ++k)
      if (k != y) row += hits(y, k) / n_y;
    total += (n_y / N) * row;
  }
  return total;
}

}  // namespace ncgen
