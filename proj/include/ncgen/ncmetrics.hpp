// Neural-collapse diagnostics NC1-NC4 as dimensionless ratios.
#pragma once

#include "etf.hpp"
#include "features.hpp"

namespace ncgen {

struct NcReport {
  /// Mean within-class spread over the mean class-mean norm.
  double nc1 = 0.0;
  /// Mean distance between unit class means and unit classifier columns.
  double nc2 = 0.0;
  /// Mean of ||z - M_y|| over samples, without normalization.
  double nc2_raw = 0.0;
  /// Classes whose mean (or classifier column) is zero; excluded from nc2.
  IntVector nc2_flagged;
  /// Max |cos(M_y, M_y') + 1/(C-1)| over pairs.
  double nc3 = 0.0;
  /// Fraction of samples where argmax logit equals the nearest class mean.
  double nc4 = 0.0;
};

inline int argmax_logit(const Matrix& M, const Eigen::Ref<const Vector>& z) {
  Eigen::Index best = 0;
  (M.transpose() * z).maxCoeff(&best);
  return static_cast<int>(best);
}

inline int nearest_center(const Matrix& means, const Eigen::Ref<const Vector>& z) {
  Eigen::Index best = 0;
  (means.colwise() - z).colwise().squaredNorm().minCoeff(&best);
  return static_cast<int>(best);
}

inline NcReport nc_report(const Matrix& M, const FeatureBatch& z) {
  require(M.rows() == z.dim() && M.cols() == z.num_classes(), "nc_report: shape mismatch");
  z.require_all_classes_present("nc_report");
  const int C = z.num_classes();
  const Matrix means = class_means(z);

  NcReport r;
  Vector spread = Vector::Zero(C);
  for (int i = 0; i < z.num_samples(); ++i) {
    const int y = z.labels[static_cast<std::size_t>(i)];
    spread[y] += (z.features.col(i) - means.col(y)).norm();
    r.nc2_raw += (z.features.col(i) - M.col(y)).norm();
  }
  r.nc2_raw /= z.num_samples();
  for (int y = 0; y < C; ++y) spread[y] /= z.class_counts[static_cast<std::size_t>(y)];
  const double scale = means.colwise().norm().mean();
  const double within = spread.mean();
  if (scale > 0.0)
    r.nc1 = within / scale;
  else
    r.nc1 = within == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();

  double dual = 0.0;
  int counted = 0;
  for (int y = 0; y < C; ++y) {
    const double mn = means.col(y).norm();
    const double cn = M.col(y).norm();
    if (mn == 0.0 || cn == 0.0) {
      r.nc2_flagged.push_back(y);
      continue;
    }
    dual += (means.col(y) / mn - M.col(y) / cn).norm();
    ++counted;
  }
  r.nc2 = counted > 0 ? dual / counted : std::numeric_limits<double>::quiet_NaN();

  r.nc3 = C >= 2 ? etf_deviation(M).max_cosine_error : 0.0;

  int agree = 0;
  for (int i = 0; i < z.num_samples(); ++i)
    if (argmax_logit(M, z.features.col(i)) == nearest_center(means, z.features.col(i))) ++agree;
  r.nc4 = static_cast<double>(agree) / z.num_samples();
  return r;
}

}  // namespace ncgen
