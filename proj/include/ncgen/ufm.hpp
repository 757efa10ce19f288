// Unconstrained feature model: summed cross-entropy over free features and a
// linear classifier, optimized by full-batch gradient descent.
#pragma once

#include "margin.hpp"
#include "ncmetrics.hpp"

#include <optional>

namespace ncgen {

/// Softmax over each column of `logits`, max-shifted.
inline Matrix softmax_columns(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    auto col = p.col(i);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return p;
}

/// Total (not mean) cross-entropy of logits (C x N) against labels.
inline double ce_from_logits(const Matrix& logits, const IntVector& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    const auto col = logits.col(i);
    const double m = col.maxCoeff();
    const double lse = m + std::log((col.array() - m).exp().sum());
    total += lse - col[labels[static_cast<std::size_t>(i)]];
  }
  return total;
}

/// -sum_i log softmax(M^T z_i)_{y_i}.
inline double ce_loss(const Matrix& M, const FeatureBatch& z) {
  require(M.rows() == z.dim() && M.cols() == z.num_classes(), "ce_loss: shape mismatch");
  require_finite(M, "ce_loss");
  require_finite(z.features, "ce_loss");
  return ce_from_logits(M.transpose() * z.features, z.labels);
}

struct CeGradient {
  Matrix grad_M;  // d x C
  Matrix grad_Z;  // d x N
};

inline CeGradient ce_grad(const Matrix& M, const FeatureBatch& z) {
  require(M.rows() == z.dim() && M.cols() == z.num_classes(), "ce_grad: shape mismatch");
  require_finite(M, "ce_grad");
  require_finite(z.features, "ce_grad");
  Matrix residual = softmax_columns(M.transpose() * z.features);
  for (int i = 0; i < z.num_samples(); ++i) residual(z.labels[static_cast<std::size_t>(i)], i) -= 1.0;
  return {z.features * residual.transpose(), M * residual};
}

/// One trace record. Field names match the JSONL schema.
struct Checkpoint {
  int step = 0;
  double ce_loss = 0.0;
  double p_min = 0.0;
  double nc1 = 0.0;
  double nc2 = 0.0;
  double nc3_deviation = 0.0;
  double nc4_agreement = 0.0;
  double sandwich_lower = 0.0;
  double sandwich_upper = 0.0;
  // Recorded by feature-extractor training only.
  std::optional<double> train_acc;
  std::optional<double> margin_std;
  std::optional<double> test_acc;
  std::optional<double> test_ce;

  bool operator==(const Checkpoint&) const = default;
};

struct TrainTrace {
  std::vector<Checkpoint> checkpoints;
  bool operator==(const TrainTrace&) const = default;
};

/// Checkpoint of (M, Z) at `step` with margin, NC and sandwich diagnostics.
inline Checkpoint make_checkpoint(int step, const Matrix& M, const FeatureBatch& z) {
  Checkpoint c;
  c.step = step;
  c.ce_loss = ce_loss(M, z);
  const auto margins = compute_margins(M, z);
  c.p_min = margins.p_min;
  const auto nc = nc_report(M, z);
  c.nc1 = nc.nc1;
  c.nc2 = nc.nc2;
  c.nc3_deviation = nc.nc3;
  c.nc4_agreement = nc.nc4;
  const auto sw = sandwich_bounds(margins.p_min, z.num_classes(), z.num_samples());
  c.sandwich_lower = sw.lower;
  c.sandwich_upper = sw.upper;
  return c;
}

struct UfmConfig {
  double learning_rate = 0.1;
  int steps = 50000;
  double weight_decay = 0.0;
  bool freeze_classifier = false;
  int checkpoint_every = 100;
  std::uint64_t seed = 0;
  double init_scale = 1e-3;

  void validate() const {
    require(learning_rate > 0.0, "UfmConfig: learning_rate must be positive");
    require(steps >= 1, "UfmConfig: steps must be >= 1");
    require(weight_decay >= 0.0, "UfmConfig: weight_decay must be non-negative");
    require(checkpoint_every >= 1, "UfmConfig: checkpoint_every must be >= 1");
    require(init_scale > 0.0, "UfmConfig: init_scale must be positive");
  }
};

struct UfmInit {
  Matrix M;
  FeatureBatch Z;
};

/// Balanced i.i.d. Gaussian initialization scaled by `init_scale`.
inline UfmInit random_ufm_init(int d, int C, int per_class, double init_scale, std::uint64_t seed) {
  require(d >= 1 && C >= 2 && per_class >= 1, "random_ufm_init: invalid shape");
  Rng m_rng(seed, {0x4d, 0});
  Rng z_rng(seed, {0x5a, 0});
  UfmInit init;
  init.M = m_rng.gaussian(d, C, init_scale);
  init.Z = FeatureBatch::make(z_rng.gaussian(d, static_cast<Eigen::Index>(C) * per_class, init_scale),
                              FeatureBatch::grouped_labels(C, per_class), C);
  return init;
}

struct UfmResult {
  Matrix final_M;
  FeatureBatch final_Z;
  TrainTrace trace;
  /// Set when an update produced non-finite values; the trace ends at the
  /// last finite checkpoint.
  bool diverged = false;
  int diverged_at_step = 0;
};

inline UfmResult train_ufm(const FeatureBatch& Z0, const Matrix& M0, const UfmConfig& cfg) {
  cfg.validate();
  require(M0.rows() == Z0.dim() && M0.cols() == Z0.num_classes(), "train_ufm: shape mismatch");
  Z0.require_all_classes_present("train_ufm");
  if (cfg.freeze_classifier) check_etf_invariants(M0, "train_ufm (frozen classifier)");

  UfmResult out;
  out.final_M = M0;
  out.final_Z = Z0;
  Matrix& M = out.final_M;
  Matrix& Z = out.final_Z.features;
  const auto& labels = Z0.labels;

  for (int step = 1; step <= cfg.steps; ++step) {
    Matrix residual = softmax_columns(M.transpose() * Z);
    for (std::size_t i = 0; i < labels.size(); ++i) residual(labels[i], static_cast<Eigen::Index>(i)) -= 1.0;
    Matrix grad_Z = M * residual;
    if (!cfg.freeze_classifier) {
      Matrix grad_M = Z * residual.transpose();
      if (cfg.weight_decay > 0.0) grad_M += cfg.weight_decay * M;
      M -= cfg.learning_rate * grad_M;
    }
    if (cfg.weight_decay > 0.0) grad_Z += cfg.weight_decay * Z;
    Z -= cfg.learning_rate * grad_Z;

    if (!M.allFinite() || !Z.allFinite()) {
      out.diverged = true;
      out.diverged_at_step = step;
      return out;
    }
    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      auto c = make_checkpoint(step, M, out.final_Z);
      if (!std::isfinite(c.ce_loss)) {
        out.diverged = true;
        out.diverged_at_step = step;
        return out;
      }
      out.trace.checkpoints.push_back(c);
    }
  }
  return out;
}

}  // namespace ncgen
