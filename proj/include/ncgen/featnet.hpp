// Fully-connected feature extractor trained against a frozen simplex-ETF
// classifier, with hand-derived backpropagation and Lipschitz estimates.
#pragma once

#include "data.hpp"
#include "etf.hpp"
#include "ufm.hpp"

#include <numeric>

namespace ncgen {

enum class Activation { ReLU, Tanh };

inline const char* to_string(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  throw InvalidArgument("unknown activation '" + s + "'");
}

/// Affine layers with `activation` between them; the last layer is affine
/// only, so features are unconstrained in sign. weights[l] is widths[l+1] x
/// widths[l].
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::ReLU;
  IntVector widths;

  [[nodiscard]] std::size_t num_layers() const { return weights.size(); }
  [[nodiscard]] int input_dim() const { return widths.front(); }
  [[nodiscard]] int output_dim() const { return widths.back(); }

  void validate() const {
    require(widths.size() >= 2, "MlpParams: need at least input and output widths");
    require(weights.size() + 1 == widths.size() && biases.size() == weights.size(),
            "MlpParams: layer count does not match widths");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      require(weights[l].rows() == widths[l + 1] && weights[l].cols() == widths[l],
              "MlpParams: weight " + std::to_string(l) + " has the wrong shape");
      require(biases[l].size() == widths[l + 1], "MlpParams: bias " + std::to_string(l) + " has the wrong size");
    }
  }

  bool operator==(const MlpParams& o) const {
    if (activation != o.activation || widths != o.widths || weights.size() != o.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    return true;
  }
};

/// Gaussian weights with standard deviation sqrt(2 / fan_in), zero biases.
inline MlpParams init_mlp(const IntVector& widths, Activation activation, std::uint64_t seed) {
  require(widths.size() >= 2, "init_mlp: need at least input and output widths");
  for (int w : widths) require(w >= 1, "init_mlp: widths must be positive");
  MlpParams p;
  p.widths = widths;
  p.activation = activation;
  Rng rng(seed, {0x696e6974ULL});
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    p.weights.push_back(rng.gaussian(widths[l + 1], widths[l], std::sqrt(2.0 / widths[l])));
    p.biases.push_back(Vector::Zero(widths[l + 1]));
  }
  return p;
}

namespace detail {

inline void activate(Matrix& a, Activation act) {
  if (act == Activation::ReLU)
    a = a.cwiseMax(0.0);
  else
    a = a.array().tanh().matrix();
}

/// d act / d pre, expressed through the activation output.
inline Matrix activation_slope(const Matrix& out, Activation act) {
  if (act == Activation::ReLU) return (out.array() > 0.0).cast<double>().matrix();
  return (1.0 - out.array().square()).matrix();
}

}  // namespace detail

/// Features for every column of `inputs` (d_in x B) -> d x B.
inline Matrix forward_batch(const MlpParams& p, const Matrix& inputs) {
  require(inputs.rows() == p.input_dim(), "forward: input dimension mismatch");
  Matrix h = inputs;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    Matrix a = p.weights[l] * h;
    a.colwise() += p.biases[l];
    if (l + 1 < p.num_layers()) detail::activate(a, p.activation);
    h = std::move(a);
  }
  return h;
}

inline Vector forward(const MlpParams& p, const Vector& x) {
  require(x.size() == p.input_dim(), "forward: input dimension mismatch");
  return forward_batch(p, x);
}

struct MlpGradient {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  double loss = 0.0;
};

/// Mean cross-entropy of softmax(M^T f(x)) over the columns of `inputs` and
/// its gradient with respect to every layer.
inline MlpGradient mlp_ce_grad(const MlpParams& p, const Matrix& M, const Matrix& inputs, const IntVector& labels) {
  const auto B = inputs.cols();
  require(static_cast<Eigen::Index>(labels.size()) == B && B > 0, "mlp_ce_grad: label count mismatch");
  require(M.rows() == p.output_dim(), "mlp_ce_grad: classifier does not match feature width");
  const auto L = p.num_layers();

  // outs[l] is the input to layer l; outs[L] the features.
  std::vector<Matrix> outs;
  outs.reserve(L + 1);
  outs.push_back(inputs);
  for (std::size_t l = 0; l < L; ++l) {
    Matrix a = p.weights[l] * outs.back();
    a.colwise() += p.biases[l];
    if (l + 1 < L) detail::activate(a, p.activation);
    outs.push_back(std::move(a));
  }

  const Matrix logits = M.transpose() * outs.back();
  MlpGradient g;
  g.loss = ce_from_logits(logits, labels) / static_cast<double>(B);
  Matrix residual = softmax_columns(logits);
  for (Eigen::Index i = 0; i < B; ++i) residual(labels[static_cast<std::size_t>(i)], i) -= 1.0;
  residual /= static_cast<double>(B);

  g.weights.resize(L);
  g.biases.resize(L);
  Matrix delta = M * residual;  // d loss / d (pre-activation of layer l)
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l] = delta * outs[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) delta = (p.weights[l].transpose() * delta).cwiseProduct(detail::activation_slope(outs[l], p.activation));
  }
  return g;
}

struct FitConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 400;
  int batch_size = 64;
  std::uint64_t seed = 0;
  double target_train_acc = 1.0;
  int max_extra_epochs = 200;
  /// Fractions of the post-TPT budget after which the learning rate is
  /// multiplied by lr_decay. The rate is constant until TPT is reached.
  std::vector<double> lr_milestones{0.6, 0.8};
  double lr_decay = 0.1;

  /// Learning rate for `epoch` given the first TPT epoch (0 if not reached).
  [[nodiscard]] double learning_rate_at(int epoch, int tpt_epoch) const {
    double lr = learning_rate;
    if (tpt_epoch <= 0) return lr;
    for (double f : lr_milestones)
      if (epoch > tpt_epoch + f * max_extra_epochs) lr *= lr_decay;
    return lr;
  }

  void validate() const {
    require(learning_rate >= 0.0, "FitConfig: learning_rate must be non-negative");
    require(momentum >= 0.0 && momentum < 1.0, "FitConfig: momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "FitConfig: weight_decay must be non-negative");
    require(epochs >= 1, "FitConfig: epochs must be >= 1");
    require(batch_size >= 1, "FitConfig: batch_size must be >= 1");
    require(target_train_acc > 0.0 && target_train_acc <= 1.0, "FitConfig: target_train_acc must lie in (0, 1]");
    require(max_extra_epochs >= 0, "FitConfig: max_extra_epochs must be >= 0");
    require(lr_decay > 0.0 && lr_decay <= 1.0, "FitConfig: lr_decay must lie in (0, 1]");
    for (double f : lr_milestones) require(f >= 0.0 && f <= 1.0, "FitConfig: lr milestones must lie in [0, 1]");
  }
};

/// Labelled features of `ds` under `p`.
inline FeatureBatch features_of(const MlpParams& p, const LabeledDataset& ds, int num_classes) {
  return FeatureBatch::make(forward_batch(p, ds.inputs), ds.labels, num_classes);
}

inline double accuracy(const Matrix& M, const FeatureBatch& z) {
  const Matrix logits = M.transpose() * z.features;
  int hits = 0;
  for (int i = 0; i < z.num_samples(); ++i) {
    Eigen::Index best = 0;
    logits.col(i).maxCoeff(&best);
    hits += static_cast<int>(best) == z.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / z.num_samples();
}

struct FitResult {
  MlpParams params;
  TrainTrace trace;  // one checkpoint per epoch
  bool reached_tpt = false;
  /// First epoch whose train accuracy reached the target (0 if never).
  int tpt_epoch = 0;
  bool diverged = false;

  /// Index into trace of the TPT checkpoint with the highest test accuracy
  /// (earliest on ties), if test data was supplied and TPT was reached.
  [[nodiscard]] std::optional<std::size_t> best_test_checkpoint() const {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < trace.checkpoints.size(); ++i) {
      const auto& c = trace.checkpoints[i];
      if (!c.test_acc || c.step < tpt_epoch) continue;
      if (!best || *c.test_acc > *trace.checkpoints[*best].test_acc) best = i;
    }
    return best;
  }
};

/// Mini-batch SGD with momentum on the mean cross-entropy of M^T f(x; w), M
/// frozen. Runs until train accuracy first reaches target_train_acc (within
/// `epochs`), then continues for max_extra_epochs. Test metrics are recorded
/// from the TPT epoch on when `test` is supplied.
inline FitResult fit(const MlpParams& p0, const SimplexEtf& etf, const LabeledDataset& train, const FitConfig& cfg,
                     const LabeledDataset* test = nullptr) {
  cfg.validate();
  p0.validate();
  const Matrix& M = etf.matrix;
  const int C = static_cast<int>(M.cols());
  require(M.rows() == p0.output_dim(), "fit: feature width does not match classifier dimension");
  require(train.inputs.rows() == p0.input_dim(), "fit: input dimension mismatch");
  for (int y : train.labels) require(y >= 0 && y < C, "fit: label outside [0, C)");

  FitResult out;
  out.params = p0;
  MlpParams& p = out.params;
  std::vector<Matrix> vel_w;
  std::vector<Vector> vel_b;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    vel_w.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
    vel_b.push_back(Vector::Zero(p.biases[l].size()));
  }

  const int N = train.num_samples();
  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  Rng batch_rng(cfg.seed, {0x6261746368ULL});
  Matrix batch_x;
  IntVector batch_y;

  int last_epoch = cfg.epochs;
  for (int epoch = 1; epoch <= last_epoch; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch, out.tpt_epoch);
    for (int i = N - 1; i > 0; --i) {
      const auto j = static_cast<int>(batch_rng.engine()() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (int start = 0; start < N; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, N - start);
      batch_x.resize(train.inputs.rows(), count);
      batch_y.resize(static_cast<std::size_t>(count));
      for (int k = 0; k < count; ++k) {
        const int idx = order[static_cast<std::size_t>(start + k)];
        batch_x.col(k) = train.inputs.col(idx);
        batch_y[static_cast<std::size_t>(k)] = train.labels[static_cast<std::size_t>(idx)];
      }
      auto g = mlp_ce_grad(p, M, batch_x, batch_y);
      for (std::size_t l = 0; l < p.num_layers(); ++l) {
        vel_w[l] = cfg.momentum * vel_w[l] + g.weights[l] + cfg.weight_decay * p.weights[l];
        vel_b[l] = cfg.momentum * vel_b[l] + g.biases[l] + cfg.weight_decay * p.biases[l];
        p.weights[l] -= lr * vel_w[l];
        p.biases[l] -= lr * vel_b[l];
      }
    }

    const auto z = features_of(p, train, C);
    if (!z.features.allFinite()) {
      out.diverged = true;
      return out;
    }
    Checkpoint c = make_checkpoint(epoch, M, z);
    if (!std::isfinite(c.ce_loss)) {
      out.diverged = true;
      return out;
    }
    c.train_acc = accuracy(M, z);
    c.margin_std = compute_margins(M, z).margin_std;
    if (!out.reached_tpt && *c.train_acc >= cfg.target_train_acc) {
      out.reached_tpt = true;
      out.tpt_epoch = epoch;
      last_epoch = epoch + cfg.max_extra_epochs;
    }
    if (test != nullptr && out.reached_tpt) {
      const auto zt = features_of(p, *test, C);
      c.test_acc = accuracy(M, zt);
      c.test_ce = ce_from_logits(M.transpose() * zt.features, zt.labels) / zt.num_samples();
    }
    out.trace.checkpoints.push_back(std::move(c));
  }
  return out;
}

/// Largest singular value by power iteration on W^T W.
inline double spectral_norm(const Matrix& w, int max_iters = 100, double tol = 1e-8) {
  if (w.size() == 0) return 0.0;
  Rng rng(0x73706563ULL);
  Vector v = rng.gaussian(w.cols(), 1);
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector u = w.transpose() * (w * v);
    const double n = u.norm();
    if (n == 0.0) return 0.0;
    v = u / n;
    const double next = std::sqrt(n);
    const bool done = std::abs(next - sigma) <= tol * std::max(1.0, next);
    sigma = next;
    if (done) break;
  }
  return (w * v).norm();
}

struct LipschitzEstimate {
  double upper = 0.0;
  double lower = 0.0;
};

/// upper: product of layer spectral norms (valid for 1-Lipschitz activations).
/// lower: max over distinct probe pairs of ||f(a) - f(b)|| / ||a - b||.
inline LipschitzEstimate lipschitz_estimate(const MlpParams& p, const Matrix& probe) {
  p.validate();
  LipschitzEstimate est;
  est.upper = 1.0;
  for (const auto& w : p.weights) est.upper *= spectral_norm(w);
  if (probe.cols() >= 2) {
    const Matrix feats = forward_batch(p, probe);
    for (Eigen::Index i = 0; i < probe.cols(); ++i) {
      for (Eigen::Index j = i + 1; j < probe.cols(); ++j) {
        const double dx = (probe.col(i) - probe.col(j)).norm();
        if (dx == 0.0) continue;
        est.lower = std::max(est.lower, (feats.col(i) - feats.col(j)).norm() / dx);
      }
    }
  }
  // Power iteration converges from below; keep the ordering exact.
  est.upper = std::max(est.upper, est.lower);
  return est;
}

}  // namespace ncgen
