// Simplex equiangular tight frames: construction, equivalence transforms and
// structural deviation of arbitrary classifier matrices.
#pragma once

#include "core.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>

namespace ncgen {

/// Default relative tolerance for structural ETF checks.
inline constexpr double kEtfTolerance = 1e-9;

/// d x C classifier whose columns (one per class) form a simplex ETF of
/// column norm `alpha`.
struct SimplexEtf {
  Matrix matrix;
  double alpha = 1.0;
  int num_classes = 0;
  int dim = 0;
};

struct EtfDeviation {
  double norm_spread = 0.0;
  double angle_spread = 0.0;
  double max_cosine_error = 0.0;
};

/// Deviation of the columns of `m` from simplex-ETF geometry. All three fields
/// vanish for an exact ETF.
inline EtfDeviation etf_deviation(const Matrix& m) {
  const auto C = m.cols();
  require(C >= 2, "etf_deviation: need at least two columns");
  const Vector norms = m.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < C; ++j)
    require(norms[j] > 0.0, "etf_deviation: column " + std::to_string(j) + " is zero");

  EtfDeviation dev;
  dev.norm_spread = (norms.maxCoeff() - norms.minCoeff()) / norms.mean();
  const double target = -1.0 / static_cast<double>(C - 1);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Eigen::Index a = 0; a < C; ++a) {
    for (Eigen::Index b = a + 1; b < C; ++b) {
      const double cosine = m.col(a).dot(m.col(b)) / (norms[a] * norms[b]);
      lo = std::min(lo, cosine);
      hi = std::max(hi, cosine);
      dev.max_cosine_error = std::max(dev.max_cosine_error, std::abs(cosine - target));
    }
  }
  dev.angle_spread = hi - lo;
  return dev;
}

/// True when `m` satisfies every simplex-ETF invariant within `tol`:
/// equal column norms, equal pairwise cosines -1/(C-1), zero column sum.
inline bool is_simplex_etf(const Matrix& m, double tol = kEtfTolerance) {
  if (m.cols() < 2 || m.rows() < m.cols() || !m.allFinite()) return false;
  if ((m.colwise().norm().array() <= 0.0).any()) return false;
  const auto dev = etf_deviation(m);
  const double scale = m.colwise().norm().maxCoeff();
  return dev.norm_spread <= tol && dev.max_cosine_error <= tol &&
         m.rowwise().sum().cwiseAbs().maxCoeff() <= tol * std::max(1.0, scale);
}

inline void check_etf_invariants(const Matrix& m, const std::string& where) {
  if (!is_simplex_etf(m)) throw InvalidArgument(where + ": matrix is not a simplex ETF");
}

/// d x C matrix with orthonormal columns from the QR factorization of a seeded
/// Gaussian matrix. Columns are sign-normalized so the result is a function of
/// the seed alone.
inline Matrix random_orthonormal_columns(int d, int C, std::uint64_t seed) {
  Rng rng(seed, {0x6574665fULL});
  const Matrix g = rng.gaussian(d, C);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, C);
  const Matrix r = qr.matrixQR().topRows(C).triangularView<Eigen::Upper>();
  for (int j = 0; j < C; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

/// Haar-distributed d x d orthogonal matrix.
inline Matrix random_rotation(int d, std::uint64_t seed) {
  return random_orthonormal_columns(d, d, mix64(seed ^ 0x726f74ULL));
}

inline IntVector random_permutation(int C, std::uint64_t seed) {
  IntVector perm(static_cast<std::size_t>(C));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed, {0x7065726dULL});
  for (int i = C - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.engine()() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

/// alpha * R * sqrt(C/(C-1)) * (I - 11^T / C) for a given d x C basis R with
/// orthonormal columns.
inline SimplexEtf make_etf_from_basis(const Matrix& basis, double alpha) {
  const auto d = static_cast<int>(basis.rows());
  const auto C = static_cast<int>(basis.cols());
  require(C >= 2, "make_etf: need C >= 2");
  require(C <= d, "make_etf: simplex ETF needs C <= d (got C=" + std::to_string(C) +
                      ", d=" + std::to_string(d) + ")");
  require(alpha > 0.0 && std::isfinite(alpha), "make_etf: alpha must be positive");
  const Matrix gram_residual = basis.transpose() * basis - Matrix::Identity(C, C);
  require(gram_residual.cwiseAbs().maxCoeff() <= 1e-9,
          "make_etf: basis columns are not orthonormal");

  const double c = static_cast<double>(C);
  const Matrix centering = Matrix::Identity(C, C) - Matrix::Constant(C, C, 1.0 / c);
  SimplexEtf etf;
  etf.matrix = alpha * std::sqrt(c / (c - 1.0)) * basis * centering;
  etf.alpha = alpha;
  etf.num_classes = C;
  etf.dim = d;
  return etf;
}

inline SimplexEtf make_etf(int C, int d, double alpha, std::uint64_t rotation_seed) {
  require(C >= 2, "make_etf: need C >= 2");
  require(C <= d, "make_etf: simplex ETF needs C <= d (got C=" + std::to_string(C) +
                      ", d=" + std::to_string(d) + ")");
  require(alpha > 0.0 && std::isfinite(alpha), "make_etf: alpha must be positive");
  return make_etf_from_basis(random_orthonormal_columns(d, C, rotation_seed), alpha);
}

enum class TransformKind { Permutation, Rotation };

struct EtfTransform {
  TransformKind kind = TransformKind::Permutation;
  /// Column j of the result is column permutation[j] of the input.
  std::optional<IntVector> permutation;
  /// Left-multiplied onto the classifier.
  std::optional<Matrix> rotation;

  static EtfTransform permute(IntVector perm) {
    return {TransformKind::Permutation, std::move(perm), std::nullopt};
  }
  static EtfTransform rotate(Matrix r) {
    return {TransformKind::Rotation, std::nullopt, std::move(r)};
  }
  static EtfTransform identity(int C) {
    IntVector perm(static_cast<std::size_t>(C));
    std::iota(perm.begin(), perm.end(), 0);
    return permute(std::move(perm));
  }
};

inline bool is_bijection(const IntVector& perm) {
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= perm.size() || seen[static_cast<std::size_t>(p)])
      return false;
    seen[static_cast<std::size_t>(p)] = true;
  }
  return true;
}

inline IntVector invert_permutation(const IntVector& perm) {
  require(is_bijection(perm), "invert_permutation: not a bijection");
  IntVector inv(perm.size());
  for (std::size_t j = 0; j < perm.size(); ++j) inv[static_cast<std::size_t>(perm[j])] = static_cast<int>(j);
  return inv;
}

inline EtfTransform inverse(const EtfTransform& t) {
  if (t.kind == TransformKind::Permutation)
    return EtfTransform::permute(invert_permutation(t.permutation.value()));
  return EtfTransform::rotate(t.rotation.value().transpose());
}

/// Applies `t` to any d x C matrix (no ETF check on input or output).
inline Matrix transform_matrix(const Matrix& m, const EtfTransform& t) {
  if (t.kind == TransformKind::Permutation) {
    require(t.permutation.has_value(), "apply_transform: permutation missing");
    const auto& perm = *t.permutation;
    require(static_cast<Eigen::Index>(perm.size()) == m.cols(),
            "apply_transform: permutation length does not match C");
    require(is_bijection(perm), "apply_transform: permutation is not a bijection");
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.col(j) = m.col(perm[static_cast<std::size_t>(j)]);
    return out;
  }
  require(t.rotation.has_value(), "apply_transform: rotation missing");
  const auto& r = *t.rotation;
  require(r.rows() == m.rows() && r.cols() == m.rows(),
          "apply_transform: rotation must be d x d");
  const Matrix residual = r.transpose() * r - Matrix::Identity(r.rows(), r.cols());
  require(residual.cwiseAbs().maxCoeff() <= 1e-6, "apply_transform: rotation is not orthogonal");
  return r * m;
}

inline SimplexEtf apply_transform(const SimplexEtf& etf, const EtfTransform& t) {
  SimplexEtf out = etf;
  out.matrix = transform_matrix(etf.matrix, t);
  check_etf_invariants(out.matrix, "apply_transform");
  return out;
}

enum class Equivalence { PermutationEq, RotationEq, Both, Neither };

inline const char* to_string(Equivalence e) {
  switch (e) {
    case Equivalence::PermutationEq: return "permutation";
    case Equivalence::RotationEq: return "rotation";
    case Equivalence::Both: return "both";
    case Equivalence::Neither: return "neither";
  }
  return "neither";
}

/// Whether the column permutation that maps `b` onto `a` exists. Columns of an
/// ETF are mutually separated, so nearest-column matching recovers it.
inline std::optional<IntVector> match_columns(const Matrix& a, const Matrix& b, double tol) {
  const auto C = a.cols();
  const double scale = std::max(1.0, std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()));
  IntVector perm(static_cast<std::size_t>(C), -1);
  std::vector<bool> used(static_cast<std::size_t>(C), false);
  for (Eigen::Index j = 0; j < C; ++j) {
    Eigen::Index best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < C; ++k) {
      if (used[static_cast<std::size_t>(k)]) continue;
      const double dist = (a.col(j) - b.col(k)).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    perm[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  for (Eigen::Index j = 0; j < C; ++j)
    if ((a.col(j) - b.col(perm[static_cast<std::size_t>(j)])).cwiseAbs().maxCoeff() > tol * scale)
      return std::nullopt;
  return perm;
}

/// Classifies how `a` and `b` are related. Rotation equivalence is decided by
/// comparing Gram matrices, which is exact for full column rank.
inline Equivalence check_equivalence(const SimplexEtf& a, const SimplexEtf& b,
                                     double tol = kEtfTolerance) {
  require(a.matrix.rows() == b.matrix.rows() && a.matrix.cols() == b.matrix.cols(),
          "check_equivalence: shape mismatch");
  const bool perm_eq = match_columns(a.matrix, b.matrix, tol).has_value();
  const Matrix ga = a.matrix.transpose() * a.matrix;
  const Matrix gb = b.matrix.transpose() * b.matrix;
  const double scale = std::max(1.0, std::max(ga.cwiseAbs().maxCoeff(), gb.cwiseAbs().maxCoeff()));
  const bool rot_eq = (ga - gb).cwiseAbs().maxCoeff() <= tol * scale;
  if (perm_eq && rot_eq) return Equivalence::Both;
  if (perm_eq) return Equivalence::PermutationEq;
  if (rot_eq) return Equivalence::RotationEq;
  return Equivalence::Neither;
}

/// True when `e` includes the relation produced by a transform of `kind`.
inline bool includes(Equivalence e, TransformKind kind) {
  if (e == Equivalence::Both) return true;
  return kind == TransformKind::Permutation ? e == Equivalence::PermutationEq
                                            : e == Equivalence::RotationEq;
}

}  // namespace ncgen
