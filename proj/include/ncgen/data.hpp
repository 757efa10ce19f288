// Seeded synthetic classification data with bounded class supports.
#pragma once

#include "core.hpp"
#include "etf.hpp"

#include <optional>

namespace ncgen {

enum class Family { TruncatedGaussianBlobs, ConcentricRings, AnisotropicBlobs };
enum class Split { Train, Test };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::TruncatedGaussianBlobs: return "truncated_gaussian_blobs";
    case Family::ConcentricRings: return "concentric_rings";
    case Family::AnisotropicBlobs: return "anisotropic_blobs";
  }
  return "truncated_gaussian_blobs";
}

inline Family family_from_string(const std::string& s) {
  if (s == "truncated_gaussian_blobs") return Family::TruncatedGaussianBlobs;
  if (s == "concentric_rings") return Family::ConcentricRings;
  if (s == "anisotropic_blobs") return Family::AnisotropicBlobs;
  throw InvalidArgument("unknown data family '" + s + "'");
}

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct SyntheticSpec {
  Family family = Family::TruncatedGaussianBlobs;
  int C = 2;
  int d_in = 2;
  int per_class = 100;
  /// Truncation radius of each class around its center (the class support).
  std::vector<double> support_radius;
  /// Pairwise similarity in [0, 1) for AnisotropicBlobs; center distance is
  /// center_distance * (1 - s).
  std::optional<Matrix> similarity_matrix;
  std::uint64_t seed = 0;

  /// Standard deviation along the major axis of each class.
  double class_std = 0.5;
  /// Distance between neighbouring class centers.
  double center_distance = 3.0;
  /// Ring radius step for ConcentricRings (class y sits on radius (y+1) * step).
  double ring_spacing = 1.0;
  /// Major/minor axis ratio for AnisotropicBlobs.
  double anisotropy = 4.0;
  /// Similarity of the class pair (0, 1) in the default AnisotropicBlobs layout.
  double tight_similarity = 0.5;

  void validate() const {
    require(C >= 1, "SyntheticSpec: C must be >= 1");
    require(d_in >= 1, "SyntheticSpec: d_in must be >= 1");
    require(per_class >= 1, "SyntheticSpec: per_class must be >= 1");
    require(static_cast<int>(support_radius.size()) == C, "SyntheticSpec: need one support radius per class");
    for (double r : support_radius) require(r > 0.0, "SyntheticSpec: support radii must be positive");
    require(class_std > 0.0, "SyntheticSpec: class_std must be positive");
    require(center_distance > 0.0 && ring_spacing > 0.0 && anisotropy >= 1.0,
            "SyntheticSpec: invalid geometry parameters");
    require(tight_similarity >= 0.0 && tight_similarity < 1.0, "SyntheticSpec: tight_similarity must lie in [0, 1)");
    if (similarity_matrix) {
      require(similarity_matrix->rows() == C && similarity_matrix->cols() == C,
              "SyntheticSpec: similarity_matrix must be C x C");
      require(((similarity_matrix->array() >= 0.0) && (similarity_matrix->array() < 1.0)).all(),
              "SyntheticSpec: similarities must lie in [0, 1)");
    }
  }
};

struct LabeledDataset {
  Matrix inputs;  // d_in x N
  IntVector labels;
  SyntheticSpec spec;
  Split split = Split::Train;

  [[nodiscard]] int num_samples() const { return static_cast<int>(labels.size()); }
};

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

namespace detail {

/// Classical multidimensional scaling of a distance matrix into `dim` columns.
inline Matrix embed_distances(const Matrix& dist, int dim) {
  const auto C = dist.rows();
  const Matrix sq = dist.array().square().matrix();
  const Matrix J = Matrix::Identity(C, C) - Matrix::Constant(C, C, 1.0 / static_cast<double>(C));
  const Matrix B = -0.5 * J * sq * J;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(B);
  Matrix centers = Matrix::Zero(dim, C);
  // Eigenvalues ascend; take the largest `dim` non-negative ones.
  for (int k = 0; k < dim && k < C; ++k) {
    const auto idx = C - 1 - k;
    const double lambda = std::max(0.0, eig.eigenvalues()[idx]);
    centers.row(k) = std::sqrt(lambda) * eig.eigenvectors().col(idx).transpose();
  }
  return centers;
}

}  // namespace detail

/// Class centers (d_in x C) implied by `spec`.
inline Matrix class_centers(const SyntheticSpec& spec) {
  const int C = spec.C;
  Matrix centers = Matrix::Zero(spec.d_in, C);
  if (spec.family == Family::ConcentricRings) return centers;
  if (spec.family == Family::AnisotropicBlobs && spec.similarity_matrix) {
    const Matrix dist = spec.center_distance * (Matrix::Ones(C, C) - *spec.similarity_matrix);
    Matrix d0 = dist;
    d0.diagonal().setZero();
    return detail::embed_distances(d0, spec.d_in);
  }
  const double pi = std::acos(-1.0);
  if (spec.d_in == 1 || C <= 1) {
    for (int y = 0; y < C; ++y) centers(0, y) = spec.center_distance * y;
  } else {
    // Regular C-gon with neighbouring centers center_distance apart.
    const double radius = C == 2 ? spec.center_distance / 2.0
                                 : spec.center_distance / (2.0 * std::sin(pi / C));
    for (int y = 0; y < C; ++y) {
      const double angle = 2.0 * pi * y / C;
      centers(0, y) = radius * std::cos(angle);
      centers(1, y) = radius * std::sin(angle);
    }
  }
  if (spec.family == Family::AnisotropicBlobs && C >= 2) {
    const Vector offset = centers.col(1) - centers.col(0);
    centers.col(1) = centers.col(0) + offset * (1.0 - spec.tight_similarity);
  }
  return centers;
}

/// Linear map applied to standard normal draws, shared by all classes. For
/// AnisotropicBlobs the major axis is perpendicular to the line joining the
/// centers of classes 0 and 1, so that pair shares a long interface.
inline Matrix class_shape(const SyntheticSpec& spec, const Matrix& centers) {
  if (spec.family != Family::AnisotropicBlobs || spec.d_in == 1 || spec.C < 2)
    return spec.class_std * Matrix::Identity(spec.d_in, spec.d_in);
  Vector axes = Vector::Constant(spec.d_in, spec.class_std / spec.anisotropy);
  axes[0] = spec.class_std;
  Vector major = Vector::Zero(spec.d_in);
  const Vector link = centers.col(1) - centers.col(0);
  if (link.head(2).norm() > 0.0) {
    major[0] = -link[1];
    major[1] = link[0];
  } else {
    major[0] = 1.0;
  }
  major.normalize();
  // Orthonormal basis whose first column is the major axis.
  Matrix basis = Matrix::Identity(spec.d_in, spec.d_in);
  basis.col(0) = major;
  Eigen::HouseholderQR<Matrix> qr(basis);
  Matrix q = qr.householderQ();
  if (q.col(0).dot(major) < 0.0) q.col(0) *= -1.0;
  return q * axes.asDiagonal();
}

inline constexpr int kMaxRejections = 1000;

inline LabeledDataset generate_split(const SyntheticSpec& spec, Split split) {
  const Matrix centers = class_centers(spec);
  const Matrix shape = class_shape(spec, centers);
  LabeledDataset ds;
  ds.spec = spec;
  ds.split = split;
  ds.inputs.resize(spec.d_in, static_cast<Eigen::Index>(spec.C) * spec.per_class);
  ds.labels.reserve(static_cast<std::size_t>(spec.C * spec.per_class));
  Eigen::Index col = 0;
  for (int y = 0; y < spec.C; ++y) {
    Rng rng(spec.seed, {0x64617461ULL, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(y)});
    const double radius = spec.support_radius[static_cast<std::size_t>(y)];
    const double ring = spec.ring_spacing * (y + 1);
    for (int i = 0; i < spec.per_class; ++i) {
      bool accepted = false;
      for (int attempt = 0; attempt < kMaxRejections && !accepted; ++attempt) {
        Vector x(spec.d_in);
        if (spec.family == Family::ConcentricRings) {
          Vector dir = rng.gaussian(spec.d_in, 1);
          while (dir.norm() == 0.0) dir = rng.gaussian(spec.d_in, 1);
          x = ring * dir.normalized() + rng.gaussian(spec.d_in, 1, spec.class_std);
        } else {
          x = centers.col(y) + shape * rng.gaussian(spec.d_in, 1);
        }
        if ((x - centers.col(y)).norm() <= radius) {
          ds.inputs.col(col++) = x;
          ds.labels.push_back(y);
          accepted = true;
        }
      }
      if (!accepted)
        throw InvalidArgument("generate: class " + std::to_string(y) + " rejected " +
                              std::to_string(kMaxRejections) +
                              " draws in a row; support radius too small for the class spread");
    }
  }
  return ds;
}

/// Train and test splits from the same distribution on disjoint substreams.
inline DatasetPair generate(const SyntheticSpec& spec) {
  spec.validate();
  return {generate_split(spec, Split::Train), generate_split(spec, Split::Test)};
}

/// Inputs of class y (d_in x N_y).
inline Matrix class_support_points(const LabeledDataset& ds, int y) {
  Eigen::Index n = 0;
  for (int label : ds.labels) n += label == y;
  require(n > 0, "class_support_points: class " + std::to_string(y) + " is empty");
  Matrix pts(ds.inputs.rows(), n);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    if (ds.labels[i] == y) pts.col(k++) = ds.inputs.col(static_cast<Eigen::Index>(i));
  return pts;
}

}  // namespace ncgen
