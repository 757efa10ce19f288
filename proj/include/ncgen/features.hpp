// Labelled last-layer features, one column per sample.
#pragma once

#include "core.hpp"

#include <algorithm>

namespace ncgen {

/// Features Z (d x N) with class labels in [0, C). Class indices are zero-based
/// throughout the library.
struct FeatureBatch {
  Matrix features;
  IntVector labels;
  IntVector class_counts;
  bool balanced = false;

  [[nodiscard]] int num_classes() const { return static_cast<int>(class_counts.size()); }
  [[nodiscard]] int num_samples() const { return static_cast<int>(labels.size()); }
  [[nodiscard]] int dim() const { return static_cast<int>(features.rows()); }

  static FeatureBatch make(Matrix features, IntVector labels, int num_classes) {
    require(num_classes >= 1, "FeatureBatch: need at least one class");
    require(features.cols() == static_cast<Eigen::Index>(labels.size()),
            "FeatureBatch: feature count does not match label count");
    FeatureBatch batch;
    batch.class_counts.assign(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) {
      require(y >= 0 && y < num_classes, "FeatureBatch: label " + std::to_string(y) +
                                             " outside [0, " + std::to_string(num_classes) + ")");
      ++batch.class_counts[static_cast<std::size_t>(y)];
    }
    batch.balanced = std::all_of(batch.class_counts.begin(), batch.class_counts.end(),
                                 [&](int n) { return n == batch.class_counts.front(); });
    batch.features = std::move(features);
    batch.labels = std::move(labels);
    return batch;
  }

  /// `per_class` samples of each class, grouped by class.
  static IntVector grouped_labels(int num_classes, int per_class) {
    IntVector labels;
    labels.reserve(static_cast<std::size_t>(num_classes * per_class));
    for (int y = 0; y < num_classes; ++y)
      for (int i = 0; i < per_class; ++i) labels.push_back(y);
    return labels;
  }

  void require_all_classes_present(const std::string& where) const {
    for (int y = 0; y < num_classes(); ++y)
      require(class_counts[static_cast<std::size_t>(y)] > 0,
              where + ": class " + std::to_string(y) + " is empty");
  }
};

/// Column-wise class means (d x C).
inline Matrix class_means(const FeatureBatch& z) {
  Matrix means = Matrix::Zero(z.dim(), z.num_classes());
  for (int i = 0; i < z.num_samples(); ++i) means.col(z.labels[static_cast<std::size_t>(i)]) += z.features.col(i);
  for (int y = 0; y < z.num_classes(); ++y) {
    const int n = z.class_counts[static_cast<std::size_t>(y)];
    if (n > 0) means.col(y) /= static_cast<double>(n);
  }
  return means;
}

}  // namespace ncgen
