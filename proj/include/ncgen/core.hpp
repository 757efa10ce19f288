// Shared numeric aliases, error types and seeded random streams.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncgen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = std::vector<int>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument or configuration was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A computation produced (or was handed) a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or parse failure.
class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericalError(what + ": non-finite input");
}

/// splitmix64 finalizer; used to derive independent substreams from a seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the substream identified by `ids` under `seed`. Distinct id paths
/// give statistically independent engines.
inline std::uint64_t substream_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> ids) {
  std::uint64_t s = mix64(seed);
  for (auto id : ids) s = mix64(s ^ mix64(id + 0x632be59bd9b4e019ULL));
  return s;
}

/// Deterministic random source. One engine per logical stream; never shared
/// across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> ids)
      : engine_(substream_seed(seed, ids)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// +1 or -1 with equal probability.
  double sign() { return (engine_() >> 63) ? 1.0 : -1.0; }

  Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * normal();
    return m;
  }

  /// Uniform point in the closed ball of the given radius in `dim` dimensions.
  Vector in_ball(Eigen::Index dim, double radius) {
    Vector v(dim);
    double n2 = 0.0;
    do {
      for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal();
      n2 = v.squaredNorm();
    } while (n2 == 0.0);
    const double r = radius * std::pow(uniform(), 1.0 / static_cast<double>(dim));
    return v * (r / std::sqrt(n2));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Numerically stable log(1 + a * exp(-p)) for a > 0 and any real p.
inline double log1p_scaled_exp(double a, double p) {
  const double t = std::log(a) - p;
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

}  // namespace ncgen
