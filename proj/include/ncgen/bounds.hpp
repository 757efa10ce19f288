// Generalization-bound evaluators with itemized terms, greedy covering-number
// estimates, Rademacher surrogates and Monte-Carlo checks of the supporting
// concentration lemmas.
#pragma once

#include "margin.hpp"

#include <map>

namespace ncgen {

enum class BoundKind { MarginBound, CoveringBound, HoeffdingBound };

inline const char* to_string(BoundKind k) {
  switch (k) {
    case BoundKind::MarginBound: return "MarginBound";
    case BoundKind::CoveringBound: return "CoveringBound";
    case BoundKind::HoeffdingBound: return "HoeffdingBound";
  }
  return "MarginBound";
}

/// A bound value together with every term that produced it. MarginBound values
/// bound the test error; the other two bound accuracy from below and may be
/// non-positive (vacuous), which is reported as is.
struct BoundReport {
  BoundKind theorem = BoundKind::MarginBound;
  std::map<std::string, double> terms;
  double value = 0.0;

  bool operator==(const BoundReport&) const = default;
};

inline std::string class_key(const char* prefix, int y) { return prefix + std::to_string(y); }

/// Recomputes a report's value from its terms alone.
inline double recombine(const BoundReport& r) {
  const auto& t = r.terms;
  switch (r.theorem) {
    case BoundKind::MarginBound:
      return t.at("A") + t.at("B") + t.at("L01") + t.at("prob_term");
    case BoundKind::CoveringBound: {
      const auto C = static_cast<int>(t.at("C"));
      double covers = 0.0;
      for (int y = 0; y < C; ++y) covers += t.at(class_key("cover_", y));
      return 1.0 - covers / (2.0 * t.at("N"));
    }
    case BoundKind::HoeffdingBound: {
      const auto C = static_cast<int>(t.at("C"));
      double sum = 0.0;
      for (int y = 0; y < C; ++y) sum += t.at(class_key("H1_", y)) + t.at(class_key("H2_", y));
      return 1.0 - 2.0 * t.at("d") / t.at("C") * sum;
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Multiclass margin bound

struct MarginBoundInputs {
  Matrix gammas;           // C x C, off-diagonal used
  Vector class_priors;     // p(y)
  IntVector class_sizes;   // N_y
  double rademacher = 0.0; // one value for every R_{N_y}(F)
  double K = 1.0;          // uniform bound on |margin function|
  double delta = 0.05;
  double l01 = 0.0;
};

inline BoundReport margin_bound(const MarginBoundInputs& in) {
  const auto C = static_cast<int>(in.gammas.rows());
  require(C >= 2 && in.gammas.cols() == C, "margin_bound: gammas must be C x C with C >= 2");
  require(in.class_priors.size() == C && static_cast<int>(in.class_sizes.size()) == C,
          "margin_bound: priors and class sizes must have length C");
  require(std::abs(in.class_priors.sum() - 1.0) <= 1e-9 && (in.class_priors.array() >= 0.0).all(),
          "margin_bound: class priors must lie on the simplex");
  require(in.rademacher >= 0.0, "margin_bound: rademacher must be non-negative");
  require(in.K > 0.0, "margin_bound: K must be positive");
  require(in.delta > 0.0 && in.delta < 1.0, "margin_bound: delta must lie in (0, 1)");
  for (int n : in.class_sizes) require(n >= 1, "margin_bound: class sizes must be >= 1");

  const double cc = static_cast<double>(C) * (C - 1);
  const double log_pairs = std::log(cc / in.delta);
  double a = 0.0, b = 0.0, prob = 0.0;
  for (int y = 0; y < C; ++y) {
    const double n_y = in.class_sizes[static_cast<std::size_t>(y)];
    const double p = in.class_priors[y];
    for (int k = 0; k < C; ++k) {
      if (k == y) continue;
      const double g = in.gammas(y, k);
      const std::string pair = "(" + std::to_string(y) + ", " + std::to_string(k) + ")";
      require(g > 0.0, "margin_bound: gamma" + pair + " must be positive");
      require(g < 4.0 * in.K, "margin_bound: gamma" + pair + " >= 4K leaves log log2(4K/gamma) undefined");
      // log log2(4K/g) is negative for 2K < g < 4K; that regime contributes zero.
      const double loglog = std::max(0.0, std::log(std::log2(4.0 * in.K / g)));
      a += p * in.rademacher / g;
      b += p * std::sqrt(loglog / n_y);
      prob += p * std::sqrt(log_pairs / (2.0 * n_y));
    }
  }
  BoundReport r;
  r.theorem = BoundKind::MarginBound;
  r.terms = {{"A", a}, {"B", b}, {"L01", in.l01}, {"prob_term", prob}};
  r.value = recombine(r);
  return r;
}

/// B * sqrt(sum_i ||z_i||^2) / N: closed-form upper bound on the empirical
/// Rademacher complexity of { z -> <v, z> : ||v|| <= B }.
inline double analytic_rademacher_linear(const Matrix& features, double B) {
  require(B > 0.0, "analytic_rademacher_linear: B must be positive");
  if (features.cols() == 0) return 0.0;
  return B * std::sqrt(features.squaredNorm()) / static_cast<double>(features.cols());
}

/// Monte-Carlo mean over sign vectors of sup_{||v|| <= B} (1/N) sum_i s_i <v, z_i>
/// = B ||sum_i s_i z_i|| / N.
inline double empirical_rademacher(const Matrix& features, double B, int trials, std::uint64_t seed) {
  require(B > 0.0, "empirical_rademacher: B must be positive");
  require(trials >= 1, "empirical_rademacher: trials must be >= 1");
  const auto N = features.cols();
  if (N == 0) return 0.0;
  Rng rng(seed, {0x72616465ULL});
  double acc = 0.0;
  Vector s(N);
  for (int t = 0; t < trials; ++t) {
    for (Eigen::Index i = 0; i < N; ++i) s[i] = rng.sign();
    acc += B * (features * s).norm() / static_cast<double>(N);
  }
  return acc / trials;
}

// ---------------------------------------------------------------------------
// Covering numbers

struct CoverResult {
  int count = 0;
  std::vector<Eigen::Index> centers;
};

/// Greedy epsilon-net in input order with open balls: a point becomes a center
/// iff it is at distance >= epsilon from every earlier center. The count upper
/// bounds the covering number of the point set.
inline CoverResult greedy_cover(const Matrix& points, double epsilon) {
  require(points.cols() >= 1, "greedy_cover: need at least one point");
  require(epsilon > 0.0, "greedy_cover: epsilon must be positive");
  CoverResult r;
  const double eps2 = epsilon * epsilon;
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    bool covered = false;
    for (auto c : r.centers) {
      if ((points.col(i) - points.col(c)).squaredNorm() < eps2) {
        covered = true;
        break;
      }
    }
    if (!covered) r.centers.push_back(i);
  }
  r.count = static_cast<int>(r.centers.size());
  return r;
}

/// Per-class cover radius min_{y' != y} gamma(y, y') / (L ||M_y - M_y'||).
inline Vector covering_radii(const MarginReport& report, double lipschitz) {
  require(lipschitz > 0.0, "covering_radii: Lipschitz constant must be positive");
  const int C = report.num_classes();
  Vector radii(C);
  for (int y = 0; y < C; ++y) radii[y] = report.min_normalized(y) / lipschitz;
  return radii;
}

/// Accuracy lower bound 1 - (1/2N) sum_y covers[y], covers[y] being the
/// covering number of class y's support at its covering radius.
inline BoundReport covering_bound(const MarginReport& report, const IntVector& covers, int N, int C,
                                  double lipschitz) {
  require(C >= 2 && report.num_classes() == C, "covering_bound: class count mismatch");
  require(static_cast<int>(covers.size()) == C, "covering_bound: need one cover count per class");
  require(N >= 1, "covering_bound: N must be >= 1");
  const Vector radii = covering_radii(report, lipschitz);
  BoundReport r;
  r.theorem = BoundKind::CoveringBound;
  for (int y = 0; y < C; ++y) {
    require(radii[y] > 0.0, "covering_bound: class " + std::to_string(y) + " has non-positive radius");
    require(covers[static_cast<std::size_t>(y)] >= 0, "covering_bound: cover counts must be non-negative");
    r.terms[class_key("cover_", y)] = covers[static_cast<std::size_t>(y)];
    r.terms[class_key("radius_", y)] = radii[y];
  }
  r.terms["N"] = N;
  r.terms["C"] = C;
  r.value = recombine(r);
  return r;
}

// ---------------------------------------------------------------------------
// Hoeffding-based accuracy bound

/// H(alpha, d, rho, n) = exp(-n alpha^2 / (8 d^2 rho^2)).
inline double hoeffding_kernel(double alpha, int d, double rho, double n) {
  const double dd = static_cast<double>(d);
  return std::exp(-n * alpha * alpha / (8.0 * dd * dd * rho * rho));
}

struct HoeffdingBoundInputs {
  int d = 1;
  int C = 2;
  int N = 2;
  Vector rho;                 // max feature norm per class
  Vector normalized_margins;  // min_{y' != y} gamma(y, y') / ||M_y - M_y'||
};

inline BoundReport hoeffding_bound(const HoeffdingBoundInputs& in) {
  require(in.d >= 1 && in.C >= 2 && in.N >= in.C, "hoeffding_bound: invalid d, C or N");
  require(in.N % in.C == 0, "hoeffding_bound: N must be divisible by C (balanced data)");
  require(in.rho.size() == in.C && in.normalized_margins.size() == in.C,
          "hoeffding_bound: rho and margins must have length C");
  require((in.rho.array() > 0.0).all(), "hoeffding_bound: rho must be positive");
  const double n = static_cast<double>(in.N / in.C);
  const double root_n = std::sqrt(n);
  BoundReport r;
  r.theorem = BoundKind::HoeffdingBound;
  for (int y = 0; y < in.C; ++y) {
    r.terms[class_key("H1_", y)] = hoeffding_kernel(1.0, in.d, in.rho[y], n);
    r.terms[class_key("H2_", y)] = hoeffding_kernel(in.normalized_margins[y] - root_n, in.d, in.rho[y], n);
  }
  r.terms["d"] = in.d;
  r.terms["C"] = in.C;
  r.value = recombine(r);
  return r;
}

// ---------------------------------------------------------------------------
// Monte-Carlo lemma checks

struct LemmaCheck {
  double violation_rate = 0.0;
  double bound = 0.0;
  bool passed = false;
};

/// Estimates P(||x - nearest reference|| > epsilon) with N reference draws and
/// `trials` query draws from `sampler`, against the bound cover_count / (2N).
/// `sampler` is invoked as sampler(Rng&) -> Vector.
template <typename Sampler>
LemmaCheck check_nearest_sample_lemma(Sampler&& sampler, int N, double epsilon, int cover_count,
                                      int trials, std::uint64_t seed, double bound_scale = 1.0) {
  require(trials >= 1, "check_nearest_sample_lemma: trials must be >= 1");
  require(cover_count >= 1, "check_nearest_sample_lemma: cover_count must be >= 1");
  require(N >= cover_count, "check_nearest_sample_lemma: need N >= cover_count");
  Rng ref_rng(seed, {0x726566ULL});
  Rng query_rng(seed, {0x717279ULL});
  const Vector first = sampler(ref_rng);
  Matrix refs(first.size(), N);
  refs.col(0) = first;
  for (int i = 1; i < N; ++i) refs.col(i) = sampler(ref_rng);

  const double eps2 = epsilon * epsilon;
  int violations = 0;
  for (int t = 0; t < trials; ++t) {
    const Vector q = sampler(query_rng);
    if ((refs.colwise() - q).colwise().squaredNorm().minCoeff() > eps2) ++violations;
  }
  LemmaCheck r;
  r.violation_rate = static_cast<double>(violations) / trials;
  r.bound = bound_scale * static_cast<double>(cover_count) / (2.0 * N);
  r.passed = r.violation_rate <= r.bound;
  return r;
}

/// 2D exp(-n eps^2 / (2 D^2 rho^2)).
inline double highdim_hoeffding_bound(int D, double rho, int n, double epsilon) {
  const double dd = static_cast<double>(D);
  return 2.0 * dd * std::exp(-n * epsilon * epsilon / (2.0 * dd * dd * rho * rho));
}

/// Fraction of `trials` n-sample means of vectors uniform on the radius-rho
/// ball in R^D that land at distance >= epsilon from the true mean (zero).
inline LemmaCheck check_highdim_hoeffding(int D, double rho, int n, double epsilon, int trials,
                                          std::uint64_t seed, double bound_scale = 1.0) {
  require(D >= 1 && n >= 1, "check_highdim_hoeffding: D and n must be >= 1");
  require(rho > 0.0, "check_highdim_hoeffding: rho must be positive");
  require(epsilon >= 0.0, "check_highdim_hoeffding: epsilon must be non-negative");
  require(trials >= 1, "check_highdim_hoeffding: trials must be >= 1");
  Rng rng(seed, {0x686f6566ULL, static_cast<std::uint64_t>(D), static_cast<std::uint64_t>(n)});
  int violations = 0;
  Vector mean(D);
  for (int t = 0; t < trials; ++t) {
    mean.setZero();
    for (int i = 0; i < n; ++i) mean += rng.in_ball(D, rho);
    mean /= static_cast<double>(n);
    if (mean.norm() >= epsilon) ++violations;
  }
  LemmaCheck r;
  r.violation_rate = static_cast<double>(violations) / trials;
  r.bound = bound_scale * highdim_hoeffding_bound(D, rho, n, epsilon);
  r.passed = r.violation_rate <= r.bound;
  return r;
}

}  // namespace ncgen
