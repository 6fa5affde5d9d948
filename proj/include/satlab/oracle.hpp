#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "satlab/mixtures.hpp"
#include "satlab/models.hpp"

namespace satlab {

/// Largest support the brute-force oracle accepts.
inline constexpr std::size_t kOracleSupportLimit = 20;

/// A labeled mass in some feature space. Unlike DiscreteDistribution, two
/// samples may share coordinates (possibly with opposite labels).
struct WeightedSample {
  Vec x;
  int y = 1;
  double mass = 0.0;
};

struct OptimalClassifier {
  Vec weights;
  double bias = 0.0;
  double risk = 0.0;
  std::vector<std::size_t> ignored_points;  // ascending indices into the input
};

/// Sums the masses of samples with identical coordinates and label. Samples
/// with identical coordinates but opposite labels stay separate.
std::vector<WeightedSample> merge_coincident(std::vector<WeightedSample> samples);

/// Strict affine separation of `items[subset]`: returns (w, b) with
/// y_i (w . x_i + b) >= 1 on every listed item, or nullopt when none exists.
/// Decided exactly by a phase-one simplex on the margin constraints.
std::optional<std::pair<Vec, double>> strictly_separate(std::span<const WeightedSample> items,
                                                        std::span<const std::size_t> subset);

/// Minimum zero-one risk over affine classifiers (sign(0) = -1). Enumerates
/// ignored sets in increasing mass and returns the first whose complement is
/// strictly separable; equal-mass optima resolve to the lexicographically
/// smallest ignored set. Throws SupportTooLarge above kOracleSupportLimit.
OptimalClassifier optimal_affine_on(std::span<const WeightedSample> items);

OptimalClassifier optimal_affine_classifier(const DiscreteDistribution& dist);

/// Optimal risk using only the listed input coordinates.
/// Throws EmptyRestriction, DimMismatch (index out of range), SupportTooLarge.
double optimal_risk_in_span(const DiscreteDistribution& dist, std::span<const std::size_t> subset);

/// Single coordinates among `candidates` that reach the unrestricted optimum.
std::vector<std::size_t> sparse_optimal_features(const DiscreteDistribution& dist,
                                                 std::span<const std::size_t> candidates);

/// phi(x) = weights . x + offset
struct LinearFunctional {
  Vec weights;
  double offset = 0.0;

  double operator()(const Vec& x) const { return weights.dot(x) + offset; }
  static LinearFunctional coordinate(std::size_t j, std::size_t dim);
};

/// Cov_P(Y, phi(X)).
double covariance(const LinearFunctional& phi, const DiscreteDistribution& dist);

struct CovarianceReport {
  std::vector<double> component_covs;
  double mixture_cov = 0.0;
  double between_term = 0.0;  // sum_j lambda_j (mu_phi^j - mu_phi)(mu_Y^j - mu_Y)
  double weighted_sum = 0.0;  // sum_j lambda_j cov_j
  /// |mixture_cov - weighted_sum - between_term|; zero up to rounding.
  double total_covariance_gap = 0.0;
  /// |mixture_cov - weighted_sum|; nonzero exactly when between_term is.
  double weighted_sum_gap = 0.0;
};

CovarianceReport covariance_report(const LinearFunctional& phi, const MixtureSpec& mixture);

struct CancellationProbe {
  std::size_t trials = 0;
  std::size_t hits = 0;
  double hit_fraction = 0.0;
  std::optional<std::vector<double>> constructed_lambda;  // interior point on the hyperplane
  double constructed_sum = 0.0;
};

/// Uniform draw from the open probability simplex (normalized exponentials).
std::vector<double> sample_simplex(std::size_t k, std::uint64_t seed);

/// Fraction of uniform lambda draws with |sum lambda_j cov_j| < tol, plus an
/// interior lambda on the cancellation hyperplane when covariances of both
/// signs exist. Throws AllZeroCovs.
CancellationProbe cancellation_set_probe(std::span<const double> component_covs, std::size_t trials,
                                         std::uint64_t seed, double tol = 1e-9);

/// Per-latent R^2 of the best affine reconstruction from extractor features,
/// clamped to [0, 1]. Throws DegenerateVariance for a latent constant on the
/// evaluation support.
std::vector<double> feature_recovery_probe(const Extractor& extractor,
                                           std::span<const LinearFunctional> latents,
                                           const DiscreteDistribution& eval);
std::vector<double> feature_recovery_probe(const Extractor& extractor,
                                           std::span<const LinearFunctional> latents,
                                           const Dataset& eval);

}  // namespace satlab
