#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace satlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Absolute tolerance for mass sums on exact constructions.
inline constexpr double kMassTol = 1e-12;

struct LabeledPoint {
  Vec x;
  int y = 1;  // +1 or -1
  double mass = 0.0;
};

/// Finite labeled distribution with exact point masses. Feature coordinates are
/// unique across the support; the constructor validates every invariant.
class DiscreteDistribution {
 public:
  DiscreteDistribution(std::size_t dim, std::vector<LabeledPoint> points);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<LabeledPoint>& points() const noexcept { return points_; }
  const LabeledPoint& operator[](std::size_t i) const { return points_[i]; }

  /// Index of the support point with exactly these coordinates, or size().
  std::size_t find(const Vec& x) const;
  /// Mass at exactly these coordinates (0 when absent).
  double mass_at(const Vec& x) const;

 private:
  std::size_t dim_;
  std::vector<LabeledPoint> points_;
};

/// Components plus strictly positive weights summing to one.
class MixtureSpec {
 public:
  MixtureSpec(std::vector<DiscreteDistribution> components, std::vector<double> weights);

  std::size_t dim() const noexcept { return components_.front().dim(); }
  std::size_t size() const noexcept { return components_.size(); }
  const std::vector<DiscreteDistribution>& components() const noexcept { return components_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

 private:
  std::vector<DiscreteDistribution> components_;
  std::vector<double> weights_;
};

struct Example {
  Vec x;
  int y = 1;
  std::size_t component_id = 0;  // 0-based
};

struct Dataset {
  std::vector<Example> examples;
  std::uint64_t seed = 0;

  bool operator==(const Dataset& other) const;
};

/// The four three-point subdistributions on the plane: positives live on the
/// first axis, negatives on the second; each has one heavy point of mass 1/2.
std::vector<DiscreteDistribution> counterexample_components();

/// Canonical skewed weights (0.5, 0.2, 0.2, 0.1); unique least-weighted point.
std::vector<double> canonical_weights();

/// Pointwise lambda-weighted sum. Merged support ordered by first appearance
/// scanning components in order. Throws LabelConflict / DimMismatch.
DiscreteDistribution mix(const MixtureSpec& spec);

/// K/2 copies of the counterexample, copy m embedded in coordinates (2m, 2m+1).
/// Returns 2K components ordered pair-major. Throws InvalidK.
std::vector<DiscreteDistribution> gen_counterexample_family(std::size_t K);

/// Weights for the family: each pair gets 1/(K/2) of the mass, split inside the
/// pair by `within` (four weights summing to one).
std::vector<double> family_weights(std::size_t K, std::span<const double> within);

/// n i.i.d. draws by inversion on the cumulative masses, driven by SplitMix64.
Dataset sample(const DiscreteDistribution& dist, std::size_t n, std::uint64_t seed);
/// Draws a component by lambda, then a point inside it.
Dataset sample(const MixtureSpec& spec, std::size_t n, std::uint64_t seed);

}  // namespace satlab
