#include "satlab/mixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "satlab/error.hpp"
#include "satlab/rng.hpp"

namespace satlab {
namespace {

bool same_coords(const Vec& a, const Vec& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

Vec point2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

LabeledPoint lp(double a, double b, int y, double mass) { return {point2(a, b), y, mass}; }

std::size_t draw_index(SplitMix64& rng, std::span<const double> cumulative) {
  const double u = rng.uniform() * cumulative.back();
  for (std::size_t i = 0; i < cumulative.size(); ++i)
    if (u < cumulative[i]) return i;
  return cumulative.size() - 1;
}

std::vector<double> cumulative_masses(const DiscreteDistribution& d) {
  std::vector<double> c(d.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) c[i] = (acc += d[i].mass);
  return c;
}

}  // namespace

DiscreteDistribution::DiscreteDistribution(std::size_t dim, std::vector<LabeledPoint> points)
    : dim_(dim), points_(std::move(points)) {
  if (dim_ == 0) throw Error(ErrorKind::InvalidArgument, "distribution dim must be positive");
  if (points_.empty()) throw Error(ErrorKind::InvalidArgument, "distribution has no points");
  double total = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& p = points_[i];
    if (static_cast<std::size_t>(p.x.size()) != dim_)
      throw Error(ErrorKind::DimMismatch, "point " + std::to_string(i) + " has dimension " +
                                              std::to_string(p.x.size()) + ", expected " +
                                              std::to_string(dim_));
    if (p.y != 1 && p.y != -1)
      throw Error(ErrorKind::InvalidArgument, "label must be +1 or -1");
    if (!(p.mass > 0.0) || p.mass > 1.0 + kMassTol)
      throw Error(ErrorKind::InvalidArgument, "point mass must lie in (0, 1]");
    if (!p.x.allFinite()) throw Error(ErrorKind::NonFinite, "non-finite feature coordinate");
    for (std::size_t j = 0; j < i; ++j)
      if (same_coords(points_[j].x, p.x))
        throw Error(ErrorKind::InvalidArgument, "duplicate support coordinates; merge them first");
    total += p.mass;
  }
  if (std::abs(total - 1.0) > kMassTol)
    throw Error(ErrorKind::InvalidArgument,
                "masses sum to " + std::to_string(total) + ", expected 1");
}

std::size_t DiscreteDistribution::find(const Vec& x) const {
  for (std::size_t i = 0; i < points_.size(); ++i)
    if (same_coords(points_[i].x, x)) return i;
  return points_.size();
}

double DiscreteDistribution::mass_at(const Vec& x) const {
  const auto i = find(x);
  return i < points_.size() ? points_[i].mass : 0.0;
}

MixtureSpec::MixtureSpec(std::vector<DiscreteDistribution> components, std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  if (components_.empty()) throw Error(ErrorKind::InvalidArgument, "mixture has no components");
  if (components_.size() != weights_.size())
    throw Error(ErrorKind::LengthMismatch, "one weight per component required");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0)) throw Error(ErrorKind::InvalidArgument, "mixture weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > kMassTol)
    throw Error(ErrorKind::InvalidArgument, "mixture weights must sum to 1");
  for (const auto& c : components_)
    if (c.dim() != components_.front().dim())
      throw Error(ErrorKind::DimMismatch, "mixture components disagree on dimension");
}

bool Dataset::operator==(const Dataset& other) const {
  if (seed != other.seed || examples.size() != other.examples.size()) return false;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& a = examples[i];
    const auto& b = other.examples[i];
    if (a.y != b.y || a.component_id != b.component_id || !same_coords(a.x, b.x)) return false;
  }
  return true;
}

std::vector<DiscreteDistribution> counterexample_components() {
  std::vector<DiscreteDistribution> out;
  out.emplace_back(2, std::vector{lp(+1, 0, +1, 0.5), lp(0, +1, -1, 0.25), lp(0, -1, -1, 0.25)});
  out.emplace_back(2, std::vector{lp(-1, 0, +1, 0.5), lp(0, +1, -1, 0.25), lp(0, -1, -1, 0.25)});
  out.emplace_back(2, std::vector{lp(0, +1, -1, 0.5), lp(+1, 0, +1, 0.25), lp(-1, 0, +1, 0.25)});
  out.emplace_back(2, std::vector{lp(0, -1, -1, 0.5), lp(+1, 0, +1, 0.25), lp(-1, 0, +1, 0.25)});
  return out;
}

std::vector<double> canonical_weights() { return {0.5, 0.2, 0.2, 0.1}; }

DiscreteDistribution mix(const MixtureSpec& spec) {
  std::vector<LabeledPoint> merged;
  for (std::size_t j = 0; j < spec.size(); ++j) {
    const double w = spec.weights()[j];
    for (const auto& p : spec.components()[j].points()) {
      auto it = std::find_if(merged.begin(), merged.end(),
                             [&](const LabeledPoint& q) { return same_coords(q.x, p.x); });
      if (it == merged.end()) {
        merged.push_back({p.x, p.y, w * p.mass});
      } else {
        if (it->y != p.y)
          throw Error(ErrorKind::LabelConflict,
                      "component " + std::to_string(j) + " relabels a shared support point");
        it->mass += w * p.mass;
      }
    }
  }
  return DiscreteDistribution(spec.dim(), std::move(merged));
}

std::vector<DiscreteDistribution> gen_counterexample_family(std::size_t K) {
  if (K < 2 || K % 2 != 0)
    throw Error(ErrorKind::InvalidK, "K must be even and at least 2, got " + std::to_string(K));
  const auto base = counterexample_components();
  std::vector<DiscreteDistribution> out;
  out.reserve(2 * K);
  for (std::size_t pair = 0; pair < K / 2; ++pair) {
    for (const auto& c : base) {
      std::vector<LabeledPoint> pts;
      for (const auto& p : c.points()) {
        Vec x = Vec::Zero(static_cast<Eigen::Index>(K));
        x(2 * pair) = p.x(0);
        x(2 * pair + 1) = p.x(1);
        pts.push_back({std::move(x), p.y, p.mass});
      }
      out.emplace_back(K, std::move(pts));
    }
  }
  return out;
}

std::vector<double> family_weights(std::size_t K, std::span<const double> within) {
  if (K < 2 || K % 2 != 0) throw Error(ErrorKind::InvalidK, "K must be even and at least 2");
  if (within.size() != 4) throw Error(ErrorKind::LengthMismatch, "need four within-pair weights");
  const double pair_share = 1.0 / static_cast<double>(K / 2);
  std::vector<double> w;
  for (std::size_t pair = 0; pair < K / 2; ++pair)
    for (double v : within) w.push_back(pair_share * v);
  return w;
}

Dataset sample(const DiscreteDistribution& dist, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "sample size must be positive");
  SplitMix64 rng(seed);
  const auto cum = cumulative_masses(dist);
  Dataset out{{}, seed};
  out.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = dist[draw_index(rng, cum)];
    out.examples.push_back({p.x, p.y, 0});
  }
  return out;
}

Dataset sample(const MixtureSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "sample size must be positive");
  SplitMix64 rng(seed);
  std::vector<double> wcum(spec.size());
  std::partial_sum(spec.weights().begin(), spec.weights().end(), wcum.begin());
  std::vector<std::vector<double>> pcum;
  for (const auto& c : spec.components()) pcum.push_back(cumulative_masses(c));
  Dataset out{{}, seed};
  out.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = draw_index(rng, wcum);
    const auto& p = spec.components()[j][draw_index(rng, pcum[j])];
    out.examples.push_back({p.x, p.y, j});
  }
  return out;
}

}  // namespace satlab
