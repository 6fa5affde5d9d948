#pragma once

#include <cmath>
#include <vector>

#include "satlab/mixtures.hpp"
#include "satlab/rng.hpp"

namespace testing {

inline satlab::Vec vec(std::initializer_list<double> xs) {
  satlab::Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

// Random distribution on a small integer grid with distinct points (at most 7^dim).
inline satlab::DiscreteDistribution random_distribution(std::size_t n, std::size_t dim, std::uint64_t seed) {
  satlab::SplitMix64 rng(seed);
  std::vector<satlab::LabeledPoint> pts;
  std::vector<double> w;
  while (pts.size() < n) {
    satlab::Vec x(static_cast<Eigen::Index>(dim));
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = std::floor(rng.uniform(-3.0, 4.0));
    bool dup = false;
    for (const auto& p : pts) dup = dup || (p.x.array() == x.array()).all();
    if (dup) continue;
    pts.push_back({x, rng.uniform() < 0.5 ? 1 : -1, 0.0});
    w.push_back(0.05 + rng.uniform());
  }
  double total = 0.0;
  for (double v : w) total += v;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pts[i].mass = i + 1 < n ? w[i] / total : 1.0 - acc;
    acc += pts[i].mass;
  }
  return satlab::DiscreteDistribution(dim, std::move(pts));
}

}  // namespace testing
