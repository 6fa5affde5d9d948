#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "satlab/error.hpp"
#include "satlab/oracle.hpp"
#include "satlab/training.hpp"

using namespace satlab;
using testing::vec;

namespace {

// Independent brute force for supports in the plane (or on the line): the
// projection order is constant between critical directions (normals to point
// differences), so testing one direction per open arc and every threshold gap
// covers all affine sign patterns.
double brute_risk_2d(const std::vector<Vec>& xs, const std::vector<int>& ys, const std::vector<double>& ms) {
  const std::size_t n = xs.size();
  std::vector<double> angles;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const Vec d = xs[i] - xs[j];
      if (d.norm() == 0.0) continue;
      const double a = std::atan2(d(0), -d(1));  // normal to d
      for (double s : {0.0, std::numbers::pi}) angles.push_back(std::fmod(a + s + 4 * std::numbers::pi, 2 * std::numbers::pi));
    }
  std::sort(angles.begin(), angles.end());
  std::vector<double> dirs;
  if (angles.empty()) dirs = {0.3, 0.3 + std::numbers::pi};
  for (std::size_t k = 0; k < angles.size(); ++k) {
    const double next = k + 1 < angles.size() ? angles[k + 1] : angles[0] + 2 * std::numbers::pi;
    if (next - angles[k] > 1e-12) dirs.push_back(0.5 * (angles[k] + next));
  }
  double best = 1.0;
  for (double t : dirs) {
    std::vector<std::pair<double, std::size_t>> proj;
    for (std::size_t i = 0; i < n; ++i) proj.emplace_back(std::cos(t) * xs[i](0) + std::sin(t) * xs[i](1), i);
    std::sort(proj.begin(), proj.end());
    // Threshold below everything: all positive.
    double risk = 0.0;
    for (std::size_t i = 0; i < n; ++i) risk += ys[i] < 0 ? ms[i] : 0.0;
    best = std::min(best, risk);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = proj[k].second;
      risk += ys[i] > 0 ? ms[i] : -ms[i];  // point i flips to negative
      const bool gap = k + 1 == n || proj[k + 1].first - proj[k].first > 1e-12;
      if (gap) best = std::min(best, risk);
    }
  }
  return best;
}

double brute_risk(const DiscreteDistribution& d, std::vector<Eigen::Index> coords) {
  std::vector<Vec> xs;
  std::vector<int> ys;
  std::vector<double> ms;
  for (const auto& p : d.points()) {
    Vec x = Vec::Zero(2);
    for (std::size_t c = 0; c < coords.size(); ++c) x(static_cast<Eigen::Index>(c)) = p.x(coords[c]);
    xs.push_back(x);
    ys.push_back(p.y);
    ms.push_back(p.mass);
  }
  return brute_risk_2d(xs, ys, ms);
}

double affine_risk(const OptimalClassifier& c, const DiscreteDistribution& d) {
  const ComposedModel m(DictionaryExtractor{Vec::Ones(static_cast<Eigen::Index>(d.dim()))}, LinearHead{c.weights, c.bias});
  return exact_zero_one_risk(m, d);
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("brute force agrees with hand-derived risks") {
  const auto c = counterexample_components();
  const auto merged = mix(MixtureSpec(c, canonical_weights()));
  CHECK(std::abs(brute_risk(merged, {0, 1}) - 0.175) < 1e-12);
  CHECK(brute_risk(c[2], {0}) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(brute_risk(c[2], {1}) == 0.0);
  CHECK(brute_risk(c[0], {0, 1}) == 0.0);
}

TEST_CASE("optimal classifier on the canonical mixture ignores the least-weighted point") {
  const auto merged = mix(MixtureSpec(counterexample_components(), canonical_weights()));
  const auto oc = optimal_affine_classifier(merged);
  CHECK(std::abs(oc.risk - 0.175) < 1e-12);
  REQUIRE(oc.ignored_points.size() == 1);
  CHECK((merged[oc.ignored_points[0]].x.array() == vec({-1, 0}).array()).all());
  CHECK(std::abs(affine_risk(oc, merged) - oc.risk) < 1e-12);
}

TEST_CASE("optimal classifier on a separable component") {
  const auto oc = optimal_affine_classifier(counterexample_components()[0]);
  CHECK(oc.risk == 0.0);
  CHECK(oc.ignored_points.empty());
  CHECK(affine_risk(oc, counterexample_components()[0]) == 0.0);
}

TEST_CASE("equal weights tie-break deterministically") {
  const MixtureSpec spec(counterexample_components(), {0.25, 0.25, 0.25, 0.25});
  const auto merged = mix(spec);
  for (const auto& p : merged.points()) CHECK(std::abs(p.mass - 0.25) < 1e-12);
  const auto a = optimal_affine_classifier(merged);
  const auto b = optimal_affine_classifier(merged);
  CHECK(std::abs(a.risk - 0.25) < 1e-12);
  CHECK(a.ignored_points == std::vector<std::size_t>{0});
  CHECK(a.ignored_points == b.ignored_points);
  CHECK((a.weights.array() == b.weights.array()).all());
  CHECK(a.bias == b.bias);
}

TEST_CASE("least-mass law on four-point mixtures") {
  const auto comps = counterexample_components();
  std::size_t tested = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto lam = sample_simplex(4, derive_seed(31, s));
    const auto merged = mix(MixtureSpec(comps, lam));
    std::vector<std::size_t> order(merged.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return merged[i].mass < merged[j].mass; });
    if (merged[order[1]].mass - merged[order[0]].mass < 1e-9) continue;
    ++tested;
    const auto oc = optimal_affine_classifier(merged);
    CHECK(oc.risk == merged[order[0]].mass);
    CHECK(oc.ignored_points == std::vector<std::size_t>{order[0]});
  }
  CHECK(tested > 190);
}

TEST_CASE("oracle matches the planar brute force on random supports") {
  for (std::uint64_t s = 0; s < 60; ++s) {
    CAPTURE(s);
    const auto d = testing::random_distribution(3 + s % 10, 2, derive_seed(5, s));
    const auto oc = optimal_affine_classifier(d);
    CHECK(std::abs(oc.risk - brute_risk(d, {0, 1})) < 1e-12);
    CHECK(std::abs(affine_risk(oc, d) - oc.risk) < 1e-12);
    CHECK(oc.risk <= 0.5 + 1e-12);
    for (Eigen::Index j : {0, 1}) {
      const std::size_t sub[] = {static_cast<std::size_t>(j)};
      CHECK(std::abs(optimal_risk_in_span(d, sub) - brute_risk(d, {j})) < 1e-12);
    }
  }
}

TEST_CASE("random models never beat the oracle") {
  std::vector<DiscreteDistribution> dists = counterexample_components();
  dists.push_back(mix(MixtureSpec(counterexample_components(), canonical_weights())));
  for (std::uint64_t s = 0; s < 10; ++s) dists.push_back(testing::random_distribution(12, 2 + s % 3, derive_seed(8, s)));
  SplitMix64 rng(2024);
  for (const auto& d : dists) {
    const double best = optimal_affine_classifier(d).risk;
    const auto dim = static_cast<Eigen::Index>(d.dim());
    for (int t = 0; t < 200; ++t) {
      Vec gates(dim), gamma(dim);
      for (Eigen::Index j = 0; j < dim; ++j) {
        gates(j) = rng.uniform(-2.0, 2.0);
        gamma(j) = rng.normal();
      }
      const ComposedModel m(DictionaryExtractor{gates}, LinearHead{gamma, rng.normal()});
      CHECK(best <= exact_zero_one_risk(m, d) + 1e-12);
    }
  }
}

TEST_CASE("risk inside a feature span") {
  const auto c = counterexample_components();
  const std::size_t f1[] = {0}, f2[] = {1}, both[] = {0, 1};
  CHECK(std::abs(optimal_risk_in_span(c[2], f1) - 0.25) < 1e-12);
  CHECK(optimal_risk_in_span(c[2], f2) == 0.0);
  const auto merged = mix(MixtureSpec(c, canonical_weights()));
  CHECK(std::abs(optimal_risk_in_span(merged, both) - 0.175) < 1e-12);
  CHECK(sparse_optimal_features(merged, both) == std::vector<std::size_t>{0});

  CHECK(kind_of([&] { optimal_risk_in_span(c[0], std::span<const std::size_t>{}); }) == ErrorKind::EmptyRestriction);
  const std::size_t bad[] = {2};
  CHECK(kind_of([&] { optimal_risk_in_span(c[0], bad); }) == ErrorKind::DimMismatch);
  const auto big = testing::random_distribution(21, 3, 4);
  CHECK(kind_of([&] { optimal_affine_classifier(big); }) == ErrorKind::SupportTooLarge);
  CHECK_NOTHROW(optimal_affine_classifier(testing::random_distribution(20, 3, 4)));
}

TEST_CASE("strict separation decides feasibility") {
  std::vector<WeightedSample> items{{vec({0, 0}), 1, 0.25}, {vec({1, 1}), 1, 0.25}, {vec({1, 0}), -1, 0.25},
                                    {vec({0, 1}), -1, 0.25}};
  const std::size_t all[] = {0, 1, 2, 3}, three[] = {0, 1, 2};
  CHECK_FALSE(strictly_separate(items, all).has_value());
  const auto sep = strictly_separate(items, three);
  REQUIRE(sep.has_value());
  for (std::size_t i : three) CHECK(items[i].y * (sep->first.dot(items[i].x) + sep->second) >= 1.0 - 1e-9);

  // Coincident points with opposite labels can never both be right.
  std::vector<WeightedSample> clash{{vec({1}), 1, 0.7}, {vec({1}), -1, 0.3}};
  const auto oc = optimal_affine_on(clash);
  CHECK(oc.risk == doctest::Approx(0.3));
  CHECK(oc.ignored_points == std::vector<std::size_t>{1});
  const auto merged = merge_coincident({{vec({1}), 1, 0.2}, {vec({1}), 1, 0.3}, {vec({1}), -1, 0.5}});
  CHECK(merged.size() == 2);
}

TEST_CASE("covariance examples") {
  const auto c = counterexample_components();
  const auto phi1 = LinearFunctional::coordinate(0, 2);
  CHECK(std::abs(covariance(phi1, c[0]) - 0.5) < 1e-12);
  CHECK(std::abs(covariance(phi1, c[1]) + 0.5) < 1e-12);
  CHECK(std::abs(covariance(phi1, c[2])) < 1e-12);
  CHECK(std::abs(covariance(phi1, c[3])) < 1e-12);
  const auto r = covariance_report(phi1, MixtureSpec(c, canonical_weights()));
  CHECK(std::abs(r.mixture_cov - 0.15) < 1e-12);
  CHECK(std::abs(r.between_term) < 1e-12);
  CHECK(std::abs(r.weighted_sum - 0.15) < 1e-12);
  CHECK(r.total_covariance_gap < 1e-12);
}

TEST_CASE("law of total covariance on general mixtures") {
  double max_between = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    std::vector<DiscreteDistribution> comps;
    const std::size_t k = 2 + s % 4;
    for (std::size_t j = 0; j < k; ++j) comps.push_back(testing::random_distribution(5, 2, derive_seed(s, j)));
    const auto lam = sample_simplex(k, derive_seed(1000, s));
    SplitMix64 rng(s);
    const LinearFunctional phi{vec({rng.normal(), rng.normal()}), rng.normal()};
    // Random components may disagree on labels at a shared point; skip those.
    try {
      mix(MixtureSpec(comps, lam));
    } catch (const Error&) {
      continue;
    }
    const auto r = covariance_report(phi, MixtureSpec(comps, lam));
    CHECK(r.total_covariance_gap < 1e-12);
    CHECK(std::abs(r.mixture_cov - r.weighted_sum - r.between_term) < 1e-12);
    CHECK(std::abs(r.weighted_sum_gap - std::abs(r.between_term)) < 1e-12);
    max_between = std::max(max_between, std::abs(r.between_term));
  }
  // The weighted-sum form alone is not an identity in general.
  CHECK(max_between > 1e-3);
}

TEST_CASE("between term vanishes on the counterexample family") {
  for (std::size_t K : {2u, 4u, 8u}) {
    const auto fam = gen_counterexample_family(K);
    for (std::uint64_t s = 0; s < 20; ++s) {
      const MixtureSpec spec(fam, sample_simplex(fam.size(), derive_seed(K, s)));
      for (std::size_t j = 0; j < K; ++j) {
        const auto r = covariance_report(LinearFunctional::coordinate(j, K), spec);
        CHECK(std::abs(r.between_term) < 1e-12);
        CHECK(r.total_covariance_gap < 1e-12);
      }
    }
  }
  CHECK(kind_of([] {
          covariance_report(LinearFunctional::coordinate(0, 3), MixtureSpec(counterexample_components(), canonical_weights()));
        }) == ErrorKind::DimMismatch);
}

TEST_CASE("mixture covariance is nonzero for almost every lambda") {
  const auto comps = counterexample_components();
  const auto phi1 = LinearFunctional::coordinate(0, 2);
  std::size_t nonzero = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto r = covariance_report(phi1, MixtureSpec(comps, sample_simplex(4, derive_seed(99, s))));
    nonzero += std::abs(r.mixture_cov) > 0.0;
  }
  CHECK(nonzero == 10000);

  const auto fam = gen_counterexample_family(4);
  const auto phi = LinearFunctional::coordinate(2, 4);
  nonzero = 0;
  for (std::uint64_t s = 0; s < 2000; ++s)
    nonzero += std::abs(covariance_report(phi, MixtureSpec(fam, sample_simplex(8, derive_seed(98, s)))).mixture_cov) > 0.0;
  CHECK(nonzero == 2000);
}

TEST_CASE("cancellation set probe") {
  const std::vector<double> covs{0.5, -0.5, 0.0, 0.0};
  const auto p = cancellation_set_probe(covs, 10000, 7);
  CHECK(p.trials == 10000);
  CHECK(p.hits == 0);
  CHECK(p.hit_fraction == 0.0);
  REQUIRE(p.constructed_lambda.has_value());
  double sum = 0.0, total = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK((*p.constructed_lambda)[j] > 0.0);
    sum += (*p.constructed_lambda)[j] * covs[j];
    total += (*p.constructed_lambda)[j];
  }
  CHECK(std::abs(sum) < 1e-12);
  CHECK(std::abs(p.constructed_sum) < 1e-12);
  CHECK(std::abs(total - 1.0) < 1e-12);

  const std::vector<double> same{0.5, 0.5, 0.5, 0.5};
  CHECK_FALSE(cancellation_set_probe(same, 100, 1).constructed_lambda.has_value());
  const std::vector<double> zeros(4, 0.0);
  CHECK(kind_of([&] { cancellation_set_probe(zeros, 10, 1); }) == ErrorKind::AllZeroCovs);

  const auto q = cancellation_set_probe(covs, 10000, 7);
  CHECK(q.hits == p.hits);
  CHECK(*q.constructed_lambda == *p.constructed_lambda);
}

TEST_CASE("simplex draws are uniform") {
  std::vector<double> mean(4, 0.0);
  for (std::uint64_t s = 0; s < 20000; ++s) {
    const auto l = sample_simplex(4, s);
    double t = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(l[j] > 0.0);
      t += l[j];
      mean[j] += l[j] / 20000.0;
    }
    CHECK(std::abs(t - 1.0) < 1e-12);
  }
  for (double m : mean) CHECK(std::abs(m - 0.25) < 0.01);
}

TEST_CASE("feature recovery examples") {
  // Balanced weights make the two coordinates uncorrelated on the support.
  const auto merged = mix(MixtureSpec(counterexample_components(), {0.25, 0.25, 0.25, 0.25}));
  const std::vector<LinearFunctional> latents{LinearFunctional::coordinate(0, 2), LinearFunctional::coordinate(1, 2)};
  const auto r10 = feature_recovery_probe(DictionaryExtractor{vec({1, 0})}, latents, merged);
  CHECK(std::abs(r10[0] - 1.0) < 1e-12);
  CHECK(std::abs(r10[1]) < 1e-12);
  const Extractor both = make_concat({DictionaryExtractor{vec({1, 0})}, DictionaryExtractor{vec({0, 1})}});
  for (double r : feature_recovery_probe(both, latents, merged)) CHECK(std::abs(r - 1.0) < 1e-12);

  const std::vector<LinearFunctional> constant{LinearFunctional{vec({0, 0}), 1.0}};
  CHECK(kind_of([&] { feature_recovery_probe(both, constant, merged); }) == ErrorKind::DegenerateVariance);

  // Sampled evaluation sets agree with the exact support on this identity case.
  const auto ds = sample(merged, 2000, 3);
  for (double r : feature_recovery_probe(both, latents, ds)) CHECK(std::abs(r - 1.0) < 1e-9);
}

TEST_CASE("concatenation never loses recoverable signal") {
  const auto eval = testing::random_distribution(40, 3, 17);
  std::vector<LinearFunctional> latents;
  for (std::size_t j = 0; j < 3; ++j) latents.push_back(LinearFunctional::coordinate(j, 3));
  latents.push_back(LinearFunctional{vec({1, -2, 0.5}), 0.3});
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Extractor a = MlpExtractor::init({3, 2}, Activation::Tanh, derive_seed(s, 1));
    const Extractor b = DictionaryExtractor{vec({s % 2 ? 1.0 : 0.0, 0.0, 1.0})};
    const auto ra = feature_recovery_probe(a, latents, eval);
    const auto rb = feature_recovery_probe(b, latents, eval);
    const auto rc = feature_recovery_probe(make_concat({a, b}), latents, eval);
    for (std::size_t i = 0; i < latents.size(); ++i) {
      CHECK(rc[i] >= std::max(ra[i], rb[i]) - 1e-9);
      CHECK(rc[i] >= 0.0);
      CHECK(rc[i] <= 1.0);
    }
  }
}
