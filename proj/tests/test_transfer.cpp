#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "satlab/error.hpp"
#include "satlab/oracle.hpp"
#include "satlab/transfer.hpp"

using namespace satlab;
using testing::vec;

namespace {

double logistic_loss(const DiscreteDistribution& d, const Vec& w, double b) {
  double s = 0.0;
  for (const auto& p : d.points()) s += p.mass * std::log1p(std::exp(-p.y * (w.dot(p.x) + b)));
  return s;
}

// Independent minimizer: coarse grid, then a shrinking compass search.
double pattern_search_loss(const DiscreteDistribution& d) {
  const auto k = static_cast<Eigen::Index>(d.dim()) + 1;
  auto f = [&](const Vec& v) { return logistic_loss(d, v.head(k - 1), v(k - 1)); };
  Vec best = Vec::Zero(k);
  double fb = f(best);
  const int g = k == 2 ? 41 : 17;
  Vec v(k);
  std::vector<int> idx(static_cast<std::size_t>(k), 0);
  while (true) {
    for (Eigen::Index i = 0; i < k; ++i) v(i) = -8.0 + 16.0 * idx[static_cast<std::size_t>(i)] / (g - 1);
    if (const double fv = f(v); fv < fb) {
      fb = fv;
      best = v;
    }
    std::size_t c = 0;
    while (c < idx.size() && ++idx[c] == g) idx[c++] = 0;
    if (c == idx.size()) break;
  }
  for (double step = 0.5; step > 1e-10 && best.cwiseAbs().maxCoeff() < 50.0;) {
    bool moved = false;
    for (Eigen::Index i = 0; i < k; ++i)
      for (double s : {step, -step}) {
        Vec t = best;
        t(i) += s;
        if (const double ft = f(t); ft < fb) {
          fb = ft;
          best = t;
          moved = true;
        }
      }
    if (!moved) step *= 0.5;
  }
  return fb;
}

ComposedModel identity_model(Vec gamma, double bias) {
  const auto d = static_cast<std::size_t>(gamma.size());
  return ComposedModel(MlpExtractor::init({d}, Activation::Tanh, 0), LinearHead{std::move(gamma), bias});
}

ComposedModel desk_mlp(std::uint64_t seed) {
  ArchSpec arch;
  arch.kind = ArchSpec::Kind::Mlp;
  arch.hidden = {16, 8};
  TrainConfig cfg;
  cfg.steps = 2000;
  cfg.seed = seed;
  return pretrain(MixtureSpec(counterexample_components(), canonical_weights()), arch, cfg).model;
}

std::vector<Vec> probe_points(std::uint64_t seed) {
  std::vector<Vec> pts{vec({1, 0}), vec({-1, 0}), vec({0, 1}), vec({0, -1})};
  SplitMix64 rng(seed);
  for (int i = 0; i < 16; ++i) pts.push_back(vec({rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)}));
  return pts;
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

TEST_CASE("linear probe examples on frozen dictionary features") {
  const auto c = counterexample_components();
  const Extractor phi1 = DictionaryExtractor{vec({1, 0})};
  const Extractor both = DictionaryExtractor{vec({1, 1})};
  CHECK(linear_probe(phi1, c[0]).exact_risk == 0.0);
  CHECK(std::abs(linear_probe(phi1, c[2]).exact_risk - 0.25) < 1e-12);
  CHECK(linear_probe(both, c[2]).exact_risk == 0.0);
  const auto r = linear_probe(both, c[2], std::vector<std::size_t>{0});
  CHECK(std::abs(r.exact_risk - 0.25) < 1e-12);
  REQUIRE(r.feature_subset.has_value());
  CHECK(*r.feature_subset == std::vector<std::size_t>{0});
  CHECK(r.head.gamma.size() == 1);

  CHECK(kind_of([&] { linear_probe(both, c[0], std::vector<std::size_t>{}); }) == ErrorKind::EmptyRestriction);
  CHECK(kind_of([&] { linear_probe(both, c[0], std::vector<std::size_t>{2}); }) == ErrorKind::DimMismatch);
  CHECK(kind_of([&] { linear_probe(DictionaryExtractor{vec({1, 1, 1})}, c[0]); }) == ErrorKind::DimMismatch);
}

TEST_CASE("the optimal head attains the reported risk") {
  const auto c = counterexample_components();
  const Extractor both = DictionaryExtractor{vec({1, 1})};
  for (const auto& d : c) {
    const auto r = linear_probe(both, d);
    CHECK(r.span_exact);
    CHECK(r.exact_risk <= r.surrogate_risk + 1e-12);
    CHECK(std::abs(exact_zero_one_risk(ComposedModel(both, r.optimal_head), d) - r.exact_risk) < 1e-12);
    CHECK(std::abs(exact_zero_one_risk(ComposedModel(both, r.head), d) - r.surrogate_risk) < 1e-12);
    CHECK(r.grad_norm < kProbeGradTol);
  }
}

TEST_CASE("probe head minimizes the expected logistic loss") {
  std::size_t tested = 0;
  for (std::uint64_t s = 0; s < 12; ++s) {
    const std::size_t dim = 1 + s % 2;
    const auto d = testing::random_distribution(dim == 1 ? 4 + s % 4 : 6 + s % 5, dim, derive_seed(404, s));
    if (optimal_affine_classifier(d).risk == 0.0) continue;  // infimum not attained
    CAPTURE(s);
    const auto r = linear_probe(DictionaryExtractor{Vec::Ones(static_cast<Eigen::Index>(dim))}, d);
    // Only supports where the loss has a finite minimizer.
    if (std::max(r.head.gamma.cwiseAbs().maxCoeff(), std::abs(r.head.bias)) > 20.0) continue;
    ++tested;
    const double fitted = logistic_loss(d, r.head.gamma, r.head.bias);
    CHECK(std::abs(fitted - r.surrogate_loss) < 1e-12);
    CHECK(fitted <= pattern_search_loss(d) + 1e-6);
    CHECK(r.grad_norm < kProbeGradTol);
  }
  CHECK(tested >= 5);
}

TEST_CASE("adding features never increases the probe loss") {
  const auto c = counterexample_components();
  std::vector<DiscreteDistribution> targets = c;
  targets.push_back(mix(MixtureSpec(c, canonical_weights())));
  const Extractor three = DictionaryExtractor{vec({1, 1})};
  for (const auto& d : targets) {
    const double l0 = linear_probe(three, d, std::vector<std::size_t>{0}).surrogate_loss;
    const double l1 = linear_probe(three, d, std::vector<std::size_t>{1}).surrogate_loss;
    const double l01 = linear_probe(three, d).surrogate_loss;
    CHECK(l01 <= l0 + 1e-9);
    CHECK(l01 <= l1 + 1e-9);
  }
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto d = testing::random_distribution(9, 3, derive_seed(77, s));
    const Extractor e = DictionaryExtractor{Vec::Ones(3)};
    double prev = linear_probe(e, d, std::vector<std::size_t>{2}).surrogate_loss;
    for (const auto& sub : {std::vector<std::size_t>{1, 2}, std::vector<std::size_t>{0, 1, 2}}) {
      const double next = linear_probe(e, d, sub).surrogate_loss;
      CHECK(next <= prev + 1e-9);
      prev = next;
    }
  }
}

TEST_CASE("pretrained features classify only half of the components") {
  const MixtureSpec canonical(counterexample_components(), canonical_weights());
  TrainConfig cfg;
  cfg.l1_gate = 0.01;
  cfg.l2 = 0.02;
  ArchSpec arch;
  const auto pre = pretrain(canonical, arch, cfg);
  REQUIRE(pre.surviving_gates == std::vector<std::size_t>{0});
  const auto c = counterexample_components();
  const std::vector<double> expected{0.0, 0.0, 0.25, 0.25};
  for (std::size_t j = 0; j < 4; ++j) {
    CAPTURE(j);
    const auto probe = linear_probe(pre.model.extractor, c[j], pre.surviving_gates);
    CHECK(std::abs(probe.exact_risk - expected[j]) < 1e-9);
    const auto direct = direct_train(c[j], arch, TrainConfig{});
    CHECK(direct.exact_risk == 0.0);
    CHECK(std::abs(transfer_gap(direct, probe) - expected[j]) < 1e-9);
    // The full pretrained extractor (dead gate included) is no better.
    CHECK(linear_probe(pre.model.extractor, c[j]).exact_risk >= expected[j] - 1e-9);
  }
}

TEST_CASE("transfer gap") {
  TrainedOutcome direct{init_model(ArchSpec{}, 0), {}, 0.1, {}};
  ProbeResult probe;
  probe.exact_risk = 0.1;
  CHECK(transfer_gap(direct, probe) == 0.0);
  probe.exact_risk = 0.35;
  CHECK(transfer_gap(direct, probe) == doctest::Approx(0.25));
}

TEST_CASE("jacobian of a linear model is the input") {
  const auto m = identity_model(vec({0.3, -1.1}), 0.4);
  const auto f = ntk_features(m);
  CHECK(f.dim() == param_count(m));
  SplitMix64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vec x = vec({rng.normal(), rng.normal()});
    const Vec j = f.jacobian(x);
    REQUIRE(j.size() == 3);
    CHECK((j.head(2).array() == x.array()).all());
    CHECK(j(2) == 1.0);  // bias
    CHECK(f.base_score(x) == score(m, x));
  }
}

TEST_CASE("jacobian matches finite differences") {
  std::vector<ComposedModel> models{desk_mlp(1),
                                    ComposedModel(DictionaryExtractor{vec({0.8, -0.4})}, LinearHead{vec({1.5, 0.2}), 0.1})};
  const double h = 1e-6;
  for (const auto& m : models) {
    const auto f = ntk_features(m);
    const Vec w = flatten_params(m);
    CHECK(f.dim() == static_cast<std::size_t>(w.size()));
    for (const auto& x : probe_points(5)) {
      const Vec j = f.jacobian(x);
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        Vec wp = w, wm = w;
        wp(i) += h;
        wm(i) -= h;
        const double fd = (score(unflatten_params(m, wp), x) - score(unflatten_params(m, wm), x)) / (2 * h);
        CHECK(std::abs(fd - j(i)) <= 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("non-finite parameters are rejected") {
  auto m = identity_model(vec({1, 1}), 0.0);
  m.head.bias = std::nan("");
  CHECK(kind_of([&] { ntk_features(m); }) == ErrorKind::NonFinite);
}

TEST_CASE("linearization error") {
  SplitMix64 rng(11);
  const auto pts = probe_points(2);
  const auto lin = identity_model(vec({0.5, -0.2}), 0.3);
  for (int t = 0; t < 20; ++t) {
    const Vec delta = vec({rng.normal(), rng.normal(), rng.normal()}) * std::pow(10.0, t % 4);
    CHECK(linearization_error(lin, delta, pts) < 1e-12);
  }
  const auto mlp = desk_mlp(2);
  const auto n = static_cast<Eigen::Index>(param_count(mlp));
  CHECK(linearization_error(mlp, Vec::Zero(n), pts) == 0.0);
  CHECK(kind_of([&] { linearization_error(mlp, Vec::Zero(n + 1), pts); }) == ErrorKind::LengthMismatch);

  for (std::uint64_t s = 0; s < 3; ++s) {
    SplitMix64 drng(derive_seed(12, s));
    Vec dir(n);
    for (Eigen::Index i = 0; i < n; ++i) dir(i) = drng.normal();
    dir /= dir.norm();
    double prev = linearization_error(mlp, dir * 1e-2, pts);
    for (int r = 1; r <= 3; ++r) {
      const double err = linearization_error(mlp, dir * (1e-2 / std::pow(2.0, r)), pts);
      CHECK(prev / err >= 3.0);
      CHECK(prev / err <= 5.0);
      prev = err;
    }
  }
}

TEST_CASE("ntk probe of a linear model equals full fine-tuning") {
  const auto c = counterexample_components();
  const auto lin = identity_model(vec({0.7, 0.1}), -0.2);
  for (const auto& d : c) {
    const auto ntk = ntk_probe(lin, d);
    const auto full = linear_probe(lin.extractor, d);
    CHECK(ntk.exact_risk == full.exact_risk);
  }
}

TEST_CASE("ntk probing is never worse than linear probing") {
  const auto c = counterexample_components();
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto mlp = desk_mlp(seed);
    for (const auto& d : c) {
      const auto lp = linear_probe(mlp.extractor, d);
      const auto np = ntk_probe(mlp, d);
      CHECK(np.exact_risk <= lp.exact_risk + 1e-12);
      CHECK(np.exact_risk <= exact_zero_one_risk(mlp, d) + 1e-12);
      CHECK(np.gamma0 == 1.0);
      NtkProbeOptions o;
      o.fit_gamma0 = true;
      CHECK(ntk_probe(mlp, d, o).exact_risk <= np.exact_risk + 1e-12);
    }
  }
}

TEST_CASE("restricting ntk coordinates can only cost risk") {
  const auto mlp = desk_mlp(4);
  const auto c = counterexample_components();
  const std::size_t n = param_count(mlp);
  NtkProbeOptions head_only;
  head_only.restrict = std::vector<std::size_t>{};
  for (std::size_t i = n - 9; i < n; ++i) head_only.restrict->push_back(i);
  for (const auto& d : c) {
    const double full = ntk_probe(mlp, d).exact_risk;
    const auto part = ntk_probe(mlp, d, head_only);
    CHECK(part.exact_risk >= full - 1e-12);
    CHECK(part.feature_subset == head_only.restrict);
  }
  NtkProbeOptions empty;
  empty.restrict = std::vector<std::size_t>{};
  CHECK(kind_of([&] { ntk_probe(mlp, c[0], empty); }) == ErrorKind::EmptyRestriction);
  NtkProbeOptions out_of_range;
  out_of_range.restrict = std::vector<std::size_t>{n};
  CHECK(kind_of([&] { ntk_probe(mlp, c[0], out_of_range); }) == ErrorKind::DimMismatch);
}
