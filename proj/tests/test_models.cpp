#include <cstring>

#include "doctest.h"
#include "helpers.hpp"
#include "satlab/error.hpp"
#include "satlab/models.hpp"

using namespace satlab;
using testing::vec;

namespace {

ComposedModel dict_model(Vec gates, Vec gamma, double bias) {
  return ComposedModel(DictionaryExtractor{std::move(gates)}, LinearHead{std::move(gamma), bias});
}

ComposedModel linear_model(Vec w) {
  const auto d = static_cast<std::size_t>(w.size());
  return ComposedModel(MlpExtractor::init({d}, Activation::Tanh, 0), LinearHead{std::move(w), 0.0});
}

Vec random_vec(SplitMix64& rng, Eigen::Index n, double scale = 1.0) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

std::vector<ComposedModel> architectures() {
  std::vector<ComposedModel> out;
  out.push_back(dict_model(vec({0.7, -1.2, 0.3}), vec({0.5, 1.5, -0.4}), 0.1));
  out.push_back(ComposedModel(MlpExtractor::init({3, 5, 4}, Activation::Tanh, 1), LinearHead{Vec::Ones(4), 0.2}));
  out.push_back(ComposedModel(MlpExtractor::init({3, 6, 3}, Activation::Relu, 2), LinearHead{Vec::Ones(3), -0.1}));
  Extractor cat = make_concat({DictionaryExtractor{vec({1.0, 0.5, -0.5})}, MlpExtractor::init({3, 4}, Activation::Tanh, 3)});
  out.push_back(ComposedModel(cat, LinearHead{Vec::Ones(7), 0.0}));
  return out;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST_CASE("dictionary and concat features") {
  const Extractor d10 = DictionaryExtractor{vec({1, 0})};
  CHECK((d10.features(vec({1, 0})).array() == vec({1, 0}).array()).all());
  const Extractor d11 = DictionaryExtractor{vec({1, 1})};
  CHECK((d11.features(vec({0, -1})).array() == vec({0, -1}).array()).all());
  const Extractor cat = make_concat({d10, d10});
  CHECK(cat.output_dim() == 4);
  CHECK((cat.features(vec({1, 0})).array() == vec({1, 0, 1, 0}).array()).all());
  CHECK_THROWS_AS(d10.features(vec({1, 0, 0})), Error);
}

TEST_CASE("score and predict with the sign(0) = -1 convention") {
  const auto m = dict_model(vec({1, 0}), vec({2, 0}), -1.0);
  CHECK(score(m, vec({1, 0})) == 1.0);
  CHECK(predict(m, vec({1, 0})) == 1);
  CHECK(score(m, vec({0, 1})) == -1.0);
  CHECK(predict(m, vec({0, 1})) == -1);
  const auto zero = dict_model(vec({1, 1}), vec({0, 0}), 0.0);
  for (const auto& x : {vec({1, 0}), vec({-3, 2}), vec({0, 0})}) {
    CHECK(score(zero, x) == 0.0);
    CHECK(predict(zero, x) == -1);
  }
}

TEST_CASE("head dimension must match the extractor") {
  CHECK_THROWS_AS(dict_model(vec({1, 0}), vec({1}), 0.0), Error);
}

TEST_CASE("analytic gradient of a linear model under squared loss") {
  const auto m = linear_model(vec({0, 0}));
  const Vec g = grad_params(m, vec({1, 0}), 1, Loss::Squared);
  REQUIRE(g.size() == 3);  // w1, w2, bias
  CHECK(g(0) == -2.0);
  CHECK(g(1) == 0.0);
  CHECK(g(2) == -2.0);
}

TEST_CASE("logistic gradient at score zero is half the score gradient") {
  for (auto& m : architectures()) {
    m.head.gamma.setZero();
    m.head.bias = 0.0;
    const Vec x = vec({0.3, -0.8, 1.1});
    const Vec gs = grad_score(m, x);
    const Vec gl = grad_params(m, x, 1, Loss::Logistic);
    for (Eigen::Index i = 0; i < gs.size(); ++i) CHECK(std::abs(std::abs(gl(i)) - 0.5 * std::abs(gs(i))) < 1e-15);
  }
}

TEST_CASE("unknown loss names are rejected") {
  CHECK(parse_loss("logistic") == Loss::Logistic);
  CHECK(parse_loss("squared") == Loss::Squared);
  try {
    parse_loss("hinge");
    FAIL("expected UnknownLoss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownLoss);
  }
}

TEST_CASE("gradients match central finite differences") {
  const double h = 1e-5;
  std::size_t arch_index = 0;
  for (const auto& proto : architectures()) {
    CAPTURE(arch_index);
    SplitMix64 rng(derive_seed(100, arch_index++));
    const auto n = static_cast<Eigen::Index>(param_count(proto));
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const Vec w = random_vec(rng, n, 0.8);
      const auto m = unflatten_params(proto, w);
      const Vec x = random_vec(rng, 3);
      const int y = rng.uniform() < 0.5 ? 1 : -1;
      for (Loss loss : {Loss::Logistic, Loss::Squared}) {
        const Vec g = grad_params(m, x, y, loss);
        for (Eigen::Index i = 0; i < n; ++i) {
          Vec wp = w, wm = w;
          wp(i) += h;
          wm(i) -= h;
          const double fd = (loss_value(loss, score(unflatten_params(proto, wp), x), y) -
                             loss_value(loss, score(unflatten_params(proto, wm), x), y)) /
                            (2 * h);
          worst = std::max(worst, rel_err(fd, g(i)));
        }
      }
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("flatten and unflatten round-trip exactly") {
  SplitMix64 rng(9);
  for (const auto& m : architectures()) {
    const Vec w = flatten_params(m);
    const auto back = unflatten_params(m, w);
    const Vec w2 = flatten_params(back);
    REQUIRE(w2.size() == w.size());
    CHECK(std::memcmp(w.data(), w2.data(), sizeof(double) * static_cast<std::size_t>(w.size())) == 0);
    for (int i = 0; i < 100; ++i) {
      const Vec x = random_vec(rng, 3);
      CHECK(score(back, x) == score(m, x));
    }
    const auto same = unflatten_params(m, w + Vec::Zero(w.size()));
    CHECK((flatten_params(same).array() == w.array()).all());
    try {
      unflatten_params(m, Vec::Zero(w.size() + 1));
      FAIL("expected LengthMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::LengthMismatch);
    }
  }
}

TEST_CASE("parameter count of a two-gate dictionary with head and bias") {
  CHECK(param_count(dict_model(vec({1, 1}), vec({0, 0}), 0.0)) == 5);
  CHECK(param_count(ComposedModel(MlpExtractor::init({2, 3}, Activation::Tanh, 0), LinearHead{Vec::Zero(3), 0})) ==
        2 * 3 + 3 + 3 + 1);
}

TEST_CASE("score is affine in the head") {
  SplitMix64 rng(4);
  for (const auto& proto : architectures()) {
    const auto k = proto.head.gamma.size();
    const Vec g1 = random_vec(rng, k), g2 = random_vec(rng, k);
    const double b = 0.37;
    auto with = [&](const Vec& g) {
      auto m = proto;
      m.head = LinearHead{g, b};
      return m;
    };
    for (int i = 0; i < 20; ++i) {
      const Vec x = random_vec(rng, 3);
      const double lhs = score(with(g1 + g2), x);
      const double rhs = score(with(g1), x) + score(with(g2), x) - b;
      CHECK(std::abs(lhs - rhs) < 1e-12);
    }
  }
}

TEST_CASE("concat scoring restricted to one block equals the member alone") {
  const Extractor a = DictionaryExtractor{vec({0.4, -1.0, 2.0})};
  const Extractor b = MlpExtractor::init({3, 4, 2}, Activation::Tanh, 8);
  const Extractor cat = make_concat({a, b});
  SplitMix64 rng(5);
  const Vec ga = random_vec(rng, 3), gb = random_vec(rng, 2);
  Vec ca = Vec::Zero(5), cb = Vec::Zero(5);
  ca.head(3) = ga;
  cb.tail(2) = gb;
  for (int i = 0; i < 20; ++i) {
    const Vec x = random_vec(rng, 3);
    CHECK(score(ComposedModel(cat, {ca, 0.2}), x) == score(ComposedModel(a, {ga, 0.2}), x));
    CHECK(score(ComposedModel(cat, {cb, -0.1}), x) == score(ComposedModel(b, {gb, -0.1}), x));
  }
}

TEST_CASE("concat validation") {
  CHECK_THROWS_AS(make_concat({}), Error);
  try {
    make_concat({DictionaryExtractor{vec({1, 0})}, DictionaryExtractor{vec({1, 0, 0})}});
    FAIL("expected DimMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DimMismatch);
  }
}

TEST_CASE("initialization is seeded and scaled") {
  ArchSpec arch;
  arch.input_dim = 4;
  const auto a = init_model(arch, 7), b = init_model(arch, 7), c = init_model(arch, 8);
  CHECK((flatten_params(a).array() == flatten_params(b).array()).all());
  CHECK_FALSE((flatten_params(a).array() == flatten_params(c).array()).all());
  const auto& gates = std::get<DictionaryExtractor>(a.extractor.variant()).gates;
  CHECK(gates.minCoeff() >= 0.5);
  CHECK(gates.maxCoeff() <= 1.5);
  CHECK(a.head.gamma.isZero());

  const auto mlp = MlpExtractor::init({50, 400}, Activation::Relu, 3);
  const double var = mlp.weights[0].array().square().mean();
  CHECK(var == doctest::Approx(2.0 / 50.0).epsilon(0.05));
  CHECK(mlp.weights[0].cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 50.0));
}
