#include "satlab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>

#include "satlab/error.hpp"
#include "satlab/rng.hpp"

namespace satlab {
namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kFeasTol = 1e-9;
constexpr double kTieTol = 1e-12;

// Phase-one simplex with Bland's rule on  A z = 1, z >= 0. Returns z when the
// system is feasible.
std::optional<Vec> phase_one(const Mat& A) {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  // Tableau: [A | I | rhs], objective row holds reduced costs of min sum(artificials).
  Mat T = Mat::Zero(m + 1, n + m + 1);
  T.topLeftCorner(m, n) = A;
  T.block(0, n, m, m).setIdentity();
  T.col(n + m).head(m).setOnes();
  for (Eigen::Index j = 0; j < n; ++j) T(m, j) = -A.col(j).sum();
  T(m, n + m) = -static_cast<double>(m);
  std::vector<Eigen::Index> basis(m);
  for (Eigen::Index i = 0; i < m; ++i) basis[i] = n + i;

  for (int iter = 0; iter < 50000; ++iter) {
    Eigen::Index enter = -1;
    for (Eigen::Index j = 0; j < n + m; ++j)
      if (T(m, j) < -kPivotTol) {
        enter = j;
        break;
      }
    if (enter < 0) break;
    Eigen::Index leave = -1;
    double best = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (T(i, enter) <= kPivotTol) continue;
      const double ratio = T(i, n + m) / T(i, enter);
      if (leave < 0 || ratio < best - 1e-15 ||
          (std::abs(ratio - best) <= 1e-15 && basis[i] < basis[leave])) {
        leave = i;
        best = ratio;
      }
    }
    if (leave < 0) break;  // unbounded direction; cannot happen in phase one
    T.row(leave) /= T(leave, enter);
    for (Eigen::Index i = 0; i <= m; ++i)
      if (i != leave && T(i, enter) != 0.0) T.row(i) -= T(i, enter) * T.row(leave);
    basis[leave] = enter;
  }
  double infeasibility = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    if (basis[i] >= n) infeasibility += std::abs(T(i, n + m));
  if (infeasibility > kFeasTol) return std::nullopt;
  Vec z = Vec::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i)
    if (basis[i] < n) z(basis[i]) = T(i, n + m);
  return z;
}

struct Subset {
  double mass;
  std::vector<std::size_t> pos;  // ascending positions in mass order
};

struct SubsetOrder {
  bool operator()(const Subset& a, const Subset& b) const {
    if (a.mass != b.mass) return a.mass > b.mass;
    return a.pos > b.pos;
  }
};

void check_subset(std::size_t dim, std::span<const std::size_t> subset) {
  if (subset.empty()) throw Error(ErrorKind::EmptyRestriction, "feature subset is empty");
  for (auto j : subset)
    if (j >= dim)
      throw Error(ErrorKind::DimMismatch, "feature index " + std::to_string(j) + " out of range");
}

}  // namespace

std::vector<WeightedSample> merge_coincident(std::vector<WeightedSample> samples) {
  std::vector<WeightedSample> out;
  for (auto& r : samples) {
    auto it = std::find_if(out.begin(), out.end(), [&](const WeightedSample& o) {
      return o.y == r.y && o.x.size() == r.x.size() && (o.x.array() == r.x.array()).all();
    });
    if (it == out.end())
      out.push_back(std::move(r));
    else
      it->mass += r.mass;
  }
  return out;
}

std::optional<std::pair<Vec, double>> strictly_separate(std::span<const WeightedSample> items,
                                                        std::span<const std::size_t> subset) {
  if (items.empty()) return std::make_pair(Vec(), 0.0);
  const auto d = items.front().x.size();
  if (subset.empty()) return std::make_pair(Vec::Zero(d), 0.0);
  // Rescale each coordinate by its largest magnitude; drop all-zero coordinates.
  Vec scale = Vec::Zero(d);
  for (auto i : subset) scale = scale.cwiseMax(items[i].x.cwiseAbs());
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < d; ++j)
    if (scale(j) > 1e-300) cols.push_back(j);
  const auto k = static_cast<Eigen::Index>(cols.size());
  const auto m = static_cast<Eigen::Index>(subset.size());
  // Variables: w+ (k), w- (k), b+, b-, slack (m).
  Mat A = Mat::Zero(m, 2 * k + 2 + m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto& s = items[subset[r]];
    const double y = static_cast<double>(s.y);
    for (Eigen::Index c = 0; c < k; ++c) {
      const double v = y * s.x(cols[c]) / scale(cols[c]);
      A(r, c) = v;
      A(r, k + c) = -v;
    }
    A(r, 2 * k) = y;
    A(r, 2 * k + 1) = -y;
    A(r, 2 * k + 2 + r) = -1.0;
  }
  const auto z = phase_one(A);
  if (!z) return std::nullopt;
  Vec w = Vec::Zero(d);
  for (Eigen::Index c = 0; c < k; ++c) w(cols[c]) = ((*z)(c) - (*z)(k + c)) / scale(cols[c]);
  const double b = (*z)(2 * k) - (*z)(2 * k + 1);
  for (auto i : subset) {
    const double margin = static_cast<double>(items[i].y) * (w.dot(items[i].x) + b);
    if (!(margin > 0.5)) return std::nullopt;
  }
  return std::make_pair(std::move(w), b);
}

OptimalClassifier optimal_affine_on(std::span<const WeightedSample> items) {
  const std::size_t n = items.size();
  if (n > kOracleSupportLimit)
    throw Error(ErrorKind::SupportTooLarge, "oracle handles at most " +
                                                std::to_string(kOracleSupportLimit) +
                                                " support points, got " + std::to_string(n));
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "oracle needs at least one point");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return items[a].mass < items[b].mass; });

  auto complement = [&](const std::vector<std::size_t>& ignored) {
    std::vector<char> skip(n, 0);
    for (auto i : ignored) skip[i] = 1;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i)
      if (!skip[i]) keep.push_back(i);
    return keep;
  };

  std::optional<std::vector<std::size_t>> best_set;
  std::pair<Vec, double> best_clf;
  double best_mass = 0.0;

  auto consider = [&](const Subset& s) {
    std::vector<std::size_t> ignored;
    for (auto p : s.pos) ignored.push_back(order[p]);
    std::sort(ignored.begin(), ignored.end());
    if (best_set && !(ignored < *best_set)) return;
    const auto keep = complement(ignored);
    auto clf = strictly_separate(items, keep);
    if (!clf) return;
    if (!best_set) best_mass = s.mass;
    best_set = std::move(ignored);
    best_clf = std::move(*clf);
  };

  consider(Subset{0.0, {}});
  std::priority_queue<Subset, std::vector<Subset>, SubsetOrder> heap;
  if (!best_set) heap.push(Subset{items[order[0]].mass, {0}});
  while (!heap.empty()) {
    Subset s = heap.top();
    heap.pop();
    if (best_set && s.mass > best_mass + kTieTol) break;
    consider(s);
    const auto last = s.pos.back();
    if (last + 1 < n) {
      Subset grow = s;
      grow.pos.push_back(last + 1);
      grow.mass += items[order[last + 1]].mass;
      heap.push(std::move(grow));
      Subset shift = std::move(s);
      shift.pos.back() = last + 1;
      shift.mass += items[order[last + 1]].mass - items[order[last]].mass;
      heap.push(std::move(shift));
    }
  }

  OptimalClassifier out;
  out.weights = std::move(best_clf.first);
  out.bias = best_clf.second;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = out.weights.dot(items[i].x) + out.bias;
    const int pred = s > 0.0 ? 1 : -1;
    if (pred != items[i].y) {
      out.risk += items[i].mass;
      out.ignored_points.push_back(i);
    }
  }
  return out;
}

OptimalClassifier optimal_affine_classifier(const DiscreteDistribution& dist) {
  std::vector<WeightedSample> items;
  for (const auto& p : dist.points()) items.push_back({p.x, p.y, p.mass});
  return optimal_affine_on(items);
}

double optimal_risk_in_span(const DiscreteDistribution& dist, std::span<const std::size_t> subset) {
  check_subset(dist.dim(), subset);
  std::vector<WeightedSample> raw;
  for (const auto& p : dist.points()) {
    Vec x(static_cast<Eigen::Index>(subset.size()));
    for (std::size_t k = 0; k < subset.size(); ++k) x(k) = p.x(subset[k]);
    raw.push_back({std::move(x), p.y, p.mass});
  }
  const auto items = merge_coincident(std::move(raw));
  return optimal_affine_on(items).risk;
}

std::vector<std::size_t> sparse_optimal_features(const DiscreteDistribution& dist,
                                                 std::span<const std::size_t> candidates) {
  const double best = optimal_affine_classifier(dist).risk;
  std::vector<std::size_t> out;
  for (auto j : candidates) {
    const std::size_t one[] = {j};
    if (optimal_risk_in_span(dist, one) <= best + kTieTol) out.push_back(j);
  }
  return out;
}

LinearFunctional LinearFunctional::coordinate(std::size_t j, std::size_t dim) {
  if (j >= dim) throw Error(ErrorKind::DimMismatch, "coordinate index out of range");
  LinearFunctional f{Vec::Zero(static_cast<Eigen::Index>(dim)), 0.0};
  f.weights(static_cast<Eigen::Index>(j)) = 1.0;
  return f;
}

double covariance(const LinearFunctional& phi, const DiscreteDistribution& dist) {
  if (static_cast<std::size_t>(phi.weights.size()) != dist.dim())
    throw Error(ErrorKind::DimMismatch, "functional and distribution dimensions differ");
  double ey = 0.0, ephi = 0.0, eyphi = 0.0;
  for (const auto& p : dist.points()) {
    const double v = phi(p.x);
    ey += p.mass * p.y;
    ephi += p.mass * v;
    eyphi += p.mass * p.y * v;
  }
  return eyphi - ey * ephi;
}

CovarianceReport covariance_report(const LinearFunctional& phi, const MixtureSpec& mixture) {
  if (static_cast<std::size_t>(phi.weights.size()) != mixture.dim())
    throw Error(ErrorKind::DimMismatch, "functional and mixture dimensions differ");
  const auto merged = mix(mixture);
  CovarianceReport r;
  r.mixture_cov = covariance(phi, merged);
  double mu_y = 0.0, mu_phi = 0.0;
  for (const auto& p : merged.points()) {
    mu_y += p.mass * p.y;
    mu_phi += p.mass * phi(p.x);
  }
  for (std::size_t j = 0; j < mixture.size(); ++j) {
    const auto& c = mixture.components()[j];
    const double lam = mixture.weights()[j];
    const double cov = covariance(phi, c);
    r.component_covs.push_back(cov);
    r.weighted_sum += lam * cov;
    double my = 0.0, mphi = 0.0;
    for (const auto& p : c.points()) {
      my += p.mass * p.y;
      mphi += p.mass * phi(p.x);
    }
    r.between_term += lam * (mphi - mu_phi) * (my - mu_y);
  }
  r.total_covariance_gap = std::abs(r.mixture_cov - r.weighted_sum - r.between_term);
  r.weighted_sum_gap = std::abs(r.mixture_cov - r.weighted_sum);
  return r;
}

std::vector<double> sample_simplex(std::size_t k, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> lam(k);
  double total = 0.0;
  for (auto& v : lam) {
    do {
      v = rng.exponential();
    } while (!(v > 0.0));
    total += v;
  }
  for (auto& v : lam) v /= total;
  return lam;
}

CancellationProbe cancellation_set_probe(std::span<const double> covs, std::size_t trials,
                                         std::uint64_t seed, double tol) {
  if (std::all_of(covs.begin(), covs.end(), [](double c) { return c == 0.0; }))
    throw Error(ErrorKind::AllZeroCovs, "every component covariance is zero");
  CancellationProbe out;
  out.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto lam = sample_simplex(covs.size(), derive_seed(seed, t));
    double s = 0.0;
    for (std::size_t j = 0; j < covs.size(); ++j) s += lam[j] * covs[j];
    if (std::abs(s) < tol) ++out.hits;
  }
  out.hit_fraction = trials ? static_cast<double>(out.hits) / static_cast<double>(trials) : 0.0;

  // Positive and negative sides each carry total weighted covariance +1 / -1
  // before normalization; zero-covariance components share the mean weight.
  std::size_t npos = 0, nneg = 0;
  for (double c : covs) {
    npos += c > 0.0;
    nneg += c < 0.0;
  }
  if (npos > 0 && nneg > 0) {
    std::vector<double> lam(covs.size(), 0.0);
    double signed_total = 0.0;
    for (std::size_t j = 0; j < covs.size(); ++j) {
      if (covs[j] > 0.0) lam[j] = 1.0 / (static_cast<double>(npos) * covs[j]);
      if (covs[j] < 0.0) lam[j] = 1.0 / (static_cast<double>(nneg) * -covs[j]);
      signed_total += lam[j];
    }
    const double fill = signed_total / static_cast<double>(npos + nneg);
    double total = 0.0;
    for (std::size_t j = 0; j < covs.size(); ++j) {
      if (covs[j] == 0.0) lam[j] = fill;
      total += lam[j];
    }
    double s = 0.0;
    for (std::size_t j = 0; j < covs.size(); ++j) {
      lam[j] /= total;
      s += lam[j] * covs[j];
    }
    out.constructed_lambda = std::move(lam);
    out.constructed_sum = s;
  }
  return out;
}

namespace {

std::vector<double> recovery_r2(const Extractor& extractor, std::span<const LinearFunctional> latents,
                                const std::vector<Vec>& xs, const std::vector<double>& w) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  const auto k = static_cast<Eigen::Index>(extractor.output_dim());
  Mat design(n, k + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    design.row(i).head(k) = extractor.features(xs[i]).transpose();
    design(i, k) = 1.0;
  }
  Vec sw(n);
  for (Eigen::Index i = 0; i < n; ++i) sw(i) = std::sqrt(w[i]);
  const Mat wd = sw.asDiagonal() * design;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(wd);
  std::vector<double> out;
  for (const auto& latent : latents) {
    if (static_cast<std::size_t>(latent.weights.size()) != extractor.input_dim())
      throw Error(ErrorKind::DimMismatch, "latent functional has the wrong dimension");
    Vec t(n);
    for (Eigen::Index i = 0; i < n; ++i) t(i) = latent(xs[i]);
    double mean = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) mean += w[i] * t(i);
    double sst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) sst += w[i] * (t(i) - mean) * (t(i) - mean);
    if (sst <= 1e-14 * (1.0 + mean * mean))
      throw Error(ErrorKind::DegenerateVariance, "latent is constant on the evaluation support");
    const Vec coef = cod.solve(sw.cwiseProduct(t));
    const Vec resid = t - design * coef;
    double sse = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) sse += w[i] * resid(i) * resid(i);
    out.push_back(std::clamp(1.0 - sse / sst, 0.0, 1.0));
  }
  return out;
}

}  // namespace

std::vector<double> feature_recovery_probe(const Extractor& extractor,
                                           std::span<const LinearFunctional> latents,
                                           const DiscreteDistribution& eval) {
  std::vector<Vec> xs;
  std::vector<double> w;
  for (const auto& p : eval.points()) {
    xs.push_back(p.x);
    w.push_back(p.mass);
  }
  return recovery_r2(extractor, latents, xs, w);
}

std::vector<double> feature_recovery_probe(const Extractor& extractor,
                                           std::span<const LinearFunctional> latents,
                                           const Dataset& eval) {
  if (eval.examples.empty()) throw Error(ErrorKind::InvalidArgument, "empty evaluation dataset");
  std::vector<Vec> xs;
  for (const auto& e : eval.examples) xs.push_back(e.x);
  std::vector<double> w(xs.size(), 1.0 / static_cast<double>(xs.size()));
  return recovery_r2(extractor, latents, xs, w);
}

}  // namespace satlab
