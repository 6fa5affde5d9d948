#include "satlab/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "satlab/error.hpp"
#include "satlab/oracle.hpp"

namespace satlab {
namespace {

double stable_logistic(double t) { return t > 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t)); }

// sigma(-t), the magnitude of d/dt log(1 + exp(-t))
double sigma_neg(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

struct Problem {
  const Mat& z;
  const Vec& offset;
  std::span<const int> y;
  std::span<const double> m;
  double ridge;

  double value(const Vec& theta) const {
    const auto p = z.cols();
    const Vec s = z * theta.head(p) + offset + Vec::Constant(z.rows(), theta(p));
    double v = 0.5 * ridge * theta.head(p).squaredNorm();
    for (Eigen::Index i = 0; i < z.rows(); ++i) v += m[i] * stable_logistic(y[i] * s(i));
    return v;
  }

  void derivatives(const Vec& theta, Vec& g, Mat& h) const {
    const auto p = z.cols();
    const Vec s = z * theta.head(p) + offset + Vec::Constant(z.rows(), theta(p));
    g = Vec::Zero(p + 1);
    h = Mat::Zero(p + 1, p + 1);
    Vec row(p + 1);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double t = y[i] * s(i);
      const double q = sigma_neg(t);
      row.head(p) = z.row(i).transpose();
      row(p) = 1.0;
      g -= (m[i] * q * y[i]) * row;
      h.selfadjointView<Eigen::Lower>().rankUpdate(row, m[i] * q * (1.0 - q));
    }
    h = h.selfadjointView<Eigen::Lower>();
    g.head(p) += ridge * theta.head(p);
    h.diagonal().head(p).array() += ridge;
  }
};

double zero_one(const Mat& z, const Vec& offset, const Vec& w, double b, std::span<const int> y,
                std::span<const double> m) {
  double risk = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double s = z.row(i).dot(w) + offset(i) + b;
    if ((s > 0.0 ? 1 : -1) != y[i]) risk += m[i];
  }
  return risk;
}

struct Support {
  std::vector<int> y;
  std::vector<double> m;
};

Support labels_of(const DiscreteDistribution& d) {
  Support s;
  for (const auto& p : d.points()) {
    s.y.push_back(p.y);
    s.m.push_back(p.mass);
  }
  return s;
}

std::optional<OptimalClassifier> span_oracle(const Mat& z, const Support& sup) {
  std::vector<WeightedSample> items;
  for (Eigen::Index i = 0; i < z.rows(); ++i) items.push_back({z.row(i).transpose(), sup.y[i], sup.m[i]});
  items = merge_coincident(std::move(items));
  if (items.size() > kOracleSupportLimit) return std::nullopt;
  return optimal_affine_on(items);
}

std::vector<std::size_t> checked_subset(std::optional<std::vector<std::size_t>> restrict,
                                        std::size_t width) {
  if (!restrict) {
    std::vector<std::size_t> all(width);
    for (std::size_t j = 0; j < width; ++j) all[j] = j;
    return all;
  }
  if (restrict->empty()) throw Error(ErrorKind::EmptyRestriction, "restriction selects no features");
  for (auto j : *restrict)
    if (j >= width)
      throw Error(ErrorKind::DimMismatch,
                  "feature index " + std::to_string(j) + " exceeds width " + std::to_string(width));
  return *restrict;
}

}  // namespace

LogisticFit fit_logistic(const Mat& z, const Vec& offset, std::span<const int> y,
                         std::span<const double> mass, const ProbeOptions& opts) {
  const auto n = z.rows();
  const auto p = z.cols();
  if (offset.size() != n || static_cast<Eigen::Index>(y.size()) != n ||
      static_cast<Eigen::Index>(mass.size()) != n)
    throw Error(ErrorKind::LengthMismatch, "probe inputs disagree on the number of points");
  const Problem prob{z, offset, y, mass, opts.ridge};
  Vec theta = Vec::Zero(p + 1);
  double f = prob.value(theta);
  Vec g;
  Mat h;
  double gnorm = 0.0;
  double damping = 1e-6;
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    prob.derivatives(theta, g, h);
    gnorm = g.norm();
    if (!std::isfinite(gnorm)) throw Error(ErrorKind::NonFinite, "probe gradient is not finite");
    if (gnorm < kProbeGradTol) break;
    bool moved = false;
    for (int attempt = 0; attempt < 40 && !moved; ++attempt) {
      Mat a = h;
      a.diagonal().array() += damping * std::max(gnorm, 1e-12);
      const Vec d = a.ldlt().solve(-g);
      // Backtracking on the Newton direction.
      for (double step = 1.0; step > 1e-10; step *= 0.5) {
        const Vec cand = theta + step * d;
        const double fc = prob.value(cand);
        if (fc <= f + 1e-4 * step * g.dot(d)) {
          moved = true;
          theta = cand;
          f = fc;
          break;
        }
      }
      if (moved) {
        damping = std::max(damping * 0.3, 1e-9);
      } else {
        damping *= 10.0;
      }
    }
    if (!moved) break;
  }
  prob.derivatives(theta, g, h);
  return LogisticFit{theta.head(p), theta(p), f, g.norm()};
}

ProbeResult linear_probe(const Extractor& extractor, const DiscreteDistribution& target,
                         std::optional<std::vector<std::size_t>> restrict, const ProbeOptions& opts) {
  if (extractor.input_dim() != target.dim())
    throw Error(ErrorKind::DimMismatch, "extractor input dimension " +
                                            std::to_string(extractor.input_dim()) +
                                            " does not match target dimension " +
                                            std::to_string(target.dim()));
  const bool restricted = restrict.has_value();
  const auto cols = checked_subset(std::move(restrict), extractor.output_dim());
  const auto n = static_cast<Eigen::Index>(target.size());
  Mat z(n, static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec phi = extractor.features(target[i].x);
    for (std::size_t k = 0; k < cols.size(); ++k) z(i, static_cast<Eigen::Index>(k)) = phi(cols[k]);
  }
  const auto sup = labels_of(target);
  const Vec zero_offset = Vec::Zero(n);
  const auto fit = fit_logistic(z, zero_offset, sup.y, sup.m, opts);

  ProbeResult r;
  r.head = LinearHead{fit.w, fit.b};
  r.surrogate_loss = fit.loss;
  r.grad_norm = fit.grad_norm;
  r.surrogate_risk = zero_one(z, zero_offset, fit.w, fit.b, sup.y, sup.m);
  r.exact_risk = r.surrogate_risk;
  r.optimal_head = r.head;
  if (restricted) r.feature_subset = cols;
  if (auto opt = span_oracle(z, sup)) {
    r.span_exact = true;
    if (opt->risk < r.exact_risk) {
      r.exact_risk = opt->risk;
      r.optimal_head = LinearHead{opt->weights, opt->bias};
    }
  }
  return r;
}

NtkFeatures::NtkFeatures(ComposedModel model) : model_(std::move(model)), base_(flatten_params(model_)) {
  if (!base_.allFinite()) throw Error(ErrorKind::NonFinite, "model parameters are not finite");
}

Vec NtkFeatures::jacobian(const Vec& x) const { return grad_score(model_, x); }

double NtkFeatures::base_score(const Vec& x) const { return score(model_, x); }

NtkFeatures ntk_features(const ComposedModel& model) { return NtkFeatures(model); }

ProbeResult ntk_probe(const ComposedModel& model, const DiscreteDistribution& target,
                      const NtkProbeOptions& opts) {
  if (model.extractor.input_dim() != target.dim())
    throw Error(ErrorKind::DimMismatch, "model and target dimensions disagree");
  const NtkFeatures ntk(model);
  const bool restricted = opts.restrict.has_value();
  const auto cols = checked_subset(opts.restrict, ntk.dim());
  const auto n = static_cast<Eigen::Index>(target.size());
  const auto k = static_cast<Eigen::Index>(cols.size());

  Mat jz(n, k);
  Vec base(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec j = ntk.jacobian(target[i].x);
    for (Eigen::Index c = 0; c < k; ++c) jz(i, c) = j(cols[c]);
    base(i) = ntk.base_score(target[i].x);
  }
  const auto sup = labels_of(target);

  ProbeResult r;
  const ProbeOptions po{opts.ridge, opts.max_iter};
  Vec delta;
  double b = 0.0;
  if (opts.fit_gamma0) {
    Mat z(n, k + 1);
    z << jz, base;
    const auto fit = fit_logistic(z, Vec::Zero(n), sup.y, sup.m, po);
    delta = fit.w.head(k);
    r.gamma0 = fit.w(k);
    b = fit.b;
    r.surrogate_loss = fit.loss;
    r.grad_norm = fit.grad_norm;
  } else {
    const auto fit = fit_logistic(jz, base, sup.y, sup.m, po);
    delta = fit.w;
    r.gamma0 = 1.0;
    b = fit.b;
    r.surrogate_loss = fit.loss;
    r.grad_norm = fit.grad_norm;
  }
  r.head = LinearHead{delta, b};
  r.surrogate_risk = zero_one(jz, r.gamma0 * base, delta, b, sup.y, sup.m);
  r.exact_risk = r.surrogate_risk;
  r.optimal_head = r.head;
  r.optimal_gamma0 = r.gamma0;
  if (restricted) r.feature_subset = cols;

  // The base score equals jacobian . e, where e holds the head parameters and is
  // zero elsewhere. When every head coordinate is selected the offset lies in
  // the span of the selected gradients.
  const std::size_t p = ntk.dim();
  const std::size_t head_len = static_cast<std::size_t>(model.head.gamma.size()) + 1;
  Vec e_sel = Vec::Zero(k);
  std::size_t covered = 0;
  for (Eigen::Index c = 0; c < k; ++c)
    if (cols[c] >= p - head_len) {
      e_sel(c) = ntk.base_params()(cols[c]);
      ++covered;
    }
  const bool offset_in_span = covered == head_len;

  if (offset_in_span) {
    if (auto opt = span_oracle(jz, sup)) {
      r.span_exact = true;
      if (opt->risk < r.exact_risk) {
        r.exact_risk = opt->risk;
        // gamma0 * base + jz . d + b = jz . (d + gamma0 e) + b
        r.optimal_head = LinearHead{opt->weights - r.gamma0 * e_sel, opt->bias};
      }
    }
  } else {
    Mat z(n, k + 1);
    z << jz, base;
    if (auto opt = span_oracle(z, sup)) {
      const double a = opt->weights(k);
      if (opts.fit_gamma0 || a > 0.0) {
        r.span_exact = true;
        if (opt->risk < r.exact_risk) {
          const double scale = opts.fit_gamma0 ? 1.0 : 1.0 / a;
          r.exact_risk = opt->risk;
          r.optimal_head = LinearHead{opt->weights.head(k) * scale, opt->bias * scale};
          r.optimal_gamma0 = opts.fit_gamma0 ? a : 1.0;
        }
      }
    }
  }
  return r;
}

double linearization_error(const ComposedModel& model, const Vec& delta, std::span<const Vec> probe_points) {
  const NtkFeatures ntk(model);
  if (static_cast<std::size_t>(delta.size()) != ntk.dim())
    throw Error(ErrorKind::LengthMismatch, "delta has " + std::to_string(delta.size()) +
                                               " entries for " + std::to_string(ntk.dim()) +
                                               " parameters");
  const auto moved = unflatten_params(model, ntk.base_params() + delta);
  double worst = 0.0;
  for (const auto& x : probe_points) {
    const double lin = ntk.base_score(x) + ntk.jacobian(x).dot(delta);
    worst = std::max(worst, std::abs(score(moved, x) - lin));
  }
  return worst;
}

double transfer_gap(const TrainedOutcome& direct, const ProbeResult& probe) {
  return probe.exact_risk - direct.exact_risk;
}

}  // namespace satlab
