#pragma once

#include <optional>
#include <span>
#include <vector>

#include "satlab/mixtures.hpp"
#include "satlab/models.hpp"
#include "satlab/training.hpp"

namespace satlab {

/// Newton iterations stop once the gradient norm falls below this.
inline constexpr double kProbeGradTol = 1e-8;

struct ProbeOptions {
  double ridge = 0.0;  // l2 on head weights (never on the bias)
  std::size_t max_iter = 500;
};

struct ProbeResult {
  /// Logistic head on the (restricted) features.
  LinearHead head;
  /// Coefficient on the fixed offset feature. Zero for linear probes; 1 (or the
  /// fitted value) for NTK probes.
  double gamma0 = 0.0;
  /// Best zero-one risk reachable by an affine head on these features. Exact
  /// (span oracle) when span_exact, otherwise the surrogate head's risk.
  double exact_risk = 0.0;
  /// Head (and offset coefficient) attaining exact_risk.
  LinearHead optimal_head;
  double optimal_gamma0 = 0.0;
  bool span_exact = false;
  /// Zero-one risk and expected logistic loss of the surrogate head.
  double surrogate_risk = 0.0;
  double surrogate_loss = 0.0;
  double grad_norm = 0.0;
  std::optional<std::vector<std::size_t>> feature_subset;
};

/// Convex logistic fit of a head over frozen features:
///   min_w,b  sum_i m_i log(1 + exp(-y_i (z_i . w + b + o_i))) + ridge/2 |w|^2
/// Damped Newton with backtracking. Returns (w, b, grad_norm).
struct LogisticFit {
  Vec w;
  double b = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};
LogisticFit fit_logistic(const Mat& z, const Vec& offset, std::span<const int> y,
                         std::span<const double> mass, const ProbeOptions& opts);

/// Freezes `extractor` and fits a head on `target` using the listed features
/// (all when `restrict` is empty). Throws DimMismatch, EmptyRestriction.
ProbeResult linear_probe(const Extractor& extractor, const DiscreteDistribution& target,
                         std::optional<std::vector<std::size_t>> restrict = std::nullopt,
                         const ProbeOptions& opts = {});

/// Gradient features of a model at its current parameters.
class NtkFeatures {
 public:
  explicit NtkFeatures(ComposedModel model);  // NonFinite

  const Vec& base_params() const noexcept { return base_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(base_.size()); }
  Vec jacobian(const Vec& x) const;
  double base_score(const Vec& x) const;
  const ComposedModel& model() const noexcept { return model_; }

 private:
  ComposedModel model_;
  Vec base_;
};

NtkFeatures ntk_features(const ComposedModel& model);

struct NtkProbeOptions {
  double ridge = 1e-8;
  bool fit_gamma0 = false;
  std::optional<std::vector<std::size_t>> restrict;  // subset of parameter coordinates
  std::size_t max_iter = 500;
};

/// Fits delta on base_score(x) * gamma0 + jacobian(x) . delta + b. The head of
/// the result holds delta (over the restricted coordinates) and b.
ProbeResult ntk_probe(const ComposedModel& model, const DiscreteDistribution& target,
                      const NtkProbeOptions& opts = {});

/// max_x |f(x; w + delta) - f(x; w) - jacobian(x) . delta|. Throws LengthMismatch.
double linearization_error(const ComposedModel& model, const Vec& delta,
                           std::span<const Vec> probe_points);

/// probe.exact_risk - direct.exact_risk; positive means transfer is worse.
double transfer_gap(const TrainedOutcome& direct, const ProbeResult& probe);

struct TransferRow {
  std::size_t target_id = 0;
  double direct_risk = 0.0;
  double probe_risk = 0.0;
  double gap = 0.0;
  std::vector<std::size_t> feature_subset;
};

}  // namespace satlab
