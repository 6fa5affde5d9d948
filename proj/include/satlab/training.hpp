#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "satlab/mixtures.hpp"
#include "satlab/models.hpp"

namespace satlab {

/// Gates with |theta_j| above this count as surviving.
inline constexpr double kGateThreshold = 1e-3;
/// Supports up to this size train on the exact expected loss (full batch).
inline constexpr std::size_t kExactSupportLimit = 64;

struct TrainConfig {
  std::size_t steps = 4000;
  std::size_t batch_size = 64;
  double step_size = 0.5;
  double l1_gate = 0.0;  // proximal L1 on dictionary gates only
  double l2 = 0.0;       // weight decay on every non-bias parameter
  Loss loss = Loss::Logistic;
  std::uint64_t seed = 0;
  std::size_t record_every = 100;
  bool force_sampling = false;  // minibatch sampling even for small supports
};

/// Throws InvalidArgument on a config that breaks its invariants.
void validate(const TrainConfig& cfg);

struct TracePoint {
  std::size_t step = 0;
  double loss = 0.0;  // regularized objective on the exact expected loss
  double exact_risk = 0.0;
};

struct TrainedOutcome {
  ComposedModel model;
  std::vector<TracePoint> loss_trace;
  double exact_risk = 0.0;
  std::vector<std::size_t> surviving_gates;  // indices into the gate parameters
};

/// Differentiable objective over a flat parameter vector.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dim() const = 0;
  /// Data loss and gradient for the minibatch selected by `batch_seed`.
  /// Full-batch objectives ignore the seed.
  virtual double loss_and_grad(const Vec& w, std::uint64_t batch_seed, Vec& grad) const = 0;
  /// Deterministic data loss used for trace records.
  virtual double record_loss(const Vec& w) const;
  virtual std::vector<char> gate_mask() const { return std::vector<char>(dim(), 0); }
  virtual std::vector<char> bias_mask() const { return std::vector<char>(dim(), 0); }
};

struct SgdTrace {
  Vec params;
  std::vector<std::size_t> steps;
  std::vector<double> objective;  // data loss + l2/2 |w|^2 + l1 |gates|_1
  std::vector<Vec> snapshots;     // parameters at each recorded step
};

/// Proximal (sub)gradient descent with constant step size:
///   w <- w - step_size * (grad + l2 * w_decay); gates <- soft(gates, step_size * l1_gate).
/// Records at step 0, every record_every steps, and at the end.
/// Throws NonFinite with the step index when the loss or parameters blow up.
SgdTrace sgd_run(const Objective& objective, const Vec& params0, const TrainConfig& cfg);

/// Sum over the support of mass * [predict(x) != y].
double exact_zero_one_risk(const ComposedModel& model, const DiscreteDistribution& dist);
/// Sum over the support of mass * loss(score(x), y).
double exact_expected_loss(const ComposedModel& model, const DiscreteDistribution& dist, Loss loss);

/// Gate parameter indices with |theta| > kGateThreshold.
std::vector<std::size_t> surviving_gates(const ComposedModel& model);

/// Trains extractor and head on `target`. Exact expected loss when the support
/// has at most kExactSupportLimit points, fresh minibatches otherwise.
TrainedOutcome direct_train(const DiscreteDistribution& target, const ArchSpec& arch,
                            const TrainConfig& cfg);
/// direct_train on mix(mixture).
TrainedOutcome pretrain(const MixtureSpec& mixture, const ArchSpec& arch, const TrainConfig& cfg);
/// Continues training from a given model.
TrainedOutcome train_model(const ComposedModel& init, const DiscreteDistribution& target,
                           const TrainConfig& cfg);

}  // namespace satlab
