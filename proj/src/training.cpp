#include "satlab/training.hpp"

#include <cmath>
#include <string>

#include "satlab/error.hpp"
#include "satlab/rng.hpp"

namespace satlab {
namespace {

double regularizer(const Vec& w, const std::vector<char>& gates, const std::vector<char>& biases,
                   const TrainConfig& cfg) {
  double l2 = 0.0;
  double l1 = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!biases[i]) l2 += w(i) * w(i);
    if (gates[i]) l1 += std::abs(w(i));
  }
  return 0.5 * cfg.l2 * l2 + cfg.l1_gate * l1;
}

class ModelObjective final : public Objective {
 public:
  ModelObjective(const ComposedModel& proto, const DiscreteDistribution& dist, const TrainConfig& cfg)
      : proto_(proto),
        dist_(dist),
        loss_(cfg.loss),
        batch_(cfg.batch_size),
        sampled_(cfg.force_sampling || dist.size() > kExactSupportLimit) {
    double acc = 0.0;
    for (const auto& p : dist_.points()) cum_.push_back(acc += p.mass);
  }

  std::size_t dim() const override { return param_count(proto_); }

  double loss_and_grad(const Vec& w, std::uint64_t batch_seed, Vec& grad) const override {
    const auto model = unflatten_params(proto_, w);
    grad = Vec::Zero(w.size());
    if (!sampled_) return accumulate_exact(model, &grad);
    SplitMix64 rng(batch_seed);
    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(batch_);
    for (std::size_t b = 0; b < batch_; ++b) {
      const double u = rng.uniform() * cum_.back();
      std::size_t i = 0;
      while (i + 1 < cum_.size() && !(u < cum_[i])) ++i;
      const auto& p = dist_[i];
      const double s = score(model, p.x);
      loss += scale * loss_value(loss_, s, p.y);
      grad += (scale * loss_slope(loss_, s, p.y)) * grad_score(model, p.x);
    }
    return loss;
  }

  double record_loss(const Vec& w) const override {
    return accumulate_exact(unflatten_params(proto_, w), nullptr);
  }

  std::vector<char> gate_mask() const override { return satlab::gate_mask(proto_); }
  std::vector<char> bias_mask() const override { return satlab::bias_mask(proto_); }

 private:
  double accumulate_exact(const ComposedModel& model, Vec* grad) const {
    double loss = 0.0;
    for (const auto& p : dist_.points()) {
      const double s = score(model, p.x);
      loss += p.mass * loss_value(loss_, s, p.y);
      if (grad) *grad += (p.mass * loss_slope(loss_, s, p.y)) * grad_score(model, p.x);
    }
    return loss;
  }

  ComposedModel proto_;
  const DiscreteDistribution& dist_;
  Loss loss_;
  std::size_t batch_;
  bool sampled_;
  std::vector<double> cum_;
};

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw Error(ErrorKind::InvalidArgument, "batch_size must be positive");
  if (!(cfg.step_size >= 0.0) || !std::isfinite(cfg.step_size))
    throw Error(ErrorKind::InvalidArgument, "step_size must be a finite non-negative number");
  if (!(cfg.l1_gate >= 0.0) || !(cfg.l2 >= 0.0))
    throw Error(ErrorKind::InvalidArgument, "regularization strengths must be non-negative");
  if (cfg.record_every == 0) throw Error(ErrorKind::InvalidArgument, "record_every must be positive");
}

double Objective::record_loss(const Vec& w) const {
  Vec g;
  return loss_and_grad(w, 0, g);
}

SgdTrace sgd_run(const Objective& objective, const Vec& params0, const TrainConfig& cfg) {
  validate(cfg);
  if (static_cast<std::size_t>(params0.size()) != objective.dim())
    throw Error(ErrorKind::LengthMismatch, "initial parameters do not match the objective");
  const auto gates = objective.gate_mask();
  const auto biases = objective.bias_mask();
  const double shrink = cfg.step_size * cfg.l1_gate;

  SgdTrace trace;
  Vec w = params0;
  Vec grad;
  auto record = [&](std::size_t step) {
    const double obj = objective.record_loss(w) + regularizer(w, gates, biases, cfg);
    if (!std::isfinite(obj)) throw Error(ErrorKind::NonFinite, "objective diverged", step);
    trace.steps.push_back(step);
    trace.objective.push_back(obj);
    trace.snapshots.push_back(w);
  };

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    if (t % cfg.record_every == 0) record(t);
    const double loss = objective.loss_and_grad(w, derive_seed(cfg.seed, {0xBA7C4ULL, t}), grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw Error(ErrorKind::NonFinite, "loss or gradient is not finite", t);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double decay = biases[i] ? 0.0 : cfg.l2 * w(i);
      w(i) -= cfg.step_size * (grad(i) + decay);
      if (gates[i] && shrink > 0.0) {
        const double mag = std::abs(w(i)) - shrink;
        w(i) = mag > 0.0 ? std::copysign(mag, w(i)) : 0.0;
      }
    }
    if (!w.allFinite()) throw Error(ErrorKind::NonFinite, "parameters are not finite", t + 1);
  }
  record(cfg.steps);
  trace.params = w;
  return trace;
}

double exact_zero_one_risk(const ComposedModel& model, const DiscreteDistribution& dist) {
  double risk = 0.0;
  for (const auto& p : dist.points())
    if (predict(model, p.x) != p.y) risk += p.mass;
  return risk;
}

double exact_expected_loss(const ComposedModel& model, const DiscreteDistribution& dist, Loss loss) {
  double total = 0.0;
  for (const auto& p : dist.points()) total += p.mass * loss_value(loss, score(model, p.x), p.y);
  return total;
}

std::vector<std::size_t> surviving_gates(const ComposedModel& model) {
  const auto mask = gate_mask(model);
  const Vec w = flatten_params(model);
  std::vector<std::size_t> out;
  std::size_t gate_index = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!mask[i]) continue;
    if (std::abs(w(i)) > kGateThreshold) out.push_back(gate_index);
    ++gate_index;
  }
  return out;
}

TrainedOutcome train_model(const ComposedModel& init, const DiscreteDistribution& target,
                           const TrainConfig& cfg) {
  if (init.extractor.input_dim() != target.dim())
    throw Error(ErrorKind::DimMismatch, "architecture input dimension " +
                                            std::to_string(init.extractor.input_dim()) +
                                            " does not match target dimension " +
                                            std::to_string(target.dim()));
  const ModelObjective objective(init, target, cfg);
  const auto trace = sgd_run(objective, flatten_params(init), cfg);
  TrainedOutcome out{unflatten_params(init, trace.params), {}, 0.0, {}};
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto snap = unflatten_params(init, trace.snapshots[k]);
    out.loss_trace.push_back({trace.steps[k], trace.objective[k], exact_zero_one_risk(snap, target)});
  }
  out.exact_risk = exact_zero_one_risk(out.model, target);
  out.surviving_gates = surviving_gates(out.model);
  return out;
}

TrainedOutcome direct_train(const DiscreteDistribution& target, const ArchSpec& arch,
                            const TrainConfig& cfg) {
  if (arch.input_dim != target.dim())
    throw Error(ErrorKind::DimMismatch, "architecture and target dimensions disagree");
  return train_model(init_model(arch, cfg.seed), target, cfg);
}

TrainedOutcome pretrain(const MixtureSpec& mixture, const ArchSpec& arch, const TrainConfig& cfg) {
  return direct_train(mix(mixture), arch, cfg);
}

}  // namespace satlab
