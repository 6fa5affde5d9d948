#include "satlab/ensembles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <string>

#include "satlab/error.hpp"
#include "satlab/oracle.hpp"
#include "satlab/parallel.hpp"
#include "satlab/rng.hpp"
#include "satlab/transfer.hpp"

namespace satlab {
namespace {

std::set<std::size_t> active_coordinates(const DiscreteDistribution& d) {
  std::set<std::size_t> out;
  for (const auto& p : d.points())
    for (Eigen::Index j = 0; j < p.x.size(); ++j)
      if (p.x(j) != 0.0) out.insert(static_cast<std::size_t>(j));
  return out;
}

}  // namespace

void validate(const EnsemblePlan& plan) {
  if (plan.total_budget == 0) throw Error(ErrorKind::InvalidArgument, "total_budget must be positive");
  if (plan.splits.empty()) throw Error(ErrorKind::InvalidArgument, "splits must be nonempty");
  for (auto n : plan.splits)
    if (n == 0) throw Error(ErrorKind::InvalidArgument, "splits must be positive");
  if (!(plan.baseline_bonus >= 1.0) || !std::isfinite(plan.baseline_bonus))
    throw Error(ErrorKind::InvalidArgument, "baseline_bonus must be at least 1");
  if (plan.targets.empty()) throw Error(ErrorKind::InvalidArgument, "plan needs at least one target");
  for (const auto& t : plan.targets)
    if (t.dim() != plan.mixture.dim())
      throw Error(ErrorKind::DimMismatch, "target and mixture dimensions disagree");
  if (plan.member_arch.input_dim != plan.mixture.dim())
    throw Error(ErrorKind::DimMismatch, "member architecture and mixture dimensions disagree");
  for (auto n : plan.splits)
    if (n > 1 && steps_per_member(plan, n) == 0)
      throw Error(ErrorKind::InvalidArgument,
                  "split " + std::to_string(n) + " leaves members with no steps");
  validate(plan.train);
}

std::size_t adjusted_budget(const EnsemblePlan& plan) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(plan.total_budget) / plan.baseline_bonus));
}

std::size_t steps_per_member(const EnsemblePlan& plan, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "split must be positive");
  if (n == 1) return plan.total_budget;
  return adjusted_budget(plan) / n;
}

std::uint64_t member_seed(std::uint64_t base_seed, std::size_t n, std::size_t index) {
  return derive_seed(base_seed, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(index)});
}

std::vector<TrainedOutcome> train_member_outcomes(const EnsemblePlan& plan, std::size_t n,
                                                  std::size_t jobs) {
  if (std::find(plan.splits.begin(), plan.splits.end(), n) == plan.splits.end())
    throw Error(ErrorKind::InvalidArgument, "split " + std::to_string(n) + " is not in the plan");
  const auto merged = mix(plan.mixture);
  std::vector<std::optional<TrainedOutcome>> slots(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    TrainConfig cfg = plan.train;
    cfg.steps = steps_per_member(plan, n);
    cfg.seed = member_seed(plan.base_seed, n, i);
    slots[i] = direct_train(merged, plan.member_arch, cfg);
  });
  std::vector<TrainedOutcome> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<Extractor> train_members(const EnsemblePlan& plan, std::size_t n, std::size_t jobs) {
  std::vector<Extractor> out;
  for (auto& o : train_member_outcomes(plan, n, jobs)) out.push_back(std::move(o.model.extractor));
  return out;
}

ConcatExtractor cat(std::vector<Extractor> members) { return make_concat(std::move(members)); }

std::vector<std::size_t> minority_targets(const MixtureSpec& mixture,
                                          const std::vector<DiscreteDistribution>& targets) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto active = active_coordinates(targets[t]);
    std::vector<DiscreteDistribution> group;
    std::vector<double> weights;
    for (std::size_t j = 0; j < mixture.size(); ++j)
      if (active_coordinates(mixture.components()[j]) == active) {
        group.push_back(mixture.components()[j]);
        weights.push_back(mixture.weights()[j]);
      }
    if (group.empty() || active.empty()) continue;
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (auto& w : weights) w /= total;
    // Renormalize exactly so the sub-mixture passes the mass check.
    weights.back() = 1.0 - std::accumulate(weights.begin(), weights.end() - 1, 0.0);
    const auto local = mix(MixtureSpec(std::move(group), std::move(weights)));
    const std::vector<std::size_t> candidates(active.begin(), active.end());
    const auto sparse = sparse_optimal_features(local, candidates);
    if (sparse.empty()) continue;
    const std::size_t pick[] = {sparse.front()};
    if (optimal_risk_in_span(targets[t], pick) > 1e-12) out.push_back(t);
  }
  return out;
}

std::vector<std::size_t> minority_components(const MixtureSpec& mixture) {
  return minority_targets(mixture, mixture.components());
}

TimecatReport run_timecat(const EnsemblePlan& plan, std::size_t jobs) {
  validate(plan);
  TimecatReport report;
  report.base_seed = plan.base_seed;
  report.total_budget = plan.total_budget;
  report.minority = minority_targets(plan.mixture, plan.targets);
  const auto merged = mix(plan.mixture);

  for (auto n : plan.splits) {
    TimecatRow row;
    row.n = n;
    row.steps_per_member = steps_per_member(plan, n);
    row.total_steps = n * row.steps_per_member;
    auto outcomes = train_member_outcomes(plan, n, jobs);
    std::vector<Extractor> members;
    for (auto& o : outcomes) {
      row.member_gates.push_back(o.surviving_gates);
      members.push_back(std::move(o.model.extractor));
    }
    const Extractor rep = cat(std::move(members));
    row.in_mixture_risk = linear_probe(rep, merged).exact_risk;
    row.target_risks.resize(plan.targets.size());
    parallel_for(plan.targets.size(), jobs,
                 [&](std::size_t t) { row.target_risks[t] = linear_probe(rep, plan.targets[t]).exact_risk; });
    double acc = 0.0;
    for (auto t : report.minority) acc += row.target_risks[t];
    row.minority_mean_risk = report.minority.empty() ? 0.0 : acc / static_cast<double>(report.minority.size());
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace satlab
