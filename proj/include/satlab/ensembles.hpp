#pragma once

#include <cstdint>
#include <vector>

#include "satlab/mixtures.hpp"
#include "satlab/models.hpp"
#include "satlab/training.hpp"

namespace satlab {

struct EnsemblePlan {
  EnsemblePlan(MixtureSpec mix, std::vector<DiscreteDistribution> tgts)
      : mixture(std::move(mix)), targets(std::move(tgts)) {}

  std::size_t total_budget = 1800;
  std::vector<std::size_t> splits{1, 2, 4, 5};
  ArchSpec member_arch;
  std::uint64_t base_seed = 0;
  MixtureSpec mixture;
  std::vector<DiscreteDistribution> targets;
  TrainConfig train;  // steps and seed are overwritten per member
  /// The single-model row gets total_budget steps; split rows share
  /// floor(total_budget / baseline_bonus).
  double baseline_bonus = 1.125;
};

/// Throws InvalidArgument when the plan breaks its invariants.
void validate(const EnsemblePlan& plan);

std::size_t adjusted_budget(const EnsemblePlan& plan);
std::size_t steps_per_member(const EnsemblePlan& plan, std::size_t n);
/// Seed of member `index` in the n-way split: derive_seed(base_seed, {n, index}).
std::uint64_t member_seed(std::uint64_t base_seed, std::size_t n, std::size_t index);

/// Pretrains n members on the plan mixture, up to `jobs` at a time. Output is
/// ordered by member index.
std::vector<TrainedOutcome> train_member_outcomes(const EnsemblePlan& plan, std::size_t n,
                                                  std::size_t jobs = 1);
std::vector<Extractor> train_members(const EnsemblePlan& plan, std::size_t n, std::size_t jobs = 1);

/// Concatenation preserving member order. Throws InvalidArgument (empty) or
/// DimMismatch.
ConcatExtractor cat(std::vector<Extractor> members);

/// Targets whose own active coordinates, restricted to the sparse feature the
/// oracle selects on their coordinate group's sub-mixture, cannot be classified
/// perfectly. A coordinate group is the set of mixture components with the
/// same nonzero coordinates as the target.
std::vector<std::size_t> minority_targets(const MixtureSpec& mixture,
                                          const std::vector<DiscreteDistribution>& targets);
std::vector<std::size_t> minority_components(const MixtureSpec& mixture);

struct TimecatRow {
  std::size_t n = 0;
  std::size_t steps_per_member = 0;
  std::size_t total_steps = 0;
  double in_mixture_risk = 0.0;
  std::vector<double> target_risks;
  double minority_mean_risk = 0.0;
  std::vector<std::vector<std::size_t>> member_gates;  // surviving gates per member
};

struct TimecatReport {
  std::uint64_t base_seed = 0;
  std::size_t total_budget = 0;
  std::vector<std::size_t> minority;  // indices into targets
  std::vector<TimecatRow> rows;       // in plan.splits order
};

/// Minority indices refer to plan.targets; when targets are the mixture
/// components they coincide with minority_components(mixture).
TimecatReport run_timecat(const EnsemblePlan& plan, std::size_t jobs = 1);

}  // namespace satlab
