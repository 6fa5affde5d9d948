#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "satlab/ensembles.hpp"
#include "satlab/mixtures.hpp"
#include "satlab/models.hpp"
#include "satlab/oracle.hpp"
#include "satlab/training.hpp"
#include "satlab/transfer.hpp"

namespace satlab {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

/// Throws Config when `obj` is not an object or carries a key outside `allowed`.
void require_keys_within(const Json& obj, std::initializer_list<std::string_view> allowed,
                         std::string_view where);

// Distribution documents:
//   {"version": 1, "dim": d, "points": [{"x": [...], "y": +-1, "mass": m}, ...]}
// Mixture documents:
//   {"version": 1, "dim": d, "components": [{"points": [...]}, ...], "weights": [...]}
Json to_json(const DiscreteDistribution& dist);
Json to_json(const MixtureSpec& mixture);
DiscreteDistribution distribution_from_json(const Json& doc);
MixtureSpec mixture_from_json(const Json& doc);

// Checkpoints:
//   {"version": 1, "kind": "dictionary" | "mlp" | "concat",
//    "dictionary_dim": d                      (dictionary)
//    "layer_widths": [...], "activation": a   (mlp)
//    "members": [<structure without parameters>, ...]   (concat)
//    "parameters": [flat vector, layout of flatten_params],
//    "seed_lineage": [...]}
struct Checkpoint {
  ComposedModel model;
  std::vector<std::uint64_t> seed_lineage;
};
Json checkpoint_to_json(const ComposedModel& model, const std::vector<std::uint64_t>& seed_lineage);
Checkpoint checkpoint_from_json(const Json& doc);

/// {"steps", "batch_size", "step_size", "l1_gate", "l2", "loss", "seed",
///  "record_every", "force_sampling"}
Json to_json(const TrainConfig& cfg);
/// Missing keys keep the value from `defaults`; unknown keys throw Config.
TrainConfig train_config_from_json(const Json& doc, const TrainConfig& defaults = {});

Json to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const Json& doc, const ArchSpec& defaults = {});

Json to_json(const OptimalClassifier& c);
Json to_json(const CovarianceReport& r);
Json to_json(const ProbeResult& r);
Json to_json(const TimecatReport& r);

/// Fixed-format number for CSV cells (shortest of %.12g).
std::string fmt(double v);
std::string join_indices(const std::vector<std::size_t>& idx, char sep = ';');

/// step,loss,exact_risk
std::string loss_trace_csv(const TrainedOutcome& outcome);

/// Writes to a sibling temporary file, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

/// Named file contents produced by a command, written only after every
/// computation has succeeded.
using OutputBundle = std::map<std::string, std::string>;
void write_bundle(const std::filesystem::path& dir, const OutputBundle& files);

Json read_json_file(const std::filesystem::path& path);  // Io, Config

}  // namespace satlab
