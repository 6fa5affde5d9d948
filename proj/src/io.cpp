#include "satlab/io.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include "satlab/error.hpp"

namespace satlab {
namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::Config, what); }

template <class F>
auto guarded(std::string_view where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    config_error(std::string(where) + ": " + e.what());
  }
}

void check_version(const Json& doc, std::string_view where) {
  if (!doc.is_object()) config_error(std::string(where) + " must be a JSON object");
  if (!doc.contains("version")) config_error(std::string(where) + " is missing 'version'");
  if (doc.at("version").get<int>() != kFormatVersion)
    config_error(std::string(where) + " has unsupported version " + doc.at("version").dump());
}

Json points_json(const DiscreteDistribution& d) {
  Json pts = Json::array();
  for (const auto& p : d.points()) {
    Json x = Json::array();
    for (Eigen::Index j = 0; j < p.x.size(); ++j) x.push_back(p.x(j));
    pts.push_back({{"x", x}, {"y", p.y}, {"mass", p.mass}});
  }
  return pts;
}

DiscreteDistribution points_from_json(std::size_t dim, const Json& pts) {
  if (!pts.is_array()) config_error("'points' must be an array");
  std::vector<LabeledPoint> out;
  for (const auto& p : pts) {
    require_keys_within(p, {"x", "y", "mass"}, "point");
    const auto xs = p.at("x").get<std::vector<double>>();
    Vec x(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t j = 0; j < xs.size(); ++j) x(static_cast<Eigen::Index>(j)) = xs[j];
    out.push_back({std::move(x), p.at("y").get<int>(), p.at("mass").get<double>()});
  }
  return DiscreteDistribution(dim, std::move(out));
}

Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json indices_json(const std::vector<std::size_t>& v) {
  Json a = Json::array();
  for (auto i : v) a.push_back(i);
  return a;
}

Json structure_json(const Extractor& e) {
  return std::visit(
      [](const auto& x) -> Json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, DictionaryExtractor>) {
          return {{"kind", "dictionary"}, {"dictionary_dim", x.gates.size()}};
        } else if constexpr (std::is_same_v<T, MlpExtractor>) {
          return {{"kind", "mlp"}, {"layer_widths", x.layer_widths}, {"activation", to_string(x.activation)}};
        } else {
          Json members = Json::array();
          for (const auto& m : x.members) members.push_back(structure_json(m));
          return {{"kind", "concat"}, {"members", members}};
        }
      },
      e.variant());
}

Extractor structure_from_json(const Json& doc) {
  const auto kind = doc.at("kind").get<std::string>();
  if (kind == "dictionary") {
    const auto d = doc.at("dictionary_dim").get<std::size_t>();
    return DictionaryExtractor{Vec::Zero(static_cast<Eigen::Index>(d))};
  }
  if (kind == "mlp") {
    return MlpExtractor::init(doc.at("layer_widths").get<std::vector<std::size_t>>(),
                              parse_activation(doc.at("activation").get<std::string>()), 0);
  }
  if (kind == "concat") {
    std::vector<Extractor> members;
    for (const auto& m : doc.at("members")) members.push_back(structure_from_json(m));
    return make_concat(std::move(members));
  }
  config_error("unknown extractor kind '" + kind + "'");
}

}  // namespace

void require_keys_within(const Json& obj, std::initializer_list<std::string_view> allowed,
                         std::string_view where) {
  if (!obj.is_object()) config_error(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) config_error("unknown field '" + key + "' in " + std::string(where));
  }
}

Json to_json(const DiscreteDistribution& dist) {
  return {{"version", kFormatVersion}, {"dim", dist.dim()}, {"points", points_json(dist)}};
}

Json to_json(const MixtureSpec& mixture) {
  Json comps = Json::array();
  for (const auto& c : mixture.components()) comps.push_back({{"points", points_json(c)}});
  return {{"version", kFormatVersion},
          {"dim", mixture.dim()},
          {"components", comps},
          {"weights", mixture.weights()}};
}

DiscreteDistribution distribution_from_json(const Json& doc) {
  return guarded("distribution", [&] {
    check_version(doc, "distribution");
    require_keys_within(doc, {"version", "dim", "points"}, "distribution");
    return points_from_json(doc.at("dim").get<std::size_t>(), doc.at("points"));
  });
}

MixtureSpec mixture_from_json(const Json& doc) {
  return guarded("mixture", [&] {
    check_version(doc, "mixture");
    require_keys_within(doc, {"version", "dim", "components", "weights"}, "mixture");
    const auto dim = doc.at("dim").get<std::size_t>();
    std::vector<DiscreteDistribution> comps;
    for (const auto& c : doc.at("components")) {
      require_keys_within(c, {"points"}, "component");
      comps.push_back(points_from_json(dim, c.at("points")));
    }
    if (comps.empty()) config_error("mixture needs at least one component");
    return MixtureSpec(std::move(comps), doc.at("weights").get<std::vector<double>>());
  });
}

Json checkpoint_to_json(const ComposedModel& model, const std::vector<std::uint64_t>& seed_lineage) {
  Json doc = {{"version", kFormatVersion}};
  const Json structure = structure_json(model.extractor);
  for (const auto& [k, v] : structure.items()) doc[k] = v;
  doc["parameters"] = vec_json(flatten_params(model));
  doc["seed_lineage"] = seed_lineage;
  return doc;
}

Checkpoint checkpoint_from_json(const Json& doc) {
  return guarded("checkpoint", [&] {
    check_version(doc, "checkpoint");
    require_keys_within(doc,
                        {"version", "kind", "dictionary_dim", "layer_widths", "activation", "members",
                         "parameters", "seed_lineage"},
                        "checkpoint");
    Extractor e = structure_from_json(doc);
    const auto out_dim = static_cast<Eigen::Index>(e.output_dim());
    ComposedModel skeleton(std::move(e), LinearHead{Vec::Zero(out_dim), 0.0});
    const auto raw = doc.at("parameters").get<std::vector<double>>();
    const Vec v = Eigen::Map<const Vec>(raw.data(), static_cast<Eigen::Index>(raw.size()));
    return Checkpoint{unflatten_params(skeleton, v),
                      doc.value("seed_lineage", std::vector<std::uint64_t>{})};
  });
}

Json to_json(const TrainConfig& cfg) {
  return {{"steps", cfg.steps},
          {"batch_size", cfg.batch_size},
          {"step_size", cfg.step_size},
          {"l1_gate", cfg.l1_gate},
          {"l2", cfg.l2},
          {"loss", to_string(cfg.loss)},
          {"seed", cfg.seed},
          {"record_every", cfg.record_every},
          {"force_sampling", cfg.force_sampling}};
}

TrainConfig train_config_from_json(const Json& doc, const TrainConfig& defaults) {
  return guarded("train config", [&] {
    require_keys_within(doc,
                        {"steps", "batch_size", "step_size", "l1_gate", "l2", "loss", "seed",
                         "record_every", "force_sampling"},
                        "train config");
    TrainConfig c = defaults;
    c.steps = doc.value("steps", c.steps);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.step_size = doc.value("step_size", c.step_size);
    c.l1_gate = doc.value("l1_gate", c.l1_gate);
    c.l2 = doc.value("l2", c.l2);
    if (doc.contains("loss")) c.loss = parse_loss(doc.at("loss").get<std::string>());
    c.seed = doc.value("seed", c.seed);
    c.record_every = doc.value("record_every", c.record_every);
    c.force_sampling = doc.value("force_sampling", c.force_sampling);
    validate(c);
    return c;
  });
}

Json to_json(const ArchSpec& arch) {
  Json doc = {{"kind", arch.kind == ArchSpec::Kind::Dictionary ? "dictionary" : "mlp"}};
  if (arch.kind == ArchSpec::Kind::Dictionary) {
    doc["gate_init"] = {arch.gate_init_lo, arch.gate_init_hi};
  } else {
    doc["hidden"] = arch.hidden;
    doc["activation"] = to_string(arch.activation);
  }
  return doc;
}

ArchSpec arch_from_json(const Json& doc, const ArchSpec& defaults) {
  return guarded("arch", [&] {
    require_keys_within(doc, {"kind", "hidden", "activation", "gate_init"}, "arch");
    ArchSpec a = defaults;
    if (doc.contains("kind")) {
      const auto k = doc.at("kind").get<std::string>();
      if (k == "dictionary")
        a.kind = ArchSpec::Kind::Dictionary;
      else if (k == "mlp")
        a.kind = ArchSpec::Kind::Mlp;
      else
        config_error("unknown arch kind '" + k + "'");
    }
    a.hidden = doc.value("hidden", a.hidden);
    if (doc.contains("activation")) a.activation = parse_activation(doc.at("activation").get<std::string>());
    if (doc.contains("gate_init")) {
      const auto g = doc.at("gate_init").get<std::vector<double>>();
      if (g.size() != 2 || !(g[0] <= g[1])) config_error("gate_init must be [lo, hi] with lo <= hi");
      a.gate_init_lo = g[0];
      a.gate_init_hi = g[1];
    }
    if (a.kind == ArchSpec::Kind::Mlp && a.hidden.empty())
      config_error("mlp arch needs at least one hidden width");
    return a;
  });
}

Json to_json(const OptimalClassifier& c) {
  return {{"weights", vec_json(c.weights)},
          {"bias", c.bias},
          {"risk", c.risk},
          {"ignored_points", indices_json(c.ignored_points)}};
}

Json to_json(const CovarianceReport& r) {
  return {{"component_covs", r.component_covs},
          {"mixture_cov", r.mixture_cov},
          {"between_term", r.between_term},
          {"weighted_sum", r.weighted_sum},
          {"total_covariance_gap", r.total_covariance_gap},
          {"weighted_sum_gap", r.weighted_sum_gap}};
}

Json to_json(const ProbeResult& r) {
  Json doc = {{"head", {{"gamma", vec_json(r.head.gamma)}, {"bias", r.head.bias}}},
              {"gamma0", r.gamma0},
              {"exact_risk", r.exact_risk},
              {"span_exact", r.span_exact},
              {"optimal_head", {{"gamma", vec_json(r.optimal_head.gamma)}, {"bias", r.optimal_head.bias}}},
              {"optimal_gamma0", r.optimal_gamma0},
              {"surrogate_risk", r.surrogate_risk},
              {"surrogate_loss", r.surrogate_loss},
              {"grad_norm", r.grad_norm}};
  doc["feature_subset"] = r.feature_subset ? indices_json(*r.feature_subset) : Json(nullptr);
  return doc;
}

Json to_json(const TimecatReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json gates = Json::array();
    for (const auto& g : row.member_gates) gates.push_back(indices_json(g));
    rows.push_back({{"n", row.n},
                    {"steps_per_member", row.steps_per_member},
                    {"total_steps", row.total_steps},
                    {"in_mixture_risk", row.in_mixture_risk},
                    {"target_risks", row.target_risks},
                    {"minority_mean_risk", row.minority_mean_risk},
                    {"member_gates", gates}});
  }
  return {{"base_seed", r.base_seed},
          {"total_budget", r.total_budget},
          {"minority", indices_json(r.minority)},
          {"rows", rows}};
}

std::string fmt(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string join_indices(const std::vector<std::size_t>& idx, char sep) {
  std::string out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(idx[i]);
  }
  return out;
}

std::string loss_trace_csv(const TrainedOutcome& outcome) {
  std::string out = "step,loss,exact_risk\n";
  for (const auto& t : outcome.loss_trace)
    out += std::to_string(t.step) + "," + fmt(t.loss) + "," + fmt(t.exact_risk) + "\n";
  return out;
}

namespace {

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  return tmp;
}

void write_raw(const std::filesystem::path& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  f.flush();
  if (!f) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

void atomic_write(const std::filesystem::path& path, std::string_view content) {
  write_bundle(path.parent_path().empty() ? "." : path.parent_path(),
               OutputBundle{{path.filename().string(), std::string(content)}});
}

void write_bundle(const std::filesystem::path& dir, const OutputBundle& files) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  // Stage every file before the first rename so a failed write leaves the
  // directory untouched.
  std::vector<std::filesystem::path> staged;
  auto discard = [&] {
    for (const auto& t : staged) std::filesystem::remove(t, ec);
  };
  try {
    for (const auto& [name, content] : files) {
      staged.push_back(temp_sibling(dir / name));
      write_raw(staged.back(), content);
    }
  } catch (...) {
    discard();
    throw;
  }
  std::size_t i = 0;
  for (const auto& [name, content] : files) {
    std::filesystem::rename(staged[i++], dir / name, ec);
    if (ec) {
      discard();
      throw Error(ErrorKind::Io, "cannot rename onto " + (dir / name).string());
    }
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace satlab
