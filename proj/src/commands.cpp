#include "satlab/commands.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "satlab/ensembles.hpp"
#include "satlab/oracle.hpp"
#include "satlab/parallel.hpp"
#include "satlab/rng.hpp"
#include "satlab/transfer.hpp"

namespace satlab {
namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::Config, what); }

// Library validation errors raised while checking a config are config errors.
template <class F>
auto as_config(std::string_view where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    config_error(std::string(where) + ": " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    config_error(std::string(where) + ": " + e.what());
  }
}

void check_schema_version(const Json& raw) {
  if (!raw.is_object()) config_error("config must be a JSON object");
  if (!raw.contains("schema_version")) config_error("config is missing 'schema_version'");
  const auto& v = raw.at("schema_version");
  if (!v.is_number_integer() || v.get<int>() != kSchemaVersion)
    config_error("unsupported schema_version " + v.dump());
}

template <class T>
T get_or(const Json& doc, const char* key, const T& def) {
  if (!doc.contains(key)) return def;
  return doc.at(key).get<T>();
}

std::uint64_t seed_field(const Json& raw, const RunContext& ctx) {
  if (ctx.seed) return *ctx.seed;
  return get_or<std::uint64_t>(raw, "base_seed", 0);
}

// Nested training sections never carry a seed: run seeds derive from base_seed.
Json train_section(const Json& raw, const char* key, const TrainConfig& defaults) {
  const Json doc = raw.contains(key) ? raw.at(key) : Json::object();
  if (doc.is_object() && doc.contains("seed"))
    config_error(std::string("'") + key + ".seed' is not allowed; use base_seed");
  Json out = to_json(train_config_from_json(doc, defaults));
  out.erase("seed");
  return out;
}

TrainConfig train_of(const Json& eff, const char* key, std::uint64_t seed) {
  auto cfg = train_config_from_json(eff.at(key));
  cfg.seed = seed;
  return cfg;
}

std::vector<double> positive_weights(const Json& doc, const char* key, const std::vector<double>& def,
                                     std::size_t expect) {
  const auto w = get_or(doc, key, def);
  if (w.size() != expect)
    config_error(std::string("'") + key + "' needs " + std::to_string(expect) + " entries, got " +
                 std::to_string(w.size()));
  return w;
}

std::string component_name(std::size_t j) { return "P" + std::to_string(j + 1); }

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  return out + "\n";
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------- counterexample

Json counterexample_config(const Json& raw, const RunContext& ctx) {
  require_keys_within(raw,
                      {"schema_version", "weights", "seeds", "base_seed", "lambda_sweep", "arch",
                       "pretrain", "direct"},
                      "counterexample config");
  Json eff;
  eff["schema_version"] = kSchemaVersion;
  eff["weights"] = positive_weights(raw, "weights", canonical_weights(), 4);
  MixtureSpec(counterexample_components(), eff["weights"].get<std::vector<double>>());
  eff["seeds"] = get_or<std::size_t>(raw, "seeds", 20);
  if (eff["seeds"].get<std::size_t>() == 0) config_error("'seeds' must be positive");
  eff["base_seed"] = seed_field(raw, ctx);
  eff["lambda_sweep"] = get_or<std::size_t>(raw, "lambda_sweep", 20);
  const auto arch = arch_from_json(raw.contains("arch") ? raw.at("arch") : Json::object());
  if (arch.kind != ArchSpec::Kind::Dictionary) config_error("counterexample arch must be a dictionary");
  eff["arch"] = to_json(arch);
  TrainConfig pre;
  pre.l1_gate = 0.01;
  pre.l2 = 0.02;
  eff["pretrain"] = train_section(raw, "pretrain", pre);
  eff["direct"] = train_section(raw, "direct", TrainConfig{});
  return eff;
}

OutputBundle run_counterexample(const Json& eff, const RunContext& ctx) {
  const auto comps = counterexample_components();
  const MixtureSpec spec(comps, eff.at("weights").get<std::vector<double>>());
  const auto merged = mix(spec);
  auto arch = arch_from_json(eff.at("arch"));
  arch.input_dim = 2;
  const auto base_seed = eff.at("base_seed").get<std::uint64_t>();
  const auto seeds = eff.at("seeds").get<std::size_t>();

  const auto oracle = optimal_affine_classifier(merged);
  const std::vector<std::size_t> coords{0, 1};
  const auto sparse = sparse_optimal_features(merged, coords);

  struct SeedRun {
    TrainedOutcome outcome;
    std::vector<double> probe;
  };
  std::vector<std::optional<SeedRun>> runs(seeds);
  parallel_for(seeds, ctx.jobs, [&](std::size_t i) {
    auto outcome = pretrain(spec, arch, train_of(eff, "pretrain", derive_seed(base_seed, i)));
    std::vector<double> probe;
    for (const auto& c : comps) probe.push_back(linear_probe(outcome.model.extractor, c).exact_risk);
    runs[i] = SeedRun{std::move(outcome), std::move(probe)};
  });

  std::vector<std::optional<TrainedOutcome>> direct(comps.size());
  parallel_for(comps.size(), ctx.jobs, [&](std::size_t j) {
    direct[j] = direct_train(comps[j], arch, train_of(eff, "direct", derive_seed(base_seed, {0xD1EC7ULL, j})));
  });

  auto matches = [&](const std::vector<std::size_t>& g) {
    return g.size() == 1 && std::find(sparse.begin(), sparse.end(), g.front()) != sparse.end();
  };

  OutputBundle out;
  const auto& first = *runs.front();
  std::string gap = "target_id,component,direct_risk,probe_risk,gap,feature_subset\n";
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const double d = direct[j]->exact_risk;
    const double p = first.probe[j];
    gap += csv_row({std::to_string(j), component_name(j), fmt(d), fmt(p), fmt(p - d),
                    join_indices(first.outcome.surviving_gates)});
  }
  out["gap_table.csv"] = gap;

  std::string gates = "seed_index,seed,surviving_gates,single_gate,matches_oracle,mixture_risk";
  for (std::size_t j = 0; j < comps.size(); ++j) gates += ",probe_" + component_name(j);
  gates += "\n";
  std::size_t single = 0, matched = 0;
  for (std::size_t i = 0; i < seeds; ++i) {
    const auto& r = *runs[i];
    const auto& g = r.outcome.surviving_gates;
    single += g.size() == 1;
    matched += matches(g);
    std::string row = std::to_string(i) + "," + std::to_string(derive_seed(base_seed, i)) + "," +
                      join_indices(g) + "," + (g.size() == 1 ? "1" : "0") + "," + (matches(g) ? "1" : "0") +
                      "," + fmt(r.outcome.exact_risk);
    for (double p : r.probe) row += "," + fmt(p);
    gates += row + "\n";
  }
  out["surviving_gates.csv"] = gates;

  Json ignored = Json::array();
  for (auto i : oracle.ignored_points) {
    const auto& p = merged[i];
    ignored.push_back({{"index", i}, {"x", {p.x(0), p.x(1)}}, {"y", p.y}, {"mass", p.mass}});
  }
  Json oracle_doc = {{"version", kFormatVersion},
                     {"mixture", to_json(merged)},
                     {"classifier", to_json(oracle)},
                     {"ignored", ignored},
                     {"sparse_features", sparse}};
  out["oracle.json"] = dump(oracle_doc);
  out["loss_trace.csv"] = loss_trace_csv(first.outcome);
  out["checkpoint.json"] = dump(checkpoint_to_json(first.outcome.model, {base_seed, derive_seed(base_seed, 0)}));

  const auto sweep = eff.at("lambda_sweep").get<std::size_t>();
  std::vector<std::string> sweep_rows(sweep);
  parallel_for(sweep, ctx.jobs, [&](std::size_t i) {
    const auto lam = sample_simplex(4, derive_seed(base_seed, {0x5EE9ULL, i}));
    const MixtureSpec s(comps, lam);
    const auto m = mix(s);
    const double risk = optimal_affine_classifier(m).risk;
    const auto sp = sparse_optimal_features(m, coords);
    const auto o = pretrain(s, arch, train_of(eff, "pretrain", derive_seed(base_seed, {0x5EE9ULL, i, 1})));
    sweep_rows[i] = csv_row({fmt(lam[0]), fmt(lam[1]), fmt(lam[2]), fmt(lam[3]), fmt(risk), join_indices(sp),
                             join_indices(o.surviving_gates)});
  });
  std::string sw = "lambda_1,lambda_2,lambda_3,lambda_4,oracle_risk,oracle_feature,surviving_feature\n";
  for (const auto& r : sweep_rows) sw += r;
  out["lambda_sweep.csv"] = sw;

  Json summary = {{"oracle_risk", oracle.risk},
                  {"sparse_features", sparse},
                  {"seeds", seeds},
                  {"single_gate_fraction", static_cast<double>(single) / static_cast<double>(seeds)},
                  {"oracle_match_fraction", static_cast<double>(matched) / static_cast<double>(seeds)},
                  {"probe_risks", first.probe}};
  Json d = Json::array();
  for (const auto& o : direct) d.push_back(o->exact_risk);
  summary["direct_risks"] = d;
  out["summary.json"] = dump(summary);
  return out;
}

// ---------------------------------------------------------------- covariance

Json covariance_config(const Json& raw, const RunContext& ctx) {
  require_keys_within(raw,
                      {"schema_version", "K", "feature", "weights", "trials", "base_seed", "tol",
                       "component_covs"},
                      "covariance config");
  Json eff;
  eff["schema_version"] = kSchemaVersion;
  const auto K = get_or<std::size_t>(raw, "K", 2);
  const auto comps = gen_counterexample_family(K);
  eff["K"] = K;
  const auto feature = get_or<std::size_t>(raw, "feature", 0);
  if (feature >= K) config_error("'feature' must index one of the K coordinates");
  eff["feature"] = feature;
  const auto def = K == 2 ? canonical_weights() : family_weights(K, canonical_weights());
  eff["weights"] = positive_weights(raw, "weights", def, comps.size());
  MixtureSpec(comps, eff["weights"].get<std::vector<double>>());
  eff["trials"] = get_or<std::size_t>(raw, "trials", 10000);
  eff["base_seed"] = seed_field(raw, ctx);
  eff["tol"] = get_or<double>(raw, "tol", 1e-9);
  if (!(eff["tol"].get<double>() > 0.0)) config_error("'tol' must be positive");
  if (raw.contains("component_covs") && !raw.at("component_covs").is_null()) {
    const auto covs = raw.at("component_covs").get<std::vector<double>>();
    if (covs.empty()) config_error("'component_covs' must be nonempty");
    if (std::all_of(covs.begin(), covs.end(), [](double c) { return c == 0.0; }))
      config_error("'component_covs' are all zero");
    eff["component_covs"] = covs;
  } else {
    eff["component_covs"] = nullptr;
  }
  return eff;
}

OutputBundle run_covariance(const Json& eff, const RunContext& ctx) {
  const auto K = eff.at("K").get<std::size_t>();
  const auto comps = gen_counterexample_family(K);
  const auto phi = LinearFunctional::coordinate(eff.at("feature").get<std::size_t>(), K);
  const auto trials = eff.at("trials").get<std::size_t>();
  const auto seed = eff.at("base_seed").get<std::uint64_t>();
  const auto tol = eff.at("tol").get<double>();
  const bool explicit_covs = !eff.at("component_covs").is_null();

  std::vector<double> covs;
  OutputBundle out;
  std::string cc = "component,cov,mean_y,mean_phi\n";
  if (explicit_covs) {
    covs = eff.at("component_covs").get<std::vector<double>>();
    for (std::size_t j = 0; j < covs.size(); ++j) cc += csv_row({std::to_string(j), fmt(covs[j]), "", ""});
  } else {
    for (std::size_t j = 0; j < comps.size(); ++j) {
      double my = 0.0, mp = 0.0;
      for (const auto& p : comps[j].points()) {
        my += p.mass * p.y;
        mp += p.mass * phi(p.x);
      }
      covs.push_back(covariance(phi, comps[j]));
      cc += csv_row({std::to_string(j), fmt(covs.back()), fmt(my), fmt(mp)});
    }
  }
  out["component_covs.csv"] = cc;

  const auto probe = cancellation_set_probe(covs, trials, seed, tol);

  // Sweep over the same lambda draws the probe used.
  std::vector<std::string> rows(trials);
  std::vector<double> gaps(trials, 0.0);
  std::vector<double> between(trials, 0.0);
  std::vector<double> mixture_abs(trials, 0.0);
  parallel_for(trials, ctx.jobs, [&](std::size_t t) {
    const auto lam = sample_simplex(covs.size(), derive_seed(seed, t));
    double ws = 0.0;
    for (std::size_t j = 0; j < covs.size(); ++j) ws += lam[j] * covs[j];
    std::string row = std::to_string(t);
    for (double l : lam) row += "," + fmt(l);
    row += "," + fmt(ws);
    if (!explicit_covs) {
      const auto rep = covariance_report(phi, MixtureSpec(comps, lam));
      gaps[t] = rep.total_covariance_gap;
      between[t] = std::abs(rep.between_term);
      mixture_abs[t] = std::abs(rep.mixture_cov);
      row += "," + fmt(rep.mixture_cov) + "," + fmt(rep.between_term) + "," + fmt(rep.total_covariance_gap) +
             "," + fmt(rep.weighted_sum_gap);
    } else {
      row += ",,,,";
    }
    row += std::string(",") + (std::abs(ws) < tol ? "1" : "0") + "\n";
    rows[t] = std::move(row);
  });
  std::string sweep = "trial";
  for (std::size_t j = 0; j < covs.size(); ++j) sweep += ",lambda_" + std::to_string(j + 1);
  sweep += ",weighted_sum,mixture_cov,between_term,total_covariance_gap,weighted_sum_gap,hit\n";
  for (const auto& r : rows) sweep += r;
  out["covariance_sweep.csv"] = sweep;

  Json constructed = {{"present", probe.constructed_lambda.has_value()}};
  if (probe.constructed_lambda) {
    constructed["lambda"] = *probe.constructed_lambda;
    constructed["weighted_sum"] = probe.constructed_sum;
  }
  out["cancellation.json"] = dump({{"trials", probe.trials},
                                   {"hits", probe.hits},
                                   {"hit_fraction", probe.hit_fraction},
                                   {"tol", tol},
                                   {"constructed", constructed}});

  Json summary = {{"component_covs", covs}, {"hit_fraction", probe.hit_fraction}, {"hits", probe.hits}};
  summary["constructed_present"] = probe.constructed_lambda.has_value();
  if (!explicit_covs) {
    const auto rep = covariance_report(phi, MixtureSpec(comps, eff.at("weights").get<std::vector<double>>()));
    out["report.json"] = dump(to_json(rep));
    summary["max_total_covariance_gap"] = trials ? *std::max_element(gaps.begin(), gaps.end()) : 0.0;
    summary["max_abs_between_term"] = trials ? *std::max_element(between.begin(), between.end()) : 0.0;
    summary["min_abs_mixture_cov"] = trials ? *std::min_element(mixture_abs.begin(), mixture_abs.end()) : 0.0;
  }
  out["summary.json"] = dump(summary);
  return out;
}

// ---------------------------------------------------------------- ntk

Json ntk_config(const Json& raw, const RunContext& ctx) {
  require_keys_within(raw,
                      {"schema_version", "weights", "base_seed", "arch", "pretrain", "delta_norm", "halvings",
                       "ridge", "fit_gamma0_variant", "random_probe_points"},
                      "ntk config");
  Json eff;
  eff["schema_version"] = kSchemaVersion;
  eff["weights"] = positive_weights(raw, "weights", canonical_weights(), 4);
  MixtureSpec(counterexample_components(), eff["weights"].get<std::vector<double>>());
  eff["base_seed"] = seed_field(raw, ctx);
  ArchSpec def;
  def.kind = ArchSpec::Kind::Mlp;
  def.hidden = {16, 8};
  def.activation = Activation::Tanh;
  const auto arch = arch_from_json(raw.contains("arch") ? raw.at("arch") : Json::object(), def);
  if (arch.kind != ArchSpec::Kind::Mlp) config_error("ntk arch must be an mlp");
  eff["arch"] = to_json(arch);
  TrainConfig pre;
  pre.steps = 2000;
  eff["pretrain"] = train_section(raw, "pretrain", pre);
  eff["delta_norm"] = get_or<double>(raw, "delta_norm", 1e-2);
  if (!(eff["delta_norm"].get<double>() > 0.0)) config_error("'delta_norm' must be positive");
  eff["halvings"] = get_or<std::size_t>(raw, "halvings", 3);
  eff["ridge"] = get_or<double>(raw, "ridge", 1e-8);
  if (!(eff["ridge"].get<double>() >= 0.0)) config_error("'ridge' must be non-negative");
  eff["fit_gamma0_variant"] = get_or<bool>(raw, "fit_gamma0_variant", true);
  eff["random_probe_points"] = get_or<std::size_t>(raw, "random_probe_points", 32);
  return eff;
}

Vec random_direction(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Vec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v / v.norm();
}

OutputBundle run_ntk(const Json& eff, const RunContext& ctx) {
  const auto comps = counterexample_components();
  const MixtureSpec spec(comps, eff.at("weights").get<std::vector<double>>());
  const auto merged = mix(spec);
  const auto seed = eff.at("base_seed").get<std::uint64_t>();
  auto arch = arch_from_json(eff.at("arch"));
  arch.input_dim = 2;
  const auto model = pretrain(spec, arch, train_of(eff, "pretrain", derive_seed(seed, 0))).model;

  std::vector<Vec> pts;
  for (const auto& p : merged.points()) pts.push_back(p.x);
  SplitMix64 prng(derive_seed(seed, {0x9A1ULL}));
  for (std::size_t i = 0; i < eff.at("random_probe_points").get<std::size_t>(); ++i)
    pts.push_back((Vec(2) << prng.uniform(-1.5, 1.5), prng.uniform(-1.5, 1.5)).finished());

  // Linear-in-parameters reference: identity features plus a random head.
  SplitMix64 hrng(derive_seed(seed, {0x11ULL}));
  LinearHead lhead{(Vec(2) << hrng.normal(), hrng.normal()).finished(), hrng.normal()};
  const ComposedModel linear(MlpExtractor::init({2}, Activation::Tanh, 0), lhead);

  const auto halvings = eff.at("halvings").get<std::size_t>();
  const double norm0 = eff.at("delta_norm").get<double>();
  std::string lin = "model,norm,error,ratio\n";
  Json ratios = Json::array();
  double linear_max = 0.0;
  auto scan = [&](const std::string& name, const ComposedModel& m, double start, std::uint64_t dseed) {
    const Vec dir = random_direction(param_count(m), dseed);
    double prev = 0.0;
    for (std::size_t r = 0; r <= halvings; ++r) {
      const double norm = start / std::pow(2.0, static_cast<double>(r));
      const double err = linearization_error(m, dir * norm, pts);
      std::string ratio;
      if (r > 0 && name == "mlp") {
        const double q = err > 0.0 ? prev / err : std::numeric_limits<double>::infinity();
        ratio = fmt(q);
        ratios.push_back(q);
      }
      if (name == "linear") linear_max = std::max(linear_max, err);
      lin += csv_row({name, fmt(norm), fmt(err), ratio});
      prev = err;
    }
  };
  scan("linear", linear, 1.0, derive_seed(seed, {0xDE17AULL, 0}));
  scan("mlp", model, norm0, derive_seed(seed, {0xDE17AULL, 1}));

  const bool variant = eff.at("fit_gamma0_variant").get<bool>();
  const double ridge = eff.at("ridge").get<double>();
  struct Row {
    double base, lp, np, npv;
  };
  std::vector<Row> rows(comps.size());
  parallel_for(comps.size(), ctx.jobs, [&](std::size_t j) {
    Row r{};
    r.base = exact_zero_one_risk(model, comps[j]);
    r.lp = linear_probe(model.extractor, comps[j]).exact_risk;
    NtkProbeOptions o;
    o.ridge = ridge;
    r.np = ntk_probe(model, comps[j], o).exact_risk;
    if (variant) {
      o.fit_gamma0 = true;
      r.npv = ntk_probe(model, comps[j], o).exact_risk;
    }
    rows[j] = r;
  });
  std::string cmp = "target_id,component,base_risk,linear_probe_risk,ntk_probe_risk";
  if (variant) cmp += ",ntk_probe_fit_gamma0_risk";
  cmp += ",ntk_not_worse\n";
  bool all_contained = true;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const bool ok = rows[j].np <= rows[j].lp + 1e-12;
    all_contained = all_contained && ok;
    cmp += std::to_string(j) + "," + component_name(j) + "," + fmt(rows[j].base) + "," + fmt(rows[j].lp) + "," +
           fmt(rows[j].np) + (variant ? "," + fmt(rows[j].npv) : std::string()) + "," + (ok ? "1" : "0") + "\n";
  }
  OutputBundle out;
  out["linearization.csv"] = lin;
  out["probe_comparison.csv"] = cmp;
  out["checkpoint.json"] = dump(checkpoint_to_json(model, {seed, derive_seed(seed, 0)}));
  out["summary.json"] = dump({{"linear_max_error", linear_max},
                              {"mlp_ratios", ratios},
                              {"ntk_not_worse_everywhere", all_contained},
                              {"parameters", param_count(model)}});
  return out;
}

// ---------------------------------------------------------------- timecat

Json timecat_config(const Json& raw, const RunContext& ctx) {
  require_keys_within(raw,
                      {"schema_version", "K", "within_weights", "total_budget", "splits", "baseline_bonus",
                       "base_seeds", "base_seed", "arch", "train"},
                      "timecat config");
  Json eff;
  eff["schema_version"] = kSchemaVersion;
  const auto K = get_or<std::size_t>(raw, "K", 8);
  gen_counterexample_family(K);
  eff["K"] = K;
  eff["within_weights"] = positive_weights(raw, "within_weights", canonical_weights(), 4);
  family_weights(K, eff["within_weights"].get<std::vector<double>>());
  MixtureSpec(gen_counterexample_family(K),
              family_weights(K, eff["within_weights"].get<std::vector<double>>()));
  eff["total_budget"] = get_or<std::size_t>(raw, "total_budget", 1800);
  eff["splits"] = get_or<std::vector<std::size_t>>(raw, "splits", {1, 2, 4, 5});
  eff["baseline_bonus"] = get_or<double>(raw, "baseline_bonus", 1.125);
  eff["base_seeds"] = get_or<std::size_t>(raw, "base_seeds", 10);
  if (eff["base_seeds"].get<std::size_t>() == 0) config_error("'base_seeds' must be positive");
  eff["base_seed"] = seed_field(raw, ctx);
  eff["arch"] = to_json(arch_from_json(raw.contains("arch") ? raw.at("arch") : Json::object()));
  const Json train = raw.contains("train") ? raw.at("train") : Json::object();
  if (train.is_object() && train.contains("steps"))
    config_error("'train.steps' is not allowed; the budget comes from total_budget and splits");
  TrainConfig def;
  def.l1_gate = 0.0025;
  def.l2 = 0.005;
  eff["train"] = train_section(raw, "train", def);
  eff["train"].erase("steps");
  return eff;
}

EnsemblePlan plan_of(const Json& eff, std::uint64_t base_seed) {
  const auto K = eff.at("K").get<std::size_t>();
  const auto comps = gen_counterexample_family(K);
  EnsemblePlan plan(MixtureSpec(comps, family_weights(K, eff.at("within_weights").get<std::vector<double>>())),
                    comps);
  plan.total_budget = eff.at("total_budget").get<std::size_t>();
  plan.splits = eff.at("splits").get<std::vector<std::size_t>>();
  plan.baseline_bonus = eff.at("baseline_bonus").get<double>();
  plan.base_seed = base_seed;
  plan.member_arch = arch_from_json(eff.at("arch"));
  plan.member_arch.input_dim = K;
  plan.train = train_config_from_json(eff.at("train"));
  return plan;
}

OutputBundle run_timecat_cmd(const Json& eff, const RunContext& ctx) {
  const auto seeds = eff.at("base_seeds").get<std::size_t>();
  const auto base = eff.at("base_seed").get<std::uint64_t>();
  std::vector<std::optional<TimecatReport>> reports(seeds);
  parallel_for(seeds, ctx.jobs, [&](std::size_t s) { reports[s] = run_timecat(plan_of(eff, base + s)); });

  const auto& first = *reports.front();
  const std::size_t ntargets = first.rows.front().target_risks.size();
  auto method = [](std::size_t n) { return n == 1 ? std::string("baseline") : "cat" + std::to_string(n); };

  std::string table = "method,n,steps_per_member,total_steps,in_mixture_mean,in_mixture_std,minority_mean,minority_std";
  for (std::size_t t = 0; t < ntargets; ++t)
    table += ",target_" + std::to_string(t) + "_mean,target_" + std::to_string(t) + "_std";
  table += "\n";
  std::string per_seed = "base_seed,method,n,steps_per_member,total_steps,in_mixture,minority_mean\n";
  std::string lng = "base_seed,method,n,metric,value\n";
  Json agg = Json::array();

  for (std::size_t r = 0; r < first.rows.size(); ++r) {
    const auto& row0 = first.rows[r];
    std::vector<double> inmix, minority;
    std::vector<std::vector<double>> targets(ntargets);
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto& row = reports[s]->rows[r];
      inmix.push_back(row.in_mixture_risk);
      minority.push_back(row.minority_mean_risk);
      for (std::size_t t = 0; t < ntargets; ++t) targets[t].push_back(row.target_risks[t]);
      const auto bs = std::to_string(base + s);
      per_seed += csv_row({bs, method(row.n), std::to_string(row.n), std::to_string(row.steps_per_member),
                           std::to_string(row.total_steps), fmt(row.in_mixture_risk), fmt(row.minority_mean_risk)});
      lng += csv_row({bs, method(row.n), std::to_string(row.n), "in_mixture", fmt(row.in_mixture_risk)});
      lng += csv_row({bs, method(row.n), std::to_string(row.n), "minority_mean", fmt(row.minority_mean_risk)});
      for (std::size_t t = 0; t < ntargets; ++t)
        lng += csv_row({bs, method(row.n), std::to_string(row.n), "target_" + std::to_string(t),
                        fmt(row.target_risks[t])});
    }
    std::string line = method(row0.n) + "," + std::to_string(row0.n) + "," + std::to_string(row0.steps_per_member) +
                       "," + std::to_string(row0.total_steps) + "," + fmt(mean_of(inmix)) + "," + fmt(std_of(inmix)) +
                       "," + fmt(mean_of(minority)) + "," + fmt(std_of(minority));
    for (std::size_t t = 0; t < ntargets; ++t) line += "," + fmt(mean_of(targets[t])) + "," + fmt(std_of(targets[t]));
    table += line + "\n";
    agg.push_back({{"method", method(row0.n)},
                   {"n", row0.n},
                   {"steps_per_member", row0.steps_per_member},
                   {"total_steps", row0.total_steps},
                   {"in_mixture_mean", mean_of(inmix)},
                   {"in_mixture_std", std_of(inmix)},
                   {"minority_mean", mean_of(minority)},
                   {"minority_std", std_of(minority)}});
  }

  Json per = Json::array();
  for (const auto& r : reports) per.push_back(to_json(*r));
  OutputBundle out;
  out["timecat.csv"] = table;
  out["timecat_per_seed.csv"] = per_seed;
  out["timecat_long.csv"] = lng;
  out["timecat.json"] = dump({{"version", kFormatVersion},
                              {"minority", first.minority},
                              {"aggregate", agg},
                              {"per_seed", per}});
  return out;
}

}  // namespace

std::optional<Command> parse_command(std::string_view name) {
  if (name == "counterexample") return Command::Counterexample;
  if (name == "covariance") return Command::Covariance;
  if (name == "ntk") return Command::Ntk;
  if (name == "timecat") return Command::Timecat;
  return std::nullopt;
}

std::string_view to_string(Command c) {
  switch (c) {
    case Command::Counterexample: return "counterexample";
    case Command::Covariance: return "covariance";
    case Command::Ntk: return "ntk";
    case Command::Timecat: return "timecat";
  }
  return "unknown";
}

Json effective_config(Command cmd, const Json& raw, const RunContext& ctx) {
  return as_config("config", [&] {
    check_schema_version(raw);
    switch (cmd) {
      case Command::Counterexample: return counterexample_config(raw, ctx);
      case Command::Covariance: return covariance_config(raw, ctx);
      case Command::Ntk: return ntk_config(raw, ctx);
      case Command::Timecat: return timecat_config(raw, ctx);
    }
    config_error("unknown command");
  });
}

OutputBundle run_command(Command cmd, const Json& effective, const RunContext& ctx) {
  OutputBundle out;
  switch (cmd) {
    case Command::Counterexample: out = run_counterexample(effective, ctx); break;
    case Command::Covariance: out = run_covariance(effective, ctx); break;
    case Command::Ntk: out = run_ntk(effective, ctx); break;
    case Command::Timecat: out = run_timecat_cmd(effective, ctx); break;
  }
  out["effective_config.json"] = dump(effective);
  return out;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFinite:
    case ErrorKind::DegenerateVariance:
    case ErrorKind::SupportTooLarge: return kExitNumerical;
    case ErrorKind::Io: return kExitIo;
    default: return kExitConfig;
  }
}

int run_cli(Command cmd, const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
            const RunContext& ctx, std::ostream& log) {
  try {
    const auto eff = effective_config(cmd, read_json_file(config_path), ctx);
    const auto files = run_command(cmd, eff, ctx);
    write_bundle(out_dir, files);
    log << to_string(cmd) << ": wrote " << files.size() << " files to " << out_dir.string() << " (jobs " << ctx.jobs << ")\n";
    return kExitOk;
  } catch (const Error& e) {
    log << "satlab " << to_string(cmd) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  }
}

}  // namespace satlab
