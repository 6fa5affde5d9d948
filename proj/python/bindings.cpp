#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "satlab/commands.hpp"
#include "satlab/ensembles.hpp"
#include "satlab/io.hpp"
#include "satlab/oracle.hpp"
#include "satlab/training.hpp"
#include "satlab/transfer.hpp"

namespace py = pybind11;
using namespace satlab;

namespace {

DiscreteDistribution make_distribution(const Mat& x, const std::vector<int>& y, const std::vector<double>& mass) {
  if (static_cast<std::size_t>(x.rows()) != y.size() || y.size() != mass.size())
    throw Error(ErrorKind::LengthMismatch, "points, labels and masses must have the same length");
  std::vector<LabeledPoint> pts;
  for (Eigen::Index i = 0; i < x.rows(); ++i) pts.push_back({x.row(i).transpose(), y[static_cast<std::size_t>(i)], mass[static_cast<std::size_t>(i)]});
  return DiscreteDistribution(static_cast<std::size_t>(x.cols()), std::move(pts));
}

Mat points_of(const DiscreteDistribution& d) {
  Mat out(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.dim()));
  for (std::size_t i = 0; i < d.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = d[i].x.transpose();
  return out;
}

// Plain dicts cross the boundary through the json module.
Json from_py(const py::object& obj) {
  return Json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const Json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

ArchSpec arch_of(const py::object& spec) { return spec.is_none() ? ArchSpec{} : arch_from_json(from_py(spec)); }

TrainConfig train_of(const py::object& spec) {
  return spec.is_none() ? TrainConfig{} : train_config_from_json(from_py(spec));
}

py::dict outcome_dict(const TrainedOutcome& o) {
  py::list trace;
  for (const auto& t : o.loss_trace) trace.append(py::make_tuple(t.step, t.loss, t.exact_risk));
  py::dict d;
  d["model"] = o.model;
  d["exact_risk"] = o.exact_risk;
  d["surviving_gates"] = o.surviving_gates;
  d["loss_trace"] = trace;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Exact finite-support experiments on mixture pretraining and feature transfer.";

  // Messages start with the error kind, e.g. "Config: ...".
  py::register_exception<Error>(m, "SatlabError", PyExc_ValueError);

  py::class_<DiscreteDistribution>(m, "Distribution")
      .def(py::init(&make_distribution), py::arg("points"), py::arg("labels"), py::arg("masses"))
      .def_property_readonly("dim", &DiscreteDistribution::dim)
      .def_property_readonly("points", &points_of)
      .def_property_readonly("labels",
                             [](const DiscreteDistribution& d) {
                               std::vector<int> y;
                               for (const auto& p : d.points()) y.push_back(p.y);
                               return y;
                             })
      .def_property_readonly("masses",
                             [](const DiscreteDistribution& d) {
                               std::vector<double> w;
                               for (const auto& p : d.points()) w.push_back(p.mass);
                               return w;
                             })
      .def("mass_at", &DiscreteDistribution::mass_at)
      .def("__len__", &DiscreteDistribution::size);

  py::class_<MixtureSpec>(m, "Mixture")
      .def(py::init<std::vector<DiscreteDistribution>, std::vector<double>>(), py::arg("components"),
           py::arg("weights"))
      .def_property_readonly("components", &MixtureSpec::components)
      .def_property_readonly("weights", &MixtureSpec::weights)
      .def("merged", [](const MixtureSpec& s) { return mix(s); })
      .def("to_dict", [](const MixtureSpec& s) { return to_py(to_json(s)); });

  py::class_<Extractor>(m, "Extractor")
      .def_property_readonly("input_dim", &Extractor::input_dim)
      .def_property_readonly("output_dim", &Extractor::output_dim)
      .def("features", &Extractor::features);

  py::class_<ComposedModel>(m, "Model")
      .def_readonly("extractor", &ComposedModel::extractor)
      .def_property_readonly("gamma", [](const ComposedModel& mdl) { return mdl.head.gamma; })
      .def_property_readonly("bias", [](const ComposedModel& mdl) { return mdl.head.bias; })
      .def_property_readonly("params", &flatten_params)
      .def("score", &score)
      .def("predict", &predict)
      .def("checkpoint", [](const ComposedModel& mdl) { return to_py(checkpoint_to_json(mdl, {})); });

  m.def("dictionary_extractor", [](const Vec& gates) { return Extractor(DictionaryExtractor{gates}); });
  m.def("concat", [](std::vector<Extractor> members) { return Extractor(make_concat(std::move(members))); });

  m.def("counterexample_components", &counterexample_components);
  m.def("canonical_weights", &canonical_weights);
  m.def("counterexample_family", &gen_counterexample_family, py::arg("K"));
  m.def("family_weights", [](std::size_t K, std::vector<double> within) { return family_weights(K, within); },
        py::arg("K"), py::arg("within"));
  m.def("mix", &mix);

  m.def(
      "pretrain",
      [](const MixtureSpec& mixture, const py::object& arch, const py::object& train) {
        return outcome_dict(pretrain(mixture, arch_of(arch), train_of(train)));
      },
      py::arg("mixture"), py::arg("arch") = py::none(), py::arg("train") = py::none());
  m.def(
      "direct_train",
      [](const DiscreteDistribution& target, const py::object& arch, const py::object& train) {
        return outcome_dict(direct_train(target, arch_of(arch), train_of(train)));
      },
      py::arg("target"), py::arg("arch") = py::none(), py::arg("train") = py::none());
  m.def("exact_risk", &exact_zero_one_risk, py::arg("model"), py::arg("dist"));

  m.def("optimal_classifier", [](const DiscreteDistribution& d) { return to_py(to_json(optimal_affine_classifier(d))); });
  m.def("optimal_risk_in_span",
        [](const DiscreteDistribution& d, std::vector<std::size_t> subset) { return optimal_risk_in_span(d, subset); });

  m.def(
      "linear_probe",
      [](const Extractor& e, const DiscreteDistribution& target, std::optional<std::vector<std::size_t>> restrict) {
        return to_py(to_json(linear_probe(e, target, std::move(restrict))));
      },
      py::arg("extractor"), py::arg("target"), py::arg("restrict") = py::none());
  m.def(
      "ntk_probe",
      [](const ComposedModel& model, const DiscreteDistribution& target, double ridge, bool fit_gamma0) {
        NtkProbeOptions o;
        o.ridge = ridge;
        o.fit_gamma0 = fit_gamma0;
        return to_py(to_json(ntk_probe(model, target, o)));
      },
      py::arg("model"), py::arg("target"), py::arg("ridge") = 1e-8, py::arg("fit_gamma0") = false);
  m.def(
      "linearization_error",
      [](const ComposedModel& model, const Vec& delta, std::vector<Vec> points) {
        return linearization_error(model, delta, points);
      },
      py::arg("model"), py::arg("delta"), py::arg("points"));

  m.def(
      "covariance_report",
      [](const Vec& weights, double offset, const MixtureSpec& mixture) {
        return to_py(to_json(covariance_report(LinearFunctional{weights, offset}, mixture)));
      },
      py::arg("weights"), py::arg("offset"), py::arg("mixture"));
  m.def(
      "cancellation_probe",
      [](std::vector<double> covs, std::size_t trials, std::uint64_t seed, double tol) {
        const auto p = cancellation_set_probe(covs, trials, seed, tol);
        py::dict out;
        out["trials"] = p.trials;
        out["hits"] = p.hits;
        out["hit_fraction"] = p.hit_fraction;
        out["constructed_lambda"] = p.constructed_lambda;
        out["constructed_sum"] = p.constructed_sum;
        return out;
      },
      py::arg("component_covs"), py::arg("trials"), py::arg("seed"), py::arg("tol") = 1e-9);

  m.def(
      "run",
      [](const std::string& command, const std::string& config, std::size_t jobs, std::optional<std::uint64_t> seed) {
        const auto cmd = parse_command(command);
        if (!cmd) throw Error(ErrorKind::Config, "unknown command '" + command + "'");
        RunContext ctx;
        ctx.jobs = jobs;
        ctx.seed = seed;
        Json raw;
        try {
          raw = Json::parse(config);
        } catch (const Json::exception& e) {
          throw Error(ErrorKind::Config, e.what());
        }
        OutputBundle files;
        {
          py::gil_scoped_release release;
          files = run_command(*cmd, effective_config(*cmd, raw, ctx), ctx);
        }
        return files;
      },
      py::arg("command"), py::arg("config"), py::arg("jobs") = 1, py::arg("seed") = py::none());
}
