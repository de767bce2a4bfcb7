#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fedil/checkpoint.hpp"
#include "fedil/client.hpp"
#include "fedil/config.hpp"
#include "fedil/convergence.hpp"
#include "fedil/errors.hpp"
#include "fedil/experiment.hpp"
#include "fedil/model.hpp"
#include "fedil/server.hpp"

namespace py = pybind11;
using namespace fedil;

namespace {

ParamVector to_params(const std::vector<double>& v) { return ParamVector(v); }

py::dict record_dict(const RoundRecord& r) {
  py::dict d;
  d["round"] = r.round;
  d["selected"] = r.selected;
  py::list gates;
  for (const ClientGate& g : r.aggregation.clients) {
    py::dict e;
    e["client_id"] = g.client_id;
    e["similarity"] = g.similarity;
    e["gate"] = g.gate;
    gates.append(e);
  }
  d["gates"] = gates;
  d["delta_norm"] = r.aggregation.delta_norm;
  d["included_count"] = r.aggregation.included_count;
  d["pseudo_sizes"] = r.pseudo_sizes;
  d["pseudo_total"] = r.pseudo_total;
  d["pseudo_correct"] = r.pseudo_correct;
  d["promoted"] = r.promoted;
  d["test_accuracy"] = r.test_accuracy;
  d["wall_ms"] = r.wall_ms;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fedil, m) {
  m.doc() = "Federated incremental-learning simulator";

  py::register_exception<Error>(m, "FedilError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_ArithmeticError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);

  py::enum_<Activation>(m, "Activation").value("tanh", Activation::kTanh).value("relu", Activation::kRelu);

  py::class_<ModelArch>(m, "ModelArch")
      .def(py::init([](std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes,
                       Activation act) {
             ModelArch a{input_dim, std::move(hidden), num_classes, act};
             a.validate();
             return a;
           }),
           py::arg("input_dim"), py::arg("hidden_dims"), py::arg("num_classes"),
           py::arg("activation") = Activation::kTanh)
      .def_readonly("input_dim", &ModelArch::input_dim)
      .def_readonly("hidden_dims", &ModelArch::hidden_dims)
      .def_readonly("num_classes", &ModelArch::num_classes)
      .def_property_readonly("param_count", &ModelArch::param_count);

  m.def("init_params", [](const ModelArch& a, std::uint64_t seed) { return init_params(a, seed).values; },
        py::arg("arch"), py::arg("seed"));
  m.def("forward",
        [](const std::vector<double>& params, const ModelArch& a, const std::vector<double>& x) {
          return forward(to_params(params), a, x).probs;
        },
        py::arg("params"), py::arg("arch"), py::arg("x"));

  // Config is exposed as text plus a dict view; the canonical text is what gets hashed.
  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_text", &parse_config_text)
      .def_static("load", [](const std::string& path) { return load_config(path); })
      .def("set", &ExperimentConfig::set)
      .def("validate", &ExperimentConfig::validate)
      .def("to_text", &ExperimentConfig::to_text)
      .def("to_dict", &ExperimentConfig::to_map)
      .def("hash", &ExperimentConfig::hash)
      .def("__repr__", [](const ExperimentConfig& c) { return "<fedil.Config " + c.hash() + ">"; });

  py::class_<ExperimentResult>(m, "Result")
      .def_property_readonly("records",
                             [](const ExperimentResult& r) {
                               py::list out;
                               for (const RoundRecord& rec : r.records) out.append(record_dict(rec));
                               return out;
                             })
      .def_property_readonly("norms", [](const ExperimentResult& r) { return r.trace.norms(); })
      .def_property_readonly("moving_average", [](const ExperimentResult& r) { return r.trace.moving_average(); })
      .def_property_readonly("initial_accuracy", [](const ExperimentResult& r) { return r.initial_accuracy; })
      .def_property_readonly("final_accuracy", [](const ExperimentResult& r) { return r.final_accuracy; })
      .def_property_readonly("final_global", [](const ExperimentResult& r) { return r.final_global.values; })
      .def_property_readonly("config_hash", [](const ExperimentResult& r) { return r.config.hash(); })
      .def_property_readonly("labeled_size", [](const ExperimentResult& r) { return r.labeled_size; })
      .def("persist", [](const ExperimentResult& r, const std::filesystem::path& dir) {
        std::vector<std::string> paths;
        for (const ManifestEntry& e : persist(r, dir)) paths.push_back(e.path);
        return paths;
      });

  m.def(
      "run_experiment",
      [](const ExperimentConfig& cfg, std::function<void(py::dict, std::vector<double>)> observer) {
        const ExperimentData data = load_data(cfg);
        RoundObserver obs;
        if (observer) {
          obs = [&](const RoundRecord& r, const ParamVector& g) {
            py::gil_scoped_acquire gil;
            observer(record_dict(r), g.values);
          };
        }
        return run_experiment(cfg, data, obs);
      },
      py::arg("config"), py::arg("observer") = nullptr);

  m.def("cosine_gate",
        [](const std::vector<double>& client, const std::vector<double>& global, const std::vector<double>& server,
           double threshold) {
          const GateResult g = cosine_gate(to_params(client), to_params(global), to_params(server), threshold);
          return py::make_tuple(g.similarity, g.open);
        },
        py::arg("client"), py::arg("global_"), py::arg("server"), py::arg("threshold") = 0.0);

  m.def("aggregate",
        [](const std::vector<double>& global, const std::vector<double>& server,
           const std::vector<std::vector<double>>& uploads, double threshold) {
          std::vector<Upload> ups;
          for (std::size_t i = 0; i < uploads.size(); ++i) ups.push_back({i, to_params(uploads[i])});
          const AggregationResult r = aggregate(to_params(global), to_params(server), ups, threshold);
          std::vector<bool> gates;
          for (const ClientGate& g : r.report.clients) gates.push_back(g.gate);
          return py::make_tuple(r.next_global.values, gates, r.report.delta_norm);
        },
        py::arg("global_"), py::arg("server"), py::arg("uploads"), py::arg("threshold") = 0.0);

  m.def("select_clients", &select_clients, py::arg("num_clients"), py::arg("per_round"), py::arg("seed"),
        py::arg("round"));

  m.def("contraction_verdict",
        [](const std::vector<double>& norms, std::size_t window) -> py::object {
          const auto v = contraction_verdict(norms, window);
          if (!v) return py::none();
          return py::make_tuple(v->contracting, v->q_max);
        },
        py::arg("norms"), py::arg("window"));

  m.def("banach_demo",
        [](double a, double b, double x0, std::size_t n) {
          const BanachResult r = banach_demo(a, b, x0, n);
          return py::make_tuple(r.trajectory, r.fixed_point);
        },
        py::arg("a"), py::arg("b"), py::arg("x0"), py::arg("iterations"));

  // Replays one example's credibility counters over a sequence of
  // (confidence, client_label, server_label) observations.
  m.def(
      "credibility_replay",
      [](const std::vector<std::tuple<double, std::size_t, std::size_t>>& seq, double tau, std::size_t promote_t,
         std::size_t agreement_t) -> py::object {
        CredibilityTracker tracker;
        PseudoLabelSet promoted;
        const CredibilityRule rule{tau, promote_t, agreement_t};
        for (std::size_t k = 0; k < seq.size(); ++k) {
          const auto& [conf, wl, sl] = seq[k];
          const Observation obs{0, conf, wl, sl, conf >= tau};
          const auto p = update_credibility(tracker, std::span(&obs, 1), rule, promoted);
          if (!p.empty()) return py::make_tuple(k + 1, p.front().label);
        }
        return py::none();
      },
      py::arg("sequence"), py::arg("tau"), py::arg("promote_t"), py::arg("agreement_t") = 0);

  m.def("save_checkpoint",
        [](const std::vector<double>& p, const std::filesystem::path& path) { save_checkpoint(path, to_params(p)); });
  m.def("load_checkpoint", [](const std::filesystem::path& path) { return load_checkpoint(path).values; });
}
