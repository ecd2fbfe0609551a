#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "faultdx/bayesopt/hpo.hpp"
#include "faultdx/classifier/model_io.hpp"
#include "faultdx/classifier/scaling.hpp"
#include "faultdx/dataset.hpp"
#include "faultdx/error.hpp"
#include "faultdx/metrics.hpp"
#include "faultdx/pipeline.hpp"
#include "faultdx/preprocess.hpp"

namespace py = pybind11;
using namespace faultdx;
using nlohmann::json;

namespace {

// Dicts cross the boundary as JSON text.
json to_cpp(const py::object& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::array_t<float> frames_array(const dataset::Dataset& ds) {
  py::array_t<float> out({ds.size(), ds.n_params()});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.n_params(); ++j) v(i, j) = ds.frames()[i].values[j];
  return out;
}

py::dict dataset_dict(const dataset::Dataset& ds) {
  std::vector<std::uint32_t> labels, scenarios;
  for (const auto& f : ds.frames()) {
    labels.push_back(f.label);
    scenarios.push_back(f.scenario_id);
  }
  std::vector<std::string> names;
  for (const auto& c : ds.classes()) names.push_back(c.name);
  py::dict d;
  d["frames"] = frames_array(ds);
  d["labels"] = py::array_t<std::uint32_t>(labels.size(), labels.data());
  d["scenarios"] = py::array_t<std::uint32_t>(scenarios.size(), scenarios.data());
  d["class_names"] = names;
  return d;
}

pipeline::RunConfig run_config(const py::object& cfg) {
  return cfg.is_none() ? pipeline::RunConfig{} : pipeline::run_config_from_json(to_cpp(cfg));
}

pipeline::Stage parse_stage(const std::string& name) {
  for (auto s : {pipeline::Stage::synth, pipeline::Stage::encode, pipeline::Stage::hpo, pipeline::Stage::train,
                 pipeline::Stage::eval}) {
    if (pipeline::to_string(s) == name) return s;
  }
  throw InvalidArgument("unknown stage '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Fault diagnosis from plant parameter snapshots: synthetic data, image encoding, "
            "Bayesian hyperparameter search, a compound-scaled CNN and evaluation.";

  auto base = py::register_exception<Error>(m, "FaultdxError", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  m.def(
      "generate_synthetic",
      [](const py::object& spec) {
        dataset::ScenarioSpec s;
        if (!spec.is_none()) s = to_cpp(spec).get<dataset::ScenarioSpec>();
        return dataset_dict(dataset::generate_synthetic(s));
      },
      py::arg("spec") = py::none(), "Synthetic dataset as a dict of numpy arrays (frames, labels, scenarios).");

  m.def("default_spec", [] { return to_py(json(dataset::ScenarioSpec{})); });

  m.def(
      "encode_frames",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> frames, std::size_t fit_rows) {
        if (frames.ndim() != 2) throw InvalidArgument("frames must be a 2-D array");
        const auto n = static_cast<std::size_t>(frames.shape(0));
        const auto p = static_cast<std::size_t>(frames.shape(1));
        if (fit_rows == 0 || fit_rows > n) fit_rows = n;
        std::vector<dataset::SensorFrame> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i].values.assign(frames.data(i, 0), frames.data(i, 0) + p);
        std::vector<dataset::SensorFrame> fit(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(fit_rows));
        const auto stats = preprocess::fit_minmax(dataset::Dataset(fit, {{0, "all"}}, dataset::IngestedProvenance{}));
        const std::size_t side = preprocess::image_side(p);
        py::array_t<float> out({n, side, side});
        for (std::size_t i = 0; i < n; ++i) {
          const auto img = preprocess::encode_gray(preprocess::normalize(rows[i], stats));
          std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data(i, 0, 0));
        }
        return out;
      },
      py::arg("frames"), py::arg("fit_rows") = 0,
      "Min-max normalizes with statistics of the first `fit_rows` rows (all when 0) and lays each row out "
      "as a zero-padded square image.");

  m.def("image_side", &preprocess::image_side);

  m.def(
      "compute_metrics",
      [](const std::vector<std::uint32_t>& y_true, const std::vector<std::uint32_t>& y_pred, std::size_t n_classes) {
        return to_py(json(metrics::compute_metrics(metrics::confusion(y_true, y_pred, n_classes))));
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("n_classes"));

  m.def("expected_improvement", py::overload_cast<double, double, double>(&bayesopt::expected_improvement),
        py::arg("mean"), py::arg("sigma"), py::arg("incumbent"));

  m.def(
      "search",
      [](const std::function<double(std::vector<double>)>& objective, const py::list& dims, const py::dict& options) {
        std::vector<bayesopt::Dim> ds;
        for (const auto& d : dims) ds.push_back(to_cpp(py::reinterpret_borrow<py::object>(d)).get<bayesopt::Dim>());
        const bayesopt::SearchSpace space(ds);
        bayesopt::HpoConfig cfg;
        const json o = to_cpp(options);
        cfg.budget = o.value("budget", cfg.budget);
        cfg.n_initial = o.value("n_initial", cfg.n_initial);
        cfg.parallelism = o.value("parallelism", std::size_t{1});
        cfg.early_stop_threshold = o.value("early_stop", 2.0);
        cfg.seed = o.value("seed", cfg.seed);
        const bool random = o.value("random", false);
        const bayesopt::Objective f = [&objective](const bayesopt::Config& c, std::uint64_t) {
          py::gil_scoped_acquire gil;
          return objective(c.values);
        };
        bayesopt::HpoState st;
        {
          py::gil_scoped_release release;
          st = random ? bayesopt::run_random_search(f, space, cfg) : bayesopt::run_hpo(f, space, cfg);
        }
        json trials = json::array();
        for (const auto& t : st.history) trials.push_back(bayesopt::trial_to_json(space, t));
        json out{{"trials", trials}, {"stop_reason", bayesopt::to_string(st.stop_reason)}};
        if (const auto* b = st.best()) out["best"] = bayesopt::trial_to_json(space, *b);
        return to_py(out);
      },
      py::arg("objective"), py::arg("dims"), py::arg("options") = py::dict(),
      "Maximizes objective(values) in [0, 1] over the search space given as a list of dimension dicts.");

  m.def(
      "estimate_flops",
      [](std::uint32_t phi, double alpha, double beta, double gamma, std::size_t n_classes) {
        return classifier::estimate_flops(classifier::make_architecture({phi, alpha, beta, gamma}, n_classes));
      },
      py::arg("phi") = 0, py::arg("alpha") = 1.2, py::arg("beta") = 1.1, py::arg("gamma") = 1.15,
      py::arg("n_classes") = 21);

  m.def(
      "predict",
      [](const std::filesystem::path& model_path, py::array_t<float, py::array::c_style | py::array::forcecast> images) {
        const auto net = classifier::load_model(model_path);
        const std::size_t s = net.input_side();
        if (images.ndim() != 3 || images.shape(1) != static_cast<py::ssize_t>(s) || images.shape(2) != static_cast<py::ssize_t>(s)) {
          throw InvalidArgument("images must have shape (n, " + std::to_string(s) + ", " + std::to_string(s) + ")");
        }
        const auto n = static_cast<std::size_t>(images.shape(0));
        const auto labels = classifier::predict_labels(net, std::span<const float>(images.data(), n * s * s), n);
        return py::array_t<std::uint32_t>(labels.size(), labels.data());
      },
      py::arg("model_path"), py::arg("images"), "Labels for images already resampled to the model input side.");

  m.def(
      "config",
      [](const py::object& cfg) { return to_py(pipeline::to_json(run_config(cfg))); },
      py::arg("config") = py::none(), "Effective run config with defaults filled in.");

  m.def(
      "run_pipeline",
      [](const py::object& cfg, bool resume, bool force) {
        const auto c = run_config(cfg);
        py::gil_scoped_release release;
        pipeline::run_pipeline(c, {resume, force});
      },
      py::arg("config") = py::none(), py::arg("resume") = false, py::arg("force") = false);

  m.def(
      "run_stage",
      [](const std::string& stage, const py::object& cfg, bool resume, bool force) {
        const auto s = parse_stage(stage);
        const auto c = run_config(cfg);
        py::gil_scoped_release release;
        pipeline::run_stage(s, c, {resume, force});
      },
      py::arg("stage"), py::arg("config") = py::none(), py::arg("resume") = false, py::arg("force") = false);
}
