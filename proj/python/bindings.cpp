#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "niff/error.hpp"
#include "niff/harness.hpp"

namespace py = pybind11;
using namespace niff;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

Array matrix(const std::vector<double>& data, std::size_t rows, std::size_t cols) {
  Array out({rows, cols});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

Array vector(std::span<const double> data) {
  Array out(data.size());
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

Command parse_command(const std::string& name) {
  if (name == "simulate") return Command::Simulate;
  if (name == "fit-nsvi" || name == "nsvi") return Command::FitNsvi;
  if (name == "fit-npsgld" || name == "npsgld") return Command::FitNpsgld;
  if (name == "filter") return Command::Filter;
  if (name == "predict") return Command::Predict;
  throw py::value_error("unknown command '" + name + "'");
}

py::dict band_dict(const Band& b) {
  py::dict d;
  d["q05"] = vector(b.q05);
  d["q50"] = vector(b.q50);
  d["q95"] = vector(b.q95);
  return d;
}

py::dict fit_config(const std::filesystem::path& config, const std::string& method, std::optional<std::uint64_t> seed,
                    std::optional<std::size_t> threads) {
  const Command cmd = parse_command(method);
  if (cmd != Command::FitNsvi && cmd != Command::FitNpsgld && cmd != Command::Filter)
    throw py::value_error("fit: method must be nsvi, npsgld or filter");
  const Experiment exp = prepare(parse_config(config));
  FitResult res;
  PosteriorSummary sum;
  {
    py::gil_scoped_release release;
    res = fit(exp, cmd, seed.value_or(exp.config.seed), threads.value_or(exp.config.threads));
    sum = summarize(exp, res.samples);
  }
  const auto& s = res.samples;
  py::dict out;
  out["theta_names"] = sum.theta_names;
  out["theta"] = matrix(s.theta, s.size(), s.theta_dim);
  out["w"] = matrix(s.w, s.size(), s.w_dim);
  out["x0"] = matrix(s.x0, s.x0_dim ? s.x0.size() / s.x0_dim : 0, s.x0_dim);
  out["chain"] = s.chain;
  out["theta_mean"] = vector(sum.theta_mean);
  out["theta_sd"] = vector(sum.theta_sd);
  out["grid"] = vector(sum.grid);
  py::list states;
  for (const auto& b : sum.states) states.append(band_dict(b));
  out["states"] = states;
  out["state_rmse"] = vector(sum.state_rmse);
  out["x0_hat_mean"] = vector(sum.x0_hat_mean);
  out["x0_chain_mean"] = vector(sum.x0_chain_mean);
  out["error"] = res.error;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayesian state-path and parameter reconstruction for ODE systems";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  py::class_<OdeModel, std::shared_ptr<OdeModel>>(m, "Model")
      .def_property_readonly("name", &OdeModel::name)
      .def_property_readonly("state_names", &OdeModel::state_names)
      .def_property_readonly("param_names", &OdeModel::param_names)
      .def_property_readonly("output_names", &OdeModel::output_names)
      .def(
          "field", [](const OdeModel& model, const Array& x, double t, const Array& theta) {
            return vector(eval_field(model, view(x), t, view(theta)));
          },
          py::arg("x"), py::arg("t"), py::arg("theta"))
      .def(
          "response", [](const OdeModel& model, const Array& x, double t, const Array& theta) {
            return vector(eval_response(model, view(x), t, view(theta)));
          },
          py::arg("x"), py::arg("t"), py::arg("theta"))
      .def(
          "integrate",
          [](const OdeModel& model, const Array& x_init, const Array& theta, double t1, double dt, double t0) {
            const Trajectory tr = rk4_integrate(model, view(x_init), view(theta), t0, t1, dt);
            return py::make_tuple(vector(tr.times), matrix(tr.states, tr.size(), tr.dim));
          },
          py::arg("x_init"), py::arg("theta"), py::arg("t1"), py::arg("dt"), py::arg("t0") = 0.0,
          "RK4 trajectory; returns (times, states).");

  m.def("duffing", &duffing);
  m.def("two_dof", &two_dof_duffing, py::arg("forcing_amplitude"), py::arg("forcing_frequency"));
  m.def(
      "model_from_config", [](const std::filesystem::path& path) { return build_model(parse_config(path).model); },
      py::arg("path"), "The physical-unit model an experiment file describes.");

  py::class_<PathSpec>(m, "PathSpec")
      .def_property_readonly("kind", [](const PathSpec& s) { return std::string(path_kind_name(s.kind)); })
      .def_readonly("state_dim", &PathSpec::state_dim)
      .def_readonly("window", &PathSpec::window)
      .def_property_readonly("param_count", [](const PathSpec& s) { return param_count(s); })
      .def_property_readonly("latent_count", [](const PathSpec& s) { return latent_count(s); })
      .def("init_params", [](const PathSpec& s, std::uint64_t seed) { return vector(init_params(s, seed)); },
           py::arg("seed"))
      .def(
          "eval", [](const PathSpec& s, const Array& w, double t) { return vector(eval_path(s, view(w), t)); },
          py::arg("w"), py::arg("t"))
      .def(
          "eval_dot", [](const PathSpec& s, const Array& w, double t) { return vector(eval_path_dot(s, view(w), t)); },
          py::arg("w"), py::arg("t"));

  m.def("fourier_path", &fourier_path, py::arg("state_dim"), py::arg("window"), py::arg("modes"),
        py::arg("period") = 0.0);
  m.def("rbf_path", &rbf_path, py::arg("state_dim"), py::arg("window"), py::arg("centers"), py::arg("scale") = 0.05);
  m.def("residual_path", &residual_path, py::arg("basis"), py::arg("encoder_modes"), py::arg("hidden_widths"));
  m.def("reparam_fourier_path", &reparam_fourier_path, py::arg("state_dim"), py::arg("window"), py::arg("modes"),
        py::arg("dependent_index") = 0, py::arg("period") = 0.0);

  m.def(
      "check_config",
      [](const std::filesystem::path& path) { return serialize_config(parse_config(path)); }, py::arg("path"),
      "Parses and validates an experiment file; returns its flattened TOML.");
  m.def(
      "run",
      [](const std::filesystem::path& config, const std::string& command, const std::filesystem::path& out,
         std::optional<std::uint64_t> seed, std::optional<std::size_t> threads, const std::filesystem::path& samples) {
        RunOptions opt;
        opt.out_dir = out;
        opt.seed = seed;
        opt.threads = threads;
        opt.samples = samples;
        const auto cfg = parse_config(config);
        py::gil_scoped_release release;
        return run_experiment(cfg, parse_command(command), opt);
      },
      py::arg("config"), py::arg("command"), py::arg("out"), py::arg("seed") = py::none(),
      py::arg("threads") = py::none(), py::arg("samples") = std::filesystem::path(),
      "Runs one CLI command and writes its files into `out`.");
  m.def("summarize", &summarize_dir, py::arg("dir"));
  m.def("fit", &fit_config, py::arg("config"), py::arg("method") = "nsvi", py::arg("seed") = py::none(),
        py::arg("threads") = py::none(), "In-memory fit; returns samples and the posterior summary.");

  m.def("quantile", [](std::vector<double> v, double q) { return quantile(std::move(v), q); }, py::arg("values"),
        py::arg("q"));
  m.def(
      "mse_metric",
      [](const Array& pred_disp, const Array& pred_acc, const Array& meas_disp, const Array& meas_acc, double var_d,
         double var_a) {
        return mse_metric(view(pred_disp), view(pred_acc), view(meas_disp), view(meas_acc), var_d, var_a);
      },
      py::arg("pred_disp"), py::arg("pred_acc"), py::arg("meas_disp"), py::arg("meas_acc"),
      py::arg("var_d") = kMseDisplacementVariance, py::arg("var_a") = kMseAccelerationVariance);
}
