// Python bindings: configs travel as JSON strings, tensors as numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "eanet/config.hpp"
#include "eanet/eatf.hpp"
#include "eanet/gradcheck.hpp"
#include "eanet/pipeline.hpp"

namespace py = pybind11;
using namespace eanet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

config::RunConfig parse_config(const std::string& json) {
  auto cfg = json.empty() ? config::RunConfig{} : config::run_from_json(config::Json::parse(json));
  cfg.validate();
  return cfg;
}

hand::Handedness parse_side(const std::string& side) {
  if (side == "left") return hand::Handedness::left;
  if (side == "right") return hand::Handedness::right;
  throw ConfigError("side must be 'left' or 'right', got '" + side + "'");
}

hand::HandPose make_pose(const Array& theta, const Array& beta) {
  return hand::HandPose::from_tensors(from_numpy(theta), from_numpy(beta));
}

py::dict hand_dict(const model::HandOutputs& h) {
  py::dict d;
  d["joints25"] = to_numpy(h.joints25);
  d["theta"] = to_numpy(h.theta);
  d["beta"] = to_numpy(h.beta);
  d["vertices"] = to_numpy(h.vertices);
  d["joints"] = to_numpy(h.joints);
  return d;
}

py::dict targets_dict(const synth::HandTargets& t) {
  py::dict d;
  d["present"] = t.present;
  if (!t.present) return d;
  d["joints25"] = to_numpy(t.joints25);
  d["joints3d"] = to_numpy(t.joints3d);
  d["vertices"] = to_numpy(t.vertices);
  d["theta"] = to_numpy(t.theta);
  d["beta"] = to_numpy(t.beta);
  return d;
}

py::dict sample_dict(const synth::Sample& s) {
  py::dict d;
  d["image"] = to_numpy(s.image);
  d["left"] = targets_dict(s.left);
  d["right"] = targets_dict(s.right);
  d["rel_translation"] = to_numpy(s.rel_translation);
  d["symmetry"] = s.symmetry;
  return d;
}

py::dict report_dict(const metrics::MetricReport& r) {
  py::dict d;
  d["mpjpe_single"] = r.mpjpe_single;
  d["mpjpe_two"] = r.mpjpe_two;
  d["mpjpe_all"] = r.mpjpe_all;
  d["mpvpe_single"] = r.mpvpe_single;
  d["mpvpe_two"] = r.mpvpe_two;
  d["mpvpe_all"] = r.mpvpe_all;
  d["mrrpe"] = r.mrrpe;
  d["n_single"] = r.n_single;
  d["n_two"] = r.n_two;
  return d;
}

class PyModel {
 public:
  PyModel(const std::string& config_json, std::uint64_t seed)
      : net_(std::make_unique<model::EANet>(parse_config(config_json).model, seed)) {}
  explicit PyModel(std::unique_ptr<model::EANet> net) : net_(std::move(net)) {}

  py::dict forward(const Array& image) const {
    model::NetOutputs out;
    {
      py::gil_scoped_release release;
      NoGradGuard guard;
      out = net_->forward(from_numpy(image));
    }
    py::dict d;
    d["left"] = hand_dict(out.left);
    d["right"] = hand_dict(out.right);
    d["rel_translation"] = to_numpy(out.rel_translation);
    return d;
  }

  std::size_t parameter_count() const { return net_->parameters().parameter_count(); }
  std::string config_json() const { return config::to_json(net_->config()).dump(); }

 private:
  std::unique_ptr<model::EANet> net_;
};

}  // namespace

PYBIND11_MODULE(_eanet, m) {
  m.doc() = "EANet interacting-hand mesh recovery at desk scale";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const std::ios_base::failure& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });

  m.def("default_config", [] { return config::to_json(config::RunConfig{}).dump(); },
        "Default run config as a JSON string.");
  m.def("validate_config", [](const std::string& json) { return config::to_json(parse_config(json)).dump(); },
        py::arg("config_json"), "Fill in defaults and validate; returns the full config JSON.");

  m.def("pose_hand",
        [](const Array& theta, const Array& beta, const std::string& side) {
          NoGradGuard guard;
          const auto mesh = hand::pose_hand(make_pose(theta, beta), parse_side(side), hand::default_template());
          return py::make_tuple(to_numpy(mesh.vertices), to_numpy(mesh.joints));
        },
        py::arg("theta"), py::arg("beta"), py::arg("side") = "right",
        "Posed (vertices [64, 3], joints [21, 3]) in hand-local meters.");
  m.def("template_faces", [] { return hand::default_template().faces; });

  m.def("mpjpe", [](const Array& pred, const Array& gt) { return metrics::mpjpe(from_numpy(pred), from_numpy(gt)); },
        py::arg("pred"), py::arg("gt"));
  m.def("mpvpe",
        [](const Array& pv, const Array& gv, const Array& pj, const Array& gj) {
          return metrics::mpvpe_scale_aligned(from_numpy(pv), from_numpy(gv), from_numpy(pj), from_numpy(gj));
        },
        py::arg("pred_vertices"), py::arg("gt_vertices"), py::arg("pred_joints"), py::arg("gt_joints"));
  m.def("mrrpe", [](const Array& pred, const Array& gt) { return metrics::mrrpe(from_numpy(pred), from_numpy(gt)); },
        py::arg("pred"), py::arg("gt"));
  m.def("pose_difference",
        [](const Array& tl, const Array& bl, const Array& tr, const Array& br) {
          return metrics::pose_difference(make_pose(tl, bl), make_pose(tr, br));
        },
        py::arg("theta_left"), py::arg("beta_left"), py::arg("theta_right"), py::arg("beta_right"));

  m.def("generate",
        [](std::uint64_t seed, std::size_t count, const std::string& config_json) {
          const auto cfg = parse_config(config_json);
          std::vector<synth::Sample> data;
          {
            py::gil_scoped_release release;
            data = synth::generate(seed, count, cfg.data.synth);
          }
          py::list out;
          for (const auto& s : data) out.append(sample_dict(s));
          return out;
        },
        py::arg("seed"), py::arg("count"), py::arg("config_json") = "");
  m.def("read_dataset", [](const std::filesystem::path& path) {
    py::list out;
    for (const auto& s : synth::read_dataset(path)) out.append(sample_dict(s));
    return out;
  });

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, std::uint64_t>(), py::arg("config_json") = "", py::arg("seed") = 0)
      .def_static("load",
                  [](const std::filesystem::path& path) {
                    return PyModel(checkpoint::restore_model(checkpoint::load(path)));
                  })
      .def("forward", &PyModel::forward, py::arg("image"))
      .def_property_readonly("parameter_count", &PyModel::parameter_count)
      .def_property_readonly("config_json", &PyModel::config_json);

  m.def("gradcheck",
        [](std::uint64_t seed) {
          std::vector<gradcheck::SuiteRow> rows;
          {
            py::gil_scoped_release release;
            gradcheck::SuiteOptions opts;
            opts.seed = seed;
            rows = gradcheck::run_suite(opts);
          }
          py::list out;
          for (const auto& r : rows) out.append(py::make_tuple(r.name, r.max_rel_error, r.pass));
          return out;
        },
        py::arg("seed") = 0, "Finite-difference suite as (name, max_rel_error, pass) rows.");

  m.def("generate_datasets",
        [](const std::string& config_json, const std::filesystem::path& out_dir, bool sweep) {
          const auto cfg = parse_config(config_json);
          py::gil_scoped_release release;
          std::vector<std::string> names;
          for (const auto& f : pipeline::generate_datasets(cfg, out_dir, sweep)) names.push_back(f.name);
          return names;
        },
        py::arg("config_json"), py::arg("out_dir"), py::arg("sweep") = false);
  m.def("train",
        [](const std::string& config_json, const std::filesystem::path& dataset_dir,
           const std::filesystem::path& out_dir, bool overfit) {
          const auto cfg = parse_config(config_json);
          train::TrainOptions opts;
          opts.overfit = overfit;
          train::TrainResult r;
          {
            py::gil_scoped_release release;
            r = pipeline::train_run(cfg, dataset_dir, out_dir, opts);
          }
          py::dict d;
          d["steps"] = r.state.step;
          d["initial_loss"] = r.initial_loss;
          d["final_loss"] = r.final_loss;
          d["epoch_losses"] = r.state.epoch_losses;
          return d;
        },
        py::arg("config_json"), py::arg("dataset_dir"), py::arg("out_dir"), py::arg("overfit") = false);
  m.def("evaluate",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
           const std::filesystem::path& out_dir) {
          evaluate::Evaluation ev;
          {
            py::gil_scoped_release release;
            ev = pipeline::eval_run(checkpoint, dataset, nullptr, out_dir);
          }
          return report_dict(ev.report);
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("out_dir"));
}
