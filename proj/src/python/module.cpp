// Python bindings: tensors cross the boundary as float64 numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cohft/commands.hpp"
#include "cohft/io.hpp"
#include "cohft/ops.hpp"
#include "cohft/resample.hpp"
#include "cohft/verify.hpp"
#include "cohft/window.hpp"

namespace py = pybind11;
using namespace cohft;

namespace {

using Array = py::array_t<Real, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<Real>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.raw(), t.raw() + t.numel(), out.mutable_data());
  return out;
}

// Wraps a (Tensor, Args...) -> Tensor function.
template <class... Args, class F>
auto lift(F f) {
  return [f](const Array& a, Args... rest) { return to_array(f(to_tensor(a), rest...)); };
}

py::dict pair_dict(const TrainingPair& p) {
  py::dict d;
  d["t2_lr"] = to_array(p.t2_lr);
  d["t2_lr_grad"] = to_array(p.t2_lr_grad);
  d["t1_hr_grad"] = to_array(p.t1_hr_grad);
  d["t2_hr"] = to_array(p.t2_hr);
  return d;
}

py::dict metric_dict(const MetricRow& r) {
  py::dict d;
  d["sample_id"] = r.sample_id;
  d["psnr_db"] = r.psnr_db;
  d["ssim"] = r.ssim;
  d["loss_in"] = r.loss_in;
  d["loss_c"] = r.loss_c;
  d["total"] = r.total;
  d["bicubic_psnr_db"] = r.bicubic_psnr_db;
  d["bicubic_ssim"] = r.bicubic_ssim;
  return d;
}

RunConfig make_run_config(const std::map<std::string, std::string>& settings) {
  RunConfig cfg;
  for (const auto& [k, v] : settings) cfg.set(k, v);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(cohft, m) {
  m.doc() = "Guided MR super-resolution with cross-modality attention";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  // Tensor primitives
  m.def("conv2d", [](const Array& x, const Array& w, const Array& b, std::size_t stride, std::size_t pad) {
    return to_array(ops::conv2d(to_tensor(x), to_tensor(w), to_tensor(b), stride, pad));
  }, py::arg("x"), py::arg("weights"), py::arg("bias"), py::arg("stride") = 1, py::arg("pad") = 0);
  m.def("softmax", lift<int>([](const Tensor& x, int axis) { return ops::softmax(x, axis); }), py::arg("x"), py::arg("axis") = -1);
  m.def("layer_norm", [](const Array& x, const Array& gain, const Array& shift) {
    return to_array(ops::layer_norm(to_tensor(x), to_tensor(gain), to_tensor(shift)));
  });
  m.def("gelu", lift([](const Tensor& x) { return ops::gelu(x); }));
  m.def("unfold", lift<std::size_t>([](const Tensor& x, std::size_t p) { return ops::unfold(x, p); }), py::arg("x"), py::arg("p"));
  m.def("fold", lift<std::size_t, std::size_t, std::size_t>([](const Tensor& t, std::size_t p, std::size_t h, std::size_t w) { return ops::fold(t, p, h, w); }),
        py::arg("tokens"), py::arg("p"), py::arg("h"), py::arg("w"));
  m.def("pixel_shuffle", lift<std::size_t>([](const Tensor& x, std::size_t r) { return ops::pixel_shuffle(x, r); }));
  m.def("pixel_unshuffle", lift<std::size_t>([](const Tensor& x, std::size_t r) { return ops::pixel_unshuffle(x, r); }));

  // Windows
  py::enum_<WindowMode>(m, "WindowMode").value("Short", WindowMode::Short).value("Long", WindowMode::Long);
  m.def("window_pixels", [](std::size_t h, std::size_t w, std::size_t g, WindowMode mode) {
    return make_window_plan(h, w, g, mode).pixel;
  }, "Flat pixel index of every (window, slot), windows major.");
  m.def("partition", [](const Array& x, std::size_t g, WindowMode mode) {
    const Tensor t = to_tensor(x);
    return to_array(partition(t, make_window_plan(t.dim(0), t.dim(1), g, mode)));
  });
  m.def("merge", [](const Array& windows, std::size_t h, std::size_t w, std::size_t g, WindowMode mode) {
    return to_array(merge(to_tensor(windows), make_window_plan(h, w, g, mode)));
  });

  // Resampling, metrics and objectives
  m.def("bicubic_upsample", lift<std::size_t>([](const Tensor& x, std::size_t r) { return bicubic_upsample(x, r); }));
  m.def("bicubic_downsample", lift<std::size_t>([](const Tensor& x, std::size_t r) { return bicubic_downsample(x, r); }));
  m.def("gradient_map", lift<Real>([](const Tensor& x, Real eps) { return gradient_map(x, eps); }), py::arg("img"),
        py::arg("eps") = 1e-6);
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); });
  m.def("mse", [](const Array& a, const Array& b) { return mse(to_tensor(a), to_tensor(b)); });
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); });
  m.def("loss", [](const Array& out, const Array& grad_out, const Array& gt, Real alpha, Real lambda) {
    LossConfig cfg;
    cfg.alpha = alpha;
    cfg.lambda = lambda;
    const LossValues v = evaluate_loss(to_tensor(out), to_tensor(grad_out), to_tensor(gt), cfg);
    return py::make_tuple(v.total, v.intensity, v.gradient);
  }, py::arg("out"), py::arg("grad_out"), py::arg("gt"), py::arg("alpha") = 0.95, py::arg("lambda_") = 0.5,
     "(total, intensity, gradient) loss terms.");

  // Data
  m.def("synth_phantom", [](std::uint64_t seed, std::size_t side) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.side = side;
    const Phantom p = synth_phantom(spec);
    return py::make_tuple(to_array(p.t1), to_array(p.t2));
  }, py::arg("seed"), py::arg("side") = 96);
  m.def("make_pair", [](std::uint64_t seed, std::size_t side, std::size_t r) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.side = side;
    return pair_dict(make_pair(spec, r));
  }, py::arg("seed"), py::arg("side") = 96, py::arg("r") = 2);
  m.def("save_tensor", [](const std::filesystem::path& path, const Array& a) { io::save_tensor(path, to_tensor(a)); });
  m.def("load_tensor", [](const std::filesystem::path& path) { return to_array(io::load_tensor(path)); });

  // Model
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](const std::string& preset, std::size_t r) { return ModelConfig::preset(preset, r); }),
           py::arg("preset") = "tiny", py::arg("r") = 2)
      .def("to_dict", &ModelConfig::to_map)
      .def("set", [](ModelConfig& c, const std::string& k, const std::string& v) {
        if (!c.set(k, v)) throw ConfigError("unknown model key '" + k + "'");
      })
      .def("validate", &ModelConfig::validate)
      .def("preflight", &ModelConfig::preflight)
      .def_property_readonly("parameter_count", [](const ModelConfig& c) { return parameter_count(c); })
      .def_readonly("d", &ModelConfig::d)
      .def_readonly("r", &ModelConfig::r)
      .def_readonly("stages", &ModelConfig::stages);

  py::class_<ModelState>(m, "ModelState")
      .def("names", [](const ModelState& s) {
        std::vector<std::string> out;
        for (const auto& [name, t] : s.entries()) out.push_back(name);
        return out;
      })
      .def("__len__", &ModelState::size)
      .def("__contains__", &ModelState::contains)
      .def("__getitem__", [](const ModelState& s, const std::string& k) { return to_array(s.at(k)); })
      .def("__setitem__", [](ModelState& s, const std::string& k, const Array& a) {
        Tensor t = to_tensor(a);
        if (t.shape() != s.at(k).shape()) throw ShapeError("shape mismatch for " + k);
        s.at(k) = std::move(t);
      })
      .def_property_readonly("parameter_count", &ModelState::parameter_count)
      .def("save", [](const ModelState& s, const std::filesystem::path& p) { save_state(p, s); })
      .def_static("load", [](const std::filesystem::path& p) { return load_state(p); });

  m.def("init_model", [](const ModelConfig& cfg, std::uint64_t seed, bool dense) {
    return init_model(cfg, seed, dense ? InitMode::Dense : InitMode::SafeStart);
  }, py::arg("config"), py::arg("seed") = 0, py::arg("dense") = false);
  m.def("predict", [](const ModelState& s, const ModelConfig& cfg, const Array& lr, const Array& guide) {
    const Prediction p = predict(s, cfg, to_tensor(lr), to_tensor(guide));
    return py::make_tuple(to_array(p.intensity), to_array(p.gradient));
  }, py::arg("state"), py::arg("config"), py::arg("lr"), py::arg("guide_grad"), "(I_out, R_out)");

  // Commands, configured by a dict of key=value settings
  m.def("gen_data", [](const std::map<std::string, std::string>& settings, const std::filesystem::path& out) {
    std::ostringstream log;
    commands::gen_data(make_run_config(settings), out, log);
    return log.str();
  }, py::arg("settings"), py::arg("out"));
  m.def("train", [](const std::map<std::string, std::string>& settings, const std::filesystem::path& out) {
    std::ostringstream log;
    py::gil_scoped_release release;
    commands::train(make_run_config(settings), out, log);
    return log.str();
  }, py::arg("settings"), py::arg("out"));
  m.def("evaluate", [](const std::map<std::string, std::string>& settings, const std::filesystem::path& out) {
    std::ostringstream log;
    py::list rows;
    for (const auto& r : commands::eval(make_run_config(settings), out, log)) rows.append(metric_dict(r));
    return rows;
  }, py::arg("settings"), py::arg("out"));
  m.def("infer", [](const std::map<std::string, std::string>& settings, const std::filesystem::path& out) {
    std::ostringstream log;
    const Prediction p = commands::infer(make_run_config(settings), out, log);
    return py::make_tuple(to_array(p.intensity), to_array(p.gradient));
  }, py::arg("settings"), py::arg("out"));
  m.def("run_checks", [](std::uint64_t seed, const std::string& fault_op) {
    CheckOptions opts;
    opts.seed = seed;
    opts.fault_op = fault_op;
    std::vector<py::tuple> out;
    for (const auto& r : run_checks(opts)) out.push_back(py::make_tuple(r.module, r.name, r.passed, r.detail));
    return out;
  }, py::arg("seed") = 0, py::arg("fault_op") = "", "(module, name, passed, detail) per check.");
}
