#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mvcc/data.hpp"
#include "mvcc/geometry.hpp"
#include "mvcc/losses.hpp"
#include "mvcc/model.hpp"
#include "mvcc/sampler.hpp"
#include "mvcc/trainer.hpp"

namespace py = pybind11;
using namespace mvcc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a, bool requires_grad = false) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> data(a.data(), a.data() + a.size());
  return requires_grad ? Tensor::parameter(std::move(shape), std::move(data))
                       : Tensor::constant(std::move(shape), std::move(data));
}

Array to_array(std::span<const double> data, const Shape& shape) {
  Array out(std::vector<py::ssize_t>(shape.begin(), shape.end()));
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

Array to_array(const Tensor& t) { return to_array(t.data(), t.shape()); }

Array grad_array(const Tensor& t) {
  const auto g = t.grad();
  if (!g) return to_array(Tensor::zeros(t.shape()));
  return to_array(*g, t.shape());
}

py::array_t<int> label_array(const std::vector<int>& labels, std::size_t h, std::size_t w) {
  py::array_t<int> out({static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
  std::copy(labels.begin(), labels.end(), out.mutable_data());
  return out;
}

py::array_t<bool> mask_array(const Mask& m) {
  py::array_t<bool> out({static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)});
  for (std::size_t i = 0; i < m.size(); ++i) out.mutable_data()[i] = m.bits[i] != 0;
  return out;
}

AffineTransform to_affine(const std::array<double, 6>& m) { return AffineTransform{m}; }

// Scalar loss value and the gradient with respect to each named input.
py::tuple value_and_grads(const Tensor& loss, std::initializer_list<Tensor> inputs) {
  backward(loss);
  py::tuple out(inputs.size() + 1);
  out[0] = loss.item();
  std::size_t i = 1;
  for (const Tensor& t : inputs) out[i++] = grad_array(t);
  return out;
}

py::dict dataset_dict(const Dataset& ds) {
  py::list images, labels;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    images.append(to_array(ds.images[i]));
    labels.append(label_array(ds.labels[i], ds.height, ds.width));
  }
  py::dict d;
  d["images"] = images;
  d["labels"] = labels;
  return d;
}

py::dict run_dict(const RunRecord& rec, const TrainConfig& cfg) {
  py::list evals;
  for (const auto& e : rec.evals) evals.append(py::make_tuple(e.step, e.miou));
  py::dict d;
  d["status"] = rec.status;
  d["final_miou"] = rec.final_miou;
  d["evals"] = evals;
  d["metrics_csv"] = metrics_csv(cfg, rec);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the mvcc semi-supervised segmentation core.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("compose", [](const std::array<double, 6>& a, const std::array<double, 6>& b) {
    return compose(to_affine(a), to_affine(b)).m;
  }, py::arg("a"), py::arg("b"), "Row-major 2×3 affine mapping p to a(b(p)).");
  m.def("invert", [](const std::array<double, 6>& t) { return invert(to_affine(t)).m; }, py::arg("t"));
  m.def("warp", [](const Array& img, const std::array<double, 6>& t) {
    const Tensor x = to_tensor(img);
    const Warped w = grid_sample_bilinear(x, make_grid(to_affine(t), x.dim(1), x.dim(2)));
    return py::make_tuple(to_array(w.values), mask_array(w.valid));
  }, py::arg("image"), py::arg("transform"),
     "Bilinear resampling of a C×H×W image: out(q) = image(t(q)). Returns (values, valid).");

  m.def("consistency_loss", [](const Array& p, const Array& p_prime, const Array& pseudo,
                               const std::vector<std::uint8_t>& valid) {
    return consistency_loss(to_tensor(p), to_tensor(p_prime), to_tensor(pseudo), valid).item();
  }, py::arg("p"), py::arg("p_prime"), py::arg("pseudo"), py::arg("valid"));
  m.def("correlation_consistency", [](const Array& f, const Array& f_prime, const Array& target) {
    const Tensor a = to_tensor(f, true), b = to_tensor(f_prime, true);
    return value_and_grads(correlation_consistency({a, b, to_tensor(target), std::nullopt, {}}), {a, b});
  }, py::arg("f"), py::arg("f_prime"), py::arg("target"),
     "Returns (loss, d/df, d/df_prime).");
  m.def("info_nce", [](const Array& f, const std::vector<int>& classes, double tau) {
    const Tensor a = to_tensor(f, true);
    return value_and_grads(info_nce(a, classes, tau), {a});
  }, py::arg("f"), py::arg("classes"), py::arg("tau") = 0.1, "Returns (loss, d/df).");

  m.def("sample_pixels", [](const std::vector<int>& hard, const std::vector<std::uint8_t>& eligible,
                            std::size_t num_classes, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    return sample_pixels(make_sample_spec(hard, eligible, num_classes, count), rng);
  }, py::arg("hard"), py::arg("eligible"), py::arg("num_classes"), py::arg("count"), py::arg("seed") = 0,
     "Category-normalized draws with replacement.");

  m.def("generate_dataset", [](const std::string& config_text, std::uint64_t seed) {
    const DatasetConfig cfg = DatasetConfig::from_config(KeyValueConfig::parse(config_text));
    cfg.validate();
    return dataset_dict(generate_dataset(cfg, seed));
  }, py::arg("config_text") = "", py::arg("seed") = 0);
  m.def("miou", [](std::size_t num_classes, const std::vector<std::uint64_t>& counts) {
    return miou(ConfusionMatrix::from_counts(num_classes, counts)).miou;
  }, py::arg("num_classes"), py::arg("counts"), "Mean IoU of a row-major truth×prediction count matrix.");

  m.def("train", [](const std::string& config_text) {
    KeyValueConfig kv = KeyValueConfig::parse(config_text);
    const TrainConfig cfg = TrainConfig::from_config(kv);
    kv.require_all_used();
    cfg.validate();
    RunRecord rec;
    {
      py::gil_scoped_release release;
      rec = run_experiment(cfg);
    }
    return run_dict(rec, cfg);
  }, py::arg("config_text"), "Runs one training job from flat config text.");
}
