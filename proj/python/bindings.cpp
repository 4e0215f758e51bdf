#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fspnet/data.hpp"
#include "fspnet/fsd.hpp"
#include "fspnet/model.hpp"
#include "fspnet/train.hpp"

namespace py = pybind11;
using namespace fspnet;

namespace {

Tensor image_from_array(const py::array_t<double>& arr) {
  if (arr.ndim() != 3) {
    throw py::value_error("image must be a (c, h, w) float array");
  }
  auto buf = arr.unchecked<3>();
  const std::size_t c = arr.shape(0), h = arr.shape(1), w = arr.shape(2);
  std::vector<double> data(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        data[(ch * h + y) * w + x] = buf(ch, y, x);
  return Tensor::from_data({c, h, w}, std::move(data));
}

BinaryMask mask_from_array(const py::array_t<std::uint8_t>& arr) {
  if (arr.ndim() != 2) throw py::value_error("mask must be a (h, w) uint8 array");
  auto buf = arr.unchecked<2>();
  BinaryMask m{static_cast<std::size_t>(arr.shape(0)),
               static_cast<std::size_t>(arr.shape(1)),
               {}};
  m.v.resize(m.h * m.w);
  for (std::size_t y = 0; y < m.h; ++y)
    for (std::size_t x = 0; x < m.w; ++x) m.v[y * m.w + x] = buf(y, x) ? 1 : 0;
  return m;
}

ScoreMap score_from_array(const py::array_t<double>& arr) {
  if (arr.ndim() != 2) throw py::value_error("score map must be a (h, w) float array");
  auto buf = arr.unchecked<2>();
  ScoreMap m{static_cast<std::size_t>(arr.shape(0)),
             static_cast<std::size_t>(arr.shape(1)),
             {}};
  m.v.resize(m.h * m.w);
  for (std::size_t y = 0; y < m.h; ++y)
    for (std::size_t x = 0; x < m.w; ++x) m.v[y * m.w + x] = buf(y, x);
  return m;
}

py::array_t<double> score_to_array(const ScoreMap& m) {
  py::array_t<double> arr({m.h, m.w});
  auto buf = arr.mutable_unchecked<2>();
  for (std::size_t y = 0; y < m.h; ++y)
    for (std::size_t x = 0; x < m.w; ++x) buf(y, x) = m.v[y * m.w + x];
  return arr;
}

py::dict metrics_to_dict(const MetricValues& v) {
  py::dict d;
  d["mae"] = v.mae;
  d["s_measure"] = v.s_measure;
  d["f_adaptive"] = v.f_adaptive;
  d["f_mean"] = v.f_mean;
  d["f_max"] = v.f_max;
  d["weighted_f"] = v.weighted_f;
  d["e_adaptive"] = v.e_adaptive;
  d["e_mean"] = v.e_mean;
  d["e_max"] = v.e_max;
  return d;
}

/// Thin training-capable wrapper around the C++ model.
class PyModel {
 public:
  PyModel(const std::string& config_text, const std::string& variant)
      : model_(parse_config_text(config_text), variant_from_name(variant)),
        rng_(model_.cfg.seed) {}

  py::array_t<double> predict(const py::array_t<double>& image) {
    return score_to_array(model_.predict(image_from_array(image)));
  }

  std::vector<py::array_t<double>> predict_laterals(
      const py::array_t<double>& image) {
    std::vector<py::array_t<double>> out;
    for (const ScoreMap& m : model_.predict_laterals(image_from_array(image)))
      out.push_back(score_to_array(m));
    return out;
  }

  double loss_on(const py::array_t<double>& image,
                 const py::array_t<std::uint8_t>& mask) {
    NoGradGuard no_grad;
    model_.set_training(false);
    ForwardResult fwd = model_.forward(image_from_array(image));
    Tensor loss =
        model_.compute_loss(fwd, mask_to_tensor(mask_from_array(mask)));
    model_.set_training(true);
    return loss.item();
  }

  std::vector<double> train_steps(
      const std::vector<py::array_t<double>>& images,
      const std::vector<py::array_t<std::uint8_t>>& masks, std::size_t steps,
      bool augment) {
    if (images.size() != masks.size() || images.empty()) {
      throw py::value_error("need matching non-empty image and mask lists");
    }
    std::vector<DatasetPair> data;
    for (std::size_t i = 0; i < images.size(); ++i) {
      data.push_back(DatasetPair{"sample_" + std::to_string(i),
                                 image_from_array(images[i]),
                                 mask_from_array(masks[i])});
    }
    ModelConfig saved = model_.cfg;
    model_.cfg.epochs = steps;  // upper bound; max_steps cuts the loop
    TrainOptions opts;
    opts.augment = augment;
    opts.checkpoint_every = 0;
    opts.max_steps = steps;
    TrainResult result = train(model_, data, adam_, rng_, opts);
    model_.cfg.epochs = saved.epochs;
    return result.loss_trace;
  }

  void save(const std::string& path) {
    save_checkpoint(path, model_, adam_, 0, rng_.state());
  }

  std::string variant() const { return variant_name(model_.variant); }
  std::uint64_t seed() const { return model_.cfg.seed; }

 private:
  Model model_;
  AdamState adam_;
  Rng rng_;
};

}  // namespace

PYBIND11_MODULE(_fspnet, m) {
  m.doc() = "feature shrinkage pyramid for camouflaged object detection: "
            "C++ core bindings";

  m.def("schedule_table", []() { return DecodeSchedule::build(12).dump(); },
        "human-readable decoder wiring table");
  m.def("schedule_counts", []() {
    return DecodeSchedule::build(12).aim_counts;
  });
  m.def("default_config_text",
        []() { return serialize_config(ModelConfig{}); });

  m.def(
      "gen_synthetic",
      [](std::size_t count, std::size_t h, std::size_t w, std::uint64_t seed) {
        py::list out;
        for (const SyntheticSample& s : gen_synthetic(count, h, w, seed)) {
          const std::size_t hh = s.mask.h, ww = s.mask.w;
          py::array_t<double> image({std::size_t(3), hh, ww});
          auto ib = image.mutable_unchecked<3>();
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < hh; ++y)
              for (std::size_t x = 0; x < ww; ++x)
                ib(c, y, x) = s.image.values()[(c * hh + y) * ww + x];
          py::array_t<std::uint8_t> mask({hh, ww});
          auto mb = mask.mutable_unchecked<2>();
          for (std::size_t y = 0; y < hh; ++y)
            for (std::size_t x = 0; x < ww; ++x)
              mb(y, x) = s.mask.v[y * ww + x];
          out.append(py::make_tuple(image, mask));
        }
        return out;
      },
      py::arg("count"), py::arg("h"), py::arg("w"), py::arg("seed"));

  m.def(
      "evaluate",
      [](const py::array_t<double>& pred, const py::array_t<std::uint8_t>& mask) {
        return metrics_to_dict(
            evaluate_pair(score_from_array(pred), mask_from_array(mask)));
      },
      py::arg("prediction"), py::arg("mask"),
      "all six metrics (nine values) for one prediction/mask pair");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::string&>(),
           py::arg("config_text"), py::arg("variant") = "full")
      .def("predict", &PyModel::predict, py::arg("image"))
      .def("predict_laterals", &PyModel::predict_laterals, py::arg("image"))
      .def("loss_on", &PyModel::loss_on, py::arg("image"), py::arg("mask"))
      .def("train_steps", &PyModel::train_steps, py::arg("images"),
           py::arg("masks"), py::arg("steps"), py::arg("augment") = false)
      .def("save", &PyModel::save, py::arg("path"))
      .def_property_readonly("variant", &PyModel::variant)
      .def_property_readonly("seed", &PyModel::seed);
}
