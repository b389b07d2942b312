#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <memory>
#include <sstream>

#include "cli.hpp"
#include "progan/config.hpp"
#include "progan/dataio.hpp"
#include "progan/errors.hpp"
#include "progan/metrics.hpp"
#include "progan/trainer.hpp"

namespace py = pybind11;
using namespace progan;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D image array");
  Image img(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Array to_array(const Image& img) {
  Array a({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

std::vector<Image> to_images(const py::iterable& items) {
  std::vector<Image> out;
  for (const auto& item : items) out.push_back(to_image(item.cast<Array>()));
  return out;
}

Array stack(const std::vector<Image>& images) {
  if (images.empty()) return Array(std::vector<py::ssize_t>{0, 0, 0});
  const auto h = images[0].height, w = images[0].width;
  Array a({static_cast<py::ssize_t>(images.size()), static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
  auto* p = a.mutable_data();
  for (const auto& img : images) p = std::copy(img.pixels.begin(), img.pixels.end(), p);
  return a;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["swd_per_scale"] = r.swd_per_scale;
  d["swd_mean"] = r.swd_mean ? py::cast(*r.swd_mean) : py::none();
  d["msssim_cross"] = r.msssim_cross ? py::cast(*r.msssim_cross) : py::none();
  d["msssim_within_real"] = r.msssim_within_real ? py::cast(*r.msssim_within_real) : py::none();
  d["msssim_within_fake"] = r.msssim_within_fake ? py::cast(*r.msssim_within_fake) : py::none();
  return d;
}

// Owns the data a Trainer refers to.
struct PyTrainer {
  Dataset data;
  std::unique_ptr<Trainer> trainer;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Progressive GAN training and evaluation for grayscale images";

  py::register_exception<Error>(m, "ProganError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::enum_<View>(m, "View").value("CC", View::CC).value("MLO", View::MLO);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool; returns (exit_code, stdout, stderr).");

  // Images
  m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p)); }, py::arg("path"));
  m.def(
      "save_image", [](const Array& a, const std::filesystem::path& p) { save_image(to_image(a), p); },
      py::arg("image"), py::arg("path"));
  m.def(
      "preprocess", [](const Array& a, std::int64_t h, std::int64_t w) { return to_array(preprocess(to_image(a), h, w)); },
      py::arg("image"), py::arg("height") = 80, py::arg("width") = 64);
  m.def(
      "center_fit", [](const Array& a, std::int64_t h, std::int64_t w) { return to_array(center_fit(to_image(a), h, w)); },
      py::arg("image"), py::arg("height"), py::arg("width"));
  m.def(
      "phantom",
      [](std::int64_t height, std::int64_t width, std::uint64_t seed, std::uint64_t index) {
        PhantomConfig c;
        c.height = height;
        c.width = width;
        c.seed = seed;
        c.validate();
        const auto item = progan::phantom(c, index);
        return py::make_tuple(to_array(item.image), item.view);
      },
      py::arg("height") = 64, py::arg("width") = 64, py::arg("seed") = 0, py::arg("index") = 0,
      "Synthetic mammogram phantom; returns (image, view).");

  // Metrics
  m.def(
      "ssim", [](const Array& x, const Array& y) { return ssim(to_image(x), to_image(y)); }, py::arg("x"),
      py::arg("y"));
  m.def(
      "ms_ssim", [](const Array& x, const Array& y, int scales) { return ms_ssim(to_image(x), to_image(y), scales); },
      py::arg("x"), py::arg("y"), py::arg("scales") = 5);
  m.def(
      "msssim_diversity",
      [](const py::iterable& real, const py::iterable& fake, std::size_t pairs, bool identity, std::uint64_t seed) {
        Rng rng(seed);
        MetricReport r;
        add_diversity(r, msssim_diversity(to_images(real), to_images(fake), rng, pairs,
                                          identity ? Pairing::Identity : Pairing::Random));
        return report_dict(r);
      },
      py::arg("real"), py::arg("fake"), py::arg("pairs") = 256, py::arg("identity") = false, py::arg("seed") = 0);
  m.def(
      "laplacian_pyramid",
      [](const Array& x, int levels) {
        const auto p = laplacian_pyramid(to_image(x), levels);
        py::list out;
        for (std::size_t i = 0; i < p.levels.size(); ++i) {
          py::array_t<double> a({p.heights[i], p.widths[i]});
          std::copy(p.levels[i].begin(), p.levels[i].end(), a.mutable_data());
          out.append(a);
        }
        return out;
      },
      py::arg("image"), py::arg("levels"), "Band-pass levels, finest first, with the low-pass residual last.");
  m.def(
      "sliced_wasserstein",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> a,
         py::array_t<float, py::array::c_style | py::array::forcecast> b, int projections,
         std::uint64_t seed) {
        if (a.ndim() != 2 || b.ndim() != 2 || a.shape(1) != b.shape(1))
          throw py::value_error("expected two [N, D] arrays with equal D");
        // Descriptors are flattened k x k patches.
        const auto k = static_cast<std::int64_t>(std::lround(std::sqrt(double(a.shape(1)))));
        if (k * k != a.shape(1)) throw py::value_error("descriptor length must be a square");
        auto to_set = [k](const auto& arr) {
          PatchDescriptorSet s;
          s.patch = k;
          s.rows.assign(arr.data(), arr.data() + arr.size());
          return s;
        };
        Rng rng(seed);
        return sliced_wasserstein(to_set(a), to_set(b), projections, rng);
      },
      py::arg("a"), py::arg("b"), py::arg("projections") = 512, py::arg("seed") = 0);
  m.def(
      "swd",
      [](const py::iterable& real, const py::iterable& fake, int levels, int patches, int projections,
         std::uint64_t seed) {
        SwdConfig c;
        c.levels = levels;
        c.patches_per_image = patches;
        c.projections = projections;
        c.seed = seed;
        return report_dict(swd_multiscale(to_images(real), to_images(fake), c));
      },
      py::arg("real"), py::arg("fake"), py::arg("levels") = 0, py::arg("patches_per_image") = 128,
      py::arg("projections") = 512, py::arg("seed") = 0, "Multi-scale sliced Wasserstein distance.");

  // Checkpoints
  py::class_<CheckpointNets>(m, "Checkpoint")
      .def_property_readonly("images_seen", [](const CheckpointNets& c) { return c.images_seen; })
      .def_property_readonly("stage", [](const CheckpointNets& c) { return c.fade.stage(); })
      .def_property_readonly("alpha", [](const CheckpointNets& c) { return c.fade.alpha(); })
      .def(
          "generate",
          [](const CheckpointNets& c, std::size_t count, std::uint64_t seed, std::optional<View> view) {
            return stack(generate_images(c.generator, c.fade, count, seed, c.prior, view));
          },
          py::arg("count"), py::arg("seed") = 0, py::arg("view") = py::none(),
          "[count, H, W] samples in [0, 1].");
  m.def("load_checkpoint", &load_checkpoint_nets, py::arg("path"));
  m.def("list_checkpoints", &list_checkpoints, py::arg("run_dir"));

  // Training
  py::class_<PyTrainer>(m, "Trainer")
      .def(py::init([](const std::filesystem::path& config_path, const py::iterable& images, const py::iterable& views) {
             auto cfg = Config::load(config_path);
             auto schedule = TrainSchedule::from_config(cfg);
             std::vector<LabeledImage> items;
             auto view_it = views.begin();
             for (const auto& img : images) {
               if (view_it == views.end()) throw py::value_error("fewer views than images");
               items.push_back({to_image(img.cast<Array>()), view_it->cast<View>(), ""});
               ++view_it;
             }
             auto t = std::make_unique<PyTrainer>();
             t->data = Dataset(std::move(items));
             t->trainer = std::make_unique<Trainer>(schedule, t->data);
             return t;
           }),
           py::arg("config"), py::arg("images"), py::arg("views"))
      .def("step", [](PyTrainer& t) { t.trainer->step(); })
      .def("run", [](PyTrainer& t, const std::filesystem::path& out) { t.trainer->run(out); }, py::arg("out_dir"))
      .def("done", [](const PyTrainer& t) { return t.trainer->done(); })
      .def("save_checkpoint", [](const PyTrainer& t, const std::filesystem::path& p) { t.trainer->save_checkpoint(p); })
      .def("load_checkpoint", [](PyTrainer& t, const std::filesystem::path& p) { t.trainer->load_checkpoint(p); })
      .def_property_readonly("images_seen", [](const PyTrainer& t) { return t.trainer->progress().images_seen; })
      .def_property_readonly("stage", [](const PyTrainer& t) { return t.trainer->fade().stage(); })
      .def_property_readonly("alpha", [](const PyTrainer& t) { return t.trainer->fade().alpha(); })
      .def_property_readonly("diagnostics", [](const PyTrainer& t) {
        py::list rows;
        for (const auto& r : t.trainer->rows()) {
          py::dict d;
          d["images_seen"] = r.images_seen;
          d["critic_loss"] = r.critic_loss;
          d["d_bce"] = r.d_bce;
          d["grad_mag"] = r.grad_mag;
          d["label_ce_real"] = r.label_ce_real;
          d["label_ce_fake"] = r.label_ce_fake;
          rows.append(d);
        }
        return rows;
      });
}
