#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nlab/augment.hpp"
#include "nlab/data.hpp"
#include "nlab/harness.hpp"
#include "nlab/lossmodel.hpp"
#include "nlab/strategies.hpp"

namespace py = pybind11;
using namespace nlab;

namespace {

py::array_t<double> dataset_images(const NoisyDataset& ds) {
  if (ds.images.empty()) return py::array_t<double>();
  const Image& first = ds.images.front();
  py::array_t<double> out({static_cast<py::ssize_t>(ds.size()),
                           static_cast<py::ssize_t>(first.channels),
                           static_cast<py::ssize_t>(first.height),
                           static_cast<py::ssize_t>(first.width)});
  auto buf = out.mutable_unchecked<4>();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Image& img = ds.images[i];
    for (int c = 0; c < img.channels; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          buf(static_cast<py::ssize_t>(i), c, y, x) = img.at(c, y, x);
  }
  return out;
}

Image image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() == 2) {
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 1);
    auto buf = a.unchecked<2>();
    for (py::ssize_t y = 0; y < a.shape(0); ++y)
      for (py::ssize_t x = 0; x < a.shape(1); ++x)
        img.at(0, static_cast<int>(y), static_cast<int>(x)) = buf(y, x);
    return img;
  }
  if (a.ndim() == 3) {
    Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
              static_cast<int>(a.shape(0)));
    auto buf = a.unchecked<3>();
    for (py::ssize_t c = 0; c < a.shape(0); ++c)
      for (py::ssize_t y = 0; y < a.shape(1); ++y)
        for (py::ssize_t x = 0; x < a.shape(2); ++x)
          img.at(static_cast<int>(c), static_cast<int>(y), static_cast<int>(x)) = buf(c, y, x);
    return img;
  }
  throw ConfigError("expected a (H,W) or (C,H,W) image array");
}

py::array_t<double> image_to_array(const Image& img) {
  py::array_t<double> out({static_cast<py::ssize_t>(img.channels),
                           static_cast<py::ssize_t>(img.height),
                           static_cast<py::ssize_t>(img.width)});
  auto buf = out.mutable_unchecked<3>();
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) buf(c, y, x) = img.at(c, y, x);
  return out;
}

ExperimentConfig config_from_dict(const py::dict& overrides) {
  ExperimentConfig cfg;
  for (const auto& item : overrides)
    cfg.set(py::cast<std::string>(item.first), py::cast<std::string>(py::str(item.second)));
  return cfg;
}

py::dict run_result_to_dict(const RunResult& r) {
  py::dict d;
  d["seed"] = r.seed;
  d["best"] = r.best;
  d["last"] = r.last;
  d["test_acc"] = r.test_acc;
  d["train_loss"] = r.train_loss;
  d["auc"] = r.auc;
  d["wall_seconds"] = r.wall_seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_nlab, m) {
  m.doc() = "Noisy-label training laboratory (C++ core bindings)";

  py::register_exception<Error>(m, "NlabError");

  // ---- loss modeling ----
  py::class_<GmmFit2>(m, "GmmFit2")
      .def_property_readonly(
          "means", [](const GmmFit2& f) { return py::make_tuple(f.mean[0], f.mean[1]); })
      .def_property_readonly(
          "variances", [](const GmmFit2& f) { return py::make_tuple(f.var[0], f.var[1]); })
      .def_property_readonly(
          "weights", [](const GmmFit2& f) { return py::make_tuple(f.weight[0], f.weight[1]); })
      .def_readonly("iterations", &GmmFit2::iterations)
      .def_readonly("converged", &GmmFit2::converged)
      .def_readonly("ll_trace", &GmmFit2::ll_trace);

  py::class_<BmmFit2>(m, "BmmFit2")
      .def_property_readonly(
          "alphas", [](const BmmFit2& f) { return py::make_tuple(f.alpha[0], f.alpha[1]); })
      .def_property_readonly(
          "betas", [](const BmmFit2& f) { return py::make_tuple(f.beta[0], f.beta[1]); })
      .def_property_readonly(
          "weights", [](const BmmFit2& f) { return py::make_tuple(f.weight[0], f.weight[1]); })
      .def("component_mean", &BmmFit2::component_mean)
      .def_readonly("iterations", &BmmFit2::iterations)
      .def_readonly("converged", &BmmFit2::converged)
      .def_readonly("ll_trace", &BmmFit2::ll_trace);

  m.def("normalize_losses", &normalize_losses, py::arg("raw"));
  m.def("fit_gmm2", &fit_gmm2, py::arg("values"), py::arg("max_iter") = 10,
        py::arg("tol") = 1e-4);
  m.def("gmm_posterior", &gmm_posterior, py::arg("fit"), py::arg("values"));
  m.def("fit_bmm2", &fit_bmm2, py::arg("values"), py::arg("max_iter") = 10,
        py::arg("tol") = 1e-4);
  m.def("bmm_posterior", &bmm_posterior, py::arg("fit"), py::arg("values"));
  m.def(
      "co_divide",
      [](const std::vector<double>& w, double tau) {
        SplitResult s = co_divide(w, tau);
        return py::make_tuple(s.labeled, s.labeled_w, s.unlabeled);
      },
      py::arg("w"), py::arg("tau") = 0.5,
      "Returns (labeled_indices, labeled_w, unlabeled_indices)");
  m.def(
      "separation_auc",
      [](const std::vector<double>& losses, const std::vector<int>& flips) {
        std::vector<std::uint8_t> mask(flips.size());
        for (std::size_t i = 0; i < flips.size(); ++i) mask[i] = flips[i] ? 1 : 0;
        return separation_auc(losses, mask);
      },
      py::arg("losses"), py::arg("flip_mask"));

  // ---- training ops ----
  m.def("sharpen", &sharpen, py::arg("p"), py::arg("temperature"));
  m.def("refine_label", &refine_label, py::arg("y"), py::arg("p_avg"), py::arg("w"));
  m.def("r_schedule", &r_schedule, py::arg("epoch"), py::arg("tk"), py::arg("tau"));

  // ---- data ----
  py::class_<NoisyDataset>(m, "Dataset")
      .def_property_readonly("size", [](const NoisyDataset& ds) { return ds.size(); })
      .def_readonly("num_classes", &NoisyDataset::num_classes)
      .def_readonly("given_labels", &NoisyDataset::given_labels)
      .def_readonly("true_labels", &NoisyDataset::true_labels)
      .def_property_readonly("flip_mask",
                             [](const NoisyDataset& ds) {
                               std::vector<bool> out(ds.flip_mask.size());
                               for (std::size_t i = 0; i < ds.flip_mask.size(); ++i)
                                 out[i] = ds.flip_mask[i] != 0;
                               return out;
                             })
      .def_readonly("mean", &NoisyDataset::mean)
      .def_readonly("stddev", &NoisyDataset::stddev)
      .def("images", &dataset_images, "Images as an (N, C, H, W) array")
      .def("validate", &NoisyDataset::validate);

  m.def(
      "generate_glyphs",
      [](int classes, int per_class, int image_size, std::uint64_t seed) {
        GlyphSpec spec;
        spec.num_classes = classes;
        spec.per_class = per_class;
        spec.image_size = image_size;
        return generate_glyphs(spec, seed);
      },
      py::arg("classes") = 4, py::arg("per_class") = 200, py::arg("image_size") = 16,
      py::arg("seed") = 7);
  m.def("load_idx", &load_idx, py::arg("images_path"), py::arg("labels_path"));
  m.def("save_idx", &save_idx, py::arg("dataset"), py::arg("images_path"),
        py::arg("labels_path"));
  m.def("inject_symmetric", &inject_symmetric, py::arg("dataset"), py::arg("rate"),
        py::arg("seed"), py::arg("uniform_over_all") = true);
  m.def(
      "inject_asymmetric",
      [](const NoisyDataset& ds, double rate, std::uint64_t seed) {
        return inject_asymmetric(ds, rate, seed);
      },
      py::arg("dataset"), py::arg("rate"), py::arg("seed"));

  // ---- augmentation ----
  m.def(
      "augment_weak",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const std::vector<double>& mean, const std::vector<double>& stddev,
         std::uint64_t seed) {
        Rng rng(seed);
        return image_to_array(weak_view(image_from_array(a), NormStats{mean, stddev}, rng));
      },
      py::arg("image"), py::arg("mean"), py::arg("stddev"), py::arg("seed"));
  m.def(
      "augment_strong",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const std::vector<double>& mean, const std::vector<double>& stddev, int n, double mag,
         std::uint64_t seed) {
        Rng rng(seed);
        return image_to_array(
            strong_view(image_from_array(a), NormStats{mean, stddev}, {n, mag}, rng));
      },
      py::arg("image"), py::arg("mean"), py::arg("stddev"), py::arg("n") = 1,
      py::arg("m") = 6.0, py::arg("seed") = 0);

  // ---- harness ----
  m.def(
      "run_experiment",
      [](const py::dict& overrides, const std::string& out_dir) {
        const ExperimentConfig cfg = config_from_dict(overrides);
        AggregateResult agg = run(cfg, out_dir);
        py::dict d;
        d["best_mean"] = agg.best_mean;
        d["best_std"] = agg.best_std;
        d["last_mean"] = agg.last_mean;
        d["last_std"] = agg.last_std;
        py::list per_seed;
        for (const RunResult& r : agg.per_seed) per_seed.append(run_result_to_dict(r));
        d["per_seed"] = per_seed;
        return d;
      },
      py::arg("overrides") = py::dict(), py::arg("out_dir") = std::string(),
      "Run an experiment; overrides are config keys like {'strategy.name': 'ce'}");
  m.def(
      "warmup_probe",
      [](const py::dict& overrides, const std::vector<double>& p_list,
         const std::string& out_dir) {
        const ExperimentConfig cfg = config_from_dict(overrides);
        py::list out;
        for (const ProbeResult& r : warmup_probe(cfg, p_list, out_dir)) {
          py::dict d;
          d["p_strong"] = r.p_strong;
          d["seed"] = r.seed;
          d["auc"] = r.auc;
          out.append(d);
        }
        return out;
      },
      py::arg("overrides") = py::dict(), py::arg("p_list") = std::vector<double>{0.0, 1.0},
      py::arg("out_dir") = std::string());
}
