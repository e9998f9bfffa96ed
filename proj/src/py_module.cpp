#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <variant>

#include "maskprop/baseline.hpp"
#include "maskprop/loss.hpp"
#include "maskprop/metrics.hpp"
#include "maskprop/net.hpp"
#include "maskprop/phantom.hpp"
#include "maskprop/propagate.hpp"
#include "maskprop/train.hpp"
#include "maskprop/volume.hpp"

namespace py = pybind11;
using namespace maskprop;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Spacing spacing_from(const std::tuple<double, double, double>& s) {
  return {std::get<0>(s), std::get<1>(s), std::get<2>(s)};
}

Volume volume_from(const FloatArray& arr, const Spacing& sp) {
  if (arr.ndim() != 3) throw std::invalid_argument("volume array must be (T,H,W)");
  Volume v(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
           static_cast<int>(arr.shape(2)), sp);
  std::copy_n(arr.data(), v.size(), v.data.begin());
  return v;
}

MaskVolume mask_from(const MaskArray& arr, const Spacing& sp) {
  if (arr.ndim() != 3) throw std::invalid_argument("mask array must be (T,H,W)");
  MaskVolume m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
               static_cast<int>(arr.shape(2)), sp);
  std::copy_n(arr.data(), m.size(), m.data.begin());
  for (auto x : m.data)
    if (x > 1) throw std::invalid_argument("mask not binary");
  return m;
}

py::array volume_to_numpy(const Volume& v) {
  py::array_t<float> arr({v.depth, v.height, v.width});
  std::copy_n(v.data.begin(), v.size(), arr.mutable_data());
  return arr;
}

py::array mask_to_numpy(const MaskVolume& m) {
  py::array_t<std::uint8_t> arr({m.depth, m.height, m.width});
  std::copy_n(m.data.begin(), m.size(), arr.mutable_data());
  return arr;
}

Tensor tensor_from(const DoubleArray& arr) {
  std::vector<int> dims;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) dims.push_back(static_cast<int>(arr.shape(i)));
  Tensor t(dims);
  std::copy_n(arr.data(), t.numel(), t.v.begin());
  return t;
}

AnnotationSchedule schedule_from(const std::vector<int>& indices) {
  AnnotationSchedule s;
  s.indices = indices;
  std::sort(s.indices.begin(), s.indices.end());
  return s;
}

py::dict report_to_dict(const MetricsReport& r) {
  py::dict d;
  d["dice"] = r.dice;
  d["miou"] = r.miou;
  d["hdd_mm"] = r.hdd_mm;
  d["asd_mm"] = r.asd_mm;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["vol_pred_mm3"] = r.vol_pred_mm3;
  d["vol_gt_mm3"] = r.vol_gt_mm3;
  d["vol_err_pct"] = r.vol_err_pct;
  d["distances_defined"] = r.distances_defined;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sequential mask propagation and volumetric segmentation toolkit";

  py::class_<PhantomSpec>(m, "PhantomSpec")
      .def(py::init([](std::uint64_t seed, int depth, int height, int width, int n_structures,
                       std::tuple<double, double, double> spacing, double noise_level,
                       double deform_smoothness) {
             PhantomSpec s;
             s.seed = seed;
             s.depth = depth;
             s.height = height;
             s.width = width;
             s.n_structures = n_structures;
             s.spacing = spacing_from(spacing);
             s.noise_level = noise_level;
             s.deform_smoothness = deform_smoothness;
             return s;
           }),
           py::arg("seed") = 0, py::arg("depth") = 80, py::arg("height") = 64,
           py::arg("width") = 64, py::arg("n_structures") = 1,
           py::arg("spacing") = std::make_tuple(1.0, 1.0, 1.0), py::arg("noise_level") = 0.3,
           py::arg("deform_smoothness") = 1.0)
      .def_readwrite("seed", &PhantomSpec::seed)
      .def_readwrite("depth", &PhantomSpec::depth)
      .def_readwrite("height", &PhantomSpec::height)
      .def_readwrite("width", &PhantomSpec::width)
      .def_readwrite("n_structures", &PhantomSpec::n_structures)
      .def_readwrite("noise_level", &PhantomSpec::noise_level)
      .def_readwrite("deform_smoothness", &PhantomSpec::deform_smoothness);

  m.def(
      "generate_phantom",
      [](const PhantomSpec& spec) {
        const auto ph = generate_phantom(spec);
        py::list masks;
        for (const auto& mk : ph.masks) masks.append(mask_to_numpy(mk));
        return py::make_tuple(volume_to_numpy(ph.volume), masks,
                              py::make_tuple(ph.volume.spacing.z, ph.volume.spacing.y,
                                             ph.volume.spacing.x));
      },
      py::arg("spec"), "Returns (volume, [mask per structure], spacing)");

  m.def("split_indices", [](std::size_t n, std::tuple<double, double, double> ratios) {
    const auto parts = split_indices(n, {std::get<0>(ratios), std::get<1>(ratios),
                                         std::get<2>(ratios)});
    return py::make_tuple(parts[0], parts[1], parts[2]);
  });

  m.def("make_windows", [](int depth, int w) {
    std::vector<int> starts;
    for (const auto& win : make_windows(depth, w)) starts.push_back(win.start);
    return starts;
  });

  m.def("fixed_interval_schedule", [](int depth, int period, int k) {
    return fixed_interval_schedule(depth, period, k).indices;
  });

  m.def(
      "decremental_schedule",
      [](const std::vector<int>& depths, double budget_frac, double floor_frac, double init_frac) {
        std::vector<std::vector<int>> out;
        for (const auto& s : decremental_schedule(depths, budget_frac, floor_frac, init_frac))
          out.push_back(s.indices);
        return out;
      },
      py::arg("depths"), py::arg("budget_frac") = 0.035, py::arg("floor_frac") = 0.03,
      py::arg("init_frac") = 0.164);

  m.def("write_mvol_volume",
        [](const FloatArray& arr, std::tuple<double, double, double> spacing,
           const std::string& path) { write_mvol(volume_from(arr, spacing_from(spacing)), path); });
  m.def("write_mvol_mask",
        [](const MaskArray& arr, std::tuple<double, double, double> spacing,
           const std::string& path) { write_mvol(mask_from(arr, spacing_from(spacing)), path); });
  m.def("read_mvol", [](const std::string& path) -> py::tuple {
    const auto var = read_mvol(path);
    if (std::holds_alternative<Volume>(var)) {
      const auto& v = std::get<Volume>(var);
      return py::make_tuple(volume_to_numpy(v),
                            py::make_tuple(v.spacing.z, v.spacing.y, v.spacing.x),
                            std::string("image"));
    }
    const auto& mk = std::get<MaskVolume>(var);
    return py::make_tuple(mask_to_numpy(mk),
                          py::make_tuple(mk.spacing.z, mk.spacing.y, mk.spacing.x),
                          std::string("mask"));
  });

  m.def("dice_coeff", [](const DoubleArray& y_hat, const DoubleArray& y) {
    return dice_coeff(tensor_from(y_hat), tensor_from(y));
  });
  m.def("alpha_beta", [](double a, double b) { return alpha_beta(a, b); });
  m.def("tversky_index", [](const DoubleArray& y_hat, const DoubleArray& y, double alpha,
                            double beta) { return tversky_index(tensor_from(y_hat), tensor_from(y), alpha, beta); });
  m.def(
      "total_loss",
      [](const std::vector<double>& tis, int w, double l2, double lambda, const std::string& factor) {
        return total_loss(tis, w, l2, lambda,
                          factor == "off" ? WindowFactor::off : WindowFactor::literal);
      },
      py::arg("per_step_tis"), py::arg("w"), py::arg("params_l2_norm_sq") = 0.0,
      py::arg("lambda_") = 1e-5, py::arg("window_factor") = "literal");

  m.def(
      "evaluate",
      [](const MaskArray& pred, const MaskArray& gt, std::tuple<double, double, double> spacing,
         bool per_slice) {
        const auto sp = spacing_from(spacing);
        SliceScores scores;
        const auto rep = evaluate(mask_from(pred, sp), mask_from(gt, sp), sp,
                                  per_slice ? &scores : nullptr);
        auto d = report_to_dict(rep);
        if (per_slice) {
          d["slice_dice"] = scores.dice;
          d["slice_hdd_mm"] = scores.hdd_mm;
        }
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("spacing") = std::make_tuple(1.0, 1.0, 1.0),
      py::arg("per_slice") = false);

  m.def("hausdorff_asd", [](const MaskArray& pred, const MaskArray& gt,
                            std::tuple<double, double, double> spacing) {
    const auto sp = spacing_from(spacing);
    return hausdorff_asd(mask_from(pred, sp), mask_from(gt, sp), sp);
  });

  m.def("zero_order_propagate", [](const MaskArray& annotated, const std::vector<int>& indices) {
    return mask_to_numpy(zero_order_propagate(mask_from(annotated, {}), schedule_from(indices)));
  });
  m.def("fill_between_slices", [](const MaskArray& annotated, const std::vector<int>& indices) {
    const auto res = fill_between_slices(mask_from(annotated, {}), schedule_from(indices));
    return py::make_tuple(mask_to_numpy(res.mask), res.fell_back_to_zero_order);
  });

  m.def(
      "propagate",
      [](const std::string& ckpt_path, const FloatArray& volume, const MaskArray& seeds,
         std::tuple<double, double, double> spacing, const std::string& fuse) {
        const auto sp = spacing_from(spacing);
        const auto res = propagate(load_checkpoint(ckpt_path), volume_from(volume, sp),
                                   mask_from(seeds, sp), fuse_policy_from_string(fuse));
        return mask_to_numpy(res.mask);
      },
      py::arg("ckpt_path"), py::arg("volume"), py::arg("seeds"),
      py::arg("spacing") = std::make_tuple(1.0, 1.0, 1.0), py::arg("fuse") = "last");

  m.def(
      "train",
      [](const std::vector<FloatArray>& volumes, const std::vector<MaskArray>& masks,
         const std::vector<std::vector<int>>& schedules, const std::string& mode,
         const std::string& ckpt_out, int epochs, int in_hw, std::vector<int> channels, int w,
         std::uint64_t seed, int tbptt_chunk) {
        if (volumes.size() != masks.size())
          throw std::invalid_argument("train: volumes/masks length mismatch");
        NetConfig net;
        net.w = w;
        net.in_hw = in_hw;
        if (channels.size() != 5) throw std::invalid_argument("train: channels needs 5 entries");
        for (int i = 0; i < 5; ++i) net.channels[i] = channels[static_cast<std::size_t>(i)];
        TrainConfig tc;
        tc.mode = mode == "few_shot" ? TrainMode::few_shot : TrainMode::full;
        tc.epochs = epochs;
        tc.seed = seed;
        tc.tbptt_chunk = tbptt_chunk;
        std::vector<TrainPatient> patients;
        for (std::size_t i = 0; i < volumes.size(); ++i) {
          TrainPatient p;
          p.name = "p" + std::to_string(i);
          p.volume = volume_from(volumes[i], {});
          p.gt = mask_from(masks[i], {});
          if (i < schedules.size()) p.schedule = schedule_from(schedules[i]);
          patients.push_back(std::move(p));
        }
        TrainLog log;
        const auto ckpt = train(patients, net, tc, &log);
        save_checkpoint(ckpt, ckpt_out);
        return log.epoch_mean_loss;
      },
      py::arg("volumes"), py::arg("masks"), py::arg("schedules"), py::arg("mode"),
      py::arg("ckpt_out"), py::arg("epochs") = 2, py::arg("in_hw") = 64,
      py::arg("channels") = std::vector<int>{8, 8, 16, 16, 32}, py::arg("w") = 3,
      py::arg("seed") = 0, py::arg("tbptt_chunk") = 6);
}
