// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the main operations: parameter accounting, archive
// I/O, merging, routing, training and evaluation at desk scale.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "mofe/demo.hpp"
#include "mofe/evaluator.hpp"
#include "mofe/merge.hpp"
#include "mofe/model_io.hpp"
#include "mofe/trainer.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

json json_from_py(const py::object& obj) { return json::parse(py::str(py::module_::import("json").attr("dumps")(obj)).cast<std::string>()); }

py::object py_from_json(const json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

mofe::RawTensor raw_from_array(const py::array& array) {
  mofe::RawTensor raw;
  py::array contiguous;
  if (array.dtype().is(py::dtype::of<float>())) {
    contiguous = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(array);
    raw.dtype = mofe::DType::f32;
  } else {
    contiguous = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(array);
    raw.dtype = mofe::DType::f64;
  }
  if (!contiguous) throw mofe::FormatError("array is not convertible to f32/f64");
  for (py::ssize_t d = 0; d < contiguous.ndim(); ++d) {
    raw.dims.push_back(static_cast<std::size_t>(contiguous.shape(d)));
  }
  raw.bytes.resize(static_cast<std::size_t>(contiguous.nbytes()));
  std::memcpy(raw.bytes.data(), contiguous.data(), raw.bytes.size());
  return raw;
}

py::array array_from_raw(const mofe::RawTensor& raw) {
  std::vector<py::ssize_t> shape(raw.dims.begin(), raw.dims.end());
  if (raw.dtype == mofe::DType::f32) {
    py::array_t<float> arr(shape);
    std::memcpy(arr.mutable_data(), raw.bytes.data(), raw.bytes.size());
    return arr;
  }
  py::array_t<double> arr(shape);
  std::memcpy(arr.mutable_data(), raw.bytes.data(), raw.bytes.size());
  return arr;
}

mofe::FreezeManifest manifest_from_py(const py::object& manifest) {
  if (py::isinstance<py::str>(manifest)) {
    return mofe::manifest_preset(manifest.cast<std::string>());
  }
  return mofe::manifest_from_json(json_from_py(manifest));
}

mofe::ModelConfig config_from_py(const py::object& config) {
  if (py::isinstance<py::str>(config)) return mofe::preset_config(config.cast<std::string>());
  return mofe::config_from_json(json_from_py(config));
}

}  // namespace

PYBIND11_MODULE(_mofe, m) {
  m.doc() = "mixture-of-frozen-experts toolkit";

  py::register_exception<mofe::Error>(m, "MofeError");

  m.def("preset_names", &mofe::preset_names);
  m.def(
      "preset", [](const std::string& name) { return py_from_json(mofe::config_to_json(mofe::preset_config(name))); },
      py::arg("name"));

  m.def(
      "count_params",
      [](const py::object& config, int n_experts, const py::object& manifest, bool dense) {
        mofe::ParamReport report = mofe::count_params(config_from_py(config), dense ? 0 : n_experts,
                                                      manifest_from_py(manifest));
        return py_from_json(mofe::param_report_to_json(report));
      },
      py::arg("config"), py::arg("n_experts") = 1, py::arg("manifest") = "mofe", py::arg("dense") = false);

  m.def(
      "save_archive",
      [](const std::string& path, const py::dict& tensors, const py::object& meta) {
        mofe::TensorArchive archive;
        for (auto item : tensors) {
          archive.put(item.first.cast<std::string>(), raw_from_array(item.second.cast<py::array>()));
        }
        mofe::save_archive(archive, path);
        if (!meta.is_none()) mofe::save_meta(mofe::meta_from_json(json_from_py(meta)), path);
      },
      py::arg("path"), py::arg("tensors"), py::arg("meta") = py::none());

  m.def(
      "load_archive",
      [](const std::string& path) {
        mofe::TensorArchive archive = mofe::load_archive(path);
        py::dict out;
        for (const auto& [name, raw] : archive.tensors()) out[py::str(name)] = array_from_raw(raw);
        return out;
      },
      py::arg("path"));

  m.def(
      "inspect",
      [](const std::string& path) {
        mofe::ArchiveListing listing = mofe::inspect_archive(path);
        py::list entries;
        for (const auto& e : listing.entries) {
          py::dict d;
          d["name"] = e.name;
          d["dtype"] = mofe::dtype_name(e.dtype);
          d["shape"] = e.dims;
          d["bytes"] = e.length;
          entries.append(d);
        }
        return entries;
      },
      py::arg("path"));

  m.def(
      "init_model",
      [](const std::string& path, const py::object& config, int n_experts, int top_m, std::uint64_t seed) {
        mofe::DecoderT<float> model = mofe::init_decoder<float>(config_from_py(config), n_experts, top_m, seed);
        mofe::ModelMeta meta = mofe::make_meta(model);
        mofe::save_model(model, meta, path);
      },
      py::arg("path"), py::arg("config"), py::arg("n_experts") = 0, py::arg("top_m") = 0, py::arg("seed") = 0);

  m.def(
      "merge",
      [](const py::object& spec, const std::string& out_path) {
        mofe::MergeSpec merge_spec = mofe::merge_spec_from_json(json_from_py(spec));
        mofe::MergeOutput out = mofe::merge_models(merge_spec);
        mofe::save_archive(out.archive, out_path);
        mofe::save_meta(out.meta, out_path);
        return py_from_json(out.report);
      },
      py::arg("spec"), py::arg("out_path"));

  m.def(
      "route",
      [](const py::array& gate, const py::array& hidden, std::size_t m) {
        auto g = py::array_t<double, py::array::c_style | py::array::forcecast>(gate);
        auto h = py::array_t<double, py::array::c_style | py::array::forcecast>(hidden);
        if (g.ndim() != 2 || h.ndim() != 1 || g.shape(1) != h.shape(0)) {
          throw mofe::ShapeError("route: gate must be [n, hidden] and hidden [hidden]");
        }
        mofe::RouterGateT<double> rg{mofe::Tensor<double>::from_data(
            {static_cast<std::size_t>(g.shape(0)), static_cast<std::size_t>(g.shape(1))},
            std::vector<double>(g.data(), g.data() + g.size()))};
        mofe::Tensor<double> hv = mofe::Tensor<double>::from_data(
            {static_cast<std::size_t>(h.shape(0))}, std::vector<double>(h.data(), h.data() + h.size()));
        mofe::RoutingDecisionT<double> d = mofe::route(rg, hv, m);
        return py::make_tuple(d.indices, d.weights);
      },
      py::arg("gate"), py::arg("hidden"), py::arg("m"));

  m.def(
      "forward_logits",
      [](const std::string& model_path, const std::vector<int>& token_ids) {
        mofe::DecoderT<float> model = mofe::load_model<float>(model_path);
        mofe::Tensor<float> logits = mofe::forward(model, token_ids);
        py::array_t<float> arr({static_cast<py::ssize_t>(logits.rows()), static_cast<py::ssize_t>(logits.cols())});
        std::memcpy(arr.mutable_data(), logits.data().data(), logits.numel() * sizeof(float));
        return arr;
      },
      py::arg("model_path"), py::arg("token_ids"));

  m.def(
      "train",
      [](const std::string& model_path, const std::string& dataset_path, const py::object& train_config,
         const py::object& manifest, const std::string& out_dir) {
        mofe::TrainConfig cfg = mofe::train_config_from_json(json_from_py(train_config), "train");
        mofe::ModelMeta meta;
        mofe::DecoderT<float> model = mofe::load_model<float>(model_path, &meta);
        mofe::Dataset dataset = mofe::load_dataset_jsonl(dataset_path, cfg.loss_mode);
        mofe::RunOptions options;
        options.out_dir = out_dir;
        mofe::TrainingLog log = mofe::run_training(model, meta, dataset, cfg, manifest_from_py(manifest), options);
        py::list records;
        for (const auto& r : log.records) {
          py::dict d;
          d["step"] = r.step;
          d["lr"] = r.lr;
          d["loss"] = r.loss;
          records.append(d);
        }
        return records;
      },
      py::arg("model_path"), py::arg("dataset_path"), py::arg("train_config"), py::arg("manifest") = "mofe",
      py::arg("out_dir") = "");

  m.def(
      "evaluate",
      [](const std::string& model_path, const std::string& task_path, bool length_normalize) {
        mofe::DecoderT<float> model = mofe::load_model<float>(model_path);
        auto items = mofe::load_mc_task_jsonl(task_path);
        mofe::EvalResult result = mofe::mc_accuracy(model, items, length_normalize, false);
        return py_from_json(mofe::eval_result_to_json(result, false));
      },
      py::arg("model_path"), py::arg("task_path"), py::arg("length_normalize") = false);

  m.def(
      "demo_transfer",
      [](const std::string& work_dir, const std::vector<std::uint64_t>& seeds, bool quick) {
        mofe::TransferOptions options;
        if (quick) {
          options.expert_steps = 120;
          options.tune_steps = 20;
        }
        return py_from_json(mofe::demo_transfer(work_dir, seeds, options).to_json());
      },
      py::arg("work_dir"), py::arg("seeds"), py::arg("quick") = false);
}
