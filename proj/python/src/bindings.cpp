// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/contrastive_loss.hpp"
#include "lumbar_align/downstream.hpp"
#include "lumbar_align/errors.hpp"
#include "lumbar_align/experiment.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
namespace la = lumbar_align;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

la::Tensor to_tensor(const Array& a) {
    la::Shape shape(a.shape(), a.shape() + a.ndim());
    return la::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const la::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

std::vector<la::LabelVector> to_labels(const std::vector<std::array<int, 2>>& rows) {
    return {rows.begin(), rows.end()};
}

py::dict report_dict(const la::MetricsReport& r) {
    py::dict d;
    d["accuracy"] = r.accuracy;
    d["precision"] = r.precision;
    d["recall"] = r.recall;
    d["f1"] = r.f1;
    d["macro_precision"] = r.macro_precision;
    d["macro_recall"] = r.macro_recall;
    d["macro_f1"] = r.macro_f1;
    d["confusion"] = py::dict(py::arg("tp") = r.confusion.tp, py::arg("fp") = r.confusion.fp,
                              py::arg("fn") = r.confusion.fn, py::arg("tn") = r.confusion.tn);
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Soft-label contrastive image-report pretraining with linear-probe evaluation";

    py::register_exception<la::InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<la::NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<la::ExperimentConfig>(m, "ExperimentConfig")
        .def(py::init<>())
        .def("set", &la::ExperimentConfig::set, py::arg("key"), py::arg("value"))
        .def("get", &la::ExperimentConfig::get, py::arg("key"))
        .def("apply_text", &la::ExperimentConfig::apply_text, py::arg("text"), py::arg("origin") = "<config>")
        .def("apply_file", &la::ExperimentConfig::apply_file, py::arg("path"))
        .def("to_text", &la::ExperimentConfig::to_text)
        .def("validate", &la::ExperimentConfig::validate);
    m.def("config_keys", &la::config_keys);

    m.def(
        "synth_data",
        [](const std::filesystem::path& out_dir, std::size_t pairs, double ratio, std::uint64_t seed,
           std::size_t resolution) {
            la::SynthConfig s;
            s.n_pairs = pairs;
            s.class_ratio = ratio;
            s.seed = seed;
            s.resolution = resolution;
            std::ostringstream log;
            const auto outcome = la::run_synth_data(s, out_dir, log);
            return py::make_tuple(outcome.manifest, outcome.counts[la::kClassLbp],
                                  outcome.counts[la::kClassNoFinding]);
        },
        py::arg("out_dir"), py::arg("pairs") = 512, py::arg("ratio") = 0.85, py::arg("seed") = 7,
        py::arg("resolution") = 64, "Generate a synthetic dataset; returns (manifest, n_lbp, n_no_finding).");

    m.def(
        "pretrain",
        [](const la::ExperimentConfig& config, const std::filesystem::path& out_dir) {
            std::ostringstream log;
            la::PretrainOutcome outcome;
            {
                py::gil_scoped_release release;
                outcome = la::run_pretrain(config, out_dir, log);
            }
            py::list epochs;
            for (const auto& e : outcome.result.epochs) {
                epochs.append(py::make_tuple(e.epoch, e.train_total, e.val_total));
            }
            py::dict d;
            d["checkpoint"] = outcome.checkpoint;
            d["loss_log"] = outcome.loss_log;
            d["best_epoch"] = outcome.result.best_epoch;
            d["epochs"] = epochs;
            return d;
        },
        py::arg("config"), py::arg("out_dir"));

    m.def(
        "probe",
        [](const la::ExperimentConfig& config, const std::filesystem::path& checkpoint, const std::string& split,
           const std::filesystem::path& out_dir) {
            std::ostringstream log;
            la::ProbeOutcome outcome;
            {
                py::gil_scoped_release release;
                outcome = la::run_probe(config, checkpoint, split, out_dir, log);
            }
            return report_dict(outcome.report);
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("split") = "test", py::arg("out_dir"));

    m.def("report", &la::run_report, py::arg("run_dir"));

    m.def(
        "metrics",
        [](const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& actual) {
            return report_dict(la::metrics_from_predictions(predicted, actual));
        },
        py::arg("predicted"), py::arg("actual"), "Binary metrics with class 0 (LBP) as the positive class.");

    m.def(
        "soft_targets",
        [](const std::vector<std::array<int, 2>>& labels, double tau) {
            const auto y = to_labels(labels);
            return to_array(la::soft_clip::soft_targets(la::soft_clip::label_similarity(y), tau));
        },
        py::arg("labels"), py::arg("tau") = 0.07);

    m.def(
        "soft_clip_loss",
        [](const Array& image_emb, const Array& text_emb, const Array& aug_text_emb,
           const std::vector<std::array<int, 2>>& labels, double alpha, double tau) {
            const auto y = to_labels(labels);
            const auto b = la::soft_clip::breakdown(la::soft_clip::total_loss(
                to_tensor(image_emb), to_tensor(text_emb), to_tensor(aug_text_emb), y, alpha, tau));
            py::dict d;
            d["i2t"] = b.l_i2t;
            d["t2i"] = b.l_t2i;
            d["aug_i2t"] = b.l_aug_i2t;
            d["aug_t2i"] = b.l_aug_t2i;
            d["total"] = b.total;
            return d;
        },
        py::arg("image_emb"), py::arg("text_emb"), py::arg("aug_text_emb"), py::arg("labels"), py::arg("alpha") = 0.5,
        py::arg("tau") = 0.07, "Loss components for row-normalised (N x d) embeddings.");
}
