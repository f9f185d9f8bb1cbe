// Python bindings: the uncertainty kernel, the output parser, exposure-list
// construction and whole-stage pipeline runs.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "simdistill/decision.hpp"
#include "simdistill/errors.hpp"
#include "simdistill/pipeline.hpp"
#include "simdistill/rng.hpp"
#include "simdistill/scene.hpp"
#include "simdistill/uncertainty.hpp"

namespace py = pybind11;
using namespace simdistill;

namespace {

std::vector<ActionDistribution> to_ensemble(const std::vector<std::vector<double>>& rows) {
    std::vector<ActionDistribution> e;
    e.reserve(rows.size());
    for (const auto& r : rows) e.push_back({r});
    return e;
}

py::dict report_dict(const UncertaintyReport& r) {
    py::dict d;
    d["total"] = r.total;
    d["aleatoric"] = r.aleatoric;
    d["epistemic"] = r.epistemic;
    d["n"] = r.n;
    d["k"] = r.k;
    return d;
}

py::dict parse(const std::string& text, int slot_count, const std::string& mode) {
    const auto variant = mode == "direct" ? PromptVariant::Direct : PromptVariant::Decision;
    const auto result = parse_decision(text, slot_count, variant);
    py::dict d;
    if (const auto* f = std::get_if<ParseFailure>(&result)) {
        d["ok"] = false;
        d["reason"] = std::string(to_string(f->reason));
        d["detail"] = f->detail;
        return d;
    }
    const auto& p = std::get<ParsedOutput>(result);
    d["ok"] = true;
    d["label"] = std::string(1, p.label);
    if (p.decision) {
        d["stimulus_factors"] = p.decision->stimulus_factors;
        d["knowledge_factors"] = p.decision->knowledge_factors;
        d["evaluation_style"] = p.decision->evaluation_style;
    }
    return d;
}

py::dict exposure(const std::vector<std::string>& random, const std::vector<std::string>& collaborative,
                  const std::vector<std::string>& content, const std::string& ground_truth, int slot_count,
                  std::uint64_t seed) {
    Rng rng(seed);
    const auto list = build_exposure_list({random, collaborative, content}, ground_truth, slot_count, rng);
    py::list items;
    for (const auto& item : list.items) {
        items.append(py::make_tuple(std::string(1, item.label), item.item_id, std::string(to_string(item.source))));
    }
    py::dict d;
    d["items"] = items;
    d["ground_truth_index"] = list.ground_truth_index;
    return d;
}

py::list run_pipeline(const std::filesystem::path& config, const std::filesystem::path& run_dir,
                      const std::vector<std::string>& stages, bool force) {
    Pipeline pipeline(PipelineConfig::load(config), run_dir);
    RunLock lock(run_dir);
    py::list out;
    for (const auto& name : stages) {
        const auto r = pipeline.run_stage(stage_from_string(name), force);
        out.append(py::make_tuple(name, r.skipped));
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of simdistill";

    static py::exception<Error> error(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(error.ptr())(e.what());
            exc.attr("exit_code") = e.exit_code();
            PyErr_SetObject(error.ptr(), exc.ptr());
        }
    });

    m.def("entropy", [](const std::vector<double>& p) { return entropy(p); }, py::arg("p"));
    m.def(
        "decompose", [](const std::vector<std::vector<double>>& rows) { return report_dict(decompose(to_ensemble(rows))); },
        py::arg("ensemble"), "Total, aleatoric and epistemic uncertainty (nats) of an ensemble of distributions.");
    m.def(
        "epistemic_gap",
        [](const std::vector<std::vector<double>>& weak, const std::vector<std::vector<double>>& strong) {
            const auto g = epistemic_gap(to_ensemble(weak), to_ensemble(strong), "");
            py::dict d;
            d["delta_eu"] = g.delta_eu;
            d["weak"] = report_dict(g.weak);
            d["strong"] = report_dict(g.strong);
            return d;
        },
        py::arg("weak"), py::arg("strong"));
    m.def(
        "floor_softmax",
        [](const std::vector<std::optional<double>>& logprobs, double offset) { return floor_softmax(logprobs, offset); },
        py::arg("logprobs"), py::arg("floor_offset") = kDefaultFloorOffset);
    m.def("parse_decision", &parse, py::arg("text"), py::arg("slot_count"), py::arg("mode") = "decision");
    m.def("build_exposure_list", &exposure, py::arg("random"), py::arg("collaborative"), py::arg("content"),
          py::arg("ground_truth"), py::arg("slot_count"), py::arg("seed"));
    m.def("run_pipeline", &run_pipeline, py::arg("config"), py::arg("run_dir"), py::arg("stages"),
          py::arg("force") = false, "Runs the named stages in order; returns (stage, skipped) pairs.");
}
