#include "bmc/config.hpp"
#include "bmc/dataset.hpp"
#include "bmc/error.hpp"
#include "bmc/losses.hpp"
#include "bmc/pipeline.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

namespace py = pybind11;
using namespace bmc;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

RunConfig config(const std::optional<std::string>& path, const Overrides& overrides) {
    return load_run_config(path ? std::optional<std::filesystem::path>(*path) : std::nullopt, overrides);
}

Vocabulary plain_vocab(const std::vector<std::string>& texts, const std::set<std::string>& stopwords) {
    std::set<std::string> seen;
    std::vector<std::string> tokens;
    for (const auto& t : texts)
        for (const auto& w : split_tokens(t))
            if (seen.insert(w).second) tokens.push_back(w);
    return Vocabulary(tokens, stopwords);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Preference optimization with bridged pairs and confidence-weighted token losses";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ExternalError>(m, "ExternalError", PyExc_RuntimeError);

    m.def("split_tokens", [](const std::string& text) { return split_tokens(text); }, py::arg("text"));
    m.def("default_stopwords", &default_stopwords);
    m.def("derive_seed", &derive_seed, py::arg("root"), py::arg("purpose"));

    m.def("edit_distance",
          [](const std::vector<int>& a, const std::vector<int>& b) { return edit_distance(a, b); }, py::arg("a"),
          py::arg("b"));
    m.def(
        "diff_masks",
        [](const std::string& chosen, const std::string& rejected, const std::set<std::string>& stopwords) {
            const Vocabulary v = plain_vocab({chosen, rejected}, stopwords);
            const DiffMasks d = diff_masks(tokenize(chosen, v), tokenize(rejected, v), v.stopword_ids());
            return py::make_tuple(d.chosen.indices(), d.rejected.indices());
        },
        py::arg("chosen"), py::arg("rejected"), py::arg("stopwords") = std::set<std::string>{},
        "Flagged token indices of the chosen and rejected texts.");

    m.def(
        "lambda_weights",
        [](const std::vector<double>& probs, const std::vector<bool>& flags, double delta) {
            if (probs.size() != flags.size()) throw DataError("probs and flags differ in length");
            return lambda_weights(probs, DiffMask::from_flags(flags), delta);
        },
        py::arg("probs"), py::arg("flags"), py::arg("delta"));

    m.def(
        "pair_loss",
        [](const std::string& spec_json, std::vector<double> logp_w, std::vector<double> logp_l,
           std::vector<double> ref_w, std::vector<double> ref_l, std::optional<std::vector<bool>> mask_w,
           std::optional<std::vector<bool>> mask_l) {
            const LossSpec spec = loss_spec_from_json(nlohmann::json::parse(spec_json));
            spec.validate();
            ad::Tape tape;
            auto mask = [](const std::optional<std::vector<bool>>& f) {
                return f ? std::optional<DiffMask>(DiffMask::from_flags(*f)) : std::nullopt;
            };
            const PairTerms t = constant_terms(tape, std::move(logp_w), std::move(logp_l), std::move(ref_w),
                                               std::move(ref_l), mask(mask_w), mask(mask_l));
            return batch_loss(tape, spec, std::span<const PairTerms>(&t, 1)).item();
        },
        py::arg("spec_json"), py::arg("logp_w"), py::arg("logp_l"), py::arg("ref_w"), py::arg("ref_l"),
        py::arg("mask_w") = py::none(), py::arg("mask_l") = py::none());

    m.def(
        "resolved_config",
        [](const std::optional<std::string>& path, const Overrides& overrides) {
            return to_json(config(path, overrides)).dump();
        },
        py::arg("path") = py::none(), py::arg("overrides") = Overrides{});

    m.def(
        "gen_data",
        [](const std::optional<std::string>& path, const Overrides& o) {
            const auto s = gen_data(config(path, o));
            return py::make_tuple(s.n_pairs, s.n_heldout);
        },
        py::arg("path") = py::none(), py::arg("overrides") = Overrides{});
    m.def(
        "bridge",
        [](const std::optional<std::string>& path, const Overrides& o) {
            py::gil_scoped_release nogil;
            return bridge(config(path, o)).train.n_bridged;
        },
        py::arg("path") = py::none(), py::arg("overrides") = Overrides{});
    m.def(
        "sft",
        [](const std::optional<std::string>& path, const Overrides& o) {
            py::gil_scoped_release nogil;
            return run_sft(config(path, o)).final_loss;
        },
        py::arg("path") = py::none(), py::arg("overrides") = Overrides{});
    m.def(
        "train",
        [](const std::optional<std::string>& path, const Overrides& o) {
            py::gil_scoped_release nogil;
            return run_train(config(path, o)).dir;
        },
        py::arg("path") = py::none(), py::arg("overrides") = Overrides{});
    m.def(
        "evaluate",
        [](const std::optional<std::string>& path, const Overrides& o) {
            py::gil_scoped_release nogil;
            return run_eval(config(path, o)).dir;
        },
        py::arg("path") = py::none(), py::arg("overrides") = Overrides{});
    m.def(
        "report",
        [](const std::optional<std::string>& path, const Overrides& o) { return run_report(config(path, o)); },
        py::arg("path") = py::none(), py::arg("overrides") = Overrides{});

    m.def("self_check", [] {
        std::vector<py::tuple> out;
        std::vector<check::Result> results;
        {
            py::gil_scoped_release nogil;
            results = check::run_all();
        }
        for (const auto& r : results) out.push_back(py::make_tuple(r.name, r.passed, r.detail));
        return out;
    });
}
