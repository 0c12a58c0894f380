#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include <json.hpp>

#include "codedkt/codepaths.hpp"
#include "codedkt/dataset.hpp"
#include "codedkt/eval.hpp"
#include "codedkt/experiment.hpp"
#include "codedkt/javaparse.hpp"
#include "codedkt/ktmodels.hpp"
#include "codedkt/synth.hpp"

namespace py = pybind11;
using namespace codedkt;

namespace {

synth::Config synth_config_from_kwargs(int students, int problems, int assignments,
                                       const std::string& mode, uint64_t seed,
                                       double corrupt_fraction, bool stop_on_success) {
    synth::Config config;
    config.n_students = students;
    config.n_problems = problems;
    config.n_assignments = assignments;
    config.seed = seed;
    config.corrupt_fraction = corrupt_fraction;
    config.stop_on_success = stop_on_success;
    if (mode == "structural") config.code_mode = synth::CodeMode::Structural;
    else if (mode == "random") config.code_mode = synth::CodeMode::Random;
    else if (mode == "none") config.code_mode = synth::CodeMode::None;
    else throw std::runtime_error("mode must be structural|random|none");
    return config;
}

py::dict report_to_dict(const eval::Report& report,
                        const std::vector<std::string>& problem_ids) {
    const nlohmann::json doc =
        nlohmann::json::parse(eval::report_to_json(report, problem_ids));
    py::object loads = py::module_::import("json").attr("loads");
    return loads(doc.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "knowledge tracing engine for programming submissions";

    m.def("tokenize",
          [](const std::string& source) {
              py::list out;
              for (const auto& tok : javaparse::tokenize(source)) {
                  out.append(py::make_tuple(javaparse::token_kind_name(tok.kind),
                                            tok.text));
              }
              return out;
          },
          py::arg("source"), "Lex source text into (kind, text) tuples.");

    m.def("parse_mode",
          [](const std::string& source) {
              const auto outcome = javaparse::parse_source(source);
              return outcome.mode == javaparse::ParseMode::Parsed
                         ? "parsed"
                         : "fallback_flat";
          },
          py::arg("source"));

    m.def("parse_tree_json",
          [](const std::string& source) {
              return javaparse::tree_to_json(javaparse::parse_source(source).tree);
          },
          py::arg("source"), "Parse and return the tree as a JSON string.");

    m.def("extract_paths",
          [](const std::string& source, int max_path_nodes) {
              const auto outcome = javaparse::parse_source(source);
              py::list out;
              for (const auto& p :
                   codepaths::extract_paths(outcome.tree, max_path_nodes)) {
                  out.append(py::make_tuple(p.start, p.path_string, p.end));
              }
              return out;
          },
          py::arg("source"), py::arg("max_path_nodes") = 8,
          "Leaf-to-leaf paths as (start, path_string, end) tuples.");

    m.def("encode_attempt", &dataset::encode_attempt, py::arg("q"), py::arg("a"),
          py::arg("m"), "One-hot correctness encoding of length 2M.");

    m.def("encode_attempt_skills", &dataset::encode_attempt_skills,
          py::arg("skill_vector"), py::arg("a"));

    m.def("expert_features",
          [](const std::string& source) {
              return ktmodels::expert_features(javaparse::parse_source(source),
                                               ktmodels::kExpertRules);
          },
          py::arg("source"), "The nine structural rule features.");

    m.def("expert_rule_names", [] { return ktmodels::kExpertRules; });

    m.def("auc",
          [](const std::vector<int>& labels, const std::vector<double>& scores)
              -> std::optional<double> { return eval::auc(labels, scores); },
          py::arg("labels"), py::arg("scores"),
          "Rank-based AUC with tie handling; None for single-class input.");

    m.def("synthesize",
          [](const std::string& out_dir, int students, int problems,
             int assignments, const std::string& mode, uint64_t seed,
             double corrupt_fraction, bool stop_on_success) {
              synth::GenerateResult result;
              {
                  py::gil_scoped_release release;
                  result = synth::generate(
                      synth_config_from_kwargs(students, problems, assignments, mode,
                                               seed, corrupt_fraction, stop_on_success),
                      out_dir);
              }
              py::dict out;
              out["n_submissions"] = result.n_submissions;
              out["n_correct"] = result.n_correct;
              out["correct_rate"] = result.correct_rate();
              return out;
          },
          py::arg("out_dir"), py::arg("students") = 120, py::arg("problems") = 9,
          py::arg("assignments") = 1, py::arg("mode") = "structural",
          py::arg("seed") = 1, py::arg("corrupt_fraction") = 0.0,
          py::arg("stop_on_success") = true,
          "Generate a synthetic ProgSnap2-style dataset.");

    m.def("run_experiment",
          [](const std::string& config_json) {
              const auto config = experiment::run_config_from_json(config_json);
              experiment::ExperimentResult result;
              {
                  py::gil_scoped_release release;
                  result = experiment::run_experiment(config);
              }
              return report_to_dict(result.report, result.problem_ids);
          },
          py::arg("config_json"),
          "Run a repeated experiment from a JSON run-config string.");

    m.def("default_run_config",
          [] { return experiment::run_config_to_json(experiment::RunConfig{}); },
          "JSON template listing every run-config field.");

    m.attr("__version__") = "0.1.0";
}
