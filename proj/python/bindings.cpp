// Python bindings for the simulator core. The surface mirrors the CLI:
// configs travel as JSON strings so the strict C++ parser stays the single
// source of validation.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdlib>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "fedprune/errors.hpp"
#include "fedprune/mask.hpp"
#include "fedprune/reporting.hpp"

namespace py = pybind11;
using namespace fedprune;

namespace {

nlohmann::json parse_json_text(const std::string& text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("invalid json: ") + e.what());
    }
}

RunConfig config_from_text(const std::string& text) {
    return run_config_from_json(parse_json_text(text));
}

// Matches the CLI precedence: the environment variable beats the config.
std::string run_from_python(const std::string& command,
                            const std::string& config_json) {
    RunConfig cfg = config_from_text(config_json);
    const char* env = std::getenv(kOutDirEnvVar);
    if (env != nullptr && *env != '\0') cfg.out_dir = env;
    run_command(command, cfg);
    return cfg.out_dir;
}

std::tuple<double, double, double> run_single_summary(
    const std::string& config_json, const std::string& strategy,
    double slow_fraction, int repeat) {
    const RunConfig cfg = config_from_text(config_json);
    const Dataset data = build_dataset(cfg.data, cfg.base_seed);
    const ExperimentResult result = run_single(
        cfg, data, strategy_from_name(strategy), slow_fraction, repeat);
    return {result.fairness.final_acc_mean, result.fairness.final_acc_std,
            result.fairness.final_train_loss};
}

std::string count_submodels(const std::vector<std::size_t>& hidden_widths,
                            double drop_rate) {
    return count_submodels_lower_bound(hidden_widths, drop_rate).str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Deterministic federated learning simulator core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

    m.def("version", [] { return std::string(kVersion); },
          "Library version string.");
    m.def("default_config",
          [] { return run_config_to_json(default_run_config()).dump(2); },
          "Default run configuration as a JSON string.");
    m.def("validate_config",
          [](const std::string& text) { config_from_text(text); },
          py::arg("config_json"),
          "Parse and validate a config; raises on any problem.");
    m.def("run", &run_from_python, py::arg("command"), py::arg("config_json"),
          "Execute train / compare / sweep; returns the output directory. "
          "The FEDPRUNE_OUT environment variable overrides out_dir.");
    m.def("run_single_summary", &run_single_summary, py::arg("config_json"),
          py::arg("strategy"), py::arg("slow_fraction"), py::arg("repeat"),
          "Run one experiment cell; returns (final_acc_mean, final_acc_std, "
          "final_train_loss).");
    m.def("keep_count", &keep_count, py::arg("width"), py::arg("drop_rate"),
          "Units surviving a drop rate in a layer of the given width.");
    m.def("count_submodels", &count_submodels, py::arg("hidden_widths"),
          py::arg("drop_rate"),
          "Lower bound on distinct sub-models, as a decimal string.");
}
