#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedprune/data.hpp"
#include "fedprune/federation.hpp"

namespace fedprune {

inline constexpr const char* kVersion = "0.1.0";
// Environment variable overriding the output directory when set.
inline constexpr const char* kOutDirEnvVar = "FEDPRUNE_OUT";

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "idx"
    // synthetic source
    std::size_t n_samples = 2000;
    std::size_t n_features = 20;
    int classes = 10;
    double spread = 4.0;
    // idx source
    std::string images_path;
    std::string labels_path;
    // partitioning
    PartitionScheme scheme = PartitionScheme::kSkewedNiid;
    std::size_t num_clients = 20;
    double train_fraction = 0.8;
    int classes_per_client = 5;
};

struct ModelConfig {
    std::string kind = "mlp";  // "mlp" | "small_cnn" | "reference_cnn"
    std::vector<std::size_t> hidden = {24, 12};  // mlp widths
};

// Fully resolved run description; the manifest embeds exactly this, so a
// manifest re-run reproduces the outputs byte for byte.
struct RunConfig {
    ExperimentConfig experiment;  // seeds filled per repeat at run time
    DataConfig data;
    ModelConfig model;
    std::uint64_t base_seed = 1;
    int repeats = 1;
    double threshold = 0.5;  // rounds-to-threshold accuracy level
    std::string out_dir = "out";
};

RunConfig default_run_config();

// Strict parser: unknown keys and out-of-range values raise ConfigError
// naming the key. A manifest file (object with a "config" entry) is accepted
// and unwrapped, so any manifest doubles as a rerun config.
RunConfig parse_config_file(const std::string& path);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
void validate_run_config(const RunConfig& cfg);

std::string scheme_name(PartitionScheme scheme);
PartitionScheme scheme_from_name(const std::string& name);

// Dataset and model construction from config. The synthetic dataset depends
// only on the base seed so every repeat trains on the same data; repeats vary
// partitioning and training randomness.
Dataset build_dataset(const DataConfig& data, std::uint64_t base_seed);
ModelSpec build_model(const ModelConfig& model, const Dataset& dataset);
std::vector<ClientProfile> build_clients(const Dataset& dataset,
                                         const DataConfig& data,
                                         std::uint64_t run_seed);

// Seed for repeat j of a run. All four experiment seeds and the partition
// seed take this value; the named sub-streams keep them independent.
std::uint64_t repeat_seed(std::uint64_t base_seed, int repeat);

// One experiment cell execution: builds clients for the repeat, fills the
// seed pack, and runs the given strategy / slow fraction.
ExperimentResult run_single(const RunConfig& cfg, const Dataset& dataset,
                            Strategy strategy, double slow_fraction,
                            int repeat, const RoundCallback& on_round = {});

// Repeat-averaged training curve. acc fields average over repeats where the
// round was evaluated; train_loss averages over repeats with a numeric loss
// (all-slow rounds report NaN and are skipped).
struct CurvePoint {
    int round = 0;
    double train_loss = 0.0;
    double acc_mean = 0.0;
    double acc_std = 0.0;
};

std::vector<CurvePoint> average_curves(const std::vector<ExperimentResult>& runs);

struct ComparisonRow {
    std::string strategy;
    double slow_fraction = 0.0;
    std::string scheme;
    double final_acc_mean = 0.0;
    double final_acc_std = 0.0;
    int rounds_to_threshold = -1;  // -1: never exceeded the threshold
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
};

// Exact round-trip: doubles print as shortest representations that parse
// back to the same bits.
std::string comparison_to_csv(const ComparisonTable& table);
ComparisonTable comparison_from_csv(const std::string& csv);

// Final-round fairness digest of one experiment's reports.
FairnessSummary fairness_summary(const std::vector<RoundReport>& reports);
// Strictly lower accuracy spread across clients wins.
bool more_fair(const FairnessSummary& a, const FairnessSummary& b);

nlohmann::json round_report_to_json(const RoundReport& rep);

// One summary cell: its identity, averaged curve, and comparison row.
struct CellSummary {
    std::string strategy;
    double slow_fraction = 0.0;
    std::string scheme;
    std::vector<CurvePoint> curve;
    ComparisonRow row;
};

CellSummary summarize_cell(const RunConfig& cfg, Strategy strategy,
                           double slow_fraction,
                           const std::vector<ExperimentResult>& runs);

// results.csv body: header plus one row per (cell, round).
// Columns: round,strategy,slow_fraction,scheme,train_loss,acc_mean,acc_std
std::string results_csv(const std::vector<CellSummary>& cells);

// Executes train / compare / sweep and writes manifest.json, per-repeat
// JSON-lines round logs, results.csv, and comparison.csv under out_dir.
// Throws on invalid config or IO failure.
void run_command(const std::string& command, const RunConfig& cfg);

}  // namespace fedprune
