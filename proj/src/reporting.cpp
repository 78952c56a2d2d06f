#include "fedprune/reporting.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string_view>

#include "fedprune/errors.hpp"
#include "fedprune/rng.hpp"

namespace fedprune {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Shortest representation that parses back to the same bits.
std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw FormatError("bad number '" + std::string(s) + "' in " + where);
    }
    return v;
}

long long parse_int(std::string_view s, const std::string& where) {
    long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw FormatError("bad integer '" + std::string(s) + "' in " + where);
    }
    return v;
}

void check_keys(const nlohmann::json& obj,
                std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const bool known =
            std::any_of(allowed.begin(), allowed.end(),
                        [&](const char* k) { return it.key() == k; });
        if (!known) {
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
        }
    }
}

std::string key_path(const std::string& where, const char* key) {
    return where.empty() ? key : where + "." + key;
}

double get_double(const nlohmann::json& obj, const char* key, double fallback,
                  const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const nlohmann::json& v = obj.at(key);
    if (!v.is_number()) {
        throw ConfigError("key '" + key_path(where, key) + "' must be a number");
    }
    return v.get<double>();
}

long long get_int(const nlohmann::json& obj, const char* key, long long fallback,
                  const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const nlohmann::json& v = obj.at(key);
    if (!v.is_number_integer()) {
        throw ConfigError("key '" + key_path(where, key) + "' must be an integer");
    }
    return v.get<long long>();
}

std::uint64_t get_u64(const nlohmann::json& obj, const char* key,
                      std::uint64_t fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const nlohmann::json& v = obj.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) {
        return static_cast<std::uint64_t>(v.get<long long>());
    }
    throw ConfigError("key '" + key_path(where, key) +
                      "' must be a nonnegative integer");
}

std::string get_string(const nlohmann::json& obj, const char* key,
                       std::string fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const nlohmann::json& v = obj.at(key);
    if (!v.is_string()) {
        throw ConfigError("key '" + key_path(where, key) + "' must be a string");
    }
    return v.get<std::string>();
}

std::string fingerprint_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(v));
    return buf;
}

std::string timestamp_utc() {
    const std::time_t t =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int slow_pct(double fraction) {
    return static_cast<int>(std::lround(fraction * 100.0));
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << content;
    f.flush();
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.experiment.strategy = Strategy::kFedPrune;
    cfg.experiment.rounds = 20;
    cfg.experiment.clients_per_round = 10;
    cfg.experiment.epochs = 10;
    cfg.experiment.batch_size = 10;
    cfg.experiment.lr = 0.001;
    cfg.experiment.drop_rate = 0.5;
    cfg.experiment.mask_update_round = 10;
    cfg.experiment.slow_fraction = 0.0;
    cfg.experiment.eval_every = 1;
    return cfg;
}

std::string scheme_name(PartitionScheme scheme) {
    return scheme == PartitionScheme::kIid ? "iid" : "skewed";
}

PartitionScheme scheme_from_name(const std::string& name) {
    if (name == "iid") return PartitionScheme::kIid;
    if (name == "skewed") return PartitionScheme::kSkewedNiid;
    throw ConfigError("unknown partition scheme: " + name +
                      " (expected iid or skewed)");
}

RunConfig run_config_from_json(const nlohmann::json& root_in) {
    const nlohmann::json* rootp = &root_in;
    if (root_in.is_object() && root_in.contains("config")) {
        rootp = &root_in.at("config");  // manifest file: unwrap the snapshot
    }
    const nlohmann::json& root = *rootp;
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");

    check_keys(root,
               {"strategy", "rounds", "clients_per_round", "epochs",
                "batch_size", "lr", "drop_rate", "mask_update_round",
                "slow_fraction", "eval_every", "seed", "repeats", "threshold",
                "out_dir", "data", "model"},
               "config");

    RunConfig cfg = default_run_config();
    ExperimentConfig& e = cfg.experiment;
    e.strategy = strategy_from_name(
        get_string(root, "strategy", strategy_name(e.strategy), ""));
    e.rounds = static_cast<int>(get_int(root, "rounds", e.rounds, ""));
    e.clients_per_round = static_cast<int>(
        get_int(root, "clients_per_round", e.clients_per_round, ""));
    e.epochs = static_cast<int>(get_int(root, "epochs", e.epochs, ""));
    e.batch_size = static_cast<int>(get_int(root, "batch_size", e.batch_size, ""));
    e.lr = get_double(root, "lr", e.lr, "");
    e.drop_rate = get_double(root, "drop_rate", e.drop_rate, "");
    e.mask_update_round = static_cast<int>(
        get_int(root, "mask_update_round", e.mask_update_round, ""));
    e.slow_fraction = get_double(root, "slow_fraction", e.slow_fraction, "");
    e.eval_every = static_cast<int>(get_int(root, "eval_every", e.eval_every, ""));
    cfg.base_seed = get_u64(root, "seed", cfg.base_seed, "");
    cfg.repeats = static_cast<int>(get_int(root, "repeats", cfg.repeats, ""));
    cfg.threshold = get_double(root, "threshold", cfg.threshold, "");
    cfg.out_dir = get_string(root, "out_dir", cfg.out_dir, "");

    if (root.contains("data")) {
        const nlohmann::json& d = root.at("data");
        if (!d.is_object()) throw ConfigError("key 'data' must be an object");
        check_keys(d,
                   {"source", "n_samples", "n_features", "classes", "spread",
                    "images", "labels", "partition", "num_clients",
                    "train_fraction", "classes_per_client"},
                   "data");
        DataConfig& dc = cfg.data;
        dc.source = get_string(d, "source", dc.source, "data");
        dc.n_samples = static_cast<std::size_t>(
            get_u64(d, "n_samples", dc.n_samples, "data"));
        dc.n_features = static_cast<std::size_t>(
            get_u64(d, "n_features", dc.n_features, "data"));
        dc.classes = static_cast<int>(get_int(d, "classes", dc.classes, "data"));
        dc.spread = get_double(d, "spread", dc.spread, "data");
        dc.images_path = get_string(d, "images", dc.images_path, "data");
        dc.labels_path = get_string(d, "labels", dc.labels_path, "data");
        dc.scheme = scheme_from_name(
            get_string(d, "partition", scheme_name(dc.scheme), "data"));
        dc.num_clients = static_cast<std::size_t>(
            get_u64(d, "num_clients", dc.num_clients, "data"));
        dc.train_fraction =
            get_double(d, "train_fraction", dc.train_fraction, "data");
        dc.classes_per_client = static_cast<int>(
            get_int(d, "classes_per_client", dc.classes_per_client, "data"));
    }

    if (root.contains("model")) {
        const nlohmann::json& m = root.at("model");
        if (!m.is_object()) throw ConfigError("key 'model' must be an object");
        check_keys(m, {"kind", "hidden"}, "model");
        cfg.model.kind = get_string(m, "kind", cfg.model.kind, "model");
        if (m.contains("hidden")) {
            const nlohmann::json& h = m.at("hidden");
            if (!h.is_array()) {
                throw ConfigError("key 'model.hidden' must be an array");
            }
            cfg.model.hidden.clear();
            for (const auto& v : h) {
                if (!v.is_number_integer() || v.get<long long>() < 1) {
                    throw ConfigError(
                        "key 'model.hidden' entries must be positive integers");
                }
                cfg.model.hidden.push_back(
                    static_cast<std::size_t>(v.get<long long>()));
            }
        }
    }

    validate_run_config(cfg);
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config file " + path + " is not valid JSON: " +
                          e.what());
    }
    return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["strategy"] = strategy_name(cfg.experiment.strategy);
    j["rounds"] = cfg.experiment.rounds;
    j["clients_per_round"] = cfg.experiment.clients_per_round;
    j["epochs"] = cfg.experiment.epochs;
    j["batch_size"] = cfg.experiment.batch_size;
    j["lr"] = cfg.experiment.lr;
    j["drop_rate"] = cfg.experiment.drop_rate;
    j["mask_update_round"] = cfg.experiment.mask_update_round;
    j["slow_fraction"] = cfg.experiment.slow_fraction;
    j["eval_every"] = cfg.experiment.eval_every;
    j["seed"] = cfg.base_seed;
    j["repeats"] = cfg.repeats;
    j["threshold"] = cfg.threshold;
    j["out_dir"] = cfg.out_dir;
    nlohmann::json d;
    d["source"] = cfg.data.source;
    d["n_samples"] = cfg.data.n_samples;
    d["n_features"] = cfg.data.n_features;
    d["classes"] = cfg.data.classes;
    d["spread"] = cfg.data.spread;
    d["images"] = cfg.data.images_path;
    d["labels"] = cfg.data.labels_path;
    d["partition"] = scheme_name(cfg.data.scheme);
    d["num_clients"] = cfg.data.num_clients;
    d["train_fraction"] = cfg.data.train_fraction;
    d["classes_per_client"] = cfg.data.classes_per_client;
    j["data"] = std::move(d);
    nlohmann::json m;
    m["kind"] = cfg.model.kind;
    m["hidden"] = cfg.model.hidden;
    j["model"] = std::move(m);
    return j;
}

void validate_run_config(const RunConfig& cfg) {
    validate_config(cfg.experiment, cfg.data.num_clients);
    const DataConfig& d = cfg.data;
    if (d.source != "synthetic" && d.source != "idx") {
        throw ConfigError("data.source must be 'synthetic' or 'idx', got '" +
                          d.source + "'");
    }
    if (d.source == "synthetic") {
        if (d.n_samples == 0) throw ConfigError("data.n_samples must be positive");
        if (d.n_features == 0) throw ConfigError("data.n_features must be positive");
        if (d.classes < 2) throw ConfigError("data.classes must be >= 2");
        if (!(std::isfinite(d.spread) && d.spread > 0.0)) {
            throw ConfigError("data.spread must be positive");
        }
    } else {
        if (d.images_path.empty() || d.labels_path.empty()) {
            throw ConfigError("data.images and data.labels are required for idx");
        }
    }
    if (d.num_clients == 0) throw ConfigError("data.num_clients must be positive");
    if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) {
        throw ConfigError("data.train_fraction must lie in (0, 1)");
    }
    if (d.classes_per_client < 1) {
        throw ConfigError("data.classes_per_client must be >= 1");
    }
    const ModelConfig& m = cfg.model;
    if (m.kind != "mlp" && m.kind != "small_cnn" && m.kind != "reference_cnn") {
        throw ConfigError("model.kind must be mlp, small_cnn, or reference_cnn");
    }
    if (m.kind == "mlp" && m.hidden.empty()) {
        throw ConfigError("model.hidden must list at least one layer width");
    }
    if (cfg.repeats < 1) throw ConfigError("repeats must be >= 1");
    if (!(cfg.threshold >= 0.0 && cfg.threshold <= 1.0)) {
        throw ConfigError("threshold must lie in [0, 1]");
    }
    if (cfg.out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

Dataset build_dataset(const DataConfig& data, std::uint64_t base_seed) {
    if (data.source == "synthetic") {
        return generate_synthetic(data.n_samples, data.n_features, data.classes,
                                  base_seed, data.spread);
    }
    if (data.source == "idx") {
        return load_idx(data.images_path, data.labels_path);
    }
    throw ConfigError("unknown data source: " + data.source);
}

ModelSpec build_model(const ModelConfig& model, const Dataset& dataset) {
    const std::vector<std::size_t> shape = dataset.sample_shape();
    const auto classes = static_cast<std::size_t>(dataset.classes);
    ModelSpec spec;
    if (model.kind == "mlp") {
        if (shape.size() != 1) {
            throw ConfigError("mlp needs flat samples, got rank " +
                              std::to_string(shape.size() + 1) + " inputs");
        }
        spec = make_mlp(shape[0], model.hidden, classes);
    } else if (model.kind == "small_cnn") {
        if (shape.size() != 3) {
            throw ConfigError("small_cnn needs (channels, h, w) samples");
        }
        spec = make_small_cnn(shape[0], shape[1], shape[2], classes);
    } else if (model.kind == "reference_cnn") {
        if (shape != std::vector<std::size_t>{1, 28, 28}) {
            throw ConfigError("reference_cnn needs (1, 28, 28) samples");
        }
        spec = make_reference_cnn(classes);
    } else {
        throw ConfigError("unknown model kind: " + model.kind);
    }
    validate_spec(spec);
    return spec;
}

std::vector<ClientProfile> build_clients(const Dataset& dataset,
                                         const DataConfig& data,
                                         std::uint64_t run_seed) {
    PartitionPlan plan;
    plan.scheme = data.scheme;
    plan.num_clients = data.num_clients;
    plan.train_fraction = data.train_fraction;
    plan.classes_per_client = data.classes_per_client;
    plan.seed = run_seed;
    std::vector<ClientData> parts = partition(dataset, plan);
    std::vector<ClientProfile> clients;
    clients.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        ClientProfile c;
        c.client_id = static_cast<int>(i);
        c.train = std::move(parts[i].train);
        c.test = std::move(parts[i].test);
        clients.push_back(std::move(c));
    }
    return clients;
}

std::uint64_t repeat_seed(std::uint64_t base_seed, int repeat) {
    return mix_seed(base_seed, Stream::kRepeat, static_cast<std::uint64_t>(repeat));
}

ExperimentResult run_single(const RunConfig& cfg, const Dataset& dataset,
                            Strategy strategy, double slow_fraction,
                            int repeat, const RoundCallback& on_round) {
    const std::uint64_t rs = repeat_seed(cfg.base_seed, repeat);
    const std::vector<ClientProfile> clients =
        build_clients(dataset, cfg.data, rs);
    const ModelSpec spec = build_model(cfg.model, dataset);
    ExperimentConfig ecfg = cfg.experiment;
    ecfg.strategy = strategy;
    ecfg.slow_fraction = slow_fraction;
    ecfg.seeds = SeedPack{rs, rs, rs, rs};
    return run_experiment(spec, clients, ecfg, on_round);
}

std::vector<CurvePoint> average_curves(const std::vector<ExperimentResult>& runs) {
    if (runs.empty()) throw InputError("no runs to average");
    const std::size_t rounds = runs.front().reports.size();
    for (const ExperimentResult& r : runs) {
        if (r.reports.size() != rounds) {
            throw InputError("runs disagree on the round count");
        }
    }
    std::vector<CurvePoint> curve;
    curve.reserve(rounds);
    for (std::size_t i = 0; i < rounds; ++i) {
        CurvePoint p;
        p.round = runs.front().reports[i].round;
        double loss_sum = 0.0, am_sum = 0.0, as_sum = 0.0;
        int loss_n = 0, acc_n = 0;
        for (const ExperimentResult& r : runs) {
            const RoundReport& rep = r.reports[i];
            if (!std::isnan(rep.train_loss)) {
                loss_sum += rep.train_loss;
                ++loss_n;
            }
            if (rep.evaluated) {
                am_sum += rep.acc_mean;
                as_sum += rep.acc_std;
                ++acc_n;
            }
        }
        p.train_loss = loss_n > 0 ? loss_sum / loss_n : kNan;
        p.acc_mean = acc_n > 0 ? am_sum / acc_n : kNan;
        p.acc_std = acc_n > 0 ? as_sum / acc_n : kNan;
        curve.push_back(p);
    }
    return curve;
}

CellSummary summarize_cell(const RunConfig& cfg, Strategy strategy,
                           double slow_fraction,
                           const std::vector<ExperimentResult>& runs) {
    CellSummary cell;
    cell.strategy = strategy_name(strategy);
    cell.slow_fraction = slow_fraction;
    cell.scheme = scheme_name(cfg.data.scheme);
    cell.curve = average_curves(runs);

    cell.row.strategy = cell.strategy;
    cell.row.slow_fraction = slow_fraction;
    cell.row.scheme = cell.scheme;
    cell.row.final_acc_mean = cell.curve.back().acc_mean;
    cell.row.final_acc_std = cell.curve.back().acc_std;
    cell.row.rounds_to_threshold = -1;
    for (const CurvePoint& p : cell.curve) {
        if (!std::isnan(p.acc_mean) && p.acc_mean > cfg.threshold) {
            cell.row.rounds_to_threshold = p.round;
            break;
        }
    }
    return cell;
}

std::string results_csv(const std::vector<CellSummary>& cells) {
    std::string out = "round,strategy,slow_fraction,scheme,train_loss,acc_mean,acc_std\n";
    for (const CellSummary& cell : cells) {
        for (const CurvePoint& p : cell.curve) {
            out += std::to_string(p.round);
            out += ',';
            out += cell.strategy;
            out += ',';
            out += fmt_double(cell.slow_fraction);
            out += ',';
            out += cell.scheme;
            out += ',';
            out += fmt_double(p.train_loss);
            out += ',';
            out += fmt_double(p.acc_mean);
            out += ',';
            out += fmt_double(p.acc_std);
            out += '\n';
        }
    }
    return out;
}

namespace {
constexpr const char* kComparisonHeader =
    "strategy,slow_fraction,scheme,final_acc_mean,final_acc_std,rounds_to_threshold";
}

std::string comparison_to_csv(const ComparisonTable& table) {
    std::string out = std::string(kComparisonHeader) + "\n";
    for (const ComparisonRow& r : table.rows) {
        out += r.strategy;
        out += ',';
        out += fmt_double(r.slow_fraction);
        out += ',';
        out += r.scheme;
        out += ',';
        out += fmt_double(r.final_acc_mean);
        out += ',';
        out += fmt_double(r.final_acc_std);
        out += ',';
        out += std::to_string(r.rounds_to_threshold);
        out += '\n';
    }
    return out;
}

ComparisonTable comparison_from_csv(const std::string& csv) {
    std::vector<std::string_view> lines;
    for (std::string_view rest = csv; !rest.empty();) {
        const std::size_t pos = rest.find('\n');
        if (pos == std::string_view::npos) {
            lines.push_back(rest);
            break;
        }
        lines.push_back(rest.substr(0, pos));
        rest = rest.substr(pos + 1);
    }
    if (lines.empty() || lines.front() != kComparisonHeader) {
        throw FormatError("comparison CSV header mismatch");
    }
    ComparisonTable table;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::vector<std::string_view> f = split(lines[i], ',');
        if (f.size() != 6) {
            throw FormatError("comparison CSV row " + std::to_string(i) +
                              " has " + std::to_string(f.size()) + " fields");
        }
        const std::string where = "comparison CSV row " + std::to_string(i);
        ComparisonRow row;
        row.strategy = std::string(f[0]);
        row.slow_fraction = parse_double(f[1], where);
        row.scheme = std::string(f[2]);
        row.final_acc_mean = parse_double(f[3], where);
        row.final_acc_std = parse_double(f[4], where);
        row.rounds_to_threshold = static_cast<int>(parse_int(f[5], where));
        table.rows.push_back(std::move(row));
    }
    return table;
}

FairnessSummary fairness_summary(const std::vector<RoundReport>& reports) {
    if (reports.empty()) throw InputError("no round reports");
    for (auto it = reports.rbegin(); it != reports.rend(); ++it) {
        if (!it->evaluated) continue;
        FairnessSummary s;
        s.strategy = it->strategy;
        s.final_acc_mean = it->acc_mean;
        s.final_acc_std = it->acc_std;
        s.final_train_loss = it->train_loss;
        return s;
    }
    throw InputError("no evaluated rounds in the reports");
}

bool more_fair(const FairnessSummary& a, const FairnessSummary& b) {
    return a.final_acc_std < b.final_acc_std;
}

nlohmann::json round_report_to_json(const RoundReport& rep) {
    nlohmann::json j;
    j["round"] = rep.round;
    j["strategy"] = strategy_name(rep.strategy);
    j["participants"] = rep.participants;
    j["dropped"] = rep.dropped;
    // An all-slow round has no trainers and no loss; that is null, not NaN.
    j["train_loss"] = std::isnan(rep.train_loss) ? nlohmann::json()
                                                 : nlohmann::json(rep.train_loss);
    j["evaluated"] = rep.evaluated;
    if (rep.evaluated) {
        j["client_accuracies"] = rep.client_accuracies;
        j["acc_mean"] = rep.acc_mean;
        j["acc_std"] = rep.acc_std;
    }
    j["mask_fingerprint"] = fingerprint_hex(rep.mask_fingerprint);
    j["mask_updated"] = rep.mask_updated;
    j["weight_denominator"] = rep.weight_denominator;
    return j;
}

void run_command(const std::string& command, const RunConfig& cfg) {
    validate_run_config(cfg);

    std::vector<std::pair<Strategy, double>> cells;
    if (command == "train") {
        cells.emplace_back(cfg.experiment.strategy, cfg.experiment.slow_fraction);
    } else if (command == "compare") {
        for (Strategy s : {Strategy::kFedAvg, Strategy::kFedPruneNoClt,
                           Strategy::kFedPrune}) {
            cells.emplace_back(s, cfg.experiment.slow_fraction);
        }
    } else if (command == "sweep") {
        for (Strategy s : {Strategy::kFedAvg, Strategy::kFedPruneNoClt,
                           Strategy::kFedPrune}) {
            for (double f : {0.1, 0.3, 0.5, 0.7, 0.9}) {
                cells.emplace_back(s, f);
            }
        }
    } else {
        throw ConfigError("unknown command: " + command);
    }

    namespace fs = std::filesystem;
    const fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);

    const std::string started = timestamp_utc();
    const Dataset dataset = build_dataset(cfg.data, cfg.base_seed);

    std::vector<CellSummary> summaries;
    std::vector<std::string> outputs;
    for (const auto& [strategy, fraction] : cells) {
        std::vector<ExperimentResult> runs;
        for (int j = 0; j < cfg.repeats; ++j) {
            const std::string fname = "rounds_" + strategy_name(strategy) + "_s" +
                                      std::to_string(slow_pct(fraction)) + "_r" +
                                      std::to_string(j) + ".jsonl";
            std::ofstream log(out_dir / fname, std::ios::binary);
            if (!log) {
                throw std::runtime_error("cannot open " +
                                         (out_dir / fname).string());
            }
            const RoundCallback cb = [&log](const RoundReport& rep) {
                log << round_report_to_json(rep).dump() << '\n';
            };
            runs.push_back(run_single(cfg, dataset, strategy, fraction, j, cb));
            log.flush();
            if (!log) {
                throw std::runtime_error("failed writing " +
                                         (out_dir / fname).string());
            }
            outputs.push_back(fname);
        }
        summaries.push_back(summarize_cell(cfg, strategy, fraction, runs));
    }

    write_file(out_dir / "results.csv", results_csv(summaries));
    outputs.push_back("results.csv");

    ComparisonTable table;
    for (const CellSummary& s : summaries) table.rows.push_back(s.row);
    write_file(out_dir / "comparison.csv", comparison_to_csv(table));
    outputs.push_back("comparison.csv");

    nlohmann::json manifest;
    manifest["artifact"] = "fedprune-sim";
    manifest["version"] = kVersion;
    manifest["command"] = command;
    manifest["config"] = run_config_to_json(cfg);
    manifest["started_utc"] = started;
    manifest["finished_utc"] = timestamp_utc();
    manifest["outputs"] = outputs;
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace fedprune
