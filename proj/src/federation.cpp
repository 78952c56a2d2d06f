#include "fedprune/federation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "fedprune/errors.hpp"
#include "fedprune/rng.hpp"

namespace fedprune {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::size_t floor_frac(double fraction, std::size_t n) {
    return static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(n) + 1e-9));
}

std::map<int, std::size_t> id_index(const std::vector<ClientProfile>& clients) {
    std::map<int, std::size_t> idx;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        if (!idx.emplace(clients[i].client_id, i).second) {
            throw InputError("duplicate client id " +
                             std::to_string(clients[i].client_id));
        }
    }
    return idx;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Population standard deviation; the fairness measure over clients.
double std_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

std::uint64_t train_seed(const ExperimentConfig& cfg, int t, int client_id) {
    return mix_seed(cfg.seeds.init, Stream::kLocalTrain,
                    static_cast<std::uint64_t>(t),
                    static_cast<std::uint64_t>(client_id));
}

void evaluate_all_clients(const ModelSpec& spec, const Parameters& params,
                          const std::vector<ClientProfile>& clients,
                          RoundReport& rep) {
    std::vector<std::size_t> order(clients.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return clients[a].client_id < clients[b].client_id;
    });
    rep.client_accuracies.clear();
    for (std::size_t i : order) {
        rep.client_accuracies.push_back(
            evaluate(spec, params, clients[i].test).accuracy);
    }
    rep.acc_mean = mean_of(rep.client_accuracies);
    rep.acc_std = std_of(rep.client_accuracies);
    rep.evaluated = true;
}

}  // namespace

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::kFedAvg: return "fedavg";
        case Strategy::kFedPrune: return "fedprune";
        case Strategy::kFedPruneNoClt: return "fedprune_no_clt";
        case Strategy::kSmallToAll: return "small_to_all";
    }
    throw ConfigError("unknown strategy value");
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "fedavg") return Strategy::kFedAvg;
    if (name == "fedprune") return Strategy::kFedPrune;
    if (name == "fedprune_no_clt") return Strategy::kFedPruneNoClt;
    if (name == "small_to_all") return Strategy::kSmallToAll;
    throw ConfigError("unknown strategy: " + name);
}

void validate_config(const ExperimentConfig& cfg, std::size_t num_clients) {
    if (cfg.rounds < 1) throw ConfigError("rounds must be >= 1");
    if (cfg.clients_per_round < 1 ||
        static_cast<std::size_t>(cfg.clients_per_round) > num_clients) {
        throw ConfigError("clients_per_round must lie in [1, " +
                          std::to_string(num_clients) + "]");
    }
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(std::isfinite(cfg.lr) && cfg.lr > 0.0)) {
        throw ConfigError("lr must be positive and finite");
    }
    if (!(cfg.drop_rate >= 0.0 && cfg.drop_rate < 1.0)) {
        throw ConfigError("drop_rate must lie in [0, 1)");
    }
    if (cfg.mask_update_round < 1) {
        throw ConfigError("mask_update_round must be >= 1");
    }
    if (!(cfg.slow_fraction >= 0.0 && cfg.slow_fraction < 1.0)) {
        throw ConfigError("slow_fraction must lie in [0, 1)");
    }
    if (cfg.eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

std::vector<ClientProfile> assign_speed_classes(std::vector<ClientProfile> clients,
                                                double slow_fraction,
                                                std::uint64_t seed) {
    if (!(slow_fraction >= 0.0 && slow_fraction < 1.0)) {
        throw ConfigError("slow_fraction must lie in [0, 1)");
    }
    for (ClientProfile& c : clients) c.speed = Speed::kFast;
    const std::size_t n_slow = floor_frac(slow_fraction, clients.size());
    Rng rng(mix_seed(seed, Stream::kSlowAssign));
    const std::vector<int> slow_positions = rng.sample_without_replacement(
        static_cast<int>(clients.size()), static_cast<int>(n_slow));
    for (int p : slow_positions) {
        clients[static_cast<std::size_t>(p)].speed = Speed::kSlow;
    }
    return clients;
}

std::vector<int> select_round_clients(const std::vector<ClientProfile>& clients,
                                      int n, int t, std::uint64_t seed) {
    if (n < 1 || static_cast<std::size_t>(n) > clients.size()) {
        throw ConfigError("cannot select " + std::to_string(n) + " of " +
                          std::to_string(clients.size()) + " clients");
    }
    Rng rng(mix_seed(seed, Stream::kClientSelect, static_cast<std::uint64_t>(t)));
    const std::vector<int> positions =
        rng.sample_without_replacement(static_cast<int>(clients.size()), n);
    std::vector<int> ids;
    ids.reserve(positions.size());
    for (int p : positions) {
        ids.push_back(clients[static_cast<std::size_t>(p)].client_id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

RoundOutcome run_round_fedavg(const ModelSpec& spec, const Parameters& global,
                              const std::vector<ClientProfile>& clients,
                              const std::vector<int>& selected,
                              const ExperimentConfig& cfg, int t) {
    const std::map<int, std::size_t> idx = id_index(clients);

    RoundOutcome out;
    out.report.round = t;
    out.report.strategy = cfg.strategy;

    std::vector<ClientUpdate> updates;
    double loss_sum = 0.0;
    for (int id : selected) {
        const auto it = idx.find(id);
        if (it == idx.end()) {
            throw InputError("selected client " + std::to_string(id) +
                             " does not exist");
        }
        const ClientProfile& c = clients[it->second];
        if (c.speed == Speed::kSlow) {
            out.report.dropped.push_back(id);
            continue;
        }
        const TrainResult tr =
            local_train(spec, global, c.train, cfg.epochs, cfg.batch_size,
                        cfg.lr, train_seed(cfg, t, id));
        loss_sum += tr.final_epoch_loss;
        ClientUpdate up;
        up.client_id = id;
        up.params = tr.params;
        up.trained = ParamMask::all_true(tr.params);
        up.n_k = c.n_k();
        out.report.weight_denominator += up.n_k;
        updates.push_back(std::move(up));
        out.report.participants.push_back(id);
    }

    if (updates.empty()) {
        out.params = global;  // all-slow selection: carry parameters forward
        out.report.train_loss = kNan;
    } else {
        out.params = weighted_mean(updates, global);
        out.report.train_loss =
            loss_sum / static_cast<double>(updates.size());
    }
    return out;
}

FedPruneOutcome run_round_fedprune(const ModelSpec& spec,
                                   const FedPruneState& state,
                                   const std::vector<ClientProfile>& clients,
                                   const std::vector<int>& selected,
                                   const ExperimentConfig& cfg, int t) {
    if (t < 1) throw ConfigError("round index must be >= 1");
    validate_mask(spec, state.mask);
    const std::map<int, std::size_t> idx = id_index(clients);

    FedPruneOutcome out;
    out.state = state;
    out.report.round = t;
    out.report.strategy = cfg.strategy;

    // The sub-model is identical for every slow client this round; extract
    // once.
    const bool anyone_sub =
        cfg.strategy == Strategy::kSmallToAll ||
        std::any_of(selected.begin(), selected.end(), [&](int id) {
            const auto it = idx.find(id);
            return it != idx.end() &&
                   clients[it->second].speed == Speed::kSlow;
        });
    SubModel sub;
    ParamMask sub_trained;
    if (anyone_sub) {
        sub = extract_submodel(spec, state.params, state.mask);
        sub_trained = trained_coordinates(spec, state.mask);
    }
    const Mask identity = identity_mask(spec);

    std::vector<ClientUpdate> updates;
    double loss_sum = 0.0;
    for (int id : selected) {
        const auto it = idx.find(id);
        if (it == idx.end()) {
            throw InputError("selected client " + std::to_string(id) +
                             " does not exist");
        }
        const ClientProfile& c = clients[it->second];
        const bool trains_sub = cfg.strategy == Strategy::kSmallToAll ||
                                c.speed == Speed::kSlow;

        ClientUpdate up;
        up.client_id = id;
        up.n_k = c.n_k();
        StatReports stats_in;
        if (trains_sub) {
            const TrainResult tr =
                local_train(sub.spec, sub.params, c.train, cfg.epochs,
                            cfg.batch_size, cfg.lr, train_seed(cfg, t, id));
            loss_sum += tr.final_epoch_loss;
            up.params = broadcast_submodel(spec, state.params, tr.params,
                                           state.mask);
            up.trained = sub_trained;
            stats_in = make_stat_reports(spec, state.mask, tr.params,
                                         tr.mean_abs_activations);
        } else {
            const TrainResult tr =
                local_train(spec, state.params, c.train, cfg.epochs,
                            cfg.batch_size, cfg.lr, train_seed(cfg, t, id));
            loss_sum += tr.final_epoch_loss;
            up.params = tr.params;
            up.trained = ParamMask::all_true(tr.params);
            stats_in = make_stat_reports(spec, identity, tr.params,
                                         tr.mean_abs_activations);
        }
        out.state.stats = accumulate_stats(out.state.stats, c.speed,
                                           stats_in.dense, stats_in.conv);
        out.report.weight_denominator += up.n_k;
        updates.push_back(std::move(up));
        out.report.participants.push_back(id);
    }

    if (updates.empty()) {
        out.report.train_loss = kNan;
    } else {
        out.report.train_loss = loss_sum / static_cast<double>(updates.size());
        if (cfg.strategy == Strategy::kFedPruneNoClt) {
            out.state.params = weighted_mean(updates, state.params);
        } else {
            AggregationConfig agg;
            agg.mode = AggregationMode::kClt;
            agg.round = t;
            agg.rng_seed = cfg.seeds.sampling;
            out.state.params = clt_aggregate(updates, state.params, agg);
        }
    }

    if (t % cfg.mask_update_round == 0) {
        out.state.mask = update_mask(out.state.stats, spec, cfg.drop_rate);
        out.state.stats = UnitStats::zero(spec);
        out.report.mask_updated = true;
    }
    out.report.mask_fingerprint = mask_fingerprint(out.state.mask);
    return out;
}

ExperimentResult run_experiment(const ModelSpec& spec,
                                const std::vector<ClientProfile>& clients,
                                const ExperimentConfig& cfg,
                                const RoundCallback& on_round) {
    validate_spec(spec);
    if (clients.empty()) throw InputError("no clients");
    validate_config(cfg, clients.size());
    const std::size_t classes = num_classes(spec);
    for (const ClientProfile& c : clients) {
        if (c.train.size() < 1 || c.test.size() < 1) {
            throw InputError("client " + std::to_string(c.client_id) +
                             " needs at least one train and one test sample");
        }
        if (static_cast<std::size_t>(c.train.classes) != classes ||
            static_cast<std::size_t>(c.test.classes) != classes) {
            throw InputError("client " + std::to_string(c.client_id) +
                             " dataset classes do not match the model head");
        }
    }
    id_index(clients);  // rejects duplicate ids

    const std::vector<ClientProfile> profiles = assign_speed_classes(
        clients, cfg.slow_fraction, cfg.seeds.slow_assign);

    FedPruneState state;
    state.params = init_params(spec, cfg.seeds.init);
    state.mask = cfg.strategy == Strategy::kFedAvg
                     ? identity_mask(spec)
                     : random_mask(spec, cfg.drop_rate, cfg.seeds.init);
    state.stats = UnitStats::zero(spec);

    ExperimentResult result;
    for (int t = 1; t <= cfg.rounds; ++t) {
        const std::vector<int> selected = select_round_clients(
            profiles, cfg.clients_per_round, t, cfg.seeds.client_select);
        RoundReport rep;
        if (cfg.strategy == Strategy::kFedAvg) {
            RoundOutcome out =
                run_round_fedavg(spec, state.params, profiles, selected, cfg, t);
            state.params = std::move(out.params);
            rep = std::move(out.report);
        } else {
            FedPruneOutcome out =
                run_round_fedprune(spec, state, profiles, selected, cfg, t);
            state = std::move(out.state);
            rep = std::move(out.report);
        }
        if (t % cfg.eval_every == 0 || t == cfg.rounds) {
            evaluate_all_clients(spec, state.params, profiles, rep);
        }
        if (on_round) on_round(rep);
        result.reports.push_back(std::move(rep));
    }

    const RoundReport& last = result.reports.back();
    result.fairness.strategy = cfg.strategy;
    result.fairness.final_acc_mean = last.acc_mean;
    result.fairness.final_acc_std = last.acc_std;
    result.fairness.final_train_loss = last.train_loss;
    result.final_params = std::move(state.params);
    return result;
}

}  // namespace fedprune
