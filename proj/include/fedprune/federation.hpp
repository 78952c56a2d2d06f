#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "fedprune/aggregate.hpp"
#include "fedprune/data.hpp"
#include "fedprune/mask.hpp"
#include "fedprune/nn.hpp"

namespace fedprune {

struct ClientProfile {
    int client_id = 0;
    Speed speed = Speed::kFast;
    Dataset train;
    Dataset test;

    std::size_t n_k() const { return train.size(); }
};

// small_to_all serves the pruned sub-model to every client regardless of
// speed; it isolates the differential-serving decision from the rest of the
// fedprune pipeline (aggregation and mask refresh stay identical).
enum class Strategy { kFedAvg, kFedPrune, kFedPruneNoClt, kSmallToAll };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

// Independent seeds for the four sources of randomness. Client-side training
// seeds derive from `init` per (round, client), so strategies sharing a seed
// pack see identical local training streams.
struct SeedPack {
    std::uint64_t client_select = 0;
    std::uint64_t slow_assign = 0;
    std::uint64_t init = 0;
    std::uint64_t sampling = 0;
};

struct ExperimentConfig {
    Strategy strategy = Strategy::kFedAvg;
    int rounds = 10;             // T
    int clients_per_round = 10;  // n
    int epochs = 10;             // E
    int batch_size = 10;
    double lr = 0.001;
    double drop_rate = 0.5;      // k
    int mask_update_round = 10;  // r
    double slow_fraction = 0.0;
    int eval_every = 1;
    SeedPack seeds;
};

// Throws ConfigError on out-of-range values; num_clients bounds
// clients_per_round.
void validate_config(const ExperimentConfig& cfg, std::size_t num_clients);

struct RoundReport {
    int round = 0;
    Strategy strategy = Strategy::kFedAvg;
    std::vector<int> participants;  // ascending client ids
    std::vector<int> dropped;       // fedavg only: selected slow clients
    double train_loss = 0.0;        // mean over participants; NaN if none
    bool evaluated = false;
    std::vector<double> client_accuracies;  // all clients, ascending id
    // NaN until an evaluation fills them.
    double acc_mean = std::numeric_limits<double>::quiet_NaN();
    double acc_std = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t mask_fingerprint = 0;  // 0 under fedavg
    bool mask_updated = false;           // refresh ran this round
    std::size_t weight_denominator = 0;  // sum of aggregated n_k (audit)
};

struct FairnessSummary {
    Strategy strategy = Strategy::kFedAvg;
    double final_acc_mean = 0.0;
    double final_acc_std = 0.0;
    double final_train_loss = 0.0;
};

// Marks exactly floor(slow_fraction * N) clients slow, chosen uniformly by
// seed; the assignment stays fixed for a whole experiment.
std::vector<ClientProfile> assign_speed_classes(std::vector<ClientProfile> clients,
                                                double slow_fraction,
                                                std::uint64_t seed);

// Uniform sample of n client ids without replacement, deterministic in
// (seed, t) and independent of strategy.
std::vector<int> select_round_clients(const std::vector<ClientProfile>& clients,
                                      int n, int t, std::uint64_t seed);

struct RoundOutcome {
    Parameters params;
    RoundReport report;
};

// Slow clients are dropped; fast clients train the full model and are
// averaged. An all-slow selection carries parameters through unchanged.
RoundOutcome run_round_fedavg(const ModelSpec& spec, const Parameters& global,
                              const std::vector<ClientProfile>& clients,
                              const std::vector<int>& selected,
                              const ExperimentConfig& cfg, int t);

struct FedPruneState {
    Parameters params;
    Mask mask;
    UnitStats stats;
};

struct FedPruneOutcome {
    FedPruneState state;
    RoundReport report;
};

// One ride through the fedprune pipeline: differential serving (per
// strategy), stat collection per speed group, aggregation (CLT or plain
// weighted mean), and the every-r-rounds mask refresh.
FedPruneOutcome run_round_fedprune(const ModelSpec& spec,
                                   const FedPruneState& state,
                                   const std::vector<ClientProfile>& clients,
                                   const std::vector<int>& selected,
                                   const ExperimentConfig& cfg, int t);

struct ExperimentResult {
    std::vector<RoundReport> reports;
    FairnessSummary fairness;
    Parameters final_params;
};

using RoundCallback = std::function<void(const RoundReport&)>;

// Full run: speed assignment, seeded init, T rounds, periodic evaluation of
// the global model on every client's test set. Reports stream through the
// callback as they are produced.
ExperimentResult run_experiment(const ModelSpec& spec,
                                const std::vector<ClientProfile>& clients,
                                const ExperimentConfig& cfg,
                                const RoundCallback& on_round = {});

}  // namespace fedprune
