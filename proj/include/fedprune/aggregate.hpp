#pragma once

#include <cstdint>
#include <vector>

#include "fedprune/model.hpp"

namespace fedprune {

// One client's contribution to a round: post-training parameters in the
// global shape (slow clients arrive here via broadcast_submodel) plus flags
// marking which coordinates the client actually trained.
struct ClientUpdate {
    int client_id = 0;
    Parameters params;
    ParamMask trained;
    std::size_t n_k = 0;  // local training sample count
};

enum class AggregationMode { kFedAvg, kClt };

struct AggregationConfig {
    AggregationMode mode = AggregationMode::kFedAvg;
    int round = 1;  // t >= 1; scales the sampling spread by 1/sqrt(t)
    std::uint64_t rng_seed = 0;
};

// Per coordinate j: mean over clients with trained flag set, weighted by n_k
// renormalized over that subset. Coordinates trained by nobody keep the value
// from `previous`. Reduction runs in ascending client_id order so results do
// not depend on arrival order.
Parameters weighted_mean(const std::vector<ClientUpdate>& updates,
                         const Parameters& previous);

// Weighted population standard deviation per coordinate, same weights as
// weighted_mean. Coordinates with fewer than two trainers get exactly 0.
Parameters weighted_stdev(const std::vector<ClientUpdate>& updates);

// Draws coordinate j from Normal(mu_j, (sigma_j / sqrt(t))^2), seeded.
// Coordinates with sigma_j == 0 return mu_j exactly and consume no draw.
Parameters clt_aggregate(const std::vector<ClientUpdate>& updates,
                         const Parameters& previous,
                         const AggregationConfig& config);

// Gradient-form restatement of the weighted average: reconstructs each
// client's step direction from (previous - params) / lr and applies the
// combined step. Test oracle only; agrees with weighted_mean to rounding.
Parameters fedavg_equivalence_form(const Parameters& global_before,
                                   const std::vector<ClientUpdate>& updates,
                                   double lr);

}  // namespace fedprune
