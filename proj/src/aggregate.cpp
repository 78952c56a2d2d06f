#include "fedprune/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "fedprune/errors.hpp"
#include "fedprune/rng.hpp"

namespace fedprune {

namespace {

Parameters zeros_like(const Parameters& params) {
    Parameters out = params;
    for (auto& [l, lp] : out.layers) {
        std::fill(lp.weight.data.begin(), lp.weight.data.end(), 0.0);
        std::fill(lp.bias.data.begin(), lp.bias.data.end(), 0.0);
    }
    return out;
}

// Validates the batch of updates and returns indices sorted by client_id.
std::vector<std::size_t> checked_order(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw InputError("no client updates to aggregate");
    std::set<int> ids;
    for (const ClientUpdate& u : updates) {
        if (u.n_k < 1) {
            throw InputError("client " + std::to_string(u.client_id) +
                             " has no training samples");
        }
        if (!ids.insert(u.client_id).second) {
            throw InputError("duplicate client id " + std::to_string(u.client_id));
        }
        if (!u.params.same_layout(updates.front().params)) {
            throw InputError("client parameter layouts differ");
        }
        if (u.trained.layers.size() != u.params.layers.size()) {
            throw InputError("trained flags do not match the parameter layout");
        }
        for (const auto& [l, lp] : u.params.layers) {
            const auto it = u.trained.layers.find(l);
            if (it == u.trained.layers.end() ||
                it->second.weight.size() != lp.weight.size() ||
                it->second.bias.size() != lp.bias.size()) {
                throw InputError("trained flags do not match the parameter layout");
            }
        }
    }
    std::vector<std::size_t> order(updates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return updates[a].client_id < updates[b].client_id;
    });
    return order;
}

// Walks every coordinate of a layout once, giving the visitor access to the
// per-update value and trained flag at that coordinate.
template <typename Visit>
void for_each_coordinate(const Parameters& layout, Visit&& visit) {
    for (const auto& [l, lp] : layout.layers) {
        for (std::size_t i = 0; i < lp.weight.size(); ++i) visit(l, false, i);
        for (std::size_t i = 0; i < lp.bias.size(); ++i) visit(l, true, i);
    }
}

double coord_value(const Parameters& params, int l, bool bias, std::size_t i) {
    const LayerParams& lp = params.layers.at(l);
    return bias ? lp.bias.data[i] : lp.weight.data[i];
}

bool coord_trained(const ParamMask& mask, int l, bool bias, std::size_t i) {
    const LayerFlags& f = mask.layers.at(l);
    return (bias ? f.bias[i] : f.weight[i]) != 0;
}

void set_coord(Parameters& params, int l, bool bias, std::size_t i, double v) {
    LayerParams& lp = params.layers.at(l);
    (bias ? lp.bias.data[i] : lp.weight.data[i]) = v;
}

}  // namespace

Parameters weighted_mean(const std::vector<ClientUpdate>& updates,
                         const Parameters& previous) {
    const std::vector<std::size_t> order = checked_order(updates);
    if (!previous.same_layout(updates.front().params)) {
        throw InputError("previous parameters do not match the update layout");
    }
    Parameters out = previous;
    for_each_coordinate(previous, [&](int l, bool bias, std::size_t i) {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t k : order) {
            const ClientUpdate& u = updates[k];
            if (!coord_trained(u.trained, l, bias, i)) continue;
            const double w = static_cast<double>(u.n_k);
            num += w * coord_value(u.params, l, bias, i);
            den += w;
        }
        if (den > 0.0) set_coord(out, l, bias, i, num / den);
        // den == 0: nobody trained this coordinate, previous value stands
    });
    return out;
}

Parameters weighted_stdev(const std::vector<ClientUpdate>& updates) {
    const std::vector<std::size_t> order = checked_order(updates);
    Parameters out = zeros_like(updates.front().params);
    for_each_coordinate(out, [&](int l, bool bias, std::size_t i) {
        double num = 0.0;
        double den = 0.0;
        int trainers = 0;
        double first = 0.0;
        bool all_equal = true;
        for (std::size_t k : order) {
            const ClientUpdate& u = updates[k];
            if (!coord_trained(u.trained, l, bias, i)) continue;
            const double w = static_cast<double>(u.n_k);
            const double v = coord_value(u.params, l, bias, i);
            if (trainers == 0) first = v;
            else if (v != first) all_equal = false;
            num += w * v;
            den += w;
            ++trainers;
        }
        if (trainers < 2) return;  // sigma defined as exactly 0
        // A constant has zero spread even when the weighted mean of its
        // copies rounds an ulp away from it.
        if (all_equal) return;
        const double mu = num / den;
        double m2 = 0.0;
        for (std::size_t k : order) {
            const ClientUpdate& u = updates[k];
            if (!coord_trained(u.trained, l, bias, i)) continue;
            const double d = coord_value(u.params, l, bias, i) - mu;
            m2 += static_cast<double>(u.n_k) * d * d;
        }
        set_coord(out, l, bias, i, std::sqrt(m2 / den));
    });
    return out;
}

Parameters clt_aggregate(const std::vector<ClientUpdate>& updates,
                         const Parameters& previous,
                         const AggregationConfig& config) {
    if (config.mode != AggregationMode::kClt) {
        throw ConfigError("clt_aggregate called with a non-clt config");
    }
    if (config.round < 1) throw ConfigError("round index must be >= 1");

    const Parameters mu = weighted_mean(updates, previous);
    const Parameters sigma = weighted_stdev(updates);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.round));

    Rng rng(mix_seed(config.rng_seed, Stream::kCltSample,
                     static_cast<std::uint64_t>(config.round)));
    Parameters out = mu;
    for_each_coordinate(mu, [&](int l, bool bias, std::size_t i) {
        const double s = coord_value(sigma, l, bias, i) * scale;
        if (s == 0.0) return;  // degenerate Normal: keep mu exactly, no draw
        set_coord(out, l, bias, i,
                  coord_value(mu, l, bias, i) + s * rng.normal());
    });
    return out;
}

Parameters fedavg_equivalence_form(const Parameters& global_before,
                                   const std::vector<ClientUpdate>& updates,
                                   double lr) {
    const std::vector<std::size_t> order = checked_order(updates);
    if (!global_before.same_layout(updates.front().params)) {
        throw InputError("previous parameters do not match the update layout");
    }
    if (lr == 0.0) return global_before;  // zero step, nothing to reconstruct

    // H_k = (before - after) / lr, combined step = lr * sum(n_k H_k) / n_t
    Parameters h_sum = zeros_like(global_before);
    double n_t = 0.0;
    for (std::size_t k : order) {
        const ClientUpdate& u = updates[k];
        Parameters h = global_before;
        add_scaled(h, u.params, -1.0);
        for (auto& [l, lp] : h.layers) {
            for (double& v : lp.weight.data) v /= lr;
            for (double& v : lp.bias.data) v /= lr;
        }
        add_scaled(h_sum, h, static_cast<double>(u.n_k));
        n_t += static_cast<double>(u.n_k);
    }
    Parameters out = global_before;
    add_scaled(out, h_sum, -lr / n_t);
    return out;
}

}  // namespace fedprune
