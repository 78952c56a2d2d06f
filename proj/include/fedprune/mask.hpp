#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "fedprune/model.hpp"

namespace fedprune {

enum class Speed { kFast, kSlow };

// Kept unit indices per prunable layer (hidden Dense layers: neurons, Conv
// layers: filters), sorted ascending. The input dimensions and the output
// head are never masked.
struct Mask {
    std::map<int, std::vector<std::size_t>> kept;

    bool operator==(const Mask& other) const { return kept == other.kept; }
    bool operator!=(const Mask& other) const { return !(*this == other); }
};

// Layers whose output units may be dropped: every parameterized layer except
// the last (the head producer keeps its class count).
std::vector<int> prunable_layers(const ModelSpec& spec);

// Units surviving a drop rate: width - floor(k * width). The epsilon guards
// against k * width landing just below an integer (0.3 * 10 != 3 in doubles).
std::size_t keep_count(std::size_t width, double drop_rate);

std::size_t prunable_width(const ModelSpec& spec, int layer);

Mask identity_mask(const ModelSpec& spec);

// Uniform random subset of keep_count(width, k) units per prunable layer.
Mask random_mask(const ModelSpec& spec, double drop_rate, std::uint64_t rng_seed);

// Throws InputError unless the mask covers exactly the prunable layers with
// sorted, unique, in-range, nonempty index lists.
void validate_mask(const ModelSpec& spec, const Mask& mask);

// Kept row (output-unit) and column (input-unit) indices per parameterized
// layer under a mask. Columns follow from the previous parameterized layer's
// kept units; a conv-to-dense transition expands each kept channel to all of
// its spatial positions.
struct IndexMaps {
    std::map<int, std::vector<std::size_t>> rows;
    std::map<int, std::vector<std::size_t>> cols;
};

IndexMaps mask_index_maps(const ModelSpec& spec, const Mask& mask);

struct SubModel {
    ModelSpec spec;
    Parameters params;
};

// Gather of kept rows, columns, and filter slices into a narrower model.
SubModel extract_submodel(const ModelSpec& spec, const Parameters& params,
                          const Mask& mask);

// Scatter of sub-model weights back onto their global coordinates; every
// coordinate outside the mask keeps its global value.
Parameters broadcast_submodel(const ModelSpec& spec,
                              const Parameters& global_params,
                              const Parameters& sub_params, const Mask& mask);

// Flags of the coordinates a sub-model trainer actually updates: kept-row x
// kept-column weight entries and kept-row biases.
ParamMask trained_coordinates(const ModelSpec& spec, const Mask& mask);

// l1 norm of one conv filter's weight slice.
double filter_l1(const Tensor& conv_weight, std::size_t filter);

// Per-unit running sums split by reporting group. Dense units accumulate
// mean-abs activations, conv units accumulate filter l1 norms.
struct UnitAcc {
    double slow_sum = 0.0;
    double slow_count = 0.0;
    double fast_sum = 0.0;
    double fast_count = 0.0;
};

struct UnitStats {
    std::map<int, std::vector<UnitAcc>> layers;

    static UnitStats zero(const ModelSpec& spec);
};

// One client's contribution: per layer, (global unit index, value) pairs.
// Slow clients list only the units inside their mask.
using StatReport = std::map<int, std::vector<std::pair<std::size_t, double>>>;

struct StatReports {
    StatReport dense;  // mean-abs activation per kept neuron
    StatReport conv;   // l1 weight norm per kept filter
};

// Builds a client's report from its trained model. trained_params and
// mean_abs_activations live in the sub-model coordinates defined by the mask
// (the identity mask for fast clients); indices are mapped back to global.
StatReports make_stat_reports(
    const ModelSpec& spec, const Mask& mask, const Parameters& trained_params,
    const std::map<int, std::vector<double>>& mean_abs_activations);

UnitStats accumulate_stats(const UnitStats& stats, Speed client_speed,
                           const StatReport& dense_activations,
                           const StatReport& conv_filter_l1);

// 0.5 * slow mean + 0.5 * fast mean where both groups have samples; the
// nonempty group's mean when only one does; 0 when neither does.
std::map<int, std::vector<double>> blended_scores(const UnitStats& stats);

// Keeps the top keep_count units per prunable layer by blended score, ties
// broken toward the lower index.
Mask update_mask(const UnitStats& stats, const ModelSpec& spec,
                 double drop_rate);

// Product over layers of C(width, floor(k * width)): how many distinct
// sub-models one drop rate can serve.
boost::multiprecision::cpp_int count_submodels_lower_bound(
    const std::vector<std::size_t>& hidden_widths, double drop_rate);

nlohmann::json mask_to_json(const Mask& mask);
Mask mask_from_json(const ModelSpec& spec, const nlohmann::json& j);

// FNV-1a over the (layer, kept indices) stream; stable across runs.
std::uint64_t mask_fingerprint(const Mask& mask);

}  // namespace fedprune
