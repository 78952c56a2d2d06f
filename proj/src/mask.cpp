#include "fedprune/mask.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "fedprune/errors.hpp"
#include "fedprune/rng.hpp"

namespace fedprune {

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> out(n);
    std::iota(out.begin(), out.end(), 0);
    return out;
}

void check_params_layout(const ModelSpec& spec, const Parameters& params) {
    if (!params.same_layout(zero_params(spec))) {
        throw InputError("parameters do not match the model layout");
    }
}

}  // namespace

std::vector<int> prunable_layers(const ModelSpec& spec) {
    return hidden_parameterized_layers(spec);
}

std::size_t keep_count(std::size_t width, double drop_rate) {
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) {
        throw ConfigError("drop rate must lie in [0, 1)");
    }
    auto dropped = static_cast<std::size_t>(
        std::floor(drop_rate * static_cast<double>(width) + 1e-9));
    dropped = std::min(dropped, width - 1);  // at least one unit survives
    return width - dropped;
}

std::size_t prunable_width(const ModelSpec& spec, int layer) {
    const auto& desc = spec.layers.at(static_cast<std::size_t>(layer));
    if (const auto* d = std::get_if<Dense>(&desc)) return d->out_units;
    if (const auto* c = std::get_if<Conv2D>(&desc)) return c->out_channels;
    throw ConfigError("layer " + std::to_string(layer) + " has no units to prune");
}

Mask identity_mask(const ModelSpec& spec) {
    Mask mask;
    for (int l : prunable_layers(spec)) {
        mask.kept[l] = all_indices(prunable_width(spec, l));
    }
    return mask;
}

Mask random_mask(const ModelSpec& spec, double drop_rate,
                 std::uint64_t rng_seed) {
    validate_spec(spec);
    Rng rng(mix_seed(rng_seed, Stream::kMask));
    Mask mask;
    for (int l : prunable_layers(spec)) {
        const std::size_t width = prunable_width(spec, l);
        const std::size_t keep = keep_count(width, drop_rate);
        const std::vector<int> picked = rng.sample_without_replacement(
            static_cast<int>(width), static_cast<int>(keep));
        std::vector<std::size_t> kept(picked.begin(), picked.end());
        mask.kept[l] = std::move(kept);
    }
    return mask;
}

void validate_mask(const ModelSpec& spec, const Mask& mask) {
    const std::vector<int> prunable = prunable_layers(spec);
    if (mask.kept.size() != prunable.size()) {
        throw InputError("mask must cover every prunable layer");
    }
    for (int l : prunable) {
        const auto it = mask.kept.find(l);
        if (it == mask.kept.end()) {
            throw InputError("mask is missing prunable layer " + std::to_string(l));
        }
        const std::vector<std::size_t>& kept = it->second;
        if (kept.empty()) {
            throw InputError("mask keeps no units in layer " + std::to_string(l));
        }
        const std::size_t width = prunable_width(spec, l);
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (kept[i] >= width) {
                throw InputError("mask index " + std::to_string(kept[i]) +
                                 " exceeds layer " + std::to_string(l) + " width " +
                                 std::to_string(width));
            }
            if (i > 0 && kept[i] <= kept[i - 1]) {
                throw InputError("mask indices for layer " + std::to_string(l) +
                                 " must be strictly ascending");
            }
        }
    }
}

IndexMaps mask_index_maps(const ModelSpec& spec, const Mask& mask) {
    validate_mask(spec, mask);
    const ShapeTrace trace = infer_shapes(spec);
    const std::set<int> prunable_set = [&] {
        const auto v = prunable_layers(spec);
        return std::set<int>(v.begin(), v.end());
    }();

    IndexMaps maps;
    std::vector<std::size_t> prev_kept;
    int prev_l = -1;
    for (int l : parameterized_layers(spec)) {
        const auto li = static_cast<std::size_t>(l);
        const LayerDesc& layer = spec.layers[li];

        std::vector<std::size_t> cols;
        if (prev_l < 0) {
            cols = all_indices(std::holds_alternative<Dense>(layer)
                                   ? std::get<Dense>(layer).in_units
                                   : std::get<Conv2D>(layer).in_channels);
        } else if (std::holds_alternative<Dense>(layer) &&
                   std::holds_alternative<Conv2D>(
                       spec.layers[static_cast<std::size_t>(prev_l)])) {
            // conv feed crossing a Flatten: each kept channel owns a
            // contiguous block of spatial positions
            std::size_t spatial = 0;
            for (int m = prev_l + 1; m < l; ++m) {
                if (std::holds_alternative<Flatten>(
                        spec.layers[static_cast<std::size_t>(m)])) {
                    const auto& in = trace.in[static_cast<std::size_t>(m)];
                    spatial = in[1] * in[2];
                }
            }
            if (spatial == 0) {
                throw ConfigError("conv feeds a dense layer without a flatten");
            }
            cols.reserve(prev_kept.size() * spatial);
            for (std::size_t ch : prev_kept) {
                for (std::size_t s = 0; s < spatial; ++s) {
                    cols.push_back(ch * spatial + s);
                }
            }
        } else {
            cols = prev_kept;
        }

        std::vector<std::size_t> rows =
            prunable_set.count(l) ? mask.kept.at(l)
                                  : all_indices(prunable_width(spec, l));
        maps.cols[l] = std::move(cols);
        maps.rows[l] = rows;
        prev_kept = std::move(rows);
        prev_l = l;
    }
    return maps;
}

SubModel extract_submodel(const ModelSpec& spec, const Parameters& params,
                          const Mask& mask) {
    check_params_layout(spec, params);
    const IndexMaps maps = mask_index_maps(spec, mask);

    SubModel sub;
    sub.spec = spec;
    for (const auto& [l, rows] : maps.rows) {
        const auto& cols = maps.cols.at(l);
        auto& desc = sub.spec.layers[static_cast<std::size_t>(l)];
        if (const auto* d = std::get_if<Dense>(&desc)) {
            desc = Dense{cols.size(), rows.size()};
            (void)d;
        } else {
            const auto& c = std::get<Conv2D>(desc);
            desc = Conv2D{cols.size(), rows.size(), c.kernel_h, c.kernel_w,
                          c.stride, c.padding};
        }
    }
    validate_spec(sub.spec);

    for (const auto& [l, rows] : maps.rows) {
        const auto& cols = maps.cols.at(l);
        const LayerParams& lp = params.layers.at(l);
        LayerParams out;
        if (lp.weight.rank() == 2) {
            out.weight = Tensor({rows.size(), cols.size()});
            for (std::size_t r = 0; r < rows.size(); ++r) {
                for (std::size_t c = 0; c < cols.size(); ++c) {
                    out.weight.at(r, c) = lp.weight.at(rows[r], cols[c]);
                }
            }
        } else {
            const std::size_t in_c = lp.weight.shape[1];
            const std::size_t k = lp.weight.shape[2] * lp.weight.shape[3];
            out.weight =
                Tensor({rows.size(), cols.size(), lp.weight.shape[2],
                        lp.weight.shape[3]});
            for (std::size_t r = 0; r < rows.size(); ++r) {
                for (std::size_t c = 0; c < cols.size(); ++c) {
                    const double* src = &lp.weight.data[(rows[r] * in_c + cols[c]) * k];
                    double* dst = &out.weight.data[(r * cols.size() + c) * k];
                    std::copy(src, src + k, dst);
                }
            }
        }
        out.bias = Tensor({rows.size()});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            out.bias.data[r] = lp.bias.data[rows[r]];
        }
        sub.params.layers[l] = std::move(out);
    }
    return sub;
}

Parameters broadcast_submodel(const ModelSpec& spec,
                              const Parameters& global_params,
                              const Parameters& sub_params, const Mask& mask) {
    check_params_layout(spec, global_params);
    const IndexMaps maps = mask_index_maps(spec, mask);

    if (sub_params.layers.size() != global_params.layers.size()) {
        throw InputError("sub-model parameter layers do not match the model");
    }
    Parameters out = global_params;
    for (const auto& [l, rows] : maps.rows) {
        const auto& cols = maps.cols.at(l);
        const auto it = sub_params.layers.find(l);
        if (it == sub_params.layers.end()) {
            throw InputError("sub-model parameters missing layer " +
                             std::to_string(l));
        }
        const LayerParams& sp = it->second;
        LayerParams& gp = out.layers.at(l);
        if (gp.weight.rank() == 2) {
            if (sp.weight.shape != std::vector<std::size_t>{rows.size(), cols.size()}) {
                throw InputError("sub-model weights do not match the mask at layer " +
                                 std::to_string(l));
            }
            for (std::size_t r = 0; r < rows.size(); ++r) {
                for (std::size_t c = 0; c < cols.size(); ++c) {
                    gp.weight.at(rows[r], cols[c]) = sp.weight.at(r, c);
                }
            }
        } else {
            const std::size_t kh = gp.weight.shape[2], kw = gp.weight.shape[3];
            if (sp.weight.shape !=
                std::vector<std::size_t>{rows.size(), cols.size(), kh, kw}) {
                throw InputError("sub-model weights do not match the mask at layer " +
                                 std::to_string(l));
            }
            const std::size_t in_c = gp.weight.shape[1];
            const std::size_t k = kh * kw;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                for (std::size_t c = 0; c < cols.size(); ++c) {
                    const double* src = &sp.weight.data[(r * cols.size() + c) * k];
                    double* dst = &gp.weight.data[(rows[r] * in_c + cols[c]) * k];
                    std::copy(src, src + k, dst);
                }
            }
        }
        if (sp.bias.shape != std::vector<std::size_t>{rows.size()}) {
            throw InputError("sub-model biases do not match the mask at layer " +
                             std::to_string(l));
        }
        for (std::size_t r = 0; r < rows.size(); ++r) {
            gp.bias.data[rows[r]] = sp.bias.data[r];
        }
    }
    return out;
}

ParamMask trained_coordinates(const ModelSpec& spec, const Mask& mask) {
    const IndexMaps maps = mask_index_maps(spec, mask);
    const Parameters layout = zero_params(spec);
    ParamMask pm;
    for (const auto& [l, lp] : layout.layers) {
        LayerFlags flags{std::vector<std::uint8_t>(lp.weight.size(), 0),
                         std::vector<std::uint8_t>(lp.bias.size(), 0)};
        const auto& rows = maps.rows.at(l);
        const auto& cols = maps.cols.at(l);
        if (lp.weight.rank() == 2) {
            const std::size_t in = lp.weight.shape[1];
            for (std::size_t r : rows) {
                for (std::size_t c : cols) flags.weight[r * in + c] = 1;
            }
        } else {
            const std::size_t in_c = lp.weight.shape[1];
            const std::size_t k = lp.weight.shape[2] * lp.weight.shape[3];
            for (std::size_t r : rows) {
                for (std::size_t c : cols) {
                    std::fill_n(flags.weight.begin() +
                                    static_cast<std::ptrdiff_t>((r * in_c + c) * k),
                                k, std::uint8_t{1});
                }
            }
        }
        for (std::size_t r : rows) flags.bias[r] = 1;
        pm.layers[l] = std::move(flags);
    }
    return pm;
}

double filter_l1(const Tensor& conv_weight, std::size_t filter) {
    if (conv_weight.rank() != 4) {
        throw InputError("filter l1 norm needs a 4-d conv weight tensor");
    }
    if (filter >= conv_weight.shape[0]) {
        throw InputError("filter index out of range");
    }
    const std::size_t stride =
        conv_weight.shape[1] * conv_weight.shape[2] * conv_weight.shape[3];
    const double* slice = &conv_weight.data[filter * stride];
    double sum = 0.0;
    for (std::size_t i = 0; i < stride; ++i) sum += std::abs(slice[i]);
    return sum;
}

UnitStats UnitStats::zero(const ModelSpec& spec) {
    UnitStats stats;
    for (int l : prunable_layers(spec)) {
        stats.layers[l] = std::vector<UnitAcc>(prunable_width(spec, l));
    }
    return stats;
}

StatReports make_stat_reports(
    const ModelSpec& spec, const Mask& mask, const Parameters& trained_params,
    const std::map<int, std::vector<double>>& mean_abs_activations) {
    const IndexMaps maps = mask_index_maps(spec, mask);
    StatReports out;
    for (int l : prunable_layers(spec)) {
        const std::vector<std::size_t>& kept = mask.kept.at(l);
        if (std::holds_alternative<Dense>(spec.layers[static_cast<std::size_t>(l)])) {
            const auto it = mean_abs_activations.find(l);
            if (it == mean_abs_activations.end() ||
                it->second.size() != kept.size()) {
                throw InputError("activation vector does not match the mask at layer " +
                                 std::to_string(l));
            }
            auto& entries = out.dense[l];
            for (std::size_t i = 0; i < kept.size(); ++i) {
                entries.emplace_back(kept[i], it->second[i]);
            }
        } else {
            const auto it = trained_params.layers.find(l);
            if (it == trained_params.layers.end() ||
                it->second.weight.shape[0] != kept.size()) {
                throw InputError("trained weights do not match the mask at layer " +
                                 std::to_string(l));
            }
            auto& entries = out.conv[l];
            for (std::size_t i = 0; i < kept.size(); ++i) {
                entries.emplace_back(kept[i], filter_l1(it->second.weight, i));
            }
        }
    }
    return out;
}

UnitStats accumulate_stats(const UnitStats& stats, Speed client_speed,
                           const StatReport& dense_activations,
                           const StatReport& conv_filter_l1) {
    UnitStats out = stats;
    const auto add = [&](const StatReport& report) {
        for (const auto& [l, entries] : report) {
            const auto it = out.layers.find(l);
            if (it == out.layers.end()) {
                throw InputError("stat report names non-prunable layer " +
                                 std::to_string(l));
            }
            for (const auto& [unit, value] : entries) {
                if (unit >= it->second.size()) {
                    throw InputError("stat report unit " + std::to_string(unit) +
                                     " out of range in layer " + std::to_string(l));
                }
                if (!std::isfinite(value)) {
                    throw InputError("stat report value not finite in layer " +
                                     std::to_string(l));
                }
                UnitAcc& acc = it->second[unit];
                if (client_speed == Speed::kSlow) {
                    acc.slow_sum += value;
                    acc.slow_count += 1.0;
                } else {
                    acc.fast_sum += value;
                    acc.fast_count += 1.0;
                }
            }
        }
    };
    for (const auto& [l, entries] : dense_activations) {
        if (conv_filter_l1.count(l)) {
            throw InputError("layer " + std::to_string(l) +
                             " reported as both dense and conv");
        }
    }
    add(dense_activations);
    add(conv_filter_l1);
    return out;
}

std::map<int, std::vector<double>> blended_scores(const UnitStats& stats) {
    std::map<int, std::vector<double>> scores;
    for (const auto& [l, units] : stats.layers) {
        std::vector<double> s(units.size(), 0.0);
        for (std::size_t u = 0; u < units.size(); ++u) {
            const UnitAcc& a = units[u];
            if (a.slow_count > 0.0 && a.fast_count > 0.0) {
                s[u] = 0.5 * (a.slow_sum / a.slow_count) +
                       0.5 * (a.fast_sum / a.fast_count);
            } else if (a.slow_count > 0.0) {
                s[u] = a.slow_sum / a.slow_count;
            } else if (a.fast_count > 0.0) {
                s[u] = a.fast_sum / a.fast_count;
            }
            // never trained anywhere: score stays 0, dropped first
        }
        scores[l] = std::move(s);
    }
    return scores;
}

Mask update_mask(const UnitStats& stats, const ModelSpec& spec,
                 double drop_rate) {
    const std::map<int, std::vector<double>> scores = blended_scores(stats);
    Mask mask;
    for (int l : prunable_layers(spec)) {
        const std::size_t width = prunable_width(spec, l);
        const auto it = scores.find(l);
        if (it == scores.end() || it->second.size() != width) {
            throw InputError("stats do not cover prunable layer " +
                             std::to_string(l));
        }
        const std::vector<double>& s = it->second;
        std::vector<std::size_t> order = [&] {
            std::vector<std::size_t> o(width);
            std::iota(o.begin(), o.end(), 0);
            return o;
        }();
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) {
                      if (s[a] != s[b]) return s[a] > s[b];
                      return a < b;
                  });
        order.resize(keep_count(width, drop_rate));
        std::sort(order.begin(), order.end());
        mask.kept[l] = std::move(order);
    }
    return mask;
}

boost::multiprecision::cpp_int count_submodels_lower_bound(
    const std::vector<std::size_t>& hidden_widths, double drop_rate) {
    const auto binom = [](std::size_t n, std::size_t m) {
        m = std::min(m, n - m);
        boost::multiprecision::cpp_int r = 1;
        for (std::size_t i = 1; i <= m; ++i) {
            r *= static_cast<unsigned long long>(n - m + i);
            r /= static_cast<unsigned long long>(i);  // exact at every step
        }
        return r;
    };
    boost::multiprecision::cpp_int total = 1;
    for (std::size_t w : hidden_widths) {
        if (w == 0) throw ConfigError("hidden widths must be positive");
        total *= binom(w, w - keep_count(w, drop_rate));
    }
    return total;
}

nlohmann::json mask_to_json(const Mask& mask) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [l, kept] : mask.kept) {
        j[std::to_string(l)] = kept;
    }
    return j;
}

Mask mask_from_json(const ModelSpec& spec, const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("mask JSON must be an object");
    Mask mask;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key.empty() ||
            !std::all_of(key.begin(), key.end(),
                         [](unsigned char c) { return std::isdigit(c); })) {
            throw FormatError("mask JSON key is not a layer index: " + key);
        }
        if (!it.value().is_array()) {
            throw FormatError("mask JSON entry for layer " + key +
                              " is not an array");
        }
        std::vector<std::size_t> kept;
        for (const auto& v : it.value()) {
            if (!v.is_number_integer() || v.get<long long>() < 0) {
                throw FormatError("mask JSON index is not a nonnegative integer");
            }
            kept.push_back(static_cast<std::size_t>(v.get<long long>()));
        }
        mask.kept[std::stoi(key)] = std::move(kept);
    }
    validate_mask(spec, mask);
    return mask;
}

std::uint64_t mask_fingerprint(const Mask& mask) {
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (const auto& [l, kept] : mask.kept) {
        mix(static_cast<std::uint64_t>(l));
        mix(kept.size());
        for (std::size_t u : kept) mix(u);
    }
    return h;
}

}  // namespace fedprune
