#include "fedprune/model.hpp"

#include <cmath>
#include <string>

#include "fedprune/errors.hpp"
#include "fedprune/rng.hpp"

namespace fedprune {

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

}  // namespace

bool is_parameterized(const LayerDesc& layer) {
    return std::holds_alternative<Dense>(layer) ||
           std::holds_alternative<Conv2D>(layer);
}

ShapeTrace infer_shapes(const ModelSpec& spec) {
    if (spec.layers.empty()) throw ConfigError("model has no layers");
    if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3) {
        throw ConfigError("input shape must be (features) or (channels, h, w)");
    }
    for (std::size_t d : spec.input_shape) {
        if (d == 0) throw ConfigError("input dimensions must be positive");
    }

    ShapeTrace trace;
    std::vector<std::size_t> cur = spec.input_shape;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        trace.in.push_back(cur);
        const LayerDesc& layer = spec.layers[l];
        if (const auto* d = std::get_if<Dense>(&layer)) {
            if (d->in_units == 0 || d->out_units == 0) {
                throw ConfigError("dense layer units must be positive");
            }
            if (cur.size() != 1 || cur[0] != d->in_units) {
                throw ConfigError("layer " + std::to_string(l) + ": dense expects (" +
                                  std::to_string(d->in_units) + ") but got " +
                                  shape_str(cur));
            }
            cur = {d->out_units};
        } else if (const auto* c = std::get_if<Conv2D>(&layer)) {
            if (c->in_channels == 0 || c->out_channels == 0 || c->kernel_h == 0 ||
                c->kernel_w == 0 || c->stride == 0) {
                throw ConfigError("conv layer dimensions must be positive");
            }
            if (cur.size() != 3 || cur[0] != c->in_channels) {
                throw ConfigError("layer " + std::to_string(l) +
                                  ": conv expects " + std::to_string(c->in_channels) +
                                  " input channels but got " + shape_str(cur));
            }
            const std::size_t h = cur[1] + 2 * c->padding;
            const std::size_t w = cur[2] + 2 * c->padding;
            if (h < c->kernel_h || w < c->kernel_w) {
                throw ConfigError("layer " + std::to_string(l) +
                                  ": kernel larger than padded input");
            }
            cur = {c->out_channels, (h - c->kernel_h) / c->stride + 1,
                   (w - c->kernel_w) / c->stride + 1};
        } else if (std::holds_alternative<MaxPool2D>(layer)) {
            if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
                throw ConfigError("layer " + std::to_string(l) +
                                  ": maxpool needs a (c, h>=2, w>=2) input, got " +
                                  shape_str(cur));
            }
            cur = {cur[0], cur[1] / 2, cur[2] / 2};
        } else if (std::holds_alternative<ReLU>(layer)) {
            // shape preserved
        } else if (std::holds_alternative<Flatten>(layer)) {
            cur = {shape_size(cur)};
        } else if (const auto* head = std::get_if<SoftmaxCrossEntropyHead>(&layer)) {
            if (cur.size() != 1 || cur[0] != head->classes) {
                throw ConfigError("layer " + std::to_string(l) + ": head expects (" +
                                  std::to_string(head->classes) + ") logits, got " +
                                  shape_str(cur));
            }
            if (l + 1 != spec.layers.size()) {
                throw ConfigError("head must be the last layer");
            }
        }
        trace.out.push_back(cur);
    }

    std::size_t heads = 0;
    for (const auto& layer : spec.layers) {
        if (std::holds_alternative<SoftmaxCrossEntropyHead>(layer)) ++heads;
    }
    if (heads != 1) throw ConfigError("model must have exactly one head");
    return trace;
}

void validate_spec(const ModelSpec& spec) { infer_shapes(spec); }

std::size_t num_classes(const ModelSpec& spec) {
    for (const auto& layer : spec.layers) {
        if (const auto* head = std::get_if<SoftmaxCrossEntropyHead>(&layer)) {
            return head->classes;
        }
    }
    throw ConfigError("model has no head");
}

std::vector<int> parameterized_layers(const ModelSpec& spec) {
    std::vector<int> out;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (is_parameterized(spec.layers[l])) out.push_back(static_cast<int>(l));
    }
    return out;
}

std::vector<int> hidden_parameterized_layers(const ModelSpec& spec) {
    std::vector<int> out = parameterized_layers(spec);
    if (!out.empty()) out.pop_back();
    return out;
}

bool Parameters::same_layout(const Parameters& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (auto it = layers.begin(), jt = other.layers.begin(); it != layers.end();
         ++it, ++jt) {
        if (it->first != jt->first) return false;
        if (it->second.weight.shape != jt->second.weight.shape) return false;
        if (it->second.bias.shape != jt->second.bias.shape) return false;
    }
    return true;
}

Parameters zero_params(const ModelSpec& spec) {
    validate_spec(spec);
    Parameters params;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (const auto* d = std::get_if<Dense>(&spec.layers[l])) {
            params.layers[static_cast<int>(l)] = {
                Tensor({d->out_units, d->in_units}), Tensor({d->out_units})};
        } else if (const auto* c = std::get_if<Conv2D>(&spec.layers[l])) {
            params.layers[static_cast<int>(l)] = {
                Tensor({c->out_channels, c->in_channels, c->kernel_h, c->kernel_w}),
                Tensor({c->out_channels})};
        }
    }
    return params;
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
    Parameters params = zero_params(spec);
    Rng rng(mix_seed(seed, Stream::kInit));
    for (auto& [l, lp] : params.layers) {
        std::size_t fan_in, fan_out;
        if (const auto* d = std::get_if<Dense>(&spec.layers[static_cast<std::size_t>(l)])) {
            fan_in = d->in_units;
            fan_out = d->out_units;
        } else {
            const auto& c = std::get<Conv2D>(spec.layers[static_cast<std::size_t>(l)]);
            fan_in = c.in_channels * c.kernel_h * c.kernel_w;
            fan_out = c.out_channels * c.kernel_h * c.kernel_w;
        }
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& w : lp.weight.data) w = rng.uniform(-bound, bound);
        // biases stay zero
    }
    return params;
}

std::size_t parameter_count(const Parameters& params) {
    std::size_t n = 0;
    for (const auto& [l, lp] : params.layers) {
        n += lp.weight.size() + lp.bias.size();
    }
    return n;
}

void add_scaled(Parameters& out, const Parameters& other, double scale) {
    if (!out.same_layout(other)) throw InputError("parameter layouts differ");
    for (auto& [l, lp] : out.layers) {
        const LayerParams& op = other.layers.at(l);
        for (std::size_t i = 0; i < lp.weight.size(); ++i) {
            lp.weight.data[i] += scale * op.weight.data[i];
        }
        for (std::size_t i = 0; i < lp.bias.size(); ++i) {
            lp.bias.data[i] += scale * op.bias.data[i];
        }
    }
}

ParamMask ParamMask::all_true(const Parameters& params) {
    ParamMask mask;
    for (const auto& [l, lp] : params.layers) {
        mask.layers[l] = {std::vector<std::uint8_t>(lp.weight.size(), 1),
                          std::vector<std::uint8_t>(lp.bias.size(), 1)};
    }
    return mask;
}

ModelSpec make_mlp(std::size_t features, const std::vector<std::size_t>& hidden,
                   std::size_t classes) {
    ModelSpec spec;
    spec.input_shape = {features};
    std::size_t in = features;
    for (std::size_t width : hidden) {
        spec.layers.push_back(Dense{in, width});
        spec.layers.push_back(ReLU{});
        in = width;
    }
    spec.layers.push_back(Dense{in, classes});
    spec.layers.push_back(SoftmaxCrossEntropyHead{classes});
    return spec;
}

ModelSpec make_small_cnn(std::size_t channels, std::size_t height,
                         std::size_t width, std::size_t classes) {
    ModelSpec spec;
    spec.input_shape = {channels, height, width};
    spec.layers.push_back(Conv2D{channels, 8, 3, 3, 1, 1});
    spec.layers.push_back(ReLU{});
    spec.layers.push_back(MaxPool2D{});
    spec.layers.push_back(Conv2D{8, 16, 3, 3, 1, 1});
    spec.layers.push_back(ReLU{});
    spec.layers.push_back(MaxPool2D{});
    spec.layers.push_back(Flatten{});
    const std::size_t flat = 16 * (height / 4) * (width / 4);
    spec.layers.push_back(Dense{flat, 32});
    spec.layers.push_back(ReLU{});
    spec.layers.push_back(Dense{32, classes});
    spec.layers.push_back(SoftmaxCrossEntropyHead{classes});
    return spec;
}

ModelSpec make_reference_cnn(std::size_t classes) {
    ModelSpec spec;
    spec.input_shape = {1, 28, 28};
    spec.layers.push_back(Conv2D{1, 32, 5, 5, 1, 2});
    spec.layers.push_back(ReLU{});
    spec.layers.push_back(MaxPool2D{});
    spec.layers.push_back(Conv2D{32, 64, 5, 5, 1, 2});
    spec.layers.push_back(ReLU{});
    spec.layers.push_back(MaxPool2D{});
    spec.layers.push_back(Flatten{});
    spec.layers.push_back(Dense{64 * 7 * 7, 2048});
    spec.layers.push_back(ReLU{});
    spec.layers.push_back(Dense{2048, classes});
    spec.layers.push_back(SoftmaxCrossEntropyHead{classes});
    return spec;
}

}  // namespace fedprune
