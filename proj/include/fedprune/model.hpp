#pragma once

#include <cstdint>
#include <map>
#include <variant>
#include <vector>

#include "fedprune/tensor.hpp"

namespace fedprune {

struct Dense {
    std::size_t in_units;
    std::size_t out_units;
};

struct Conv2D {
    std::size_t in_channels;
    std::size_t out_channels;
    std::size_t kernel_h;
    std::size_t kernel_w;
    std::size_t stride = 1;
    std::size_t padding = 0;
};

// Fixed 2x2 window, stride 2.
struct MaxPool2D {};

struct ReLU {};

struct Flatten {};

struct SoftmaxCrossEntropyHead {
    std::size_t classes;
};

using LayerDesc = std::variant<Dense, Conv2D, MaxPool2D, ReLU, Flatten,
                               SoftmaxCrossEntropyHead>;

// Architecture description. input_shape is either {features} for flat inputs
// or {channels, height, width} for images; layer shapes are derived from it.
struct ModelSpec {
    std::vector<std::size_t> input_shape;
    std::vector<LayerDesc> layers;
};

// Per-layer input/output shapes obtained by walking the spec.
struct ShapeTrace {
    std::vector<std::vector<std::size_t>> in;
    std::vector<std::vector<std::size_t>> out;
};

// Throws ConfigError when adjacent layers do not compose or the head is
// missing, duplicated, or not last.
ShapeTrace infer_shapes(const ModelSpec& spec);
void validate_spec(const ModelSpec& spec);

bool is_parameterized(const LayerDesc& layer);
std::size_t num_classes(const ModelSpec& spec);

// Indices of parameterized layers, ascending.
std::vector<int> parameterized_layers(const ModelSpec& spec);

// Parameterized layers except the last one (which produces the logits). These
// are the layers whose units can be pruned and whose activations are tracked.
std::vector<int> hidden_parameterized_layers(const ModelSpec& spec);

struct LayerParams {
    Tensor weight;  // Dense: {out, in}; Conv2D: {out_c, in_c, kh, kw}
    Tensor bias;    // {out} / {out_c}
};

// Weights and biases keyed by layer index in the spec.
struct Parameters {
    std::map<int, LayerParams> layers;

    bool same_layout(const Parameters& other) const;
};

// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases, seeded.
Parameters init_params(const ModelSpec& spec, std::uint64_t seed);

// Zero tensors in the exact layout the spec requires.
Parameters zero_params(const ModelSpec& spec);

std::size_t parameter_count(const Parameters& params);

// out += scale * other, elementwise; layouts must match.
void add_scaled(Parameters& out, const Parameters& other, double scale);

// Per-coordinate boolean flags mirroring a Parameters layout. Used to mark
// which coordinates a client actually trained.
struct LayerFlags {
    std::vector<std::uint8_t> weight;
    std::vector<std::uint8_t> bias;
};

struct ParamMask {
    std::map<int, LayerFlags> layers;

    static ParamMask all_true(const Parameters& params);
};

// Convenience spec builders used by the CLI and tests.
ModelSpec make_mlp(std::size_t features, const std::vector<std::size_t>& hidden,
                   std::size_t classes);
ModelSpec make_small_cnn(std::size_t channels, std::size_t height,
                         std::size_t width, std::size_t classes);
// 5x5 conv layers with 32/64 filters (padding 2, each followed by 2x2
// pooling), a 2048-unit dense layer, and a class head; 6.6M parameters at 62
// classes. Used for the analytic FLOP accounting.
ModelSpec make_reference_cnn(std::size_t classes);

}  // namespace fedprune
