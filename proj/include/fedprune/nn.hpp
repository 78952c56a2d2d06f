#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "fedprune/data.hpp"
#include "fedprune/model.hpp"

namespace fedprune {

struct Batch {
    Tensor inputs;  // {batch, ...input_shape}
    std::vector<int> labels;
};

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& idx);
Batch full_batch(const Dataset& dataset);

struct ForwardResult {
    double loss = 0.0;
    // Post-nonlinearity outputs of the hidden Dense/Conv layers, keyed by
    // layer index (the ReLU output when a ReLU immediately follows the layer,
    // the raw layer output otherwise). Batch is the leading dimension.
    std::map<int, Tensor> activations;
    Tensor logits;  // {batch, classes}
};

// Mean softmax cross-entropy over the batch plus the hidden activations.
ForwardResult forward(const ModelSpec& spec, const Parameters& params,
                      const Batch& batch);

// Exact analytic gradients of the mean batch loss for every weight and bias.
Parameters backward(const ModelSpec& spec, const Parameters& params,
                    const Batch& batch);

// params - lr * gradients, elementwise.
Parameters sgd_step(const Parameters& params, const Parameters& gradients,
                    double lr);

struct TrainResult {
    Parameters params;
    // Mean of |post-activation| per hidden unit over every forward pass of
    // training. Dense layers: one entry per neuron; conv layers: one entry
    // per filter, averaged over spatial positions.
    std::map<int, std::vector<double>> mean_abs_activations;
    double final_epoch_loss = 0.0;
};

// epochs x ceil(n/batch_size) SGD steps over seeded-shuffled minibatches.
// Within each minibatch, samples are visited in ascending dataset order, so
// epochs=1 with batch_size=n reproduces one full-batch step exactly.
TrainResult local_train(const ModelSpec& spec, const Parameters& params,
                        const Dataset& dataset, int epochs, int batch_size,
                        double lr, std::uint64_t rng_seed);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// Argmax prediction with ties broken toward the lowest class index.
EvalResult evaluate(const ModelSpec& spec, const Parameters& params,
                    const Dataset& dataset);

// Multiply-accumulate count for one forward pass of one sample:
// Dense = in*out, Conv2D = out_positions * out_c * in_c * kh * kw.
long long count_flops(const ModelSpec& spec);

}  // namespace fedprune
