#include "fedprune/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "fedprune/errors.hpp"
#include "fedprune/rng.hpp"

namespace fedprune {

namespace {

// Per-layer forward state: outputs of every layer plus, for pooling layers,
// the flat source index each output cell was copied from (drives backward).
struct Cache {
    std::vector<Tensor> out;
    std::vector<std::vector<std::size_t>> pool_src;
};

void check_params_layout(const ModelSpec& spec, const Parameters& params) {
    const Parameters expected = zero_params(spec);
    if (!params.same_layout(expected)) {
        throw ConfigError("parameters do not match the model layout");
    }
}

void check_batch(const ModelSpec& spec, const Batch& batch, std::size_t classes) {
    if (batch.labels.empty()) throw InputError("batch is empty");
    std::vector<std::size_t> expect = {batch.labels.size()};
    expect.insert(expect.end(), spec.input_shape.begin(), spec.input_shape.end());
    if (batch.inputs.shape != expect) {
        throw ConfigError("batch inputs do not match the model input shape");
    }
    for (int y : batch.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw InputError("label " + std::to_string(y) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
    }
}

Tensor dense_forward(const Tensor& x, const LayerParams& lp) {
    const std::size_t batch = x.shape[0];
    const std::size_t in = lp.weight.shape[1];
    const std::size_t out = lp.weight.shape[0];
    Tensor y({batch, out});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xr = &x.data[b * in];
        double* yr = &y.data[b * out];
        for (std::size_t o = 0; o < out; ++o) {
            const double* wr = &lp.weight.data[o * in];
            double acc = lp.bias.data[o];
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
    return y;
}

Tensor conv_forward(const Tensor& x, const Conv2D& c, const LayerParams& lp,
                    const std::vector<std::size_t>& out_shape) {
    const std::size_t batch = x.shape[0];
    const std::size_t in_c = x.shape[1];
    const long h = static_cast<long>(x.shape[2]);
    const long w = static_cast<long>(x.shape[3]);
    const std::size_t oc = out_shape[0], oh = out_shape[1], ow = out_shape[2];
    const long pad = static_cast<long>(c.padding);
    const long stride = static_cast<long>(c.stride);
    Tensor y({batch, oc, oh, ow});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t f = 0; f < oc; ++f) {
            const double* wf = &lp.weight.data[f * in_c * c.kernel_h * c.kernel_w];
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t s = 0; s < ow; ++s) {
                    double acc = lp.bias.data[f];
                    for (std::size_t ch = 0; ch < in_c; ++ch) {
                        const double* xc = &x.data[(b * in_c + ch) * h * w];
                        const double* wc = &wf[ch * c.kernel_h * c.kernel_w];
                        for (std::size_t i = 0; i < c.kernel_h; ++i) {
                            const long ih = static_cast<long>(r) * stride +
                                            static_cast<long>(i) - pad;
                            if (ih < 0 || ih >= h) continue;
                            for (std::size_t j = 0; j < c.kernel_w; ++j) {
                                const long iw = static_cast<long>(s) * stride +
                                                static_cast<long>(j) - pad;
                                if (iw < 0 || iw >= w) continue;
                                acc += wc[i * c.kernel_w + j] * xc[ih * w + iw];
                            }
                        }
                    }
                    y.data[((b * oc + f) * oh + r) * ow + s] = acc;
                }
            }
        }
    }
    return y;
}

// Ties keep the first cell in (0,0),(0,1),(1,0),(1,1) window order.
Tensor pool_forward(const Tensor& x, std::vector<std::size_t>& src) {
    const std::size_t batch = x.shape[0], ch = x.shape[1];
    const std::size_t h = x.shape[2], w = x.shape[3];
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor y({batch, ch, oh, ow});
    src.assign(y.size(), 0);
    std::size_t k = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (b * ch + c) * h * w;
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t s = 0; s < ow; ++s) {
                    std::size_t best = base + (2 * r) * w + 2 * s;
                    double best_v = x.data[best];
                    for (int di = 0; di < 2; ++di) {
                        for (int dj = 0; dj < 2; ++dj) {
                            const std::size_t cand =
                                base + (2 * r + di) * w + (2 * s + dj);
                            if (x.data[cand] > best_v) {
                                best_v = x.data[cand];
                                best = cand;
                            }
                        }
                    }
                    y.data[k] = best_v;
                    src[k] = best;
                    ++k;
                }
            }
        }
    }
    return y;
}

// Softmax probabilities (max-shifted) and mean cross-entropy loss.
double softmax_loss(const Tensor& logits, const std::vector<int>& labels,
                    Tensor& probs) {
    const std::size_t batch = logits.shape[0], classes = logits.shape[1];
    probs = Tensor({batch, classes});
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = &logits.data[b * classes];
        double m = row[0];
        for (std::size_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double e = std::exp(row[c] - m);
            probs.data[b * classes + c] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < classes; ++c) probs.data[b * classes + c] /= sum;
        const std::size_t y = static_cast<std::size_t>(labels[b]);
        loss += -(row[y] - m - std::log(sum));
    }
    return loss / static_cast<double>(batch);
}

// Full forward walk. Returns mean loss; fills the cache and the softmax
// probabilities (kept for backward).
double forward_impl(const ModelSpec& spec, const ShapeTrace& trace,
                    const Parameters& params, const Batch& batch, Cache& cache,
                    Tensor& probs) {
    const std::size_t n_layers = spec.layers.size();
    cache.out.resize(n_layers);
    cache.pool_src.assign(n_layers, {});

    const Tensor* cur = &batch.inputs;
    double loss = 0.0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const LayerDesc& layer = spec.layers[l];
        if (std::holds_alternative<Dense>(layer)) {
            cache.out[l] = dense_forward(*cur, params.layers.at(static_cast<int>(l)));
        } else if (const auto* c = std::get_if<Conv2D>(&layer)) {
            cache.out[l] = conv_forward(*cur, *c,
                                        params.layers.at(static_cast<int>(l)),
                                        trace.out[l]);
        } else if (std::holds_alternative<MaxPool2D>(layer)) {
            cache.out[l] = pool_forward(*cur, cache.pool_src[l]);
        } else if (std::holds_alternative<ReLU>(layer)) {
            Tensor y = *cur;
            for (double& v : y.data) v = std::max(0.0, v);
            cache.out[l] = std::move(y);
        } else if (std::holds_alternative<Flatten>(layer)) {
            Tensor y = *cur;
            y.shape = {y.shape[0], y.size() / y.shape[0]};
            cache.out[l] = std::move(y);
        } else {
            // head: logits pass through, loss computed on the side
            cache.out[l] = *cur;
            loss = softmax_loss(*cur, batch.labels, probs);
        }
        cur = &cache.out[l];
    }
    return loss;
}

// Reverse walk over the cached forward pass. grad holds d(loss)/d(output of
// the layer being visited) throughout.
Parameters backward_impl(const ModelSpec& spec, const Parameters& params,
                         const Batch& batch, const Cache& cache,
                         const Tensor& probs) {
    const std::size_t n_layers = spec.layers.size();
    const std::size_t batch_n = batch.labels.size();
    Parameters grads;
    for (const auto& [l, lp] : params.layers) {
        grads.layers[l] = {Tensor(lp.weight.shape), Tensor(lp.bias.shape)};
    }

    const auto layer_input = [&](std::size_t l) -> const Tensor& {
        return l == 0 ? batch.inputs : cache.out[l - 1];
    };

    Tensor grad;  // d loss / d output of current layer
    for (std::size_t li = n_layers; li-- > 0;) {
        const LayerDesc& layer = spec.layers[li];
        if (std::holds_alternative<SoftmaxCrossEntropyHead>(layer)) {
            grad = probs;
            const std::size_t classes = grad.shape[1];
            const double inv = 1.0 / static_cast<double>(batch_n);
            for (std::size_t b = 0; b < batch_n; ++b) {
                grad.data[b * classes + static_cast<std::size_t>(batch.labels[b])] -= 1.0;
            }
            for (double& v : grad.data) v *= inv;
        } else if (std::holds_alternative<Dense>(layer)) {
            const Tensor& x = layer_input(li);
            const LayerParams& lp = params.layers.at(static_cast<int>(li));
            LayerParams& gl = grads.layers.at(static_cast<int>(li));
            const std::size_t in = lp.weight.shape[1], out = lp.weight.shape[0];
            Tensor gin({batch_n, in});
            for (std::size_t b = 0; b < batch_n; ++b) {
                const double* xr = &x.data[b * in];
                const double* gr = &grad.data[b * out];
                double* gi = &gin.data[b * in];
                for (std::size_t o = 0; o < out; ++o) {
                    const double g = gr[o];
                    gl.bias.data[o] += g;
                    const double* wr = &lp.weight.data[o * in];
                    double* gw = &gl.weight.data[o * in];
                    for (std::size_t i = 0; i < in; ++i) {
                        gw[i] += g * xr[i];
                        gi[i] += g * wr[i];
                    }
                }
            }
            grad = std::move(gin);
        } else if (const auto* c = std::get_if<Conv2D>(&layer)) {
            const Tensor& x = layer_input(li);
            const LayerParams& lp = params.layers.at(static_cast<int>(li));
            LayerParams& gl = grads.layers.at(static_cast<int>(li));
            const std::size_t in_c = x.shape[1];
            const long h = static_cast<long>(x.shape[2]);
            const long w = static_cast<long>(x.shape[3]);
            const std::size_t oc = grad.shape[1], oh = grad.shape[2],
                              ow = grad.shape[3];
            const long pad = static_cast<long>(c->padding);
            const long stride = static_cast<long>(c->stride);
            Tensor gin(x.shape);
            for (std::size_t b = 0; b < batch_n; ++b) {
                for (std::size_t f = 0; f < oc; ++f) {
                    const double* wf =
                        &lp.weight.data[f * in_c * c->kernel_h * c->kernel_w];
                    double* gwf =
                        &gl.weight.data[f * in_c * c->kernel_h * c->kernel_w];
                    for (std::size_t r = 0; r < oh; ++r) {
                        for (std::size_t s = 0; s < ow; ++s) {
                            const double g =
                                grad.data[((b * oc + f) * oh + r) * ow + s];
                            if (g == 0.0) continue;
                            gl.bias.data[f] += g;
                            for (std::size_t ch = 0; ch < in_c; ++ch) {
                                const double* xc = &x.data[(b * in_c + ch) * h * w];
                                double* gxc = &gin.data[(b * in_c + ch) * h * w];
                                const std::size_t koff =
                                    ch * c->kernel_h * c->kernel_w;
                                for (std::size_t i = 0; i < c->kernel_h; ++i) {
                                    const long ih = static_cast<long>(r) * stride +
                                                    static_cast<long>(i) - pad;
                                    if (ih < 0 || ih >= h) continue;
                                    for (std::size_t j = 0; j < c->kernel_w; ++j) {
                                        const long iw =
                                            static_cast<long>(s) * stride +
                                            static_cast<long>(j) - pad;
                                        if (iw < 0 || iw >= w) continue;
                                        gwf[koff + i * c->kernel_w + j] +=
                                            g * xc[ih * w + iw];
                                        gxc[ih * w + iw] +=
                                            g * wf[koff + i * c->kernel_w + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            grad = std::move(gin);
        } else if (std::holds_alternative<MaxPool2D>(layer)) {
            Tensor gin(layer_input(li).shape);
            const std::vector<std::size_t>& src = cache.pool_src[li];
            for (std::size_t k = 0; k < grad.size(); ++k) {
                gin.data[src[k]] += grad.data[k];
            }
            grad = std::move(gin);
        } else if (std::holds_alternative<ReLU>(layer)) {
            const Tensor& y = cache.out[li];
            for (std::size_t k = 0; k < grad.size(); ++k) {
                if (y.data[k] <= 0.0) grad.data[k] = 0.0;
            }
        } else {  // Flatten
            grad.shape = layer_input(li).shape;
        }
    }
    return grads;
}

// Unit count of a hidden layer's activation tensor and the number of
// |activation| samples one batch contributes per unit.
void accumulate_abs(const Tensor& act, std::vector<double>& sums,
                    double& count) {
    const std::size_t batch = act.shape[0];
    if (act.rank() == 2) {
        const std::size_t units = act.shape[1];
        if (sums.empty()) sums.assign(units, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t u = 0; u < units; ++u) {
                sums[u] += std::abs(act.data[b * units + u]);
            }
        }
        count += static_cast<double>(batch);
    } else {
        const std::size_t filters = act.shape[1];
        const std::size_t spatial = act.shape[2] * act.shape[3];
        if (sums.empty()) sums.assign(filters, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t f = 0; f < filters; ++f) {
                const double* plane = &act.data[(b * filters + f) * spatial];
                double s = 0.0;
                for (std::size_t k = 0; k < spatial; ++k) s += std::abs(plane[k]);
                sums[f] += s;
            }
        }
        count += static_cast<double>(batch * spatial);
    }
}

// Activation of hidden layer l: the ReLU output when one directly follows,
// otherwise the layer's own output.
const Tensor& hidden_activation(const ModelSpec& spec, const Cache& cache,
                                int l) {
    const std::size_t idx = static_cast<std::size_t>(l);
    if (idx + 1 < spec.layers.size() &&
        std::holds_alternative<ReLU>(spec.layers[idx + 1])) {
        return cache.out[idx + 1];
    }
    return cache.out[idx];
}

}  // namespace

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw InputError("batch index list is empty");
    const std::size_t stride = dataset.sample_stride();
    std::vector<std::size_t> shape = {idx.size()};
    const auto sample = dataset.sample_shape();
    shape.insert(shape.end(), sample.begin(), sample.end());
    Batch batch{Tensor(shape), {}};
    batch.labels.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= dataset.size()) {
            throw InputError("batch index " + std::to_string(idx[k]) +
                             " out of range");
        }
        std::memcpy(&batch.inputs.data[k * stride],
                    &dataset.inputs.data[idx[k] * stride],
                    stride * sizeof(double));
        batch.labels.push_back(dataset.labels[idx[k]]);
    }
    return batch;
}

Batch full_batch(const Dataset& dataset) {
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);
    return make_batch(dataset, idx);
}

ForwardResult forward(const ModelSpec& spec, const Parameters& params,
                      const Batch& batch) {
    const ShapeTrace trace = infer_shapes(spec);
    check_params_layout(spec, params);
    check_batch(spec, batch, num_classes(spec));

    Cache cache;
    Tensor probs;
    ForwardResult res;
    res.loss = forward_impl(spec, trace, params, batch, cache, probs);
    for (int l : hidden_parameterized_layers(spec)) {
        res.activations[l] = hidden_activation(spec, cache, l);
    }
    res.logits = cache.out.back();
    return res;
}

Parameters backward(const ModelSpec& spec, const Parameters& params,
                    const Batch& batch) {
    const ShapeTrace trace = infer_shapes(spec);
    check_params_layout(spec, params);
    check_batch(spec, batch, num_classes(spec));

    Cache cache;
    Tensor probs;
    forward_impl(spec, trace, params, batch, cache, probs);
    return backward_impl(spec, params, batch, cache, probs);
}

Parameters sgd_step(const Parameters& params, const Parameters& gradients,
                    double lr) {
    Parameters out = params;
    add_scaled(out, gradients, -lr);
    return out;
}

TrainResult local_train(const ModelSpec& spec, const Parameters& params,
                        const Dataset& dataset, int epochs, int batch_size,
                        double lr, std::uint64_t rng_seed) {
    if (epochs < 1) throw InputError("epochs must be >= 1");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    if (dataset.size() == 0) throw InputError("training dataset is empty");
    const ShapeTrace trace = infer_shapes(spec);
    check_params_layout(spec, params);

    const std::size_t n = dataset.size();
    const std::size_t bs = static_cast<std::size_t>(batch_size);
    const std::vector<int> hidden = hidden_parameterized_layers(spec);

    Rng rng(rng_seed);
    TrainResult res;
    res.params = params;
    std::map<int, std::vector<double>> act_sums;
    std::map<int, double> act_counts;
    for (int l : hidden) {
        act_sums[l] = {};
        act_counts[l] = 0.0;
    }

    std::vector<std::size_t> order(n);
    double final_loss_sum = 0.0;
    for (int e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(start + bs, n);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            // Shuffling decides batch membership and step order only; within a
            // batch, samples keep ascending dataset order so that epochs=1 with
            // batch_size=n reproduces the full-batch step bit for bit.
            std::sort(idx.begin(), idx.end());
            const Batch batch = make_batch(dataset, idx);
            for (int y : batch.labels) {
                if (y < 0 || y >= dataset.classes) {
                    throw InputError("label outside [0, classes)");
                }
            }

            Cache cache;
            Tensor probs;
            const double loss =
                forward_impl(spec, trace, res.params, batch, cache, probs);
            for (int l : hidden) {
                accumulate_abs(hidden_activation(spec, cache, l), act_sums[l],
                               act_counts[l]);
            }
            const Parameters grads =
                backward_impl(spec, res.params, batch, cache, probs);
            add_scaled(res.params, grads, -lr);
            if (e == epochs - 1) {
                final_loss_sum += loss * static_cast<double>(idx.size());
            }
        }
    }
    res.final_epoch_loss = final_loss_sum / static_cast<double>(n);
    for (int l : hidden) {
        std::vector<double> means = act_sums[l];
        for (double& v : means) v /= act_counts[l];
        res.mean_abs_activations[l] = std::move(means);
    }
    return res;
}

EvalResult evaluate(const ModelSpec& spec, const Parameters& params,
                    const Dataset& dataset) {
    if (dataset.size() == 0) throw InputError("evaluation dataset is empty");
    const ShapeTrace trace = infer_shapes(spec);
    check_params_layout(spec, params);

    const std::size_t n = dataset.size();
    constexpr std::size_t kChunk = 256;
    std::size_t correct = 0;
    double loss_sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t end = std::min(start + kChunk, n);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Batch batch = make_batch(dataset, idx);
        for (int y : batch.labels) {
            if (y < 0 || y >= dataset.classes) {
                throw InputError("label outside [0, classes)");
            }
        }
        Cache cache;
        Tensor probs;
        const double loss = forward_impl(spec, trace, params, batch, cache, probs);
        loss_sum += loss * static_cast<double>(end - start);
        const Tensor& logits = cache.out.back();
        const std::size_t classes = logits.shape[1];
        for (std::size_t b = 0; b < end - start; ++b) {
            const double* row = &logits.data[b * classes];
            std::size_t arg = 0;
            for (std::size_t c = 1; c < classes; ++c) {
                if (row[c] > row[arg]) arg = c;  // ties keep the lowest index
            }
            if (static_cast<int>(arg) == batch.labels[b]) ++correct;
        }
    }
    EvalResult res;
    res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    res.mean_loss = loss_sum / static_cast<double>(n);
    return res;
}

long long count_flops(const ModelSpec& spec) {
    const ShapeTrace trace = infer_shapes(spec);
    long long macs = 0;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (const auto* d = std::get_if<Dense>(&spec.layers[l])) {
            macs += static_cast<long long>(d->in_units) *
                    static_cast<long long>(d->out_units);
        } else if (const auto* c = std::get_if<Conv2D>(&spec.layers[l])) {
            const long long positions =
                static_cast<long long>(trace.out[l][1]) *
                static_cast<long long>(trace.out[l][2]);
            macs += positions * static_cast<long long>(c->out_channels) *
                    static_cast<long long>(c->in_channels) *
                    static_cast<long long>(c->kernel_h) *
                    static_cast<long long>(c->kernel_w);
        }
    }
    return macs;
}

}  // namespace fedprune
