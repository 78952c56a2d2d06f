#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fedprune/data.hpp"
#include "fedprune/errors.hpp"
#include "fedprune/model.hpp"
#include "fedprune/nn.hpp"
#include "fedprune/rng.hpp"

using namespace fedprune;

namespace {

// Small architectures drawn at random: MLPs and one-conv nets with even
// spatial sizes so pooling divides cleanly.
ModelSpec random_small_spec(Rng& rng) {
    if (rng.uniform() < 0.4) {
        const std::size_t c = 1 + rng.uniform_int(2);
        const std::size_t h = 4 + 2 * rng.uniform_int(2);
        const std::size_t w = 4 + 2 * rng.uniform_int(2);
        const std::size_t filters = 2 + rng.uniform_int(3);
        const std::size_t classes = 2 + rng.uniform_int(3);
        ModelSpec spec;
        spec.input_shape = {c, h, w};
        spec.layers.push_back(Conv2D{c, filters, 3, 3, 1, 1});
        spec.layers.push_back(ReLU{});
        spec.layers.push_back(MaxPool2D{});
        spec.layers.push_back(Flatten{});
        spec.layers.push_back(Dense{filters * (h / 2) * (w / 2), classes});
        spec.layers.push_back(SoftmaxCrossEntropyHead{classes});
        return spec;
    }
    const std::size_t features = 2 + rng.uniform_int(5);
    const std::size_t classes = 2 + rng.uniform_int(3);
    std::vector<std::size_t> hidden;
    const int depth = 1 + static_cast<int>(rng.uniform_int(2));
    for (int i = 0; i < depth; ++i) hidden.push_back(2 + rng.uniform_int(4));
    return make_mlp(features, hidden, classes);
}

Batch random_batch(const ModelSpec& spec, Rng& rng, std::size_t batch) {
    Batch b;
    std::vector<std::size_t> shape = {batch};
    shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
    b.inputs = Tensor(shape);
    for (double& v : b.inputs.data) v = rng.uniform(-1.5, 1.5);
    const std::size_t classes = num_classes(spec);
    for (std::size_t i = 0; i < batch; ++i) {
        b.labels.push_back(static_cast<int>(rng.uniform_int(classes)));
    }
    return b;
}

double fd_gradient(const ModelSpec& spec, Parameters params, const Batch& batch,
                   int layer, bool bias, std::size_t i, double h) {
    Tensor& t = bias ? params.layers.at(layer).bias : params.layers.at(layer).weight;
    const double orig = t.data[i];
    t.data[i] = orig + h;
    const double up = forward(spec, params, batch).loss;
    t.data[i] = orig - h;
    const double down = forward(spec, params, batch).loss;
    t.data[i] = orig;
    return (up - down) / (2.0 * h);
}

// Checks every coordinate of the analytic gradient against central
// differences. Returns the worst relative error seen.
struct GradCheck {
    double worst = 0.0;    // worst relative error over FD-checkable coordinates
    std::size_t skipped = 0;
    std::size_t total = 0;
};

// Central differences are meaningless when a relu or pooling kink falls
// inside the probe interval. A coordinate whose quotient shifts between step
// sizes h and h/2 by more than smooth-function curvature allows sits on such
// a kink and is excluded; everywhere else the analytic gradient must match.
GradCheck check_gradients(const ModelSpec& spec, const Parameters& params,
                          const Batch& batch) {
    const Parameters grads = backward(spec, params, batch);
    GradCheck out;
    for (const auto& [l, lp] : grads.layers) {
        for (int which = 0; which < 2; ++which) {
            const bool bias = which == 1;
            const Tensor& g = bias ? lp.bias : lp.weight;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ++out.total;
                const double fd = fd_gradient(spec, params, batch, l, bias, i, 1e-5);
                const double denom = std::max({std::abs(fd), std::abs(g.data[i]), 1e-3});
                const double err = std::abs(fd - g.data[i]) / denom;
                if (err > 1e-5) {
                    const double fd_half =
                        fd_gradient(spec, params, batch, l, bias, i, 5e-6);
                    if (std::abs(fd - fd_half) > 1e-8 * std::max(1.0, std::abs(fd))) {
                        ++out.skipped;
                        continue;
                    }
                }
                out.worst = std::max(out.worst, err);
            }
        }
    }
    return out;
}

bool params_equal(const Parameters& a, const Parameters& b) {
    if (!a.same_layout(b)) return false;
    for (const auto& [l, lp] : a.layers) {
        const LayerParams& other = b.layers.at(l);
        if (std::memcmp(lp.weight.data.data(), other.weight.data.data(),
                        lp.weight.size() * sizeof(double)) != 0) return false;
        if (std::memcmp(lp.bias.data.data(), other.bias.data.data(),
                        lp.bias.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("gradients match central differences on random small models") {
    Rng rng(20240601);
    std::size_t skipped = 0;
    std::size_t total = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const ModelSpec spec = random_small_spec(rng);
        Parameters params = init_params(spec, rng.next_u64());
        // Zero biases park dead-layer pre-activations exactly on the relu
        // kink, where central differences measure the subgradient average
        // instead of the gradient; jitter moves the check to generic points.
        for (auto& [l, lp] : params.layers) {
            for (double& b : lp.bias.data) b = rng.uniform(-0.3, 0.3);
        }
        const Batch batch = random_batch(spec, rng, 1 + rng.uniform_int(3));
        const GradCheck check = check_gradients(spec, params, batch);
        CAPTURE(trial);
        CHECK(check.worst < 1e-4);
        skipped += check.skipped;
        total += check.total;
    }
    // Kink-adjacent coordinates must stay a rarity, not an excuse.
    CHECK(skipped * 50 < total);
}

TEST_CASE("uniform logits give ln(num_classes) loss") {
    const ModelSpec spec = make_mlp(3, {}, 2);
    const Parameters params = zero_params(spec);  // zero weights: logits all 0
    Batch batch;
    batch.inputs = Tensor({1, 3}, {0.4, -0.2, 0.9});
    batch.labels = {1};
    const ForwardResult r = forward(spec, params, batch);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const ModelSpec spec10 = make_mlp(3, {}, 10);
    const ForwardResult r10 = forward(spec10, zero_params(spec10), batch);
    CHECK(r10.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("conv forward computes a hand-checked window sum") {
    // 2x2 all-ones kernel over a 2x2 all-ones image: single output = 4.
    ModelSpec spec;
    spec.input_shape = {1, 2, 2};
    spec.layers = {Conv2D{1, 1, 2, 2, 1, 0}, Flatten{}, Dense{1, 2},
                   SoftmaxCrossEntropyHead{2}};
    Parameters params = zero_params(spec);
    std::fill(params.layers.at(0).weight.data.begin(),
              params.layers.at(0).weight.data.end(), 1.0);
    Batch batch;
    batch.inputs = Tensor({1, 1, 2, 2}, {1.0, 1.0, 1.0, 1.0});
    batch.labels = {0};
    const ForwardResult r = forward(spec, params, batch);
    REQUIRE(r.activations.count(0) == 1);
    CHECK(r.activations.at(0).data[0] == doctest::Approx(4.0).epsilon(1e-15));

    // Bias shifts the window sum.
    params.layers.at(0).bias.data[0] = -1.5;
    const ForwardResult rb = forward(spec, params, batch);
    CHECK(rb.activations.at(0).data[0] == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("padding and stride shift the receptive field as expected") {
    // 3x3 input, 3x3 kernel of ones, padding 1, stride 2: corners of the
    // padded image see 2x2 patches of the input.
    ModelSpec spec;
    spec.input_shape = {1, 3, 3};
    spec.layers = {Conv2D{1, 1, 3, 3, 2, 1}, Flatten{}, Dense{4, 2},
                   SoftmaxCrossEntropyHead{2}};
    Parameters params = zero_params(spec);
    std::fill(params.layers.at(0).weight.data.begin(),
              params.layers.at(0).weight.data.end(), 1.0);
    Batch batch;
    batch.inputs = Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    batch.labels = {0};
    const ForwardResult r = forward(spec, params, batch);
    const Tensor& a = r.activations.at(0);
    REQUIRE(a.size() == 4);
    CHECK(a.data[0] == doctest::Approx(1 + 2 + 4 + 5).epsilon(1e-15));
    CHECK(a.data[1] == doctest::Approx(2 + 3 + 5 + 6).epsilon(1e-15));
    CHECK(a.data[2] == doctest::Approx(4 + 5 + 7 + 8).epsilon(1e-15));
    CHECK(a.data[3] == doctest::Approx(5 + 6 + 8 + 9).epsilon(1e-15));
}

TEST_CASE("max pooling keeps the window maximum") {
    ModelSpec spec;
    spec.input_shape = {1, 2, 2};
    spec.layers = {MaxPool2D{}, Flatten{}, Dense{1, 2},
                   SoftmaxCrossEntropyHead{2}};
    Parameters params = zero_params(spec);
    params.layers.at(2).weight = Tensor({2, 1}, {1.0, 0.0});
    Batch batch;
    batch.inputs = Tensor({1, 1, 2, 2}, {1.0, 7.0, 3.0, 4.0});
    batch.labels = {0};
    // logits = {max, 0}; check through the logits since pooling layers do not
    // report activations.
    const ForwardResult r = forward(spec, params, batch);
    CHECK(r.logits.data[0] == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("a saturated correct prediction has near-zero gradients") {
    // Bias drives class 0's logit 40 nats above class 1; with the correct
    // label the loss gradient underflows to ~e^-40.
    const ModelSpec spec = make_mlp(1, {}, 2);
    Parameters params = zero_params(spec);
    params.layers.at(0).bias.data[0] = 40.0;
    Batch batch;
    batch.inputs = Tensor({1, 1}, {0.0});
    batch.labels = {0};
    const Parameters grads = backward(spec, params, batch);
    for (const auto& [l, lp] : grads.layers) {
        for (double g : lp.weight.data) CHECK(std::abs(g) < 1e-12);
        for (double g : lp.bias.data) CHECK(std::abs(g) < 1e-12);
    }
}

TEST_CASE("head-layer bias gradient is the mean softmax residual") {
    const ModelSpec spec = make_mlp(2, {}, 3);
    Rng rng(77);
    Parameters params = init_params(spec, 5);
    Batch batch = random_batch(spec, rng, 4);
    const ForwardResult fwd = forward(spec, params, batch);
    const Parameters grads = backward(spec, params, batch);

    const std::size_t batch_n = batch.labels.size();
    std::vector<double> expected(3, 0.0);
    for (std::size_t i = 0; i < batch_n; ++i) {
        double mx = fwd.logits.at(i, 0);
        for (std::size_t c = 1; c < 3; ++c) mx = std::max(mx, fwd.logits.at(i, c));
        double z = 0.0;
        for (std::size_t c = 0; c < 3; ++c) z += std::exp(fwd.logits.at(i, c) - mx);
        for (std::size_t c = 0; c < 3; ++c) {
            const double p = std::exp(fwd.logits.at(i, c) - mx) / z;
            expected[c] += (p - (batch.labels[i] == static_cast<int>(c) ? 1.0 : 0.0)) /
                           static_cast<double>(batch_n);
        }
    }
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(grads.layers.at(0).bias.data[c] ==
              doctest::Approx(expected[c]).epsilon(1e-12));
    }
}

TEST_CASE("sgd_step is an exact axpy") {
    const ModelSpec spec = make_mlp(3, {4}, 2);
    const Parameters params = init_params(spec, 1);
    Rng rng(2);
    Parameters grads = zero_params(spec);
    for (auto& [l, lp] : grads.layers) {
        for (double& v : lp.weight.data) v = rng.uniform(-1, 1);
        for (double& v : lp.bias.data) v = rng.uniform(-1, 1);
    }
    const Parameters stepped = sgd_step(params, grads, 0.25);
    for (const auto& [l, lp] : params.layers) {
        for (std::size_t i = 0; i < lp.weight.size(); ++i) {
            CHECK(stepped.layers.at(l).weight.data[i] ==
                  lp.weight.data[i] - 0.25 * grads.layers.at(l).weight.data[i]);
        }
    }
    CHECK(params_equal(sgd_step(params, grads, 0.0), params));
}

TEST_CASE("one full-size minibatch equals one full-batch step") {
    const ModelSpec spec = make_mlp(4, {5}, 3);
    const Parameters start = init_params(spec, 11);
    const Dataset ds = generate_synthetic(12, 4, 3, 99);

    const TrainResult tr = local_train(spec, start, ds, 1, 12, 0.05, 1234);
    const Parameters direct =
        sgd_step(start, backward(spec, start, full_batch(ds)), 0.05);
    CHECK(params_equal(tr.params, direct));

    // The shuffle seed cannot matter when every sample shares one batch.
    const TrainResult tr2 = local_train(spec, start, ds, 1, 12, 0.05, 999);
    CHECK(params_equal(tr.params, tr2.params));
}

TEST_CASE("local_train is deterministic in its seed") {
    const ModelSpec spec = make_mlp(4, {6}, 3);
    const Parameters start = init_params(spec, 3);
    const Dataset ds = generate_synthetic(30, 4, 3, 7);
    const TrainResult a = local_train(spec, start, ds, 3, 8, 0.01, 42);
    const TrainResult b = local_train(spec, start, ds, 3, 8, 0.01, 42);
    CHECK(params_equal(a.params, b.params));
    CHECK(a.final_epoch_loss == b.final_epoch_loss);
    CHECK(a.mean_abs_activations == b.mean_abs_activations);

    const TrainResult c = local_train(spec, start, ds, 3, 8, 0.01, 43);
    CHECK_FALSE(params_equal(a.params, c.params));
}

TEST_CASE("training reduces the loss on separable data") {
    const ModelSpec spec = make_mlp(6, {8}, 3);
    Parameters params = init_params(spec, 21);
    const Dataset ds = generate_synthetic(60, 6, 3, 5);
    const Batch all = full_batch(ds);
    const double before = forward(spec, params, all).loss;
    const TrainResult tr = local_train(spec, params, ds, 20, 60, 1e-2, 9);
    const double after = forward(spec, tr.params, all).loss;
    CHECK(after < before);
    CHECK(tr.final_epoch_loss < before);
}

TEST_CASE("activation statistics average |post-ReLU| outputs") {
    // Single hidden neuron, identity-ish wiring: weight 1, bias 0. For inputs
    // {2, -3} the ReLU outputs are {2, 0}, so the mean abs activation is 1.
    const ModelSpec spec = make_mlp(1, {1}, 2);
    Parameters params = zero_params(spec);
    params.layers.at(0).weight.data[0] = 1.0;
    Dataset ds;
    ds.inputs = Tensor({2, 1}, {2.0, -3.0});
    ds.labels = {0, 1};
    ds.classes = 2;
    const TrainResult tr = local_train(spec, params, ds, 1, 2, 0.0, 5);
    REQUIRE(tr.mean_abs_activations.count(0) == 1);
    REQUIRE(tr.mean_abs_activations.at(0).size() == 1);
    CHECK(tr.mean_abs_activations.at(0)[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("evaluate counts argmax hits with low-index tie breaking") {
    const ModelSpec spec = make_mlp(1, {}, 2);
    Parameters params = zero_params(spec);  // logits tie at 0: predicts class 0
    Dataset ds;
    ds.inputs = Tensor({4, 1}, {1.0, 1.0, 1.0, 1.0});
    ds.labels = {0, 0, 1, 0};
    ds.classes = 2;
    const EvalResult r = evaluate(spec, params, ds);
    CHECK(r.accuracy == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(r.mean_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("shape mismatches are rejected") {
    const ModelSpec spec = make_mlp(3, {4}, 2);
    const Parameters params = init_params(spec, 1);
    Batch bad;
    bad.inputs = Tensor({1, 5});
    bad.labels = {0};
    CHECK_THROWS_AS(forward(spec, params, bad), ConfigError);

    Batch bad_label;
    bad_label.inputs = Tensor({1, 3});
    bad_label.labels = {2};  // classes == 2, so valid labels are 0 and 1
    CHECK_THROWS_AS(forward(spec, params, bad_label), InputError);

    const ModelSpec other = make_mlp(3, {5}, 2);
    Batch ok;
    ok.inputs = Tensor({1, 3});
    ok.labels = {0};
    CHECK_THROWS_AS(forward(other, params, ok), ConfigError);
}

TEST_CASE("spec validation rejects malformed stacks") {
    ModelSpec no_head = make_mlp(3, {4}, 2);
    no_head.layers.pop_back();
    CHECK_THROWS_AS(validate_spec(no_head), ConfigError);

    ModelSpec bad_width = make_mlp(3, {4}, 2);
    bad_width.layers[0] = Dense{5, 4};  // input has 3 features
    CHECK_THROWS_AS(validate_spec(bad_width), ConfigError);

    ModelSpec head_not_last = make_mlp(3, {4}, 2);
    std::swap(head_not_last.layers[head_not_last.layers.size() - 1],
              head_not_last.layers[head_not_last.layers.size() - 2]);
    CHECK_THROWS_AS(validate_spec(head_not_last), ConfigError);
}

TEST_CASE("count_flops multiplies the right dimensions") {
    CHECK(count_flops(make_mlp(5, {}, 10)) == 50);
    CHECK(count_flops(make_mlp(4, {4}, 2)) == 16 + 8);

    ModelSpec conv;
    conv.input_shape = {1, 4, 4};
    conv.layers = {Conv2D{1, 2, 3, 3, 1, 1}, ReLU{}, Flatten{}, Dense{32, 2},
                   SoftmaxCrossEntropyHead{2}};
    // 16 output positions x 2 filters x 9 taps + 32 x 2.
    CHECK(count_flops(conv) == 16 * 2 * 9 + 64);

    // The reference CNN totals, term by term:
    // 28x28x32x25 + 14x14x64x32x25 + 3136x2048 + 2048x62.
    CHECK(count_flops(make_reference_cnn(62)) ==
          627200LL + 10035200LL + 6422528LL + 126976LL);
}

TEST_CASE("parameter initialization is seeded and layout-complete") {
    const ModelSpec spec = make_mlp(7, {5, 4}, 3);
    const Parameters a = init_params(spec, 10);
    const Parameters b = init_params(spec, 10);
    const Parameters c = init_params(spec, 11);
    CHECK(params_equal(a, b));
    CHECK_FALSE(params_equal(a, c));
    CHECK(parameter_count(a) == 7 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3);
    for (const auto& [l, lp] : a.layers) {
        for (double v : lp.bias.data) CHECK(v == 0.0);
    }
}
