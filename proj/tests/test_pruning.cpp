#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fedprune/errors.hpp"
#include "fedprune/mask.hpp"
#include "fedprune/model.hpp"
#include "fedprune/nn.hpp"
#include "fedprune/rng.hpp"

using namespace fedprune;

namespace {

ModelSpec random_spec(Rng& rng) {
    if (rng.uniform() < 0.4) {
        const std::size_t c = 1 + rng.uniform_int(2);
        const std::size_t hw = 4 + 2 * rng.uniform_int(2);
        const std::size_t f1 = 3 + rng.uniform_int(4);
        const std::size_t f2 = 3 + rng.uniform_int(4);
        const std::size_t classes = 2 + rng.uniform_int(3);
        ModelSpec spec;
        spec.input_shape = {c, hw, hw};
        spec.layers.push_back(Conv2D{c, f1, 3, 3, 1, 1});
        spec.layers.push_back(ReLU{});
        spec.layers.push_back(Conv2D{f1, f2, 3, 3, 1, 1});
        spec.layers.push_back(ReLU{});
        spec.layers.push_back(MaxPool2D{});
        spec.layers.push_back(Flatten{});
        spec.layers.push_back(Dense{f2 * (hw / 2) * (hw / 2), classes});
        spec.layers.push_back(SoftmaxCrossEntropyHead{classes});
        return spec;
    }
    const std::size_t features = 2 + rng.uniform_int(5);
    const std::size_t classes = 2 + rng.uniform_int(3);
    std::vector<std::size_t> hidden;
    const int depth = 1 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < depth; ++i) hidden.push_back(3 + rng.uniform_int(5));
    return make_mlp(features, hidden, classes);
}

Batch random_batch(const ModelSpec& spec, Rng& rng, std::size_t batch) {
    Batch b;
    std::vector<std::size_t> shape = {batch};
    shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
    b.inputs = Tensor(shape);
    for (double& v : b.inputs.data) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < batch; ++i) {
        b.labels.push_back(static_cast<int>(rng.uniform_int(num_classes(spec))));
    }
    return b;
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

TEST_CASE("keep_count survives float representation of drop rates") {
    CHECK(keep_count(10, 0.5) == 5);
    CHECK(keep_count(10, 0.3) == 7);  // 0.3 * 10 sits just below 3 in doubles
    CHECK(keep_count(10, 0.7) == 3);
    CHECK(keep_count(10, 0.0) == 10);
    CHECK(keep_count(10, 0.9) == 1);
    CHECK(keep_count(1, 0.9) == 1);  // at least one unit always survives
    CHECK(keep_count(3, 0.99) == 1);
    CHECK(keep_count(2048, 0.5) == 1024);
}

TEST_CASE("prunable layers exclude the logit producer") {
    const ModelSpec mlp = make_mlp(20, {24, 12}, 10);
    CHECK(prunable_layers(mlp) == std::vector<int>{0, 2});
    CHECK(prunable_width(mlp, 0) == 24);
    CHECK(prunable_width(mlp, 2) == 12);

    const ModelSpec cnn = make_reference_cnn(62);
    const std::vector<int> pr = prunable_layers(cnn);
    REQUIRE(pr.size() == 3);  // conv1, conv2, dense; the 62-way layer stays
    CHECK(prunable_width(cnn, pr[0]) == 32);
    CHECK(prunable_width(cnn, pr[1]) == 64);
    CHECK(prunable_width(cnn, pr[2]) == 2048);
}

TEST_CASE("identity and random masks are valid and sized correctly") {
    const ModelSpec spec = make_mlp(6, {8, 4}, 3);
    const Mask id = identity_mask(spec);
    validate_mask(spec, id);
    CHECK(id.kept.at(0).size() == 8);
    CHECK(id.kept.at(2).size() == 4);

    const Mask r = random_mask(spec, 0.5, 7);
    validate_mask(spec, r);
    CHECK(r.kept.at(0).size() == 4);
    CHECK(r.kept.at(2).size() == 2);
    CHECK(random_mask(spec, 0.5, 7) == r);
    // Two of C(8,4) * C(4,2) = 420 masks colliding across seeds 7 and 8 would
    // be a generator bug, not bad luck.
    CHECK(random_mask(spec, 0.5, 8) != r);
}

TEST_CASE("validate_mask rejects structural errors") {
    const ModelSpec spec = make_mlp(6, {8, 4}, 3);
    Mask m = random_mask(spec, 0.5, 1);

    Mask missing = m;
    missing.kept.erase(2);
    CHECK_THROWS_AS(validate_mask(spec, missing), InputError);

    Mask extra = m;
    extra.kept[4] = {0};  // layer 4 produces the logits
    CHECK_THROWS_AS(validate_mask(spec, extra), InputError);

    Mask unsorted = m;
    unsorted.kept.at(0) = {3, 1};
    CHECK_THROWS_AS(validate_mask(spec, unsorted), InputError);

    Mask dup = m;
    dup.kept.at(0) = {1, 1, 2, 3};
    CHECK_THROWS_AS(validate_mask(spec, dup), InputError);

    Mask oor = m;
    oor.kept.at(0) = {1, 2, 3, 8};  // width is 8
    CHECK_THROWS_AS(validate_mask(spec, oor), InputError);

    Mask empty = m;
    empty.kept.at(0) = {};
    CHECK_THROWS_AS(validate_mask(spec, empty), InputError);
}

TEST_CASE("index maps chain kept units into the next layer's columns") {
    const ModelSpec spec = make_mlp(5, {4, 3}, 2);
    Mask m;
    m.kept[0] = {1, 3};
    m.kept[2] = {0, 2};
    const IndexMaps maps = mask_index_maps(spec, m);
    CHECK(maps.rows.at(0) == std::vector<std::size_t>{1, 3});
    CHECK(maps.cols.at(0) == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(maps.rows.at(2) == std::vector<std::size_t>{0, 2});
    CHECK(maps.cols.at(2) == std::vector<std::size_t>{1, 3});
    CHECK(maps.rows.at(4) == std::vector<std::size_t>{0, 1});  // head width stays
    CHECK(maps.cols.at(4) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("a kept conv channel expands to its spatial block after flatten") {
    ModelSpec spec;
    spec.input_shape = {1, 4, 4};
    spec.layers.push_back(Conv2D{1, 4, 3, 3, 1, 1});
    spec.layers.push_back(ReLU{});
    spec.layers.push_back(MaxPool2D{});
    spec.layers.push_back(Flatten{});
    spec.layers.push_back(Dense{4 * 2 * 2, 3});
    spec.layers.push_back(SoftmaxCrossEntropyHead{3});
    Mask m;
    m.kept[0] = {1, 3};
    const IndexMaps maps = mask_index_maps(spec, m);
    // Channels 1 and 3, four spatial positions each.
    CHECK(maps.cols.at(4) ==
          std::vector<std::size_t>{4, 5, 6, 7, 12, 13, 14, 15});
}

TEST_CASE("submodel extraction gathers a hand-checked weight block") {
    const ModelSpec spec = make_mlp(2, {3}, 2);
    Parameters p = zero_params(spec);
    p.layers.at(0).weight = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
    p.layers.at(0).bias = Tensor({3}, {10, 20, 30});
    p.layers.at(2).weight = Tensor({2, 3}, {7, 8, 9, -7, -8, -9});
    p.layers.at(2).bias = Tensor({2}, {0.5, -0.5});
    Mask m;
    m.kept[0] = {0, 2};
    const SubModel sub = extract_submodel(spec, p, m);
    CHECK(sub.params.layers.at(0).weight.data == std::vector<double>{1, 2, 5, 6});
    CHECK(sub.params.layers.at(0).bias.data == std::vector<double>{10, 30});
    CHECK(sub.params.layers.at(2).weight.data == std::vector<double>{7, 9, -7, -9});
    CHECK(sub.params.layers.at(2).bias.data == std::vector<double>{0.5, -0.5});
    CHECK(num_classes(sub.spec) == 2);
}

TEST_CASE("extract then broadcast is the identity on kept coordinates") {
    Rng rng(314);
    for (int trial = 0; trial < 100; ++trial) {
        const ModelSpec spec = random_spec(rng);
        const Parameters params = init_params(spec, rng.next_u64());
        const double k = std::vector<double>{0.0, 0.3, 0.5, 0.7}[rng.uniform_int(4)];
        const Mask m = random_mask(spec, k, rng.next_u64());
        const SubModel sub = extract_submodel(spec, params, m);
        validate_spec(sub.spec);

        // Scattering back onto the source leaves it untouched...
        const Parameters back = broadcast_submodel(spec, params, sub.params, m);
        CAPTURE(trial);
        CHECK(params_equal(back, params));
        // ...and re-extracting returns the identical sub-model.
        const SubModel again = extract_submodel(spec, back, m);
        CHECK(params_equal(again.params, sub.params));
    }
}

TEST_CASE("the sub-model forward equals the zero-filled global forward") {
    Rng rng(2718);
    for (int trial = 0; trial < 50; ++trial) {
        const ModelSpec spec = random_spec(rng);
        const Parameters params = init_params(spec, rng.next_u64());
        const Mask m = random_mask(spec, 0.5, rng.next_u64());
        const SubModel sub = extract_submodel(spec, params, m);

        // Dropped units zeroed in place: scatter the sub-model onto zeros.
        const Parameters zeroed =
            broadcast_submodel(spec, zero_params(spec), sub.params, m);

        const Batch batch = random_batch(spec, rng, 2);
        const ForwardResult full = forward(spec, zeroed, batch);
        const ForwardResult small = forward(sub.spec, sub.params, batch);
        REQUIRE(full.logits.size() == small.logits.size());
        CAPTURE(trial);
        for (std::size_t i = 0; i < full.logits.size(); ++i) {
            CHECK(std::abs(full.logits.data[i] - small.logits.data[i]) < 1e-12);
        }
        CHECK(std::abs(full.loss - small.loss) < 1e-12);
    }
}

TEST_CASE("broadcast rejects a sub-model that does not fit the mask") {
    const ModelSpec spec = make_mlp(4, {6}, 2);
    const Parameters params = init_params(spec, 1);
    const Mask m = random_mask(spec, 0.5, 2);
    const SubModel sub = extract_submodel(spec, params, m);

    Parameters wrong = sub.params;
    wrong.layers.at(0).bias = Tensor({4});  // mask keeps 3 of 6 units
    CHECK_THROWS_AS(broadcast_submodel(spec, params, wrong, m), InputError);
}

TEST_CASE("trained_coordinates flags exactly the kept rows and columns") {
    const ModelSpec spec = make_mlp(2, {3}, 2);
    Mask m;
    m.kept[0] = {0, 2};
    const ParamMask flags = trained_coordinates(spec, m);
    CHECK(flags.layers.at(0).weight ==
          std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1});
    CHECK(flags.layers.at(0).bias == std::vector<std::uint8_t>{1, 0, 1});
    CHECK(flags.layers.at(2).weight ==
          std::vector<std::uint8_t>{1, 0, 1, 1, 0, 1});
    CHECK(flags.layers.at(2).bias == std::vector<std::uint8_t>{1, 1});

    const Mask id = identity_mask(spec);
    const ParamMask all = trained_coordinates(spec, id);
    for (const auto& [l, f] : all.layers) {
        for (std::uint8_t v : f.weight) CHECK(v == 1);
        for (std::uint8_t v : f.bias) CHECK(v == 1);
    }
}

TEST_CASE("filter_l1 sums one filter's absolute weights") {
    const Tensor w({2, 1, 2, 2}, {1, -2, 3, -4, 0.5, 0.5, -0.5, 0.5});
    CHECK(filter_l1(w, 0) == doctest::Approx(10.0).epsilon(1e-15));
    CHECK(filter_l1(w, 1) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("stat reports map sub-model units back to global indices") {
    const ModelSpec spec = make_mlp(2, {4}, 2);
    Mask m;
    m.kept[0] = {1, 3};
    const SubModel sub = extract_submodel(spec, init_params(spec, 3), m);
    std::map<int, std::vector<double>> acts;
    acts[0] = {0.25, 0.75};  // sub-model unit order
    const StatReports rep = make_stat_reports(spec, m, sub.params, acts);
    REQUIRE(rep.dense.count(0) == 1);
    REQUIRE(rep.dense.at(0).size() == 2);
    CHECK(rep.dense.at(0)[0] == std::pair<std::size_t, double>{1, 0.25});
    CHECK(rep.dense.at(0)[1] == std::pair<std::size_t, double>{3, 0.75});
    CHECK(rep.conv.empty());
}

TEST_CASE("conv stat reports carry per-filter l1 norms of trained weights") {
    ModelSpec spec;
    spec.input_shape = {1, 4, 4};
    spec.layers.push_back(Conv2D{1, 2, 3, 3, 1, 1});
    spec.layers.push_back(ReLU{});
    spec.layers.push_back(Flatten{});
    spec.layers.push_back(Dense{2 * 16, 2});
    spec.layers.push_back(SoftmaxCrossEntropyHead{2});
    const Mask id = identity_mask(spec);
    Parameters p = zero_params(spec);
    for (std::size_t i = 0; i < 9; ++i) p.layers.at(0).weight.data[i] = 1.0;
    for (std::size_t i = 9; i < 18; ++i) p.layers.at(0).weight.data[i] = -2.0;
    std::map<int, std::vector<double>> acts;
    acts[0] = {0.0, 0.0};  // conv filters report via l1, not activations
    const StatReports rep = make_stat_reports(spec, id, p, acts);
    REQUIRE(rep.conv.count(0) == 1);
    CHECK(rep.conv.at(0)[0] == std::pair<std::size_t, double>{0, 9.0});
    CHECK(rep.conv.at(0)[1] == std::pair<std::size_t, double>{1, 18.0});
    CHECK(rep.dense.empty());
}

TEST_CASE("blended scores average the speed groups that reported") {
    const ModelSpec spec = make_mlp(2, {3}, 2);
    UnitStats stats = UnitStats::zero(spec);
    StatReport slow, fast;
    slow[0] = {{0, 1.0}, {1, 5.0}};
    fast[0] = {{0, 3.0}, {2, 2.0}};
    stats = accumulate_stats(stats, Speed::kSlow, slow, {});
    stats = accumulate_stats(stats, Speed::kFast, fast, {});
    const auto scores = blended_scores(stats);
    CHECK(scores.at(0)[0] == doctest::Approx(2.0));  // both groups: midpoint
    CHECK(scores.at(0)[1] == doctest::Approx(5.0));  // slow only
    CHECK(scores.at(0)[2] == doctest::Approx(2.0));  // fast only
}

TEST_CASE("group means weight clients equally within a group") {
    const ModelSpec spec = make_mlp(2, {2}, 2);
    UnitStats stats = UnitStats::zero(spec);
    StatReport a, b;
    a[0] = {{0, 1.0}, {1, 0.0}};
    b[0] = {{0, 3.0}, {1, 0.0}};
    stats = accumulate_stats(stats, Speed::kFast, a, {});
    stats = accumulate_stats(stats, Speed::kFast, b, {});
    const auto scores = blended_scores(stats);
    CHECK(scores.at(0)[0] == doctest::Approx(2.0));
    CHECK(scores.at(0)[1] == doctest::Approx(0.0));
}

TEST_CASE("accumulate_stats validates its report") {
    const ModelSpec spec = make_mlp(2, {3}, 2);
    const UnitStats stats = UnitStats::zero(spec);

    StatReport unknown_layer;
    unknown_layer[4] = {{0, 1.0}};  // layer 4 is the unprunable head producer
    CHECK_THROWS_AS(accumulate_stats(stats, Speed::kFast, unknown_layer, {}),
                    InputError);

    StatReport oor;
    oor[0] = {{3, 1.0}};  // width is 3
    CHECK_THROWS_AS(accumulate_stats(stats, Speed::kFast, oor, {}), InputError);

    StatReport bad_value;
    bad_value[0] = {{0, std::nan("")}};
    CHECK_THROWS_AS(accumulate_stats(stats, Speed::kFast, bad_value, {}),
                    InputError);
}

TEST_CASE("update_mask keeps the top-scoring units, low index on ties") {
    const ModelSpec spec = make_mlp(2, {3}, 2);
    UnitStats stats = UnitStats::zero(spec);
    StatReport rep;
    rep[0] = {{0, 5.0}, {1, 1.0}, {2, 7.0}};
    stats = accumulate_stats(stats, Speed::kFast, rep, {});
    const Mask m = update_mask(stats, spec, 0.5);  // keep 2 of 3
    CHECK(m.kept.at(0) == std::vector<std::size_t>{0, 2});

    UnitStats tie = UnitStats::zero(spec);
    StatReport rep2;
    rep2[0] = {{0, 4.0}, {1, 4.0}, {2, 1.0}};
    tie = accumulate_stats(tie, Speed::kFast, rep2, {});
    const Mask mt = update_mask(tie, spec, 0.5);
    CHECK(mt.kept.at(0) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("update_mask is equivariant under unit relabeling") {
    const ModelSpec spec = make_mlp(3, {6}, 2);
    Rng rng(555);
    std::vector<double> scores(6);
    for (double& s : scores) s = rng.uniform();

    UnitStats stats = UnitStats::zero(spec);
    StatReport rep;
    for (std::size_t u = 0; u < 6; ++u) rep[0].push_back({u, scores[u]});
    stats = accumulate_stats(stats, Speed::kFast, rep, {});
    const Mask base = update_mask(stats, spec, 0.5);

    // Swap two units' scores; the kept set must swap those labels.
    std::swap(scores[1], scores[4]);
    UnitStats stats2 = UnitStats::zero(spec);
    StatReport rep2;
    for (std::size_t u = 0; u < 6; ++u) rep2[0].push_back({u, scores[u]});
    stats2 = accumulate_stats(stats2, Speed::kFast, rep2, {});
    const Mask swapped = update_mask(stats2, spec, 0.5);

    auto relabel = [](std::vector<std::size_t> v) {
        for (std::size_t& u : v) {
            if (u == 1) u = 4;
            else if (u == 4) u = 1;
        }
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(swapped.kept.at(0) == relabel(base.kept.at(0)));
}

TEST_CASE("submodel counts multiply per-layer binomials") {
    using boost::multiprecision::cpp_int;
    CHECK(count_submodels_lower_bound({4}, 0.5) == cpp_int(6));
    CHECK(count_submodels_lower_bound({4, 4}, 0.5) == cpp_int(36));
    CHECK(count_submodels_lower_bound({5}, 0.0) == cpp_int(1));
    CHECK(count_submodels_lower_bound({24, 12}, 0.5) ==
          cpp_int(2704156) * 924);
    // 2048 choose 1024 runs to hundreds of digits; spot-check the magnitude.
    const cpp_int big = count_submodels_lower_bound({2048}, 0.5);
    CHECK(big.str().size() == 615);
}

TEST_CASE("mask json round-trips and rejects malformed input") {
    const ModelSpec spec = make_mlp(6, {8, 4}, 3);
    const Mask m = random_mask(spec, 0.5, 77);
    const nlohmann::json j = mask_to_json(m);
    CHECK(mask_from_json(spec, j) == m);

    nlohmann::json bad_key = j;
    bad_key["x1"] = j.begin().value();
    CHECK_THROWS_AS(mask_from_json(spec, bad_key), FormatError);

    nlohmann::json bad_entry = j;
    bad_entry["0"] = {0, -1};
    CHECK_THROWS_AS(mask_from_json(spec, bad_entry), FormatError);

    nlohmann::json not_object = 5;
    CHECK_THROWS_AS(mask_from_json(spec, not_object), FormatError);

    // Structurally well-formed but not a valid mask for the model.
    nlohmann::json missing = j;
    missing.erase("2");
    CHECK_THROWS_AS(mask_from_json(spec, missing), InputError);
}

TEST_CASE("fingerprints identify masks") {
    const ModelSpec spec = make_mlp(6, {8, 4}, 3);
    const Mask a = random_mask(spec, 0.5, 1);
    const Mask b = random_mask(spec, 0.5, 2);
    CHECK(mask_fingerprint(a) == mask_fingerprint(a));
    REQUIRE(a != b);
    CHECK(mask_fingerprint(a) != mask_fingerprint(b));
    CHECK(mask_fingerprint(identity_mask(spec)) !=
          mask_fingerprint(random_mask(spec, 0.5, 3)));
}
