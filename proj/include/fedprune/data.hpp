#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedprune/tensor.hpp"

namespace fedprune {

// A labelled classification dataset. inputs has the sample count as its
// leading dimension; labels[i] < classes.
struct Dataset {
    Tensor inputs;
    std::vector<int> labels;
    int classes = 0;

    std::size_t size() const { return labels.size(); }
    std::vector<std::size_t> sample_shape() const;
    std::size_t sample_stride() const;
};

// Rows of `dataset` selected by `idx`, in the order given.
Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& idx);

// Gaussian clusters with seeded means at distance `spread` from the origin;
// labels assigned round-robin so classes are balanced within +-1.
Dataset generate_synthetic(std::size_t n_samples, std::size_t n_features,
                           int classes, std::uint64_t seed, double spread = 4.0);

// IDX-format image + label pair (big-endian, magic 0x803 / 0x801). Pixels are
// scaled to [0,1]; output shape is (n, 1, rows, cols).
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

enum class PartitionScheme { kIid, kSkewedNiid };

struct PartitionPlan {
    PartitionScheme scheme = PartitionScheme::kIid;
    std::size_t num_clients = 1;
    double train_fraction = 0.8;
    int classes_per_client = 5;  // skewed scheme only
    std::uint64_t seed = 0;
};

struct ClientData {
    Dataset train;
    Dataset test;
};

// Splits a dataset across clients. iid assigns each sample uniformly at
// random; skewed gives each client classes_per_client random classes and
// spreads each class uniformly over its owners. Every client ends with at
// least one train and one test sample (bounded re-draws, then InputError).
std::vector<ClientData> partition(const Dataset& dataset, const PartitionPlan& plan);

void export_csv(const Dataset& dataset, const std::string& path);

}  // namespace fedprune
