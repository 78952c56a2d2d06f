#include "fedprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fedprune/errors.hpp"
#include "fedprune/rng.hpp"

namespace fedprune {

namespace {

constexpr int kPartitionAttempts = 100;

std::size_t floor_frac(double fraction, std::size_t n) {
    // Tolerates representation error in fractions like 0.3 (0.3 * 10 must be 3).
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::string& path) {
    if (offset + 4 > buf.size()) {
        throw FormatError(path + ": truncated header at byte offset " +
                          std::to_string(offset));
    }
    return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
           (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open file");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

}  // namespace

std::vector<std::size_t> Dataset::sample_shape() const {
    return std::vector<std::size_t>(inputs.shape.begin() + 1, inputs.shape.end());
}

std::size_t Dataset::sample_stride() const {
    return shape_size(sample_shape());
}

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.classes = dataset.classes;
    std::vector<std::size_t> shape = dataset.inputs.shape;
    shape[0] = idx.size();
    out.inputs = Tensor(shape);
    const std::size_t stride = dataset.sample_stride();
    out.labels.reserve(idx.size());
    for (std::size_t row = 0; row < idx.size(); ++row) {
        const std::size_t src = idx[row];
        std::copy_n(dataset.inputs.data.begin() + static_cast<std::ptrdiff_t>(src * stride),
                    stride,
                    out.inputs.data.begin() + static_cast<std::ptrdiff_t>(row * stride));
        out.labels.push_back(dataset.labels[src]);
    }
    return out;
}

Dataset generate_synthetic(std::size_t n_samples, std::size_t n_features,
                           int classes, std::uint64_t seed, double spread) {
    if (n_samples == 0 || n_features == 0 || classes <= 0) {
        throw InputError("synthetic dataset dimensions must be positive");
    }
    if (static_cast<std::size_t>(classes) > n_samples) {
        throw InputError("more classes than samples");
    }
    Rng rng(mix_seed(seed, Stream::kSynthetic));

    // Class means: random unit directions scaled by `spread`.
    std::vector<std::vector<double>> means(static_cast<std::size_t>(classes));
    for (auto& mean : means) {
        mean.resize(n_features);
        double norm2 = 0.0;
        for (double& v : mean) {
            v = rng.normal();
            norm2 += v * v;
        }
        const double scale = spread / std::sqrt(std::max(norm2, 1e-12));
        for (double& v : mean) v *= scale;
    }

    Dataset ds;
    ds.classes = classes;
    ds.inputs = Tensor({n_samples, n_features});
    ds.labels.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
        ds.labels[i] = label;
        for (std::size_t f = 0; f < n_features; ++f) {
            ds.inputs.data[i * n_features + f] =
                means[static_cast<std::size_t>(label)][f] + rng.normal();
        }
    }
    return ds;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const std::vector<unsigned char> img = read_file(images_path);
    const std::vector<unsigned char> lab = read_file(labels_path);

    const std::uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != 0x00000803u) {
        throw FormatError(images_path + ": bad magic at byte offset 0 (got 0x" +
                          [&] { char b[16]; std::snprintf(b, sizeof b, "%08x", img_magic); return std::string(b); }() +
                          ", want 0x00000803)");
    }
    const std::uint32_t n = read_be32(img, 4, images_path);
    const std::uint32_t rows = read_be32(img, 8, images_path);
    const std::uint32_t cols = read_be32(img, 12, images_path);
    const std::size_t want = 16 + std::size_t(n) * rows * cols;
    if (img.size() < want) {
        throw FormatError(images_path + ": truncated pixel data at byte offset " +
                          std::to_string(img.size()) + " (need " +
                          std::to_string(want) + " bytes)");
    }

    const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801u) {
        throw FormatError(labels_path + ": bad magic at byte offset 0");
    }
    const std::uint32_t n_lab = read_be32(lab, 4, labels_path);
    if (n_lab != n) {
        throw FormatError(labels_path + ": label count " + std::to_string(n_lab) +
                          " does not match image count " + std::to_string(n));
    }
    if (lab.size() < 8 + std::size_t(n)) {
        throw FormatError(labels_path + ": truncated label data at byte offset " +
                          std::to_string(lab.size()));
    }

    Dataset ds;
    ds.inputs = Tensor({n, 1, rows, cols});
    for (std::size_t i = 0; i < std::size_t(n) * rows * cols; ++i) {
        ds.inputs.data[i] = static_cast<double>(img[16 + i]) / 255.0;
    }
    ds.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = static_cast<int>(lab[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = max_label + 1;
    return ds;
}

namespace {

// One partition attempt; returns per-sample client assignment or empty on a
// constraint violation (uncovered class, client with < 2 samples).
std::vector<std::size_t> try_assign(const Dataset& dataset, const PartitionPlan& plan,
                                    Rng& rng) {
    const std::size_t n = dataset.size();
    std::vector<std::size_t> owner(n);

    if (plan.scheme == PartitionScheme::kIid) {
        for (std::size_t i = 0; i < n; ++i) {
            owner[i] = static_cast<std::size_t>(rng.uniform_int(plan.num_clients));
        }
    } else {
        const int classes = dataset.classes;
        const int per_client = std::min(plan.classes_per_client, classes);
        std::vector<std::vector<std::size_t>> owners_of_class(
            static_cast<std::size_t>(classes));
        for (std::size_t c = 0; c < plan.num_clients; ++c) {
            for (int cls : rng.sample_without_replacement(classes, per_client)) {
                owners_of_class[static_cast<std::size_t>(cls)].push_back(c);
            }
        }
        for (const auto& owners : owners_of_class) {
            if (owners.empty()) return {};  // redraw ownership
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto& owners = owners_of_class[static_cast<std::size_t>(dataset.labels[i])];
            owner[i] = owners[rng.uniform_int(owners.size())];
        }
    }

    std::vector<std::size_t> counts(plan.num_clients, 0);
    for (std::size_t o : owner) ++counts[o];
    for (std::size_t c : counts) {
        if (c < 2) return {};  // needs >=1 train and >=1 test sample
    }
    return owner;
}

}  // namespace

std::vector<ClientData> partition(const Dataset& dataset, const PartitionPlan& plan) {
    if (plan.num_clients == 0) throw InputError("partition needs >=1 client");
    if (plan.train_fraction <= 0.0 || plan.train_fraction >= 1.0) {
        throw InputError("train fraction must be in (0, 1)");
    }
    if (dataset.size() < 2 * plan.num_clients) {
        throw InputError("dataset too small for requested client count");
    }

    std::vector<std::size_t> owner;
    for (int attempt = 0; attempt < kPartitionAttempts; ++attempt) {
        Rng rng(mix_seed(plan.seed, Stream::kPartition, static_cast<std::uint64_t>(attempt)));
        owner = try_assign(dataset, plan, rng);
        if (!owner.empty()) break;
    }
    if (owner.empty()) {
        throw InputError("could not produce a valid partition (a class had no owner "
                         "or a client stayed below 2 samples)");
    }

    std::vector<std::vector<std::size_t>> per_client(plan.num_clients);
    for (std::size_t i = 0; i < owner.size(); ++i) per_client[owner[i]].push_back(i);

    std::vector<ClientData> clients(plan.num_clients);
    for (std::size_t c = 0; c < plan.num_clients; ++c) {
        auto& idx = per_client[c];
        Rng rng(mix_seed(plan.seed, Stream::kPartition, 1000003 + c));
        rng.shuffle(idx);
        std::size_t n_train = floor_frac(plan.train_fraction, idx.size());
        n_train = std::max<std::size_t>(1, std::min(n_train, idx.size() - 1));
        std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        std::vector<std::size_t> test_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
        clients[c].train = subset(dataset, train_idx);
        clients[c].test = subset(dataset, test_idx);
    }
    return clients;
}

void export_csv(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError(path + ": cannot open for writing");
    const std::size_t stride = dataset.sample_stride();
    out << "label";
    for (std::size_t f = 0; f < stride; ++f) out << ",x" << f;
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out << dataset.labels[i];
        for (std::size_t f = 0; f < stride; ++f) {
            std::snprintf(buf, sizeof buf, "%.17g", dataset.inputs.data[i * stride + f]);
            out << ',' << buf;
        }
        out << "\n";
    }
}

}  // namespace fedprune
