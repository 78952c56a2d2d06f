#pragma once

#include <cstddef>
#include <vector>

namespace fedprune {

// Dense row-major n-d array of doubles; the only numeric container in the
// engine. Invariant: product(shape) == data.size().
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape_);  // zero-filled
    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // 2-d accessors (weights, batched flat activations).
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);

}  // namespace fedprune
