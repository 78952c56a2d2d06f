#include "fedprune/tensor.hpp"

#include <cmath>

#include "fedprune/errors.hpp"

namespace fedprune {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape_)
    : shape(std::move(shape_)), data(shape_size(shape), 0.0) {
    for (std::size_t d : shape) {
        if (d == 0) throw ConfigError("tensor dimensions must be positive");
    }
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    for (std::size_t d : shape) {
        if (d == 0) throw ConfigError("tensor dimensions must be positive");
    }
    if (shape_size(shape) != data.size()) {
        throw ConfigError("tensor shape does not match data length");
    }
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace fedprune
