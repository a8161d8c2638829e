#include "fewbench/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "fewbench/common.hpp"

namespace fewbench {

namespace {

size_t shape_product(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<size_t> shape)
    : shape_(std::move(shape)), values_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_product(shape_) != values_.size()) {
        throw DimensionError("tensor shape does not match value count: expected " +
                             std::to_string(shape_product(shape_)) + ", got " +
                             std::to_string(values_.size()));
    }
}

Tensor Tensor::vector_of(std::vector<double> values) {
    const size_t n = values.size();
    return Tensor({n}, std::move(values));
}

size_t Tensor::rows() const {
    if (shape_.size() != 2) {
        throw DimensionError("rows() requires a rank-2 tensor, got rank " +
                             std::to_string(shape_.size()));
    }
    return shape_[0];
}

size_t Tensor::cols() const {
    if (shape_.size() != 2) {
        throw DimensionError("cols() requires a rank-2 tensor, got rank " +
                             std::to_string(shape_.size()));
    }
    return shape_[1];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
}

Param::Param(Tensor v)
    : value(std::move(v)), grad(value.shape()), momentum_buf(value.shape()) {}

void Param::reset_optimizer_state() {
    grad.fill(0.0);
    momentum_buf.fill(0.0);
}

}  // namespace fewbench
