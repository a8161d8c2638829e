#pragma once

#include <cstddef>
#include <vector>

namespace fewbench {

/// Dense row-major tensor of 64-bit floats. Only rank 1 and 2 are used.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape);
    Tensor(std::vector<size_t> shape, std::vector<double> values);

    static Tensor matrix(size_t rows, size_t cols) { return Tensor({rows, cols}); }
    static Tensor vector_of(std::vector<double> values);

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t size() const { return values_.size(); }

    size_t rows() const;
    size_t cols() const;

    double& operator()(size_t r, size_t c) { return values_[r * shape_[1] + c]; }
    double operator()(size_t r, size_t c) const { return values_[r * shape_[1] + c]; }
    double& operator[](size_t i) { return values_[i]; }
    double operator[](size_t i) const { return values_[i]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    void fill(double v);
    bool all_finite() const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && values_ == other.values_;
    }

private:
    std::vector<size_t> shape_;
    std::vector<double> values_;
};

/// Learnable parameter: value plus optimizer state. When frozen is set the
/// optimizer must leave value bit-identical.
struct Param {
    Tensor value;
    Tensor grad;
    Tensor momentum_buf;
    bool frozen = false;

    Param() = default;
    explicit Param(Tensor v);

    void zero_grad() { grad.fill(0.0); }
    void reset_optimizer_state();
};

}  // namespace fewbench
