#pragma once

#include <functional>
#include <span>

#include "fewbench/tensor.hpp"

namespace fewbench {

/// out[b,j] = sum_i input[b,i]*weight[i,j] + bias[j]
Tensor affine_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct AffineGrads {
    Tensor input;   // batch x d_in
    Tensor weight;  // d_in x d_out
    Tensor bias;    // d_out
};

AffineGrads affine_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& upstream);

Tensor relu(const Tensor& input);

/// Passes upstream where input > 0, zero elsewhere (gradient at 0 is 0).
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

/// Max-subtracted softmax of a rank-1 tensor; strictly positive, sums to 1.
Tensor softmax(const Tensor& logits);

/// Row-wise softmax of a rank-2 tensor.
Tensor softmax_rows(const Tensor& logits);

struct SgdConfig {
    double learning_rate = 0.1;
    double weight_decay = 1e-4;
    double momentum = 0.9;

    void validate() const;
};

/// Heavy-ball SGD with weight decay folded into the gradient:
///   g' = grad + weight_decay*value
///   momentum_buf = momentum*momentum_buf + g'
///   value -= learning_rate*momentum_buf
/// Frozen params are untouched. Gradients are zeroed afterward.
void sgd_step(std::span<Param* const> params, const SgdConfig& cfg);

/// Checks analytic gradients against central finite differences.
///
/// `loss_and_grad` must recompute the loss at the current parameter values
/// and accumulate analytic gradients into the params (grads are zeroed here
/// before the analytic call). Returns the max over all coordinates of
/// |a - n| / max(1e-8, |a| + |n|).
double finite_diff_check(const std::function<double()>& loss_and_grad,
                         std::span<Param* const> params, double h = 1e-5);

}  // namespace fewbench
