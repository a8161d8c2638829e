#include "fewbench/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fewbench/common.hpp"

namespace fewbench {

namespace {

void require_matrix(const Tensor& t, const char* name) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(name) + " must be rank-2, got rank " +
                             std::to_string(t.rank()));
    }
}

}  // namespace

Tensor affine_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_matrix(input, "input");
    require_matrix(weight, "weight");
    if (bias.rank() != 1) {
        throw DimensionError("bias must be rank-1, got rank " + std::to_string(bias.rank()));
    }
    const size_t batch = input.rows();
    const size_t d_in = input.cols();
    const size_t d_out = weight.cols();
    if (weight.rows() != d_in) {
        throw DimensionError("affine_forward: input cols (" + std::to_string(d_in) +
                             ") != weight rows (" + std::to_string(weight.rows()) + ")");
    }
    if (bias.size() != d_out) {
        throw DimensionError("affine_forward: weight cols (" + std::to_string(d_out) +
                             ") != bias size (" + std::to_string(bias.size()) + ")");
    }

    Tensor out({batch, d_out});
    for (size_t b = 0; b < batch; ++b) {
        double* out_row = out.data() + b * d_out;
        for (size_t j = 0; j < d_out; ++j) {
            out_row[j] = bias[j];
        }
        const double* in_row = input.data() + b * d_in;
        for (size_t i = 0; i < d_in; ++i) {
            const double x = in_row[i];
            const double* w_row = weight.data() + i * d_out;
            for (size_t j = 0; j < d_out; ++j) {
                out_row[j] += x * w_row[j];
            }
        }
    }
    return out;
}

AffineGrads affine_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& upstream) {
    require_matrix(input, "input");
    require_matrix(weight, "weight");
    require_matrix(upstream, "upstream");
    const size_t batch = input.rows();
    const size_t d_in = input.cols();
    const size_t d_out = weight.cols();
    if (weight.rows() != d_in) {
        throw DimensionError("affine_backward: input cols (" + std::to_string(d_in) +
                             ") != weight rows (" + std::to_string(weight.rows()) + ")");
    }
    if (upstream.rows() != batch || upstream.cols() != d_out) {
        throw DimensionError("affine_backward: upstream is " + std::to_string(upstream.rows()) +
                             "x" + std::to_string(upstream.cols()) + ", expected " +
                             std::to_string(batch) + "x" + std::to_string(d_out));
    }

    AffineGrads g{Tensor({batch, d_in}), Tensor({d_in, d_out}), Tensor({d_out})};
    for (size_t b = 0; b < batch; ++b) {
        const double* up_row = upstream.data() + b * d_out;
        const double* in_row = input.data() + b * d_in;

        for (size_t j = 0; j < d_out; ++j) {
            g.bias[j] += up_row[j];
        }
        // grad_input = upstream . weight^T : dot of two contiguous rows
        double* gi_row = g.input.data() + b * d_in;
        for (size_t i = 0; i < d_in; ++i) {
            const double* w_row = weight.data() + i * d_out;
            double acc = 0.0;
            for (size_t j = 0; j < d_out; ++j) {
                acc += up_row[j] * w_row[j];
            }
            gi_row[i] = acc;
        }
        // grad_weight[i,:] += input[b,i] * upstream[b,:]
        for (size_t i = 0; i < d_in; ++i) {
            const double x = in_row[i];
            double* gw_row = g.weight.data() + i * d_out;
            for (size_t j = 0; j < d_out; ++j) {
                gw_row[j] += x * up_row[j];
            }
        }
    }
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    for (size_t i = 0; i < input.size(); ++i) {
        out[i] = input[i] > 0.0 ? input[i] : 0.0;
    }
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
    if (!input.same_shape(upstream)) {
        throw DimensionError("relu_backward: input and upstream shapes differ");
    }
    Tensor out(input.shape());
    for (size_t i = 0; i < input.size(); ++i) {
        out[i] = input[i] > 0.0 ? upstream[i] : 0.0;
    }
    return out;
}

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 1) {
        throw DimensionError("softmax expects a rank-1 tensor");
    }
    Tensor out(logits.shape());
    const size_t n = logits.size();
    double max_v = logits[0];
    for (size_t i = 1; i < n; ++i) {
        max_v = std::max(max_v, logits[i]);
    }
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        out[i] = std::exp(logits[i] - max_v);
        sum += out[i];
    }
    for (size_t i = 0; i < n; ++i) {
        out[i] /= sum;
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits) {
    require_matrix(logits, "logits");
    Tensor out(logits.shape());
    const size_t rows = logits.rows();
    const size_t cols = logits.cols();
    for (size_t b = 0; b < rows; ++b) {
        const double* in = logits.data() + b * cols;
        double* o = out.data() + b * cols;
        double max_v = in[0];
        for (size_t c = 1; c < cols; ++c) {
            max_v = std::max(max_v, in[c]);
        }
        double sum = 0.0;
        for (size_t c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - max_v);
            sum += o[c];
        }
        for (size_t c = 0; c < cols; ++c) {
            o[c] /= sum;
        }
    }
    return out;
}

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw UsageError("learning_rate must be > 0");
    }
    if (weight_decay < 0.0) {
        throw UsageError("weight_decay must be >= 0");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw UsageError("momentum must be in [0, 1)");
    }
}

void sgd_step(std::span<Param* const> params, const SgdConfig& cfg) {
    cfg.validate();
    for (Param* p : params) {
        if (p->frozen) {
            p->zero_grad();
            continue;
        }
        const size_t n = p->value.size();
        for (size_t i = 0; i < n; ++i) {
            const double g = p->grad[i] + cfg.weight_decay * p->value[i];
            p->momentum_buf[i] = cfg.momentum * p->momentum_buf[i] + g;
            p->value[i] -= cfg.learning_rate * p->momentum_buf[i];
        }
        p->zero_grad();
    }
}

double finite_diff_check(const std::function<double()>& loss_and_grad,
                         std::span<Param* const> params, double h) {
    auto zero_all = [&] {
        for (Param* p : params) {
            p->zero_grad();
        }
    };

    zero_all();
    const double base = loss_and_grad();
    if (!std::isfinite(base)) {
        throw NumericError("finite_diff_check: loss is non-finite at the base point (" +
                           std::to_string(base) + ")");
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) {
        analytic.push_back(p->grad.values());
    }

    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        for (size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            zero_all();
            const double lp = loss_and_grad();
            p->value[i] = saved - h;
            zero_all();
            const double lm = loss_and_grad();
            p->value[i] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                throw NumericError("finite_diff_check: loss is non-finite at a probe point");
            }
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) /
                               std::max(1e-8, std::abs(a) + std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    zero_all();
    return max_rel;
}

}  // namespace fewbench
