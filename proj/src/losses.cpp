#include "fewbench/losses.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "fewbench/common.hpp"
#include "fewbench/ops.hpp"

namespace fewbench {

namespace {
constexpr double kNormFloor = 1e-12;
}

void LossConfig::validate() const {
    if (epsilon < 0.0 || epsilon >= 1.0) {
        throw UsageError("label smoothing epsilon must be in [0, 1)");
    }
    if (alpha < 0.0) {
        throw UsageError("SR weight alpha must be >= 0");
    }
}

CeResult label_smoothed_ce(const Tensor& logits, std::span<const uint32_t> labels,
                           double epsilon) {
    if (logits.rank() != 2) {
        throw DimensionError("label_smoothed_ce: logits must be rank-2");
    }
    const size_t batch = logits.rows();
    const size_t n = logits.cols();
    if (labels.size() != batch) {
        throw DimensionError("label_smoothed_ce: " + std::to_string(labels.size()) +
                             " labels for batch of " + std::to_string(batch));
    }
    if (epsilon < 0.0 || epsilon >= 1.0) {
        throw UsageError("label smoothing epsilon must be in [0, 1)");
    }

    const double uniform = epsilon / static_cast<double>(n);
    CeResult result;
    result.grad_logits = Tensor({batch, n});

    for (size_t b = 0; b < batch; ++b) {
        if (labels[b] >= n) {
            throw DimensionError("label_smoothed_ce: label " + std::to_string(labels[b]) +
                                 " out of range [0, " + std::to_string(n) + ") at row " +
                                 std::to_string(b));
        }
        const double* row = logits.data() + b * n;
        double max_v = row[0];
        for (size_t c = 1; c < n; ++c) {
            max_v = std::max(max_v, row[c]);
        }
        double sum = 0.0;
        for (size_t c = 0; c < n; ++c) {
            sum += std::exp(row[c] - max_v);
        }
        const double log_sum = std::log(sum) + max_v;

        double* g = result.grad_logits.data() + b * n;
        for (size_t c = 0; c < n; ++c) {
            const double target = uniform + (c == labels[b] ? 1.0 - epsilon : 0.0);
            const double log_p = row[c] - log_sum;
            result.loss -= target * log_p;
            g[c] = (std::exp(log_p) - target) / static_cast<double>(batch);
        }
    }
    result.loss /= static_cast<double>(batch);
    return result;
}

SrResult stability_regularization(const Tensor& reference_features,
                                  const Tensor& tuned_features, bool skip_degenerate) {
    if (reference_features.rank() != 2 || tuned_features.rank() != 2 ||
        !reference_features.same_shape(tuned_features)) {
        throw DimensionError("stability_regularization: feature shapes must match");
    }
    const size_t batch = tuned_features.rows();
    const size_t d = tuned_features.cols();

    SrResult result;
    result.grad_tuned = Tensor({batch, d});

    // First pass decides which rows count so the mean denominator is known.
    std::vector<char> usable(batch, 1);
    size_t used = 0;
    for (size_t b = 0; b < batch; ++b) {
        const double* r = reference_features.data() + b * d;
        const double* v = tuned_features.data() + b * d;
        double rn = 0.0, vn = 0.0;
        for (size_t i = 0; i < d; ++i) {
            rn += r[i] * r[i];
            vn += v[i] * v[i];
        }
        if (std::sqrt(rn) < kNormFloor || std::sqrt(vn) < kNormFloor) {
            if (!skip_degenerate) {
                throw DegenerateInputError(
                    "stability_regularization: zero-norm feature row " + std::to_string(b));
            }
            usable[b] = 0;
            ++result.skipped_rows;
        } else {
            ++used;
        }
    }
    if (used == 0) {
        return result;  // loss 0, zero gradient, all rows skipped
    }

    const double inv_used = 1.0 / static_cast<double>(used);
    double cos_sum = 0.0;
    for (size_t b = 0; b < batch; ++b) {
        if (!usable[b]) {
            continue;
        }
        const double* r = reference_features.data() + b * d;
        const double* v = tuned_features.data() + b * d;
        double dot = 0.0, rn2 = 0.0, vn2 = 0.0;
        for (size_t i = 0; i < d; ++i) {
            dot += r[i] * v[i];
            rn2 += r[i] * r[i];
            vn2 += v[i] * v[i];
        }
        // Identical rows have cosine exactly 1; sqrt rounding must not
        // disturb the L_S(f, f) == -1 contract.
        const bool identical = std::memcmp(r, v, d * sizeof(double)) == 0;
        const double rn = std::sqrt(rn2);
        const double vn = std::sqrt(vn2);
        const double cosv = identical ? 1.0 : dot / (rn * vn);
        cos_sum += cosv;
        // d(-cos)/dv = cos*v/|v|^2 - r/(|r||v|)
        double* g = result.grad_tuned.data() + b * d;
        for (size_t i = 0; i < d; ++i) {
            g[i] = (cosv * v[i] / vn2 - r[i] / (rn * vn)) * inv_used;
        }
    }
    // one division keeps the all-identical batch at exactly -1
    result.loss = -cos_sum / static_cast<double>(used);
    return result;
}

double combined_loss(double ce_loss, double sr_loss, double alpha) {
    if (!std::isfinite(ce_loss) || !std::isfinite(sr_loss)) {
        throw NumericError("combined_loss: non-finite input");
    }
    return ce_loss + alpha * sr_loss;
}

}  // namespace fewbench
