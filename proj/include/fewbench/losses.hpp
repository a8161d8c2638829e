#pragma once

#include <cstdint>
#include <span>

#include "fewbench/tensor.hpp"

namespace fewbench {

struct LossConfig {
    double epsilon = 0.1;  // label smoothing
    double alpha = 0.1;    // stability-regularization weight

    void validate() const;
};

struct CeResult {
    double loss = 0.0;
    Tensor grad_logits;
};

/// Label-smoothed cross-entropy, mean over the batch. The per-sample target
/// is (1-epsilon)*onehot + epsilon/N; grad_logits = (softmax - target)/batch.
CeResult label_smoothed_ce(const Tensor& logits, std::span<const uint32_t> labels,
                           double epsilon);

struct SrResult {
    double loss = 0.0;
    Tensor grad_tuned;
    size_t skipped_rows = 0;
};

/// Negative cosine similarity between reference and tuned feature rows,
/// mean over the batch. Gradient flows only into the tuned features.
///
/// Rows with norm below 1e-12 (a relu backbone can emit all-zero features)
/// throw by default; with skip_degenerate they are excluded from the mean
/// and counted instead, so long training runs cannot be poisoned by NaN.
SrResult stability_regularization(const Tensor& reference_features,
                                  const Tensor& tuned_features,
                                  bool skip_degenerate = false);

/// L = L_C + alpha * L_S
double combined_loss(double ce_loss, double sr_loss, double alpha);

}  // namespace fewbench
