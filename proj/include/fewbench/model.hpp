#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fewbench/ops.hpp"
#include "fewbench/rng.hpp"
#include "fewbench/tensor.hpp"

namespace fewbench {

struct BackboneConfig {
    size_t input_dim = 32;
    std::vector<size_t> group_dims = {64, 64, 64, 64, 64};
    size_t layers_per_group = 1;

    size_t n_groups() const { return group_dims.size(); }
    size_t feature_dim() const { return group_dims.back(); }
    void validate() const;
};

struct DenseLayer {
    Param weight;  // d_in x d_out
    Param bias;    // d_out
};

/// Activations recorded during a training forward pass, consumed by backward.
struct ForwardTrace {
    std::vector<Tensor> layer_inputs;  // input to each affine, in layer order
    std::vector<Tensor> preacts;       // affine outputs before relu
    Tensor features;
};

/// Grouped dense backbone: each group is layers_per_group affine+relu layers.
/// Groups can be frozen as units, which is how adaptability is controlled.
class BackboneModel {
public:
    BackboneConfig config;
    std::vector<std::vector<DenseLayer>> groups;
    std::vector<bool> group_frozen;

    size_t n_groups() const { return groups.size(); }
    size_t feature_dim() const { return config.feature_dim(); }

    Tensor forward(const Tensor& batch) const;
    ForwardTrace forward_trace(const Tensor& batch) const;

    /// Accumulates parameter gradients for dL/dfeatures. Propagation stops
    /// below the deepest group that still contains learnable parameters.
    void backward(const ForwardTrace& trace, const Tensor& feature_grad);

    void set_group_frozen(size_t group, bool frozen);

    std::vector<Param*> all_params();
    std::vector<Param*> learnable_params();
};

class CosineHead {
public:
    Param weights;  // n_classes x d_feat
    double scale = 10.0;

    CosineHead() = default;
    CosineHead(Tensor weight_matrix, double scale_value);

    size_t n_classes() const { return weights.value.rows(); }
    size_t feature_dim() const { return weights.value.cols(); }

    /// logit[b,c] = scale * cos(features[b], weights[c])
    Tensor logits(const Tensor& features) const;

    /// Accumulates the weight gradient (unless frozen) and returns the
    /// gradient with respect to the features.
    Tensor backward(const Tensor& features, const Tensor& upstream);
};

/// Number of trailing backbone groups that stay learnable during
/// fine-tuning; the head is always learnable. j=0 freezes the whole
/// backbone, j=G fine-tunes everything.
struct AdaptabilityLevel {
    size_t learnable_groups = 1;
};

void set_adaptability(BackboneModel& model, CosineHead& head, AdaptabilityLevel level);

std::pair<BackboneModel, CosineHead> init_model(const BackboneConfig& config,
                                                size_t n_classes, double head_scale,
                                                uint64_t seed);

/// Fresh head with rows drawn from the fan-in uniform scheme; every row is
/// guaranteed a nonzero norm.
CosineHead init_cosine_head(size_t n_classes, size_t feature_dim, double scale,
                            RngStream& stream);

/// Deep copy with every group frozen; training the original never changes it.
BackboneModel clone_frozen_reference(const BackboneModel& model);

/// Deep copy preserving frozen flags, with fresh optimizer state.
BackboneModel clone_for_finetuning(const BackboneModel& model);

struct Checkpoint {
    BackboneModel backbone;
    uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const BackboneModel& model, uint64_t seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fewbench
