#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewbench/tensor.hpp"

namespace fewbench {

enum class Split : uint8_t { unassigned = 0, base, validation, novel };

const char* split_name(Split s);

/// Labeled feature vectors plus a class-to-split assignment. Classes, not
/// samples, belong to splits; base/validation/novel class sets are disjoint
/// by construction. Immutable once built.
struct DatasetStore {
    Tensor features;               // n_samples x input_dim
    std::vector<uint32_t> labels;  // n_samples
    uint32_t n_classes = 0;
    std::vector<Split> split_of_class;  // n_classes entries

    size_t n_samples() const { return labels.size(); }
    size_t input_dim() const;

    std::vector<uint32_t> classes_in(Split s) const;
    std::vector<uint32_t> samples_of_class(uint32_t c) const;
    std::vector<uint32_t> sample_indices_in(Split s) const;

    /// Gathers the given sample rows into a dense batch.
    Tensor gather_rows(const std::vector<uint32_t>& indices) const;

    void validate() const;
};

/// Synthetic stand-in dataset: one Gaussian cluster per class. Means are
/// drawn uniformly on the unit sphere of a shared mean_dim-dimensional
/// subspace (the discriminative directions every class shares). Noise is
/// diagonal Gaussian: per-coordinate std cluster_spread inside the mean
/// subspace and nuisance_spread on the remaining coordinates. The nuisance
/// directions carry no class signal, so a backbone pretrained on many base
/// classes can learn to suppress them; that invariance is what transfers
/// to novel classes, while a 5-sample learner cannot identify it.
///
/// mean_dim = 0 puts the means on the full input-space sphere.
/// nuisance_spread < 0 copies cluster_spread (isotropic clusters).
/// Deterministic given seed.
DatasetStore generate_synthetic(uint32_t n_classes, uint32_t samples_per_class,
                                uint32_t input_dim, double cluster_spread,
                                uint64_t seed, uint32_t mean_dim = 0,
                                double nuisance_spread = -1.0);

/// Assigns classes to splits via a seeded permutation. Counts must sum to
/// the store's class count.
DatasetStore split_dataset(DatasetStore store, uint32_t n_base, uint32_t n_val,
                           uint32_t n_novel, uint64_t seed);

void save_dataset(const std::string& path, const DatasetStore& store);
DatasetStore load_dataset(const std::string& path);

/// CSV import: header row `label,f1,...,fd` required; one sample per line.
DatasetStore import_csv(const std::string& path);

}  // namespace fewbench
