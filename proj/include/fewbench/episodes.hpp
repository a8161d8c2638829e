#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewbench/data.hpp"
#include "fewbench/rng.hpp"

namespace fewbench {

/// One N-way K-shot Q-query draw. support and query hold dataset sample
/// indices grouped by class position: support[c*K + k], query[c*Q + q].
struct EpisodeSpec {
    uint32_t episode_id = 0;
    std::vector<uint32_t> classes;  // N novel class ids
    std::vector<uint32_t> support;  // N*K
    std::vector<uint32_t> query;    // N*Q

    size_t n_way() const { return classes.size(); }
    size_t k_shot() const { return classes.empty() ? 0 : support.size() / classes.size(); }
    size_t q_queries() const { return classes.empty() ? 0 : query.size() / classes.size(); }
};

/// Draws one episode from the novel split: N classes without replacement,
/// then K+Q distinct samples per class (first K support, next Q query).
EpisodeSpec sample_episode(const DatasetStore& store, uint32_t n_way, uint32_t k_shot,
                           uint32_t q_queries, RngStream& stream);

/// Samples n_episodes episodes and writes them to path (one JSON object per
/// line). Every method variant evaluated later consumes this identical file.
std::vector<EpisodeSpec> presample_episodes(const DatasetStore& store, uint32_t n_episodes,
                                            uint32_t n_way, uint32_t k_shot,
                                            uint32_t q_queries, uint64_t seed,
                                            const std::string& path);

std::string episodes_to_jsonl(const std::vector<EpisodeSpec>& episodes);
std::vector<EpisodeSpec> load_episode_file(const std::string& path);

/// Checks that every episode references the store's novel split correctly
/// and has support and query disjoint.
void validate_episodes(const std::vector<EpisodeSpec>& episodes, const DatasetStore& store);

/// M disjoint subsets of the base sample indices, sizes differing by at
/// most 1, union covering. Subsets are kept in ascending index order so the
/// M=1 partition is exactly the base split.
struct BasePartition {
    std::vector<std::vector<uint32_t>> subsets;

    size_t n_subsets() const { return subsets.size(); }
};

BasePartition partition_base(const DatasetStore& store, size_t m, uint64_t seed);

/// Unlabeled feature pool used to compute the stability regularizer.
/// origin_indices, when nonempty, maps pool rows back to dataset sample
/// indices (used for the ensemble subset-discipline audit).
struct SrPool {
    Tensor features;
    std::string source_name;
    std::vector<uint32_t> origin_indices;

    size_t size() const { return features.rank() == 2 ? features.rows() : 0; }
};

SrPool sr_pool_from_base(const DatasetStore& store);
SrPool sr_pool_from_subset(const DatasetStore& store, const std::vector<uint32_t>& subset,
                           std::string name);
/// External unlabeled pool loaded from a dataset file (labels ignored).
SrPool sr_pool_from_file(const std::string& path);

struct SrBatch {
    Tensor rows;
    std::vector<uint32_t> pool_indices;
};

/// batch_size rows drawn i.i.d. uniformly with replacement.
SrBatch sample_sr_batch(const SrPool& pool, size_t batch_size, RngStream& stream);

}  // namespace fewbench
