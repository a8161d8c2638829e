#include "fewbench/episodes.hpp"

#include <algorithm>
#include <cstring>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fewbench/common.hpp"

namespace fewbench {

EpisodeSpec sample_episode(const DatasetStore& store, uint32_t n_way, uint32_t k_shot,
                           uint32_t q_queries, RngStream& stream) {
    if (n_way == 0 || k_shot == 0 || q_queries == 0) {
        throw UsageError("sample_episode: N, K, Q must be positive");
    }
    std::vector<uint32_t> novel = store.classes_in(Split::novel);
    if (novel.size() < n_way) {
        throw CapacityError("sample_episode: novel split has " + std::to_string(novel.size()) +
                            " classes, need " + std::to_string(n_way));
    }

    // Partial Fisher-Yates: first n_way entries are the drawn classes.
    for (uint32_t i = 0; i < n_way; ++i) {
        const size_t j = i + static_cast<size_t>(stream.next_below(novel.size() - i));
        std::swap(novel[i], novel[j]);
    }

    EpisodeSpec spec;
    spec.classes.assign(novel.begin(), novel.begin() + n_way);
    spec.support.reserve(static_cast<size_t>(n_way) * k_shot);
    spec.query.reserve(static_cast<size_t>(n_way) * q_queries);

    const uint32_t per_class = k_shot + q_queries;
    for (uint32_t c : spec.classes) {
        std::vector<uint32_t> samples = store.samples_of_class(c);
        if (samples.size() < per_class) {
            throw CapacityError("sample_episode: class " + std::to_string(c) + " has " +
                                std::to_string(samples.size()) + " samples, need " +
                                std::to_string(per_class));
        }
        for (uint32_t i = 0; i < per_class; ++i) {
            const size_t j = i + static_cast<size_t>(stream.next_below(samples.size() - i));
            std::swap(samples[i], samples[j]);
        }
        spec.support.insert(spec.support.end(), samples.begin(), samples.begin() + k_shot);
        spec.query.insert(spec.query.end(), samples.begin() + k_shot,
                          samples.begin() + per_class);
    }
    return spec;
}

std::string episodes_to_jsonl(const std::vector<EpisodeSpec>& episodes) {
    std::string out;
    for (const EpisodeSpec& e : episodes) {
        nlohmann::json j;
        j["episode_id"] = e.episode_id;
        j["classes"] = e.classes;
        j["support"] = e.support;
        j["query"] = e.query;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<EpisodeSpec> presample_episodes(const DatasetStore& store, uint32_t n_episodes,
                                            uint32_t n_way, uint32_t k_shot,
                                            uint32_t q_queries, uint64_t seed,
                                            const std::string& path) {
    if (n_episodes == 0) {
        throw UsageError("presample_episodes: episode count must be positive");
    }
    std::vector<EpisodeSpec> episodes;
    episodes.reserve(n_episodes);
    for (uint32_t id = 0; id < n_episodes; ++id) {
        RngStream stream(derive_seed(seed, "episode-sample", {id}));
        EpisodeSpec spec = sample_episode(store, n_way, k_shot, q_queries, stream);
        spec.episode_id = id;
        episodes.push_back(std::move(spec));
    }
    write_file_atomic(path, episodes_to_jsonl(episodes));
    return episodes;
}

std::vector<EpisodeSpec> load_episode_file(const std::string& path) {
    const std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::vector<EpisodeSpec> episodes;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataFormatError(path + ": bad episode record at line " +
                                  std::to_string(line_no) + ": " + e.what());
        }
        EpisodeSpec spec;
        try {
            spec.episode_id = j.at("episode_id").get<uint32_t>();
            spec.classes = j.at("classes").get<std::vector<uint32_t>>();
            spec.support = j.at("support").get<std::vector<uint32_t>>();
            spec.query = j.at("query").get<std::vector<uint32_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw DataFormatError(path + ": episode record missing field at line " +
                                  std::to_string(line_no) + ": " + e.what());
        }
        if (spec.classes.empty() || spec.support.size() % spec.classes.size() != 0 ||
            spec.query.size() % spec.classes.size() != 0) {
            throw DataFormatError(path + ": episode at line " + std::to_string(line_no) +
                                  " has inconsistent index counts");
        }
        episodes.push_back(std::move(spec));
    }
    if (episodes.empty()) {
        throw DataFormatError(path + ": no episodes found");
    }
    return episodes;
}

void validate_episodes(const std::vector<EpisodeSpec>& episodes, const DatasetStore& store) {
    for (const EpisodeSpec& e : episodes) {
        const size_t n = e.n_way();
        const size_t k = e.k_shot();
        const size_t q = e.q_queries();
        for (uint32_t c : e.classes) {
            if (c >= store.n_classes || store.split_of_class[c] != Split::novel) {
                throw DataFormatError("episode " + std::to_string(e.episode_id) + ": class " +
                                      std::to_string(c) + " is not in the novel split");
            }
        }
        std::set<uint32_t> seen;
        auto check = [&](const std::vector<uint32_t>& idxs, size_t per_class,
                         const char* what) {
            for (size_t pos = 0; pos < idxs.size(); ++pos) {
                const uint32_t s = idxs[pos];
                if (s >= store.n_samples()) {
                    throw DataFormatError("episode " + std::to_string(e.episode_id) + ": " +
                                          what + " index " + std::to_string(s) +
                                          " out of range");
                }
                const uint32_t expect_class = e.classes[pos / per_class];
                if (store.labels[s] != expect_class) {
                    throw DataFormatError("episode " + std::to_string(e.episode_id) + ": " +
                                          what + " sample " + std::to_string(s) +
                                          " belongs to class " +
                                          std::to_string(store.labels[s]) + ", expected " +
                                          std::to_string(expect_class));
                }
                if (!seen.insert(s).second) {
                    throw DataFormatError("episode " + std::to_string(e.episode_id) +
                                          ": sample " + std::to_string(s) +
                                          " appears in both support and query");
                }
            }
        };
        check(e.support, k, "support");
        check(e.query, q, "query");
        (void)n;
    }
}

BasePartition partition_base(const DatasetStore& store, size_t m, uint64_t seed) {
    if (m == 0) {
        throw UsageError("partition_base: M must be >= 1");
    }
    std::vector<uint32_t> base = store.sample_indices_in(Split::base);
    if (base.size() < m) {
        throw CapacityError("partition_base: base split has " + std::to_string(base.size()) +
                            " samples, cannot make " + std::to_string(m) + " subsets");
    }
    RngStream stream(derive_seed(seed, "partition"));
    stream.shuffle(base);

    BasePartition partition;
    partition.subsets.assign(m, {});
    for (size_t i = 0; i < base.size(); ++i) {
        partition.subsets[i % m].push_back(base[i]);
    }
    // Ascending order inside each subset; makes the M=1 partition identical
    // to the plain base split, so EnSR with M=1 reduces to AC+SR bitwise.
    for (auto& subset : partition.subsets) {
        std::sort(subset.begin(), subset.end());
    }
    return partition;
}

SrPool sr_pool_from_base(const DatasetStore& store) {
    std::vector<uint32_t> base = store.sample_indices_in(Split::base);
    if (base.empty()) {
        throw CapacityError("sr_pool_from_base: store has no base split");
    }
    return sr_pool_from_subset(store, base, "base");
}

SrPool sr_pool_from_subset(const DatasetStore& store, const std::vector<uint32_t>& subset,
                           std::string name) {
    if (subset.empty()) {
        throw CapacityError("sr_pool_from_subset: empty subset");
    }
    SrPool pool;
    pool.features = store.gather_rows(subset);
    pool.source_name = std::move(name);
    pool.origin_indices = subset;
    return pool;
}

SrPool sr_pool_from_file(const std::string& path) {
    DatasetStore store = load_dataset(path);
    if (store.n_samples() == 0) {
        throw CapacityError("sr_pool_from_file: " + path + " contains no samples");
    }
    SrPool pool;
    pool.features = std::move(store.features);
    pool.source_name = path;
    return pool;
}

SrBatch sample_sr_batch(const SrPool& pool, size_t batch_size, RngStream& stream) {
    const size_t n = pool.size();
    if (n == 0) {
        throw CapacityError("sample_sr_batch: empty pool");
    }
    const size_t d = pool.features.cols();
    SrBatch batch;
    batch.rows = Tensor({batch_size, d});
    batch.pool_indices.resize(batch_size);
    for (size_t i = 0; i < batch_size; ++i) {
        const uint32_t idx = static_cast<uint32_t>(stream.next_below(n));
        batch.pool_indices[i] = idx;
        std::memcpy(batch.rows.data() + i * d, pool.features.data() + idx * d,
                    d * sizeof(double));
    }
    return batch;
}

}  // namespace fewbench
