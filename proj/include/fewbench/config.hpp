#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace fewbench {

/// Every experiment knob, with defaults. Parsed from a flat key=value file
/// ('#' starts a comment); CLI flags override file values. The serialized
/// snapshot is stored next to every output artifact.
struct ExperimentConfig {
    // data
    uint32_t data_classes = 100;
    uint32_t data_samples_per_class = 100;
    uint32_t data_input_dim = 32;
    double data_cluster_spread = 0.20;
    uint32_t data_mean_dim = 8;
    double data_nuisance_spread = 0.35;  // <0: same as cluster_spread
    bool data_synthesize = true;
    std::string data_path;
    uint32_t split_base = 64;
    uint32_t split_validation = 16;
    uint32_t split_novel = 20;

    // backbone + head
    std::vector<size_t> backbone_group_dims = {64, 64, 64, 64, 64};
    size_t backbone_layers_per_group = 1;
    double head_scale = 10.0;

    // pretraining
    size_t pretrain_epochs = 60;
    size_t pretrain_batch_size = 128;
    double pretrain_lr = 0.1;
    double pretrain_weight_decay = 1e-4;
    double pretrain_momentum = 0.9;
    double pretrain_epsilon = 0.1;

    // fine-tuning
    size_t finetune_epochs = 100;
    double finetune_lr = 0.1;
    double finetune_weight_decay = 1e-4;
    double finetune_momentum = 0.9;
    double finetune_epsilon = 0.1;
    double finetune_alpha = 0.1;
    size_t finetune_adaptability = 1;
    size_t finetune_sr_batch = 256;
    std::string finetune_sr_resample = "step";  // step|epoch

    // variant + protocol
    std::string variant = "ac-sr";
    size_t ensemble_m = 4;
    uint32_t n_way = 5;
    uint32_t k_shot = 1;
    uint32_t q_queries = 15;
    uint32_t n_episodes = 500;
    uint32_t n_runs = 5;

    uint64_t master_seed = 42;
    size_t threads = 0;  // 0 = hardware concurrency

    // paths
    std::string out_dir = "out";
    std::string episodes_path;    // default: <out>/episodes.jsonl
    std::string checkpoint_path;  // default: <out>/backbone.ckpt
    std::string sr_pool_path;
    std::string expect_episode_hash;  // refuse to bench when the file differs

    std::string resolved_episodes_path() const;
    std::string resolved_checkpoint_path() const;

    void set(const std::string& key, const std::string& value);
    void validate() const;

    /// Canonical key=value snapshot (sorted keys) and its hash.
    nlohmann::json snapshot() const;
    uint64_t config_hash() const;
};

ExperimentConfig load_config_file(const std::string& path);

/// One line per key: name, default, and what it controls.
std::string config_reference();

}  // namespace fewbench
