#include "fewbench/config.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <sstream>

#include "fewbench/common.hpp"

namespace fewbench {

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) {
            throw std::invalid_argument("trailing chars");
        }
        return v;
    } catch (const std::exception&) {
        throw UsageError("config: bad integer for " + key + ": '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) {
            throw std::invalid_argument("trailing chars");
        }
        return v;
    } catch (const std::exception&) {
        throw UsageError("config: bad number for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw UsageError("config: bad boolean for " + key + ": '" + value + "'");
}

std::vector<size_t> parse_dims(const std::string& key, const std::string& value) {
    std::vector<size_t> dims;
    std::istringstream in(value);
    std::string field;
    while (std::getline(in, field, ',')) {
        dims.push_back(static_cast<size_t>(parse_u64(key, field)));
    }
    if (dims.empty()) {
        throw UsageError("config: " + key + " needs at least one width");
    }
    return dims;
}

std::string dims_to_string(const std::vector<size_t>& dims) {
    std::string out;
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(dims[i]);
    }
    return out;
}

struct KeyEntry {
    const char* key;
    const char* doc;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeyEntry>& key_table() {
    using C = ExperimentConfig;
    static const std::vector<KeyEntry> table = {
        {"data.classes", "number of synthetic classes (default 100)",
         [](C& c, const std::string& v) { c.data_classes = static_cast<uint32_t>(parse_u64("data.classes", v)); },
         [](const C& c) { return std::to_string(c.data_classes); }},
        {"data.samples_per_class", "synthetic samples per class (default 100)",
         [](C& c, const std::string& v) { c.data_samples_per_class = static_cast<uint32_t>(parse_u64("data.samples_per_class", v)); },
         [](const C& c) { return std::to_string(c.data_samples_per_class); }},
        {"data.input_dim", "feature dimension (default 32)",
         [](C& c, const std::string& v) { c.data_input_dim = static_cast<uint32_t>(parse_u64("data.input_dim", v)); },
         [](const C& c) { return std::to_string(c.data_input_dim); }},
        {"data.cluster_spread", "per-coordinate std of each class cluster (default 0.2)",
         [](C& c, const std::string& v) { c.data_cluster_spread = parse_double("data.cluster_spread", v); },
         [](const C& c) { return format_double(c.data_cluster_spread); }},
        {"data.mean_dim", "dimension of the shared subspace holding class means (default 8)",
         [](C& c, const std::string& v) { c.data_mean_dim = static_cast<uint32_t>(parse_u64("data.mean_dim", v)); },
         [](const C& c) { return std::to_string(c.data_mean_dim); }},
        {"data.nuisance_spread", "per-coordinate std outside the mean subspace; <0 copies data.cluster_spread",
         [](C& c, const std::string& v) { c.data_nuisance_spread = parse_double("data.nuisance_spread", v); },
         [](const C& c) { return format_double(c.data_nuisance_spread); }},
        {"data.synthesize", "generate a synthetic dataset when data.path is empty (default true)",
         [](C& c, const std::string& v) { c.data_synthesize = parse_bool("data.synthesize", v); },
         [](const C& c) { return c.data_synthesize ? "true" : "false"; }},
        {"data.path", "dataset file to load instead of synthesizing (default empty)",
         [](C& c, const std::string& v) { c.data_path = v; },
         [](const C& c) { return c.data_path; }},
        {"split.base", "base classes (default 64)",
         [](C& c, const std::string& v) { c.split_base = static_cast<uint32_t>(parse_u64("split.base", v)); },
         [](const C& c) { return std::to_string(c.split_base); }},
        {"split.validation", "validation classes (default 16; kept for protocol fidelity, unused by bench)",
         [](C& c, const std::string& v) { c.split_validation = static_cast<uint32_t>(parse_u64("split.validation", v)); },
         [](const C& c) { return std::to_string(c.split_validation); }},
        {"split.novel", "novel classes (default 20)",
         [](C& c, const std::string& v) { c.split_novel = static_cast<uint32_t>(parse_u64("split.novel", v)); },
         [](const C& c) { return std::to_string(c.split_novel); }},
        {"backbone.group_dims", "comma list of group output widths (default 64,64,64,64,64)",
         [](C& c, const std::string& v) { c.backbone_group_dims = parse_dims("backbone.group_dims", v); },
         [](const C& c) { return dims_to_string(c.backbone_group_dims); }},
        {"backbone.layers_per_group", "affine+relu layers per group (default 1)",
         [](C& c, const std::string& v) { c.backbone_layers_per_group = static_cast<size_t>(parse_u64("backbone.layers_per_group", v)); },
         [](const C& c) { return std::to_string(c.backbone_layers_per_group); }},
        {"model.head_scale", "cosine-logit scale s (default 10)",
         [](C& c, const std::string& v) { c.head_scale = parse_double("model.head_scale", v); },
         [](const C& c) { return format_double(c.head_scale); }},
        {"pretrain.epochs", "pretraining epochs (default 60)",
         [](C& c, const std::string& v) { c.pretrain_epochs = static_cast<size_t>(parse_u64("pretrain.epochs", v)); },
         [](const C& c) { return std::to_string(c.pretrain_epochs); }},
        {"pretrain.batch_size", "pretraining minibatch size (default 128)",
         [](C& c, const std::string& v) { c.pretrain_batch_size = static_cast<size_t>(parse_u64("pretrain.batch_size", v)); },
         [](const C& c) { return std::to_string(c.pretrain_batch_size); }},
        {"pretrain.lr", "pretraining learning rate (default 0.1)",
         [](C& c, const std::string& v) { c.pretrain_lr = parse_double("pretrain.lr", v); },
         [](const C& c) { return format_double(c.pretrain_lr); }},
        {"pretrain.weight_decay", "pretraining weight decay (default 1e-4)",
         [](C& c, const std::string& v) { c.pretrain_weight_decay = parse_double("pretrain.weight_decay", v); },
         [](const C& c) { return format_double(c.pretrain_weight_decay); }},
        {"pretrain.momentum", "pretraining momentum (default 0.9)",
         [](C& c, const std::string& v) { c.pretrain_momentum = parse_double("pretrain.momentum", v); },
         [](const C& c) { return format_double(c.pretrain_momentum); }},
        {"pretrain.epsilon", "pretraining label smoothing (default 0.1)",
         [](C& c, const std::string& v) { c.pretrain_epsilon = parse_double("pretrain.epsilon", v); },
         [](const C& c) { return format_double(c.pretrain_epsilon); }},
        {"finetune.epochs", "fine-tuning epochs per episode (default 100)",
         [](C& c, const std::string& v) { c.finetune_epochs = static_cast<size_t>(parse_u64("finetune.epochs", v)); },
         [](const C& c) { return std::to_string(c.finetune_epochs); }},
        {"finetune.lr", "fine-tuning learning rate (default 0.1)",
         [](C& c, const std::string& v) { c.finetune_lr = parse_double("finetune.lr", v); },
         [](const C& c) { return format_double(c.finetune_lr); }},
        {"finetune.weight_decay", "fine-tuning weight decay (default 1e-4); applied to all params uniformly",
         [](C& c, const std::string& v) { c.finetune_weight_decay = parse_double("finetune.weight_decay", v); },
         [](const C& c) { return format_double(c.finetune_weight_decay); }},
        {"finetune.momentum", "fine-tuning momentum (default 0.9)",
         [](C& c, const std::string& v) { c.finetune_momentum = parse_double("finetune.momentum", v); },
         [](const C& c) { return format_double(c.finetune_momentum); }},
        {"finetune.epsilon", "label smoothing during fine-tuning (default 0.1)",
         [](C& c, const std::string& v) { c.finetune_epsilon = parse_double("finetune.epsilon", v); },
         [](const C& c) { return format_double(c.finetune_epsilon); }},
        {"finetune.alpha", "stability-regularization weight (default 0.1)",
         [](C& c, const std::string& v) { c.finetune_alpha = parse_double("finetune.alpha", v); },
         [](const C& c) { return format_double(c.finetune_alpha); }},
        {"finetune.adaptability", "trailing learnable backbone groups j (default 1; 0=head only)",
         [](C& c, const std::string& v) { c.finetune_adaptability = static_cast<size_t>(parse_u64("finetune.adaptability", v)); },
         [](const C& c) { return std::to_string(c.finetune_adaptability); }},
        {"finetune.sr_batch", "samples per SR batch, drawn with replacement (default 256)",
         [](C& c, const std::string& v) { c.finetune_sr_batch = static_cast<size_t>(parse_u64("finetune.sr_batch", v)); },
         [](const C& c) { return std::to_string(c.finetune_sr_batch); }},
        {"finetune.sr_resample", "when SR batches are redrawn: step|epoch (equivalent under full-batch support)",
         [](C& c, const std::string& v) {
             if (v != "step" && v != "epoch") {
                 throw UsageError("config: finetune.sr_resample must be step or epoch");
             }
             c.finetune_sr_resample = v;
         },
         [](const C& c) { return c.finetune_sr_resample; }},
        {"variant", "method variant: plain|ac|ac-sr|ac-ensr (default ac-sr)",
         [](C& c, const std::string& v) { c.variant = v; },
         [](const C& c) { return c.variant; }},
        {"ensemble.m", "EnSR ensemble size M (default 4)",
         [](C& c, const std::string& v) { c.ensemble_m = static_cast<size_t>(parse_u64("ensemble.m", v)); },
         [](const C& c) { return std::to_string(c.ensemble_m); }},
        {"protocol.n_way", "classes per episode N (default 5)",
         [](C& c, const std::string& v) { c.n_way = static_cast<uint32_t>(parse_u64("protocol.n_way", v)); },
         [](const C& c) { return std::to_string(c.n_way); }},
        {"protocol.k_shot", "support samples per class K (default 1)",
         [](C& c, const std::string& v) { c.k_shot = static_cast<uint32_t>(parse_u64("protocol.k_shot", v)); },
         [](const C& c) { return std::to_string(c.k_shot); }},
        {"protocol.q_queries", "query samples per class Q (default 15)",
         [](C& c, const std::string& v) { c.q_queries = static_cast<uint32_t>(parse_u64("protocol.q_queries", v)); },
         [](const C& c) { return std::to_string(c.q_queries); }},
        {"bench.episodes", "pre-sampled episodes per run (default 500)",
         [](C& c, const std::string& v) { c.n_episodes = static_cast<uint32_t>(parse_u64("bench.episodes", v)); },
         [](const C& c) { return std::to_string(c.n_episodes); }},
        {"bench.runs", "benchmark runs to average (default 5)",
         [](C& c, const std::string& v) { c.n_runs = static_cast<uint32_t>(parse_u64("bench.runs", v)); },
         [](const C& c) { return std::to_string(c.n_runs); }},
        {"bench.threads", "worker threads; 0 = hardware concurrency (default 0)",
         [](C& c, const std::string& v) { c.threads = static_cast<size_t>(parse_u64("bench.threads", v)); },
         [](const C& c) { return std::to_string(c.threads); }},
        {"master_seed", "root seed; every random stream is derived from it (default 42)",
         [](C& c, const std::string& v) { c.master_seed = parse_u64("master_seed", v); },
         [](const C& c) { return std::to_string(c.master_seed); }},
        {"out.dir", "output directory (default out)",
         [](C& c, const std::string& v) { c.out_dir = v; },
         [](const C& c) { return c.out_dir; }},
        {"episodes.path", "episode file path (default <out>/episodes.jsonl)",
         [](C& c, const std::string& v) { c.episodes_path = v; },
         [](const C& c) { return c.episodes_path; }},
        {"episodes.expect_hash", "refuse to bench unless the episode file hashes to this (default empty)",
         [](C& c, const std::string& v) { c.expect_episode_hash = v; },
         [](const C& c) { return c.expect_episode_hash; }},
        {"checkpoint.path", "backbone checkpoint path (default <out>/backbone.ckpt)",
         [](C& c, const std::string& v) { c.checkpoint_path = v; },
         [](const C& c) { return c.checkpoint_path; }},
        {"srpool.path", "dataset file used as an external unlabeled SR pool (default empty = base set)",
         [](C& c, const std::string& v) { c.sr_pool_path = v; },
         [](const C& c) { return c.sr_pool_path; }},
    };
    return table;
}

}  // namespace

std::string ExperimentConfig::resolved_episodes_path() const {
    return episodes_path.empty() ? out_dir + "/episodes.jsonl" : episodes_path;
}

std::string ExperimentConfig::resolved_checkpoint_path() const {
    return checkpoint_path.empty() ? out_dir + "/backbone.ckpt" : checkpoint_path;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    for (const KeyEntry& entry : key_table()) {
        if (key == entry.key) {
            entry.set(*this, value);
            return;
        }
    }
    throw UsageError("config: unknown key '" + key + "'");
}

void ExperimentConfig::validate() const {
    if (n_way == 0 || k_shot == 0 || q_queries == 0) {
        throw UsageError("config: protocol.n_way, protocol.k_shot, protocol.q_queries must be positive");
    }
    if (n_episodes == 0) {
        throw UsageError("config: bench.episodes must be positive");
    }
    if (n_runs == 0) {
        throw UsageError("config: bench.runs must be positive");
    }
    if (ensemble_m == 0) {
        throw UsageError("config: ensemble.m must be positive");
    }
    if (finetune_adaptability > backbone_group_dims.size()) {
        throw UsageError("config: finetune.adaptability " + std::to_string(finetune_adaptability) +
                         " exceeds group count " + std::to_string(backbone_group_dims.size()));
    }
    if (variant != "plain" && variant != "ac" && variant != "ac-sr" && variant != "ac-ensr") {
        throw UsageError("config: unknown variant '" + variant + "'");
    }
}

nlohmann::json ExperimentConfig::snapshot() const {
    nlohmann::json j = nlohmann::json::object();
    for (const KeyEntry& entry : key_table()) {
        j[entry.key] = entry.get(*this);
    }
    return j;
}

uint64_t ExperimentConfig::config_hash() const { return fnv1a64(snapshot().dump()); }

ExperimentConfig load_config_file(const std::string& path) {
    ExperimentConfig config;
    const std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        // trim
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            continue;
        }
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);

        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path + ": expected key=value at line " + std::to_string(line_no));
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        const auto key_end = key.find_last_not_of(" \t");
        key = key.substr(0, key_end == std::string::npos ? 0 : key_end + 1);
        const auto value_start = value.find_first_not_of(" \t");
        value = value_start == std::string::npos ? "" : value.substr(value_start);
        config.set(key, value);
    }
    return config;
}

std::string config_reference() {
    std::string out;
    for (const KeyEntry& entry : key_table()) {
        out += entry.key;
        out += "\n    ";
        out += entry.doc;
        out += '\n';
    }
    return out;
}

}  // namespace fewbench
