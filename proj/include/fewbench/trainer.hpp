#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fewbench/data.hpp"
#include "fewbench/episodes.hpp"
#include "fewbench/losses.hpp"
#include "fewbench/model.hpp"

namespace fewbench {

struct PretrainConfig {
    size_t epochs = 60;
    size_t batch_size = 128;
    SgdConfig sgd{0.1, 1e-4, 0.9};
    double epsilon = 0.1;
    double head_scale = 10.0;
    /// Pretraining always trains the whole backbone; a request for fewer
    /// groups is rejected. Present so callers cannot silently assume
    /// partial-freeze pretraining works.
    std::optional<size_t> learnable_groups;
};

struct Pretrained {
    BackboneModel backbone;
    CosineHead base_head;                // discarded by the episode pipeline
    std::vector<uint32_t> base_classes;  // ascending; head row c = base_classes[c]
};

/// Supervised pretraining on the base split with label-smoothed CE.
Pretrained pretrain(const DatasetStore& store, const BackboneConfig& config,
                    const PretrainConfig& cfg, uint64_t seed);

/// Fraction of base-split samples the pretrained model classifies
/// correctly; used to calibrate defaults.
double base_train_accuracy(const Pretrained& pretrained, const DatasetStore& store);

struct FinetuneConfig {
    size_t epochs = 100;
    SgdConfig sgd{0.1, 1e-4, 0.9};
    LossConfig loss{0.1, 0.1};
    AdaptabilityLevel adaptability{1};
    bool sr_enabled = true;
    size_t sr_batch_size = 256;
    double head_scale = 10.0;
};

struct EpisodeModel {
    BackboneModel backbone;
    CosineHead head;
};

/// Per-step record of which samples fed the stability regularizer, plus how
/// many all-zero feature rows (SR or support) were skipped during training.
struct SrAudit {
    std::vector<std::vector<uint32_t>> step_indices;  // dataset/pool indices per step
    size_t degenerate_skips = 0;
};

/// Fine-tunes a copy of the pretrained backbone plus a fresh cosine head on
/// one episode's support set. The pretrained model itself is never touched;
/// the SR loss compares against a frozen clone of it. Each epoch takes one
/// full-batch step over the N*K support samples, adding alpha * L_S from a
/// fresh SR batch when sr_enabled. Deterministic given stream_seed.
EpisodeModel finetune_episode(const BackboneModel& pretrained, const EpisodeSpec& episode,
                              const DatasetStore& store, const FinetuneConfig& cfg,
                              const SrPool* sr_pool, uint64_t stream_seed,
                              SrAudit* audit = nullptr);

/// Probability-averaged ensemble evaluation: softmax per model, mean across
/// models, argmax (ties to the lowest class index). Returns correct/(N*Q).
/// A query row whose features collapsed to zero has no cosine with any
/// class; that member votes uniformly for the row.
double evaluate_episode(std::span<const EpisodeModel> models, const EpisodeSpec& episode,
                        const DatasetStore& store);

/// Trains one fine-tuned model per partition subset, member m drawing SR
/// batches only from member_pools[m], and evaluates the ensemble.
double run_ensemble_episode(const BackboneModel& pretrained, const EpisodeSpec& episode,
                            const DatasetStore& store, const FinetuneConfig& cfg,
                            std::span<const SrPool> member_pools, uint64_t episode_ctx_seed,
                            std::vector<SrAudit>* member_audits = nullptr);

enum class Variant { plain, ac, ac_sr, ac_ensr };

Variant variant_from_string(const std::string& name);
const char* variant_to_string(Variant v);

struct VariantSpec {
    Variant kind = Variant::ac_sr;
    size_t ensemble_m = 4;
};

struct RunResults {
    uint32_t run_id = 0;
    std::string variant;
    std::vector<uint32_t> episode_ids;
    std::vector<double> per_episode_accuracy;
    uint64_t episode_file_hash = 0;
    uint64_t master_seed = 0;
};

struct BenchmarkOptions {
    uint32_t n_runs = 5;
    uint64_t master_seed = 42;
    size_t threads = 1;
    uint64_t episode_file_hash = 0;
    /// Replaces the base set as SR source for the ac_sr variant.
    const SrPool* external_sr_pool = nullptr;
};

/// Full benchmark: n_runs x episodes fine-tune/evaluate cycles. Run r,
/// episode e uses an rng stream keyed (master_seed, r, episode_id), so
/// parallel and serial execution produce identical results.
std::vector<RunResults> run_benchmark(const BackboneModel& pretrained,
                                      const DatasetStore& store,
                                      const std::vector<EpisodeSpec>& episodes,
                                      const VariantSpec& variant, const FinetuneConfig& cfg,
                                      const BenchmarkOptions& opts);

std::string results_csv(const RunResults& results);
void write_run_results(const std::string& csv_path, const std::string& sidecar_path,
                       const RunResults& results, const nlohmann::json& config_snapshot);

struct LoadedRun {
    RunResults results;
    nlohmann::json sidecar;
};

/// Reads a results CSV; the sidecar is looked up as "<csv stem>.json".
LoadedRun load_run_results(const std::string& csv_path);

}  // namespace fewbench
