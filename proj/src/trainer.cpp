#include "fewbench/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "fewbench/common.hpp"
#include "fewbench/metrics.hpp"
#include "fewbench/ops.hpp"

namespace fewbench {

namespace {

constexpr double kNormFloor = 1e-12;

std::vector<Param*> trainable_params(BackboneModel& model, CosineHead& head) {
    std::vector<Param*> params = model.learnable_params();
    if (!head.weights.frozen) {
        params.push_back(&head.weights);
    }
    return params;
}

void scale_in_place(Tensor& t, double factor) {
    for (size_t i = 0; i < t.size(); ++i) {
        t[i] *= factor;
    }
}

// Rows whose features survived relu with a usable direction. Aggressive
// fine-tuning can zero out whole rows; those have no cosine and are handled
// out-of-band instead of aborting the run.
std::vector<size_t> rows_with_direction(const Tensor& features) {
    std::vector<size_t> alive;
    const size_t d = features.cols();
    for (size_t b = 0; b < features.rows(); ++b) {
        const double* row = features.data() + b * d;
        double n2 = 0.0;
        for (size_t i = 0; i < d; ++i) {
            n2 += row[i] * row[i];
        }
        if (std::sqrt(n2) >= kNormFloor) {
            alive.push_back(b);
        }
    }
    return alive;
}

Tensor gather_tensor_rows(const Tensor& t, const std::vector<size_t>& rows) {
    Tensor out({rows.size(), t.cols()});
    for (size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(t.data() + rows[i] * t.cols(), t.cols(), out.data() + i * t.cols());
    }
    return out;
}

}  // namespace

Pretrained pretrain(const DatasetStore& store, const BackboneConfig& config,
                    const PretrainConfig& cfg, uint64_t seed) {
    store.validate();
    config.validate();
    cfg.sgd.validate();
    if (cfg.epochs == 0 || cfg.batch_size == 0) {
        throw UsageError("pretrain: epochs and batch_size must be positive");
    }
    if (cfg.learnable_groups && *cfg.learnable_groups != config.n_groups()) {
        throw UsageError("pretrain trains all " + std::to_string(config.n_groups()) +
                         " groups; requested " + std::to_string(*cfg.learnable_groups));
    }

    std::vector<uint32_t> base_classes = store.classes_in(Split::base);
    if (base_classes.empty()) {
        throw CapacityError("pretrain: store has no base split");
    }
    std::vector<uint32_t> local_of_class(store.n_classes, 0);
    for (size_t i = 0; i < base_classes.size(); ++i) {
        local_of_class[base_classes[i]] = static_cast<uint32_t>(i);
    }

    auto [model, head] =
        init_model(config, base_classes.size(), cfg.head_scale, derive_seed(seed, "pretrain"));

    std::vector<uint32_t> samples = store.sample_indices_in(Split::base);
    RngStream shuffle_stream(derive_seed(seed, "pretrain-shuffle"));
    std::vector<Param*> params = trainable_params(model, head);

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_stream.shuffle(samples);
        for (size_t start = 0; start < samples.size(); start += cfg.batch_size) {
            const size_t end = std::min(start + cfg.batch_size, samples.size());
            std::vector<uint32_t> batch_idx(samples.begin() + start, samples.begin() + end);
            Tensor batch = store.gather_rows(batch_idx);
            std::vector<uint32_t> labels(batch_idx.size());
            for (size_t i = 0; i < batch_idx.size(); ++i) {
                labels[i] = local_of_class[store.labels[batch_idx[i]]];
            }

            ForwardTrace trace = model.forward_trace(batch);
            const std::vector<size_t> alive = rows_with_direction(trace.features);
            Tensor grad_features(trace.features.shape());
            double loss = 0.0;
            if (alive.size() == labels.size()) {
                Tensor logits = head.logits(trace.features);
                CeResult ce = label_smoothed_ce(logits, labels, cfg.epsilon);
                loss = ce.loss;
                grad_features = head.backward(trace.features, ce.grad_logits);
            } else if (!alive.empty()) {
                Tensor sub_features = gather_tensor_rows(trace.features, alive);
                std::vector<uint32_t> sub_labels(alive.size());
                for (size_t i = 0; i < alive.size(); ++i) {
                    sub_labels[i] = labels[alive[i]];
                }
                Tensor logits = head.logits(sub_features);
                CeResult ce = label_smoothed_ce(logits, sub_labels, cfg.epsilon);
                loss = ce.loss;
                Tensor sub_grad = head.backward(sub_features, ce.grad_logits);
                for (size_t i = 0; i < alive.size(); ++i) {
                    std::copy_n(sub_grad.data() + i * sub_grad.cols(), sub_grad.cols(),
                                grad_features.data() + alive[i] * grad_features.cols());
                }
            }
            if (!std::isfinite(loss)) {
                throw NumericError("pretrain diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", step " +
                                   std::to_string(start / cfg.batch_size));
            }
            model.backward(trace, grad_features);
            sgd_step(params, cfg.sgd);
        }
    }
    return Pretrained{std::move(model), std::move(head), std::move(base_classes)};
}

double base_train_accuracy(const Pretrained& pretrained, const DatasetStore& store) {
    std::vector<uint32_t> local_of_class(store.n_classes, 0);
    for (size_t i = 0; i < pretrained.base_classes.size(); ++i) {
        local_of_class[pretrained.base_classes[i]] = static_cast<uint32_t>(i);
    }
    const std::vector<uint32_t> samples = store.sample_indices_in(Split::base);
    if (samples.empty()) {
        throw CapacityError("base_train_accuracy: store has no base split");
    }
    size_t correct = 0;
    constexpr size_t kEvalBatch = 256;
    for (size_t start = 0; start < samples.size(); start += kEvalBatch) {
        const size_t end = std::min(start + kEvalBatch, samples.size());
        std::vector<uint32_t> batch_idx(samples.begin() + start, samples.begin() + end);
        Tensor features = pretrained.backbone.forward(store.gather_rows(batch_idx));
        const std::vector<size_t> alive = rows_with_direction(features);
        if (alive.size() != batch_idx.size()) {
            // dead rows count as misclassified
            Tensor sub = gather_tensor_rows(features, alive);
            std::vector<uint32_t> sub_idx(alive.size());
            for (size_t i = 0; i < alive.size(); ++i) {
                sub_idx[i] = batch_idx[alive[i]];
            }
            features = std::move(sub);
            batch_idx = std::move(sub_idx);
        }
        if (batch_idx.empty()) {
            continue;
        }
        Tensor logits = pretrained.base_head.logits(features);
        for (size_t b = 0; b < batch_idx.size(); ++b) {
            const double* row = logits.data() + b * logits.cols();
            size_t best = 0;
            for (size_t c = 1; c < logits.cols(); ++c) {
                if (row[c] > row[best]) {
                    best = c;
                }
            }
            if (best == local_of_class[store.labels[batch_idx[b]]]) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

EpisodeModel finetune_episode(const BackboneModel& pretrained, const EpisodeSpec& episode,
                              const DatasetStore& store, const FinetuneConfig& cfg,
                              const SrPool* sr_pool, uint64_t stream_seed, SrAudit* audit) {
    cfg.sgd.validate();
    cfg.loss.validate();
    if (cfg.epochs == 0) {
        throw UsageError("finetune_episode: epochs must be >= 1");
    }
    if (cfg.sr_enabled && (sr_pool == nullptr || sr_pool->size() == 0)) {
        throw CapacityError("finetune_episode: SR enabled but no SR pool provided");
    }

    const size_t n_way = episode.n_way();
    const size_t k_shot = episode.k_shot();

    BackboneModel tuned = clone_for_finetuning(pretrained);
    const BackboneModel reference = clone_frozen_reference(pretrained);

    RngStream winit_stream(derive_seed(stream_seed, "winit"));
    CosineHead head =
        init_cosine_head(n_way, tuned.feature_dim(), cfg.head_scale, winit_stream);
    set_adaptability(tuned, head, cfg.adaptability);

    Tensor support = store.gather_rows(episode.support);
    std::vector<uint32_t> labels(episode.support.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        labels[i] = static_cast<uint32_t>(i / k_shot);
    }

    RngStream sr_stream(derive_seed(stream_seed, "sr"));
    std::vector<Param*> params = trainable_params(tuned, head);

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        ForwardTrace trace = tuned.forward_trace(support);

        double ce_loss = 0.0;
        Tensor grad_features(trace.features.shape());
        const std::vector<size_t> alive = rows_with_direction(trace.features);
        if (alive.size() == labels.size()) {
            Tensor logits = head.logits(trace.features);
            CeResult ce = label_smoothed_ce(logits, labels, cfg.loss.epsilon);
            ce_loss = ce.loss;
            grad_features = head.backward(trace.features, ce.grad_logits);
        } else if (!alive.empty()) {
            // Zeroed-out support rows carry no direction; train on the rest.
            if (audit != nullptr) {
                audit->degenerate_skips += labels.size() - alive.size();
            }
            Tensor sub_features = gather_tensor_rows(trace.features, alive);
            std::vector<uint32_t> sub_labels(alive.size());
            for (size_t i = 0; i < alive.size(); ++i) {
                sub_labels[i] = labels[alive[i]];
            }
            Tensor logits = head.logits(sub_features);
            CeResult ce = label_smoothed_ce(logits, sub_labels, cfg.loss.epsilon);
            ce_loss = ce.loss;
            Tensor sub_grad = head.backward(sub_features, ce.grad_logits);
            for (size_t i = 0; i < alive.size(); ++i) {
                std::copy_n(sub_grad.data() + i * sub_grad.cols(), sub_grad.cols(),
                            grad_features.data() + alive[i] * grad_features.cols());
            }
        } else if (audit != nullptr) {
            audit->degenerate_skips += labels.size();
        }
        tuned.backward(trace, grad_features);

        double sr_loss = 0.0;
        if (cfg.sr_enabled) {
            SrBatch batch = sample_sr_batch(*sr_pool, cfg.sr_batch_size, sr_stream);
            if (audit != nullptr) {
                std::vector<uint32_t> global = batch.pool_indices;
                if (!sr_pool->origin_indices.empty()) {
                    for (uint32_t& idx : global) {
                        idx = sr_pool->origin_indices[idx];
                    }
                }
                audit->step_indices.push_back(std::move(global));
            }
            Tensor reference_features = reference.forward(batch.rows);
            ForwardTrace sr_trace = tuned.forward_trace(batch.rows);
            SrResult sr = stability_regularization(reference_features, sr_trace.features,
                                                   /*skip_degenerate=*/true);
            if (audit != nullptr) {
                audit->degenerate_skips += sr.skipped_rows;
            }
            sr_loss = sr.loss;
            scale_in_place(sr.grad_tuned, cfg.loss.alpha);
            tuned.backward(sr_trace, sr.grad_tuned);
        }

        const double total =
            cfg.sr_enabled ? combined_loss(ce_loss, sr_loss, cfg.loss.alpha) : ce_loss;
        if (!std::isfinite(total)) {
            throw NumericError("finetune diverged: non-finite loss at epoch " +
                               std::to_string(epoch) + " for episode " +
                               std::to_string(episode.episode_id));
        }
        sgd_step(params, cfg.sgd);
    }
    return EpisodeModel{std::move(tuned), std::move(head)};
}

double evaluate_episode(std::span<const EpisodeModel> models, const EpisodeSpec& episode,
                        const DatasetStore& store) {
    if (models.empty()) {
        throw UsageError("evaluate_episode: no models");
    }
    const size_t n_way = episode.n_way();
    const size_t q_total = episode.query.size();
    if (n_way == 0 || q_total == 0 || q_total % n_way != 0) {
        throw DimensionError("evaluate_episode: episode needs N > 0 classes and a query "
                             "set divisible by N");
    }
    for (const EpisodeModel& m : models) {
        if (m.head.n_classes() != n_way) {
            throw DimensionError("evaluate_episode: member head has " +
                                 std::to_string(m.head.n_classes()) + " classes, episode has " +
                                 std::to_string(n_way));
        }
    }

    Tensor query = store.gather_rows(episode.query);
    Tensor mean_probs({q_total, n_way});
    const double uniform = 1.0 / static_cast<double>(n_way);
    for (const EpisodeModel& m : models) {
        Tensor features = m.backbone.forward(query);
        const std::vector<size_t> alive = rows_with_direction(features);
        if (alive.size() == q_total) {
            Tensor probs = softmax_rows(m.head.logits(features));
            for (size_t i = 0; i < probs.size(); ++i) {
                mean_probs[i] += probs[i];
            }
        } else {
            // A zeroed-out feature has no cosine with any class; that
            // member contributes an uninformative uniform vote for the row.
            Tensor probs({q_total, n_way});
            for (size_t b = 0; b < q_total; ++b) {
                for (size_t c = 0; c < n_way; ++c) {
                    probs(b, c) = uniform;
                }
            }
            if (!alive.empty()) {
                Tensor sub = softmax_rows(m.head.logits(gather_tensor_rows(features, alive)));
                for (size_t i = 0; i < alive.size(); ++i) {
                    std::copy_n(sub.data() + i * n_way, n_way,
                                probs.data() + alive[i] * n_way);
                }
            }
            for (size_t i = 0; i < probs.size(); ++i) {
                mean_probs[i] += probs[i];
            }
        }
    }
    scale_in_place(mean_probs, 1.0 / static_cast<double>(models.size()));

    const size_t q_per_class = episode.q_queries();
    size_t correct = 0;
    for (size_t i = 0; i < q_total; ++i) {
        const double* row = mean_probs.data() + i * n_way;
        size_t best = 0;
        for (size_t c = 1; c < n_way; ++c) {
            if (row[c] > row[best]) {
                best = c;  // strict > keeps the lowest index on ties
            }
        }
        if (best == i / q_per_class) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(q_total);
}

double run_ensemble_episode(const BackboneModel& pretrained, const EpisodeSpec& episode,
                            const DatasetStore& store, const FinetuneConfig& cfg,
                            std::span<const SrPool> member_pools, uint64_t episode_ctx_seed,
                            std::vector<SrAudit>* member_audits) {
    if (!cfg.sr_enabled) {
        throw UsageError("run_ensemble_episode: EnSR always includes SR");
    }
    if (member_pools.empty()) {
        throw UsageError("run_ensemble_episode: need at least one member pool");
    }
    if (member_audits != nullptr) {
        member_audits->assign(member_pools.size(), SrAudit{});
    }
    std::vector<EpisodeModel> members;
    members.reserve(member_pools.size());
    for (size_t m = 0; m < member_pools.size(); ++m) {
        SrAudit* audit = member_audits != nullptr ? &(*member_audits)[m] : nullptr;
        members.push_back(finetune_episode(pretrained, episode, store, cfg, &member_pools[m],
                                           derive_seed(episode_ctx_seed, "member", {m}),
                                           audit));
    }
    return evaluate_episode(members, episode, store);
}

Variant variant_from_string(const std::string& name) {
    if (name == "plain") return Variant::plain;
    if (name == "ac") return Variant::ac;
    if (name == "ac-sr") return Variant::ac_sr;
    if (name == "ac-ensr") return Variant::ac_ensr;
    throw UsageError("unknown variant '" + name + "' (expected plain|ac|ac-sr|ac-ensr)");
}

const char* variant_to_string(Variant v) {
    switch (v) {
        case Variant::plain: return "plain";
        case Variant::ac: return "ac";
        case Variant::ac_sr: return "ac-sr";
        case Variant::ac_ensr: return "ac-ensr";
    }
    return "?";
}

namespace {

template <typename Fn>
void rethrow_with_context(uint32_t run, uint32_t episode_id, Fn&& fn) {
    const auto ctx = [&](const char* what) {
        return "(run " + std::to_string(run) + ", episode " + std::to_string(episode_id) +
               ") " + what;
    };
    try {
        fn();
    } catch (const NumericError& e) {
        throw NumericError(ctx(e.what()));
    } catch (const CapacityError& e) {
        throw CapacityError(ctx(e.what()));
    } catch (const DegenerateInputError& e) {
        throw DegenerateInputError(ctx(e.what()));
    } catch (const DimensionError& e) {
        throw DimensionError(ctx(e.what()));
    } catch (const DataFormatError& e) {
        throw DataFormatError(ctx(e.what()));
    }
}

}  // namespace

std::vector<RunResults> run_benchmark(const BackboneModel& pretrained,
                                      const DatasetStore& store,
                                      const std::vector<EpisodeSpec>& episodes,
                                      const VariantSpec& variant, const FinetuneConfig& cfg,
                                      const BenchmarkOptions& opts) {
    if (episodes.empty()) {
        throw UsageError("run_benchmark: no episodes");
    }
    if (opts.n_runs == 0) {
        throw UsageError("run_benchmark: n_runs must be >= 1");
    }
    if (variant.ensemble_m == 0) {
        throw UsageError("run_benchmark: ensemble_m must be >= 1");
    }
    store.validate();
    validate_episodes(episodes, store);

    FinetuneConfig run_cfg = cfg;
    switch (variant.kind) {
        case Variant::plain:
            run_cfg.adaptability = AdaptabilityLevel{pretrained.n_groups()};
            run_cfg.sr_enabled = false;
            break;
        case Variant::ac:
            run_cfg.sr_enabled = false;
            break;
        case Variant::ac_sr:
        case Variant::ac_ensr:
            run_cfg.sr_enabled = true;
            break;
    }

    std::vector<SrPool> member_pools;
    if (variant.kind == Variant::ac_sr) {
        if (opts.external_sr_pool != nullptr) {
            member_pools.push_back(*opts.external_sr_pool);
        } else {
            member_pools.push_back(sr_pool_from_base(store));
        }
    } else if (variant.kind == Variant::ac_ensr) {
        if (opts.external_sr_pool != nullptr) {
            throw UsageError("run_benchmark: external SR pools apply to ac-sr only; "
                             "ac-ensr partitions the base set");
        }
        BasePartition partition = partition_base(store, variant.ensemble_m,
                                                 derive_seed(opts.master_seed, "partition"));
        for (size_t m = 0; m < partition.subsets.size(); ++m) {
            member_pools.push_back(sr_pool_from_subset(
                store, partition.subsets[m], "base-subset-" + std::to_string(m)));
        }
    }

    std::vector<RunResults> all_runs(opts.n_runs);
    for (uint32_t r = 0; r < opts.n_runs; ++r) {
        all_runs[r].run_id = r;
        all_runs[r].variant = variant_to_string(variant.kind);
        all_runs[r].episode_file_hash = opts.episode_file_hash;
        all_runs[r].master_seed = opts.master_seed;
        all_runs[r].per_episode_accuracy.assign(episodes.size(), 0.0);
        all_runs[r].episode_ids.resize(episodes.size());
        for (size_t e = 0; e < episodes.size(); ++e) {
            all_runs[r].episode_ids[e] = episodes[e].episode_id;
        }
    }

    const size_t n_tasks = static_cast<size_t>(opts.n_runs) * episodes.size();
    auto run_task = [&](size_t task) {
        const uint32_t r = static_cast<uint32_t>(task / episodes.size());
        const size_t e = task % episodes.size();
        const EpisodeSpec& episode = episodes[e];
        rethrow_with_context(r, episode.episode_id, [&] {
            const uint64_t ctx =
                derive_seed(opts.master_seed, "episode-ctx", {r, episode.episode_id});
            double accuracy = 0.0;
            if (variant.kind == Variant::ac_ensr) {
                accuracy = run_ensemble_episode(pretrained, episode, store, run_cfg,
                                                member_pools, ctx);
            } else {
                const SrPool* pool = member_pools.empty() ? nullptr : &member_pools.front();
                EpisodeModel model =
                    finetune_episode(pretrained, episode, store, run_cfg, pool,
                                     derive_seed(ctx, "member", {0}));
                accuracy = evaluate_episode(std::span(&model, 1), episode, store);
            }
            all_runs[r].per_episode_accuracy[e] = accuracy;
        });
    };

    if (opts.threads <= 1) {
        for (size_t task = 0; task < n_tasks; ++task) {
            run_task(task);
        }
    } else {
        std::atomic<size_t> next{0};
        std::atomic<bool> failed{false};
        std::mutex error_mutex;
        std::exception_ptr first_error;
        auto worker = [&] {
            while (!failed.load(std::memory_order_relaxed)) {
                const size_t task = next.fetch_add(1);
                if (task >= n_tasks) {
                    return;
                }
                try {
                    run_task(task);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) {
                        first_error = std::current_exception();
                    }
                    failed.store(true, std::memory_order_relaxed);
                    return;
                }
            }
        };
        std::vector<std::thread> threads;
        const size_t n_threads = std::min(opts.threads, n_tasks);
        threads.reserve(n_threads);
        for (size_t t = 0; t < n_threads; ++t) {
            threads.emplace_back(worker);
        }
        for (auto& t : threads) {
            t.join();
        }
        if (first_error) {
            std::rethrow_exception(first_error);
        }
    }
    return all_runs;
}

std::string results_csv(const RunResults& results) {
    std::string out = "episode_id,accuracy\n";
    char buf[64];
    for (size_t i = 0; i < results.per_episode_accuracy.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%u,%.17g\n", results.episode_ids[i],
                      results.per_episode_accuracy[i]);
        out += buf;
    }
    return out;
}

void write_run_results(const std::string& csv_path, const std::string& sidecar_path,
                       const RunResults& results, const nlohmann::json& config_snapshot) {
    write_file_atomic(csv_path, results_csv(results));

    nlohmann::json sidecar;
    sidecar["variant"] = results.variant;
    sidecar["run_id"] = results.run_id;
    sidecar["master_seed"] = results.master_seed;
    sidecar["episode_file_hash"] = hex64(results.episode_file_hash);
    sidecar["n_episodes"] = results.per_episode_accuracy.size();
    sidecar["config"] = config_snapshot;
    sidecar["config_hash"] = hex64(fnv1a64(config_snapshot.dump()));
    sidecar["csv"] = std::filesystem::path(csv_path).filename().string();
    write_file_atomic(sidecar_path, sidecar.dump(2) + "\n");
}

LoadedRun load_run_results(const std::string& csv_path) {
    LoadedRun loaded;
    const std::string bytes = read_file(csv_path);
    std::istringstream in(bytes);
    std::string line;
    if (!std::getline(in, line) || line != "episode_id,accuracy") {
        throw DataFormatError(csv_path + ": expected header 'episode_id,accuracy'");
    }
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw DataFormatError(csv_path + ": malformed row at line " +
                                  std::to_string(line_no));
        }
        try {
            loaded.results.episode_ids.push_back(
                static_cast<uint32_t>(std::stoul(line.substr(0, comma))));
            loaded.results.per_episode_accuracy.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            throw DataFormatError(csv_path + ": bad values at line " + std::to_string(line_no));
        }
    }
    if (loaded.results.per_episode_accuracy.empty()) {
        throw DataFormatError(csv_path + ": no accuracy rows");
    }

    std::filesystem::path sidecar_path(csv_path);
    sidecar_path.replace_extension(".json");
    const std::string sidecar_bytes = read_file(sidecar_path.string());
    try {
        loaded.sidecar = nlohmann::json::parse(sidecar_bytes);
    } catch (const nlohmann::json::exception& e) {
        throw DataFormatError(sidecar_path.string() + ": bad sidecar JSON: " + e.what());
    }
    loaded.results.variant = loaded.sidecar.value("variant", "");
    loaded.results.run_id = loaded.sidecar.value("run_id", 0u);
    if (loaded.sidecar.contains("episode_file_hash")) {
        loaded.results.episode_file_hash =
            std::stoull(loaded.sidecar["episode_file_hash"].get<std::string>(), nullptr, 16);
    }
    return loaded;
}

}  // namespace fewbench
