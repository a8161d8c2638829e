#include "fewbench/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>

#include "fewbench/common.hpp"
#include "fewbench/episodes.hpp"
#include "fewbench/trainer.hpp"

namespace fewbench {

DatasetStore make_store(const ExperimentConfig& config) {
    DatasetStore store;
    if (!config.data_path.empty()) {
        const bool is_csv = config.data_path.size() > 4 &&
                            config.data_path.rfind(".csv") == config.data_path.size() - 4;
        store = is_csv ? import_csv(config.data_path) : load_dataset(config.data_path);
    } else if (config.data_synthesize) {
        store = generate_synthetic(config.data_classes, config.data_samples_per_class,
                                   config.data_input_dim, config.data_cluster_spread,
                                   config.master_seed, config.data_mean_dim,
                                   config.data_nuisance_spread);
    } else {
        throw DataFormatError(
            "no dataset available: data.path is empty and data.synthesize=false; "
            "set data.path to a dataset file or enable data.synthesize");
    }
    store = split_dataset(std::move(store), config.split_base, config.split_validation,
                          config.split_novel, config.master_seed);
    store.validate();
    return store;
}

namespace {

BackboneConfig backbone_config_of(const ExperimentConfig& config) {
    BackboneConfig bc;
    bc.input_dim = config.data_input_dim;
    bc.group_dims = config.backbone_group_dims;
    bc.layers_per_group = config.backbone_layers_per_group;
    return bc;
}

FinetuneConfig finetune_config_of(const ExperimentConfig& config) {
    FinetuneConfig fc;
    fc.epochs = config.finetune_epochs;
    fc.sgd = SgdConfig{config.finetune_lr, config.finetune_weight_decay,
                       config.finetune_momentum};
    fc.loss = LossConfig{config.finetune_epsilon, config.finetune_alpha};
    fc.adaptability = AdaptabilityLevel{config.finetune_adaptability};
    fc.sr_batch_size = config.finetune_sr_batch;
    fc.head_scale = config.head_scale;
    return fc;
}

size_t effective_threads(const ExperimentConfig& config) {
    if (config.threads != 0) {
        return config.threads;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

nlohmann::json manifest_of(const ExperimentConfig& config) {
    nlohmann::json m;
    m["config"] = config.snapshot();
    m["config_hash"] = hex64(config.config_hash());
    m["master_seed"] = config.master_seed;
    return m;
}

}  // namespace

PretrainOutputs cmd_pretrain(const ExperimentConfig& config) {
    config.validate();
    DatasetStore store = make_store(config);

    PretrainConfig pc;
    pc.epochs = config.pretrain_epochs;
    pc.batch_size = config.pretrain_batch_size;
    pc.sgd = SgdConfig{config.pretrain_lr, config.pretrain_weight_decay,
                       config.pretrain_momentum};
    pc.epsilon = config.pretrain_epsilon;
    pc.head_scale = config.head_scale;

    Pretrained pretrained =
        pretrain(store, backbone_config_of(config), pc, config.master_seed);

    PretrainOutputs out;
    out.checkpoint_path = config.resolved_checkpoint_path();
    save_checkpoint(out.checkpoint_path, pretrained.backbone, config.master_seed);
    out.base_accuracy = base_train_accuracy(pretrained, store);

    nlohmann::json manifest = manifest_of(config);
    manifest["checkpoint"] = out.checkpoint_path;
    manifest["checkpoint_hash"] = hex64(hash_file(out.checkpoint_path));
    manifest["base_train_accuracy"] = out.base_accuracy;
    out.manifest_path = config.out_dir + "/pretrain_manifest.json";
    write_file_atomic(out.manifest_path, manifest.dump(2) + "\n");
    return out;
}

EpisodesOutputs cmd_episodes(const ExperimentConfig& config) {
    config.validate();
    DatasetStore store = make_store(config);

    EpisodesOutputs out;
    out.path = config.resolved_episodes_path();
    const auto episodes =
        presample_episodes(store, config.n_episodes, config.n_way, config.k_shot,
                           config.q_queries, config.master_seed, out.path);
    out.n_episodes = episodes.size();
    out.file_hash = hash_file(out.path);

    nlohmann::json manifest = manifest_of(config);
    manifest["episodes"] = out.path;
    manifest["episode_file_hash"] = hex64(out.file_hash);
    manifest["n_episodes"] = out.n_episodes;
    write_file_atomic(config.out_dir + "/episodes_manifest.json", manifest.dump(2) + "\n");
    return out;
}

BenchOutputs cmd_bench(const ExperimentConfig& config) {
    config.validate();
    DatasetStore store = make_store(config);

    const std::string episodes_path = config.resolved_episodes_path();
    std::vector<EpisodeSpec> episodes = load_episode_file(episodes_path);
    const uint64_t episode_hash = hash_file(episodes_path);
    if (!config.expect_episode_hash.empty() &&
        config.expect_episode_hash != hex64(episode_hash)) {
        throw DataFormatError("episode file " + episodes_path + " hashes to " +
                              hex64(episode_hash) + " but config expects " +
                              config.expect_episode_hash +
                              "; all variants must share one episode file");
    }

    Checkpoint ckpt = load_checkpoint(config.resolved_checkpoint_path());

    VariantSpec variant{variant_from_string(config.variant), config.ensemble_m};
    SrPool external_pool;
    BenchmarkOptions opts;
    opts.n_runs = config.n_runs;
    opts.master_seed = config.master_seed;
    opts.threads = effective_threads(config);
    opts.episode_file_hash = episode_hash;
    if (!config.sr_pool_path.empty()) {
        external_pool = sr_pool_from_file(config.sr_pool_path);
        opts.external_sr_pool = &external_pool;
    }

    const std::vector<RunResults> runs = run_benchmark(
        ckpt.backbone, store, episodes, variant, finetune_config_of(config), opts);

    BenchOutputs out;
    out.episode_file_hash = episode_hash;
    const nlohmann::json snapshot = config.snapshot();
    for (const RunResults& run : runs) {
        const std::string stem =
            config.out_dir + "/results_" + run.variant + "_run" + std::to_string(run.run_id);
        write_run_results(stem + ".csv", stem + ".json", run, snapshot);
        out.csv_paths.push_back(stem + ".csv");
    }
    return out;
}

std::string render_metrics_table(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    size_t name_width = 7;  // "variant"
    for (const auto& [name, _] : rows) {
        name_width = std::max(name_width, name.size());
    }
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-*s  %8s  %8s  %8s  %8s  %8s  %8s\n",
                  static_cast<int>(name_width), "variant", "ACC_m", "ACC_1", "ACC_10",
                  "ACC_100", "sigma", "mu-3sig");
    out += buf;
    auto cell = [&](const MetricsReport& r, size_t k) {
        const auto it = r.acc_worst.find(k);
        if (it == r.acc_worst.end()) {
            return std::string("       -");
        }
        std::snprintf(buf, sizeof(buf), "%8.2f", 100.0 * it->second);
        return std::string(buf);
    };
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s  %8.2f", static_cast<int>(name_width),
                      name.c_str(), 100.0 * r.acc_m);
        out += buf;
        out += "  " + cell(r, 1) + "  " + cell(r, 10) + "  " + cell(r, 100);
        std::snprintf(buf, sizeof(buf), "  %8.2f  %8.2f\n", 100.0 * r.sigma,
                      100.0 * r.surrogate);
        out += buf;
    }
    return out;
}

ReportOutputs cmd_report(const ExperimentConfig& config,
                         const std::vector<std::string>& results_csv_paths,
                         const ReportOptions& options) {
    if (results_csv_paths.empty()) {
        throw UsageError("report: need at least one results CSV");
    }

    struct VariantRuns {
        std::vector<MetricsReport> reports;
        std::vector<std::vector<double>> samples;
        std::vector<nlohmann::json> sidecars;
    };
    std::map<std::string, VariantRuns> by_variant;
    std::string first_hash;
    for (const std::string& path : results_csv_paths) {
        LoadedRun run = load_run_results(path);
        const std::string hash = run.sidecar.value("episode_file_hash", "");
        if (first_hash.empty()) {
            first_hash = hash;
        } else if (hash != first_hash && !options.allow_mixed_episodes) {
            throw DataFormatError("report: " + path + " was produced from episode file " +
                                  hash + ", others from " + first_hash +
                                  "; comparing variants across different episode files "
                                  "requires --allow-mixed-episodes");
        }
        VariantRuns& vr = by_variant[run.results.variant];
        vr.reports.push_back(compute_report(run.results.per_episode_accuracy));
        vr.samples.push_back(run.results.per_episode_accuracy);
        vr.sidecars.push_back(std::move(run.sidecar));
    }

    std::vector<std::pair<std::string, MetricsReport>> rows;
    nlohmann::json report_json;
    report_json["episode_file_hash"] = first_hash;
    report_json["aggregation"] = options.pooled ? "pooled" : "per-run-then-average";
    for (auto& [variant, vr] : by_variant) {
        MetricsReport agg =
            options.pooled ? pooled_report(vr.samples) : aggregate_runs(vr.reports);
        nlohmann::json vj;
        vj["n_runs"] = agg.n_runs;
        vj["n_episodes"] = agg.n_episodes;
        vj["acc_m"] = agg.acc_m;
        vj["sigma"] = agg.sigma;
        vj["z95"] = agg.z95;
        vj["mu_minus_3sigma"] = agg.surrogate;
        for (const auto& [k, v] : agg.acc_worst) {
            vj["acc_worst_" + std::to_string(k)] = v;
        }
        vj["seeds"] = nlohmann::json::array();
        vj["config_hashes"] = nlohmann::json::array();
        for (const auto& sidecar : vr.sidecars) {
            vj["seeds"].push_back(sidecar.value("master_seed", 0ull));
            vj["config_hashes"].push_back(sidecar.value("config_hash", ""));
        }
        report_json["variants"][variant] = std::move(vj);
        rows.emplace_back(variant, std::move(agg));
    }

    const auto sort_key = [&](const MetricsReport& r) {
        if (options.sort_by_mean) {
            return r.acc_m;
        }
        const auto it = r.acc_worst.find(1);
        return it == r.acc_worst.end() ? r.acc_m : it->second;
    };
    std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
        return sort_key(a.second) > sort_key(b.second);
    });

    ReportOutputs out;
    out.table = render_metrics_table(rows);
    out.report_json_path = config.out_dir + "/report.json";
    write_file_atomic(out.report_json_path, report_json.dump(2) + "\n");

    for (const auto& [variant, vr] : by_variant) {
        std::vector<double> pooled;
        for (const auto& sample : vr.samples) {
            pooled.insert(pooled.end(), sample.begin(), sample.end());
        }
        Histogram h = histogram_export(pooled, options.histogram_bins);
        const std::string path = config.out_dir + "/hist_" + variant + ".csv";
        write_file_atomic(path, histogram_csv(h));
        out.histogram_paths.push_back(path);
    }
    return out;
}

namespace {

ExperimentConfig build_config(const std::string& config_path,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
    ExperimentConfig config;
    if (!config_path.empty()) {
        config = load_config_file(config_path);
    }
    for (const auto& [key, value] : overrides) {
        config.set(key, value);
    }
    return config;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Few-shot recognition benchmark with worst-case metrics"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> set_pairs;
    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--set", set_pairs, "override a config key, e.g. --set finetune.alpha=0.2");

    bool print_keys = false;
    app.add_flag("--config-keys", print_keys, "print all config keys and exit");

    // shared overrides
    std::optional<uint64_t> seed;
    std::optional<std::string> variant, episodes_path, out_dir, sr_pool, checkpoint;
    std::optional<uint32_t> k_shot, n_episodes, n_runs;
    std::optional<size_t> threads;
    auto add_common = [&](CLI::App* cmd) {
        cmd->fallthrough();  // lets --config/--set appear after the subcommand
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--k", k_shot, "shots per class")->check(CLI::IsMember({1, 5}));
        cmd->add_option("--episodes", episodes_path, "episode file path");
        cmd->add_option("--n-episodes", n_episodes, "episode count");
        cmd->add_option("--runs", n_runs, "benchmark runs");
        cmd->add_option("--threads", threads, "worker threads (0 = all cores)");
    };

    CLI::App* c_pretrain = app.add_subcommand("pretrain", "train the base backbone");
    add_common(c_pretrain);

    CLI::App* c_episodes = app.add_subcommand("episodes", "pre-sample the episode file");
    add_common(c_episodes);

    CLI::App* c_bench = app.add_subcommand("bench", "run the benchmark for one variant");
    add_common(c_bench);
    c_bench->add_option("--variant", variant, "plain|ac|ac-sr|ac-ensr");
    c_bench->add_option("--sr-pool", sr_pool, "external unlabeled SR pool (dataset file)");
    c_bench->add_option("--checkpoint", checkpoint, "backbone checkpoint path");

    CLI::App* c_report = app.add_subcommand("report", "aggregate results into metrics");
    add_common(c_report);
    std::vector<std::string> results_paths;
    ReportOptions report_options;
    c_report->add_option("results", results_paths, "results CSV files");
    c_report->add_flag("--sort-mean", report_options.sort_by_mean,
                       "sort the table by ACC_m instead of ACC_1");
    c_report->add_flag("--allow-mixed-episodes", report_options.allow_mixed_episodes,
                       "permit comparing results from different episode files");
    c_report->add_flag("--pooled", report_options.pooled,
                       "pool all runs' episodes before computing metrics "
                       "(default: metrics per run, then averaged)");
    c_report->add_option("--bins", report_options.histogram_bins, "histogram bins");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (print_keys) {
            std::cout << config_reference();
            return 0;
        }

        std::vector<std::pair<std::string, std::string>> overrides;
        for (const std::string& pair : set_pairs) {
            const size_t eq = pair.find('=');
            if (eq == std::string::npos) {
                throw UsageError("--set expects key=value, got '" + pair + "'");
            }
            overrides.emplace_back(pair.substr(0, eq), pair.substr(eq + 1));
        }
        if (seed) overrides.emplace_back("master_seed", std::to_string(*seed));
        if (out_dir) overrides.emplace_back("out.dir", *out_dir);
        if (k_shot) overrides.emplace_back("protocol.k_shot", std::to_string(*k_shot));
        if (episodes_path) overrides.emplace_back("episodes.path", *episodes_path);
        if (n_episodes) overrides.emplace_back("bench.episodes", std::to_string(*n_episodes));
        if (n_runs) overrides.emplace_back("bench.runs", std::to_string(*n_runs));
        if (threads) overrides.emplace_back("bench.threads", std::to_string(*threads));
        if (variant) overrides.emplace_back("variant", *variant);
        if (sr_pool) overrides.emplace_back("srpool.path", *sr_pool);
        if (checkpoint) overrides.emplace_back("checkpoint.path", *checkpoint);

        const ExperimentConfig config = build_config(config_path, overrides);

        if (c_pretrain->parsed()) {
            const PretrainOutputs out = cmd_pretrain(config);
            std::cout << "checkpoint: " << out.checkpoint_path << "\n"
                      << "base train accuracy: " << out.base_accuracy << "\n"
                      << "manifest: " << out.manifest_path << "\n";
        } else if (c_episodes->parsed()) {
            const EpisodesOutputs out = cmd_episodes(config);
            std::cout << "episodes: " << out.path << " (" << out.n_episodes << ")\n"
                      << "hash: " << hex64(out.file_hash) << "\n";
        } else if (c_bench->parsed()) {
            const BenchOutputs out = cmd_bench(config);
            std::cout << "episode file hash: " << hex64(out.episode_file_hash) << "\n";
            for (const std::string& path : out.csv_paths) {
                std::cout << "results: " << path << "\n";
            }
        } else if (c_report->parsed()) {
            const ReportOutputs out = cmd_report(config, results_paths, report_options);
            std::cout << out.table;
            std::cout << "report: " << out.report_json_path << "\n";
            for (const std::string& path : out.histogram_paths) {
                std::cout << "histogram: " << path << "\n";
            }
        }
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace fewbench
