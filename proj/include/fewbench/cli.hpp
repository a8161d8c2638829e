#pragma once

#include <string>
#include <vector>

#include "fewbench/config.hpp"
#include "fewbench/data.hpp"
#include "fewbench/metrics.hpp"

namespace fewbench {

/// Builds the dataset the config describes: loads data.path when set,
/// otherwise synthesizes; then assigns splits. Deterministic per config.
DatasetStore make_store(const ExperimentConfig& config);

struct PretrainOutputs {
    std::string checkpoint_path;
    std::string manifest_path;
    double base_accuracy = 0.0;
};
PretrainOutputs cmd_pretrain(const ExperimentConfig& config);

struct EpisodesOutputs {
    std::string path;
    uint64_t file_hash = 0;
    size_t n_episodes = 0;
};
EpisodesOutputs cmd_episodes(const ExperimentConfig& config);

struct BenchOutputs {
    std::vector<std::string> csv_paths;
    uint64_t episode_file_hash = 0;
};
BenchOutputs cmd_bench(const ExperimentConfig& config);

struct ReportOptions {
    bool sort_by_mean = false;       // default order: ACC_1 descending
    bool allow_mixed_episodes = false;
    bool pooled = false;             // pool all runs' episodes before computing metrics
    size_t histogram_bins = 20;
};

struct ReportOutputs {
    std::string table;
    std::string report_json_path;
    std::vector<std::string> histogram_paths;
};
ReportOutputs cmd_report(const ExperimentConfig& config,
                         const std::vector<std::string>& results_csv_paths,
                         const ReportOptions& options);

/// Renders the comparison table (percentage points, 2 decimals).
std::string render_metrics_table(
    const std::vector<std::pair<std::string, MetricsReport>>& rows);

/// Full command-line entry point; returns the process exit code
/// (0 ok, 2 usage, 3 data error, 4 numeric divergence).
int cli_main(int argc, char** argv);

}  // namespace fewbench
