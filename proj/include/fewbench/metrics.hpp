#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fewbench {

/// Arithmetic mean of per-episode accuracies.
double acc_mean(std::span<const double> sample);

/// Mean of the k smallest values (ACC_1 is the worst case). Summation runs
/// in ascending value order so the result is bit-identical to a full-sort
/// bottom-k mean.
double acc_worst_k(std::span<const double> sample, size_t k);

/// Sample standard deviation (n-1 denominator).
double std_dev(std::span<const double> sample);

/// sigma = z95 * sqrt(n) / 1.96, the standard-error relation between the
/// 95% confidence half-width and the episode-level standard deviation.
double z95_to_sigma(double z95, size_t n);
double sigma_to_z95(double sigma, size_t n);

/// Worst-case surrogate from the 3-sigma rule.
double surrogate_mu_minus_3sigma(double mu, double sigma);

/// Standard normal CDF.
double normal_cdf(double x);

/// One-sided Chebyshev bound: Pr(X <= mu - k*sigma) <= 1/(1+k^2).
double chebyshev_tail_bound(double k);

struct Histogram {
    std::vector<double> bin_left;
    std::vector<double> bin_right;
    std::vector<size_t> counts;
    std::vector<double> normal_fit;  // N(mu, sigma^2) density in count units
};

/// Equal-width bins over [min, max]; a degenerate range gives one bin.
Histogram histogram_export(std::span<const double> sample, size_t n_bins);
std::string histogram_csv(const Histogram& h);

struct MetricsReport {
    double acc_m = 0.0;
    double sigma = 0.0;
    double z95 = 0.0;
    double surrogate = 0.0;                // acc_m - 3*sigma
    std::map<size_t, double> acc_worst;    // k -> ACC_k for k in {1,10,100}, k <= n
    size_t n_episodes = 0;
    size_t n_runs = 1;
};

/// Metrics of a single run's accuracy sample. Requires n >= 2 (for sigma).
MetricsReport compute_report(std::span<const double> sample);

/// Per-run metrics averaged across runs ("by 5 runs then average"). All
/// inputs must share n_episodes and worst-k keys.
MetricsReport aggregate_runs(std::span<const MetricsReport> reports);

/// Pools every run's episodes into one sample first, then computes metrics
/// once; exposed for sensitivity analysis against the per-run aggregation.
MetricsReport pooled_report(std::span<const std::vector<double>> runs);

}  // namespace fewbench
