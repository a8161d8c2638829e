#include "fewbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fewbench/common.hpp"

namespace fewbench {

double acc_mean(std::span<const double> sample) {
    if (sample.empty()) {
        throw UsageError("acc_mean: empty sample");
    }
    double sum = 0.0;
    for (double v : sample) {
        sum += v;
    }
    return sum / static_cast<double>(sample.size());
}

double acc_worst_k(std::span<const double> sample, size_t k) {
    if (k < 1 || k > sample.size()) {
        throw UsageError("acc_worst_k: k=" + std::to_string(k) + " out of range [1, " +
                         std::to_string(sample.size()) + "]");
    }
    std::vector<double> copy(sample.begin(), sample.end());
    std::nth_element(copy.begin(), copy.begin() + (k - 1), copy.end());
    std::sort(copy.begin(), copy.begin() + k);
    double sum = 0.0;
    for (size_t i = 0; i < k; ++i) {
        sum += copy[i];
    }
    return sum / static_cast<double>(k);
}

double std_dev(std::span<const double> sample) {
    if (sample.size() < 2) {
        throw UsageError("std_dev: need at least 2 values, got " +
                         std::to_string(sample.size()));
    }
    const double mu = acc_mean(sample);
    double ss = 0.0;
    for (double v : sample) {
        const double d = v - mu;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(sample.size() - 1));
}

double z95_to_sigma(double z95, size_t n) {
    if (n == 0) {
        throw UsageError("z95_to_sigma: n must be positive");
    }
    if (z95 < 0.0) {
        throw UsageError("z95_to_sigma: z95 must be >= 0");
    }
    return z95 * std::sqrt(static_cast<double>(n)) / 1.96;
}

double sigma_to_z95(double sigma, size_t n) {
    if (n == 0) {
        throw UsageError("sigma_to_z95: n must be positive");
    }
    if (sigma < 0.0) {
        throw UsageError("sigma_to_z95: sigma must be >= 0");
    }
    return sigma * 1.96 / std::sqrt(static_cast<double>(n));
}

double surrogate_mu_minus_3sigma(double mu, double sigma) {
    if (sigma < 0.0) {
        throw UsageError("surrogate: sigma must be >= 0");
    }
    return mu - 3.0 * sigma;
}

double normal_cdf(double x) {
    if (!std::isfinite(x)) {
        throw UsageError("normal_cdf: x must be finite");
    }
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double chebyshev_tail_bound(double k) {
    if (!(k > 0.0)) {
        throw UsageError("chebyshev_tail_bound: k must be > 0");
    }
    return 1.0 / (1.0 + k * k);
}

Histogram histogram_export(std::span<const double> sample, size_t n_bins) {
    if (sample.empty()) {
        throw UsageError("histogram_export: empty sample");
    }
    if (n_bins < 1) {
        throw UsageError("histogram_export: n_bins must be >= 1");
    }
    const auto [min_it, max_it] = std::minmax_element(sample.begin(), sample.end());
    const double lo = *min_it;
    const double hi = *max_it;

    Histogram h;
    if (lo == hi) {
        h.bin_left = {lo};
        h.bin_right = {hi};
        h.counts = {sample.size()};
        h.normal_fit = {0.0};
        return h;
    }

    const double width = (hi - lo) / static_cast<double>(n_bins);
    h.counts.assign(n_bins, 0);
    for (size_t b = 0; b < n_bins; ++b) {
        h.bin_left.push_back(lo + width * static_cast<double>(b));
        h.bin_right.push_back(b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1));
    }
    for (double v : sample) {
        size_t b = static_cast<size_t>((v - lo) / width);
        if (b >= n_bins) {
            b = n_bins - 1;  // v == max lands in the last (closed) bin
        }
        ++h.counts[b];
    }

    const double mu = acc_mean(sample);
    const double sigma = sample.size() >= 2 ? std_dev(sample) : 0.0;
    h.normal_fit.assign(n_bins, 0.0);
    if (sigma > 0.0) {
        const double scale =
            static_cast<double>(sample.size()) * width / (sigma * std::sqrt(2.0 * M_PI));
        for (size_t b = 0; b < n_bins; ++b) {
            const double center = 0.5 * (h.bin_left[b] + h.bin_right[b]);
            const double z = (center - mu) / sigma;
            h.normal_fit[b] = scale * std::exp(-0.5 * z * z);
        }
    }
    return h;
}

std::string histogram_csv(const Histogram& h) {
    std::string out = "bin_left,bin_right,count,normal_fit\n";
    char buf[128];
    for (size_t b = 0; b < h.counts.size(); ++b) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu,%.17g\n", h.bin_left[b],
                      h.bin_right[b], h.counts[b], h.normal_fit[b]);
        out += buf;
    }
    return out;
}

MetricsReport compute_report(std::span<const double> sample) {
    MetricsReport r;
    r.n_episodes = sample.size();
    r.n_runs = 1;
    r.acc_m = acc_mean(sample);
    r.sigma = std_dev(sample);
    r.z95 = sigma_to_z95(r.sigma, sample.size());
    r.surrogate = surrogate_mu_minus_3sigma(r.acc_m, r.sigma);
    for (size_t k : {size_t{1}, size_t{10}, size_t{100}}) {
        if (k <= sample.size()) {
            r.acc_worst[k] = acc_worst_k(sample, k);
        }
    }
    return r;
}

MetricsReport aggregate_runs(std::span<const MetricsReport> reports) {
    if (reports.empty()) {
        throw UsageError("aggregate_runs: no reports");
    }
    MetricsReport agg;
    agg.n_episodes = reports.front().n_episodes;
    agg.n_runs = 0;
    for (const MetricsReport& r : reports) {
        if (r.n_episodes != agg.n_episodes) {
            throw UsageError("aggregate_runs: runs disagree on n_episodes (" +
                             std::to_string(r.n_episodes) + " vs " +
                             std::to_string(agg.n_episodes) + ")");
        }
        if (r.acc_worst.size() != reports.front().acc_worst.size()) {
            throw UsageError("aggregate_runs: runs disagree on worst-k keys");
        }
        agg.n_runs += r.n_runs;
        agg.acc_m += r.acc_m;
        agg.sigma += r.sigma;
        agg.z95 += r.z95;
        agg.surrogate += r.surrogate;
        for (const auto& [k, v] : r.acc_worst) {
            agg.acc_worst[k] += v;
        }
    }
    const double inv = 1.0 / static_cast<double>(reports.size());
    agg.acc_m *= inv;
    agg.sigma *= inv;
    agg.z95 *= inv;
    agg.surrogate *= inv;
    for (auto& [k, v] : agg.acc_worst) {
        v *= inv;
    }
    return agg;
}

MetricsReport pooled_report(std::span<const std::vector<double>> runs) {
    std::vector<double> pooled;
    for (const auto& run : runs) {
        pooled.insert(pooled.end(), run.begin(), run.end());
    }
    MetricsReport r = compute_report(pooled);
    r.n_runs = runs.size();
    r.n_episodes = runs.empty() ? 0 : runs.front().size();
    return r;
}

}  // namespace fewbench
