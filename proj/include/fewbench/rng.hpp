#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fewbench {

/// Derives the seed of a named child stream from a root seed. Streams are
/// keyed by (root, purpose, ids...); distinct keys give statistically
/// independent streams, and the mapping is a pure function, so any consumer
/// can be replayed in isolation (episodes in parallel, ensemble members,
/// etc.) without perturbing the others.
uint64_t derive_seed(uint64_t root, std::string_view purpose,
                     std::initializer_list<uint64_t> ids = {});

/// Deterministic random stream with explicit, platform-stable draw functions.
/// std:: distributions are avoided on purpose: their output is
/// implementation-defined, which would break byte-identical replays.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [-a, a].
    double next_uniform_sym(double a) { return (2.0 * next_double() - 1.0) * a; }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    uint64_t next_below(uint64_t n);

    /// Standard normal via Box-Muller (one value per call; pair cached).
    double next_gaussian();

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_cached_gaussian_ = false;
    double cached_gaussian_ = 0.0;
};

}  // namespace fewbench
