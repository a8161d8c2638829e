#include "fewbench/rng.hpp"

#include <cmath>

#include "fewbench/common.hpp"

namespace fewbench {

namespace {

// splitmix64 finalizer; full-avalanche mixing for stream-key derivation.
uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t root, std::string_view purpose,
                     std::initializer_list<uint64_t> ids) {
    uint64_t h = mix64(root ^ fnv1a64(purpose));
    for (uint64_t id : ids) {
        h = mix64(h ^ mix64(id));
    }
    return h;
}

uint64_t RngStream::next_below(uint64_t n) {
    if (n == 0) {
        return 0;
    }
    // Reject draws from the tail that would bias the modulus.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double RngStream::next_gaussian() {
    if (has_cached_gaussian_) {
        has_cached_gaussian_ = false;
        return cached_gaussian_;
    }
    double u1;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_gaussian_ = r * std::sin(theta);
    has_cached_gaussian_ = true;
    return r * std::cos(theta);
}

}  // namespace fewbench
