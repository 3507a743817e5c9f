#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcnet/tensor.hpp"

namespace lcnet {

// SplitMix64. Fixed algorithm so that a given seed yields the same stream on
// every platform (std::uniform_real_distribution does not guarantee that).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1), 53-bit mantissa
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    // uniform integer in [0, n); n >= 1
    int64_t below(int64_t n) {
        // multiply-high maps the 64-bit draw onto [0, n) without modulo bias
        __uint128_t wide = static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n);
        return static_cast<int64_t>(wide >> 64);
    }

private:
    uint64_t state_;
};

inline Tensor uniform_tensor(std::vector<int64_t> shape, std::string layout, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensor t(std::move(shape), std::move(layout));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace lcnet
