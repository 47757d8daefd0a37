#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace infodrop {

// Counter-based deterministic RNG. Streams are derived by folding integer
// keys through the SplitMix64 finalizer, so any (seed, step, layer, item,
// channel, position) tuple names the same stream regardless of evaluation
// order or thread schedule.
struct Rng {
    std::uint64_t state = 0x9e3779b97f4a7c15ull;

    Rng() = default;
    explicit Rng(std::uint64_t seed) : state(mix(seed ^ 0x6a09e667f3bcc909ull)) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t lim = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= lim);
        return v % n;
    }

    // Box-Muller; draws two uniforms per sample, keeps the cosine branch.
    double normal() {
        double u1 = 1.0 - uniform();  // (0,1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    bool coin() { return (next_u64() & 1ull) != 0; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }
};

// Fold extra keys into a seed to name a substream.
inline std::uint64_t derive_key(std::uint64_t seed) { return Rng::mix(seed); }

template <typename... Keys>
inline std::uint64_t derive_key(std::uint64_t seed, std::uint64_t k, Keys... rest) {
    return derive_key(Rng::mix(seed ^ Rng::mix(k)), rest...);
}

template <typename... Keys>
inline Rng derive_rng(std::uint64_t seed, Keys... keys) {
    Rng r;
    r.state = derive_key(seed, static_cast<std::uint64_t>(keys)...);
    return r;
}

// Poisson sampler: Knuth for small mean, PTRS transformed rejection above.
inline std::uint64_t poisson(Rng& rng, double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda < 30.0) {
        double l = std::exp(-lambda);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= rng.uniform();
        } while (p > l);
        return k - 1;
    }
    // Hoermann's PTRS
    double b = 0.931 + 2.53 * std::sqrt(lambda);
    double a = -0.059 + 0.02483 * b;
    double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        double u = rng.uniform() - 0.5;
        double v = rng.uniform();
        double us = 0.5 - std::fabs(u);
        double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= vr) return std::uint64_t(k);
        if (k < 0.0 || (us < 0.013 && v > us)) continue;
        double lg = std::lgamma(k + 1.0);
        if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
            k * std::log(lambda) - lambda - lg)
            return std::uint64_t(k);
    }
}

}  // namespace infodrop
