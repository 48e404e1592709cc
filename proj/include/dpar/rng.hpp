#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dpar {

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard, but
// the std distributions are not, so the few distributions we need are
// implemented here to keep every seed byte-reproducible across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = eng_();
        while (r >= limit) r = eng_();
        return r % n;
    }

    // Uniform in [0, 1) with 53 random bits.
    double real01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Box-Muller with cached spare.
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + spare_ * sigma;
        }
        double u1 = 1.0 - real01();
        double u2 = real01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double z0 = r * std::cos(2.0 * M_PI * u2);
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return mu + z0 * sigma;
    }

    bool bernoulli(double p) { return real01() < p; }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent stream seed; splitmix64 finalizer.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace dpar
