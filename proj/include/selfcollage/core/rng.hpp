#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "selfcollage/core/error.hpp"

namespace selfcollage {

// Deterministic RNG. std::mt19937_64 is bit-stable across platforms, but the
// standard distributions are not, so the distributions live here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive. Lemire rejection, no modulo bias.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw InvalidInput("uniform_int: empty range");
        const std::uint64_t bound = static_cast<std::uint64_t>(hi - lo) + 1;
        if (bound == 0) return static_cast<std::int64_t>(eng_());  // full 64-bit range
        std::uint64_t x = eng_();
        unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
        auto l = static_cast<std::uint64_t>(m);
        if (l < bound) {
            const std::uint64_t t = (-bound) % bound;
            while (l < t) {
                x = eng_();
                m = static_cast<unsigned __int128>(x) * bound;
                l = static_cast<std::uint64_t>(m);
            }
        }
        return lo + static_cast<std::int64_t>(m >> 64);
    }

    // Box-Muller; consumes exactly two draws per call.
    double normal() {
        const double u1 = std::max(uniform(), 0x1.0p-60);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal truncated to +-2 stddev (resampling).
    double trunc_normal(double stddev) {
        double x = normal();
        while (std::abs(x) > 2.0) x = normal();
        return x * stddev;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from {0, ..., n-1}, partial Fisher-Yates.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw InvalidInput("sample_without_replacement: k > n");
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = static_cast<std::size_t>(
                uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

    // Stateless stream derivation for per-item seeds (splitmix64 over a mix).
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace selfcollage
