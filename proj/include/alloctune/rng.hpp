#pragma once

#include <cstdint>
#include <random>

namespace alloctune {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seeded generator with platform-independent draws. std::mt19937_64 output is
/// fixed by the standard; the standard distributions are not, so the draws
/// below are implemented here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream keyed by (root, a, b, c); used to give every
    /// (generation, operator, individual) its own reproducible sequence.
    static Rng stream(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
        std::uint64_t s = root;
        std::uint64_t h = splitmix64(s);
        for (std::uint64_t k : {a, b, c}) {
            s = h ^ (k + 0x632BE59BD9B4E019ULL);
            h = splitmix64(s);
        }
        return Rng(h);
    }

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t index(std::uint64_t n) {
        // rejection sampling removes modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool coin(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

}  // namespace alloctune
