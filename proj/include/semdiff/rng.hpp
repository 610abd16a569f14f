#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace semdiff {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Combine seed components into one stream id (order-sensitive).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL));
}
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

/// Deterministic random source used by every stochastic operation.
///
/// Draw order contract: uniform() consumes exactly one mt19937_64 output,
/// normal() exactly two (Box-Muller, no cached spare). All vector fills are
/// in index order. This makes rng consumption auditable so paired-seed and
/// reduction tests can rely on stream alignment.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1); 53-bit mantissa.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes exactly two engine outputs.
    double normal() {
        // u1 in (0,1] so the log is finite.
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    void fill_normal(std::span<double> out) {
        for (double& x : out) x = normal();
    }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Modulo bias is negligible for the small n used here (grids, menus).
        return next_u64() % n;
    }

    /// Derive an independent stream; does not advance this generator.
    Rng child(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

    std::uint64_t seed() const { return seed_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

} // namespace semdiff
