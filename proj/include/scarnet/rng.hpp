#ifndef SCARNET_RNG_HPP
#define SCARNET_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace scarnet {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace detail

// xoshiro256** with explicit, serializable state. Used everywhere randomness is
// needed so that results are bit-reproducible across runs and platforms
// (std:: distributions are implementation-defined and cannot be checkpointed
// portably).
class Rng {
public:
    using state_type = std::array<std::uint64_t, 4>;

    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_)
            word = detail::splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl64(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl64(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Bounded integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold)
                return r % n;
        }
    }

    // Standard normal via Box-Muller. Draws exactly two uniforms per call so
    // the stream position is a pure function of call count (no cached spare).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    const state_type& state() const { return state_; }
    void set_state(const state_type& s) { state_ = s; }

private:
    state_type state_{};
};

// Deterministic sub-seed derivation, keyed by (base, a, b) rather than by
// consumption order, so parallel workers and per-iteration streams stay
// reproducible.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t sm = base;
    detail::splitmix64(sm);
    sm ^= 0x9e3779b97f4a7c15ULL * (a + 1);
    detail::splitmix64(sm);
    sm ^= detail::rotl64(0xbf58476d1ce4e5b9ULL * (b + 1), 31);
    return detail::splitmix64(sm);
}

} // namespace scarnet

#endif
