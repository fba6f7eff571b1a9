#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace deferral {

// PCG32 (PCG-XSH-RR, 64-bit state, 32-bit output) with the reference
// multiplier and seeding procedure, so a (seed, stream) pair produces the
// same sequence in any implementation of the published algorithm.
class Pcg32 {
public:
    static constexpr std::uint64_t multiplier = 6364136223846793005ULL;
    static constexpr std::uint64_t default_stream = 1442695040888963407ULL >> 1;

    using result_type = std::uint32_t;

    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = default_stream) noexcept {
        increment_ = (stream << 1U) | 1U;
        state_ = 0;
        next();
        state_ += seed;
        next();
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return 0xFFFFFFFFU; }

    result_type operator()() noexcept { return next(); }

    result_type next() noexcept {
        const std::uint64_t old = state_;
        state_ = old * multiplier + increment_;
        const auto xorshifted = static_cast<std::uint32_t>(((old >> 18U) ^ old) >> 27U);
        const auto rot = static_cast<std::uint32_t>(old >> 59U);
        return (xorshifted >> rot) | (xorshifted << ((32U - rot) & 31U));
    }

    // Unbiased integer in [0, bound) by rejection (reference pcg32_boundedrand).
    std::uint32_t bounded(std::uint32_t bound) noexcept {
        const std::uint32_t threshold = (0U - bound) % bound;
        for (;;) {
            const std::uint32_t r = next();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform double in [0, 1) with 53 random bits (high word first).
    double uniform() noexcept {
        const std::uint64_t hi = next();
        const std::uint64_t lo = next();
        return static_cast<double>(((hi << 32U) | lo) >> 11U) * 0x1.0p-53;
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t increment_ = 0;
};

// FNV-1a 64-bit; derives PRNG stream ids from names such as dataset labels.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Fisher-Yates from the back: for i = n-1 .. 1 swap(i, bounded(i + 1)).
template <typename T>
void shuffle(std::span<T> values, Pcg32& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        const auto j = rng.bounded(static_cast<std::uint32_t>(i));
        using std::swap;
        swap(values[i - 1], values[j]);
    }
}

}  // namespace deferral
