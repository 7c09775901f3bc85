#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace relcirc {

// Platform-independent counter-based generator. Every draw is a pure function
// of (key, counter), so streams can be split by index without sharing state.
// std:: distributions are avoided because their output is implementation
// defined.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix64(a ^ splitmix64(b + 0x632BE59BD9B4E019ULL));
}

// Uniform in (0, 1], never zero so it is safe inside log().
inline double u64_to_open01(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(mix_key(seed, stream)) {}

    std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

    double uniform01() noexcept { return u64_to_open01(next_u64()) - 0x1.0p-53; }

    // Inclusive integer range [lo, hi], unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64());
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + static_cast<std::int64_t>(v % span);
    }

    bool bernoulli(double p) noexcept { return uniform01() < p; }

    double normal() noexcept {
        const double u1 = u64_to_open01(next_u64());
        const double u2 = u64_to_open01(next_u64());
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// Box-Muller pair for cell (row, pair) of a seeded Gaussian matrix; columns
// 2*pair and 2*pair+1 take the cosine and sine branches.
inline std::pair<double, double> gaussian_pair_at(std::uint64_t seed, std::uint64_t row,
                                                  std::uint64_t pair) noexcept {
    const std::uint64_t base = mix_key(mix_key(seed, row), pair);
    const double u1 = u64_to_open01(splitmix64(base));
    const double u2 = u64_to_open01(splitmix64(base ^ 0xD1B54A32D192ED03ULL));
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
}

}  // namespace relcirc
