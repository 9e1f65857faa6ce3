#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>

namespace percep {

// splitmix64 finalizer; also used to derive independent sub-seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Combines a base seed with a sequence of stream tags into a new seed.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept;

// xoshiro256** generator with hand-written transforms so that streams are
// bit-identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;

    std::uint64_t next_u64() noexcept;

    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept;
    // Standard normal via Box-Muller (cosine branch only, no cached state).
    double normal() noexcept;
    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
    bool bernoulli(double p) noexcept { return uniform() < p; }
    // Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept;

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t s_[4];
};

}  // namespace percep
