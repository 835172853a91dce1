// rng.hpp: seedable, index-splittable random streams with platform-stable
// transforms (std:: distributions are implementation-defined, so the uniform
// and Gaussian maps are written out here).

#pragma once

#include "qtraj/hilbert.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string_view>

namespace qtraj {

inline constexpr std::string_view kRngName = "mt19937_64 seeded by splitmix64(master, index)";

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Seed of trajectory `index` under `master`.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(master) ^ splitmix64(index ^ 0xD1B54A32D192ED03ULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // [0, 1) with 53 random bits
    double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Standard normal, Box-Muller.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    // Circular complex Gaussian with E|z|^2 = variance, E z^2 = 0.
    Complex complex_normal(double variance) noexcept {
        const double s = std::sqrt(0.5 * variance);
        const double re = normal();
        const double im = normal();
        return {s * re, s * im};
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Complex Wiener increments d xi_m with M(d xi) = M(d xi^2) = 0 and
// M(d xi d xi*) = dt, one per channel per step.
class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, std::size_t channels, double dt) : rng_(seed), seed_(seed), channels_(channels), dt_(dt) {}

    void next(std::span<Complex> out) {
        for (auto& z : out) z = rng_.complex_normal(dt_);
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::size_t channels() const noexcept { return channels_; }
    [[nodiscard]] double dt() const noexcept { return dt_; }

private:
    Rng rng_;
    std::uint64_t seed_;
    std::size_t channels_;
    double dt_;
};

}  // namespace qtraj
