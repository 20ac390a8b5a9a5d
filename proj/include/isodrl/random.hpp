#pragma once

// Philox4x32-10 counter-based generator plus the handful of variates the
// library needs. Standard-library distributions are implementation defined,
// so normals and uniforms are generated here to keep streams identical across
// toolchains.
//
// Seeding discipline: a run has one 64-bit master seed. Independent streams
// (repetitions, sub-tasks) use derive_seed(master, index), which is a
// splitmix64 finalizer over (master, index). Each stream is a Philox key; the
// counter starts at zero.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace isodrl {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

class Philox {
public:
    using result_type = std::uint64_t;

    explicit Philox(std::uint64_t seed = 0) : key_{lo(seed), hi(seed)} {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (pos_ >= 2) refill();
        const std::uint64_t out = (static_cast<std::uint64_t>(block_[2 * pos_]) << 32) |
                                  block_[2 * pos_ + 1];
        ++pos_;
        return out;
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Lemire's multiply-shift with rejection.
        std::uint64_t x = (*this)();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        std::uint64_t l = static_cast<std::uint64_t>(m);
        if (l < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (l < threshold) {
                x = (*this)();
                m = static_cast<__uint128_t>(x) * n;
                l = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

private:
    static std::uint32_t lo(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
    static std::uint32_t hi(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

    static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& high, std::uint32_t& low) {
        const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
        high = static_cast<std::uint32_t>(product >> 32);
        low = static_cast<std::uint32_t>(product);
    }

    void refill() {
        std::array<std::uint32_t, 4> ctr{lo(counter_), hi(counter_), 0u, 0u};
        std::array<std::uint32_t, 2> key = key_;
        for (int round = 0; round < 10; ++round) {
            std::uint32_t hi0, lo0, hi1, lo1;
            mulhilo(0xD2511F53u, ctr[0], hi0, lo0);
            mulhilo(0xCD9E8D57u, ctr[2], hi1, lo1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += 0x9E3779B9u;
            key[1] += 0xBB67AE85u;
        }
        block_ = ctr;
        ++counter_;
        pos_ = 0;
    }

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> block_{};
    std::uint64_t counter_ = 0;
    int pos_ = 2;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace isodrl
