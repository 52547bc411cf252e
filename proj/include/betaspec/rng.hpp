#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace betaspec {

// Deterministic counter-seeded RNG. Every consumer derives its own stream
// from (seed, stream ids), so results do not depend on evaluation order or
// thread schedule. splitmix64 core, Box-Muller for gaussians.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

    RngStream(std::uint64_t seed, std::uint64_t stream)
        : state_(mix(mix(seed ^ kGolden) + mix(stream + 0x9d39247e33776d41ULL))) {}

    RngStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b)
        : RngStream(mix(seed + mix(a + 0x8a183895eeac1536ULL)), b) {}

    RngStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c)
        : RngStream(mix(seed + mix(a + 0x8a183895eeac1536ULL)), mix(b + mix(c))) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // uniform in [0, 1)
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    // integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;  // n << 2^64 everywhere we use this
    }

    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // Box-Muller; u1 bounded away from 0 so log is finite.
        double u1 = next_uniform();
        double u2 = next_uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::vector<double> gaussian_vector(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = next_gaussian();
        return v;
    }

    void fill_gaussian(std::vector<double>& v) {
        for (auto& x : v) x = next_gaussian();
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace betaspec
