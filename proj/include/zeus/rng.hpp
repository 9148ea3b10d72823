#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace zeus {

// Counter-based splittable RNG. A root seed plus a stream id define an
// independent stream; draws within a stream come from SplitMix64 over an
// incrementing counter, so adding a new stream never perturbs existing ones.
// All floating-point draws are built from the raw 64-bit output directly,
// which keeps results bit-identical across compilers and platforms.
class Rng {
public:
    Rng() : Rng(0, 0) {}
    Rng(std::uint64_t root_seed, std::uint64_t stream_id)
        : state_(mix(mix(root_seed + 0x9e3779b97f4a7c15ULL) ^ mix(stream_id + 0xbf58476d1ce4e5b9ULL))),
          cached_normal_(0.0), has_cached_normal_(false) {}

    // Derive a child stream; child draws are independent of this stream's.
    Rng split(std::uint64_t substream_id) const {
        return Rng(state_, substream_id + 1);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Modulo bias is below 2^-40 for any n this codebase uses.
        return next_u64() % n;
    }

    // Standard normal via Box-Muller; caches the second draw.
    double normal() {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return cached_normal_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        cached_normal_ = r * std::sin(theta);
        has_cached_normal_ = true;
        return r * std::cos(theta);
    }

    // Sample an index from a discrete distribution (weights sum to ~1).
    std::size_t categorical(const std::vector<double>& probs) {
        const double u = uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        return probs.size() - 1;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double cached_normal_;
    bool has_cached_normal_;
};

} // namespace zeus
