#pragma once

#include <cstdint>
#include <random>

namespace pbef {

// splitmix64 step; used to derive well-separated stream seeds from
// (seed, stream_id) so that every variate is determined by the pair.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_stream_seed(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s ^= stream_id * 0xD1B54A32D192ED03ULL;
    std::uint64_t b = splitmix64(s);
    return a ^ (b + 0x9E3779B97F4A7C15ULL);
}

// One independent random stream. Fresh construction from the same
// (seed, stream_id) reproduces the exact same variate sequence.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : engine_(mix_stream_seed(seed, stream_id)) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double gamma(double shape, double scale) {
        return std::gamma_distribution<double>(shape, scale)(engine_);
    }

    double exponential(double rate) {
        return std::exponential_distribution<double>(rate)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace pbef
