#ifndef ACTIMOOD_RNG_HPP
#define ACTIMOOD_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace actimood {
namespace rng {

// splitmix64 finalizer; used to mix seeds and derive independent substreams.
inline std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d4a4acb9dc4ab7ULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return mix(a ^ mix(b));
}

inline std::uint64_t hash_string(const std::string& s) {
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic stream on top of mt19937_64. Draw order and the mapping from
// engine words to doubles are fixed here so outputs reproduce across platforms;
// std::normal_distribution is never used because its stream is
// implementation-defined.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(mix(seed)) {}

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(uniform() * (hi - lo + 1));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, one variate per call; the spare is discarded to keep the
    // uniform stream position independent of call history.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace rng
}  // namespace actimood

#endif
