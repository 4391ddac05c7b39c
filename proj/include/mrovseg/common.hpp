#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mrovseg {

// Error taxonomy, mapped to CLI exit codes: contract/config/layout -> 2,
// numeric -> 3, io -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct LayoutError : ConfigError {
    using ConfigError::ConfigError;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

// Deterministic RNG. splitmix64 streams keyed by (seed, stream) so weight,
// data and init randomness stay independent of each other.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller; std::normal_distribution is implementation-defined, this is not.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stable per-subsystem seed derivation from one master seed.
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    Rng r(master ^ (0xa0761d6478bd642fULL * (stream + 1)));
    return r.next_u64();
}

constexpr uint64_t kSeedWeights = 1;
constexpr uint64_t kSeedData = 2;
constexpr uint64_t kSeedInit = 3;
constexpr uint64_t kSeedText = 4;
constexpr uint64_t kSeedDecoder = 5;
constexpr uint64_t kSeedClassifier = 6;

// Additive attention-mask sentinel. Finite so arithmetic stays finite.
constexpr double kMaskSentinel = -1e9;

}  // namespace mrovseg
