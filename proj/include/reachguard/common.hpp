#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace reachguard {

// Error taxonomy, mapped to process exit codes by the CLI:
//   ConfigError -> 2, NumericalError -> 3, IoError -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : IoError {
    using IoError::IoError;
};
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline double wrap_angle(double a) {
    a = std::fmod(a, kTwoPi);
    if (a < 0.0) a += kTwoPi;
    if (a >= kTwoPi) a = 0.0;
    return a;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void require_finite(const std::vector<double>& v, const char* what) {
    if (!all_finite(v)) throw DomainError(std::string("non-finite value in ") + what);
}

// splitmix64: seed expansion and stream derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d029bb673536c9ULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Deterministic RNG (xoshiro256**). All sampling in the project flows from a
// single master seed, split per component by label or index so that results
// do not depend on call interleaving across components.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0x853c49e6748fea9bULL) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = n * (UINT64_MAX / n);
        std::uint64_t x;
        do {
            x = u64();
        } while (x >= limit);
        return x % n;
    }

    // standard normal via Box-Muller (no spare caching, fully deterministic)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    // Derive an independent child stream. Children with distinct labels or
    // indices are decorrelated from the parent and each other.
    Rng split(const std::string& label) const {
        std::uint64_t sm = mix_state() ^ fnv1a(label);
        return Rng(splitmix64(sm));
    }
    Rng split(std::uint64_t index) const {
        std::uint64_t sm = mix_state() ^ (0xd1b54a32d192ed03ULL * (index + 1));
        return Rng(splitmix64(sm));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t mix_state() const { return s_[0] ^ s_[1] ^ s_[2] ^ s_[3]; }
    std::uint64_t s_[4];
};

// Worker-pool width: REACHGUARD_THREADS caps both node-parallel sweeps and
// job-level fan-out. Zero or unset means hardware concurrency.
int thread_cap();
void set_thread_cap(int n);

// Static partition of [0, n) across workers; fn(begin, end) per chunk.
// Deterministic output regardless of worker count as long as chunks write
// disjoint slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace reachguard
