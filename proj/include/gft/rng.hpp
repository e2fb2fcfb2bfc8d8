#pragma once

#include <cstdint>
#include <vector>

#include "gft/array.hpp"

namespace gft {

// Deterministic, platform-independent randomness. std:: distributions are
// implementation-defined, so sampling is done by hand on top of a fixed
// generator; two builds on different compilers must produce identical runs.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stable seed derivation for independent streams: hash(seed, tag, index...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc908ULL);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed == 0 ? 0x853c49e6748fea9bULL : seed) {
        // warm-up so nearby seeds decorrelate
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }

    // uniform in [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // Box-Muller; u clamped away from 0
        double u = uniform();
        if (u <= 0.0) u = 0x1.0p-53;
        double v = uniform();
        double r = std::sqrt(-2.0 * std::log(u));
        double a = 6.283185307179586476925286766559 * v;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // index drawn from a normalized probability vector via CDF walk
    int categorical(const std::vector<double>& probs) {
        double u = uniform();
        double c = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            c += probs[i];
            if (u < c) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_{false};
    double spare_{0.0};
};

// FNV-1a over bytes; used for checkpoint content hashes and config hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace gft
