#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace thh {

// 64-bit finalizer (splitmix-style). Statistically strong enough for
// simulation noise and shuffles, and -- unlike the std distributions --
// bit-stable across standard libraries, which keeps every pipeline run
// reproducible from its seed alone.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stable 64-bit hash for labelling RNG streams by name.
inline std::uint64_t hash_label(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Counter-based generator: output i of stream (seed, stream) is a pure
// function of (seed, stream, i). Forking a labelled substream never
// perturbs the parent, so adding a consumer somewhere in the pipeline
// cannot shift the draws seen by unrelated code.
class Rng {
public:
    Rng() : Rng(0, 0) {}
    Rng(std::uint64_t seed, std::uint64_t stream)
        : key_(mix64(seed ^ mix64(stream ^ 0x5bf0fe625bed2a85ull))) {}

    std::uint64_t next_u64() { return mix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is ~n/2^64, far below anything
    // observable here, and the mapping stays platform-independent.
    std::uint64_t uniform_int(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform(); // (0, 1], keeps log() finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Independent substream; deterministic in (parent seed material, label).
    Rng fork(std::uint64_t label) const { return Rng(key_, mix64(label)); }
    Rng fork(std::string_view label) const { return fork(hash_label(label)); }

    // Seeded Fisher-Yates shuffle.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace thh
