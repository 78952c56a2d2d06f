#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fedprune {

// Named sub-streams derived from one base seed. Keeping the tags stable keeps
// every historical run reproducible.
enum class Stream : std::uint64_t {
    kInit = 1,
    kMask = 2,
    kLocalTrain = 3,
    kClientSelect = 4,
    kSlowAssign = 5,
    kCltSample = 6,
    kPartition = 7,
    kSynthetic = 8,
    kRepeat = 9,
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0);
std::uint64_t mix_seed(std::uint64_t seed, Stream s, std::uint64_t b = 0,
                       std::uint64_t c = 0);

// Deterministic generator: mt19937_64 plus hand-rolled distributions, so a
// seed produces the same draw sequence on every platform and libstdc++
// version (std::uniform_int_distribution et al. are not pinned by the
// standard).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Unbiased draw from [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // m distinct values from [0, n), returned sorted ascending.
    std::vector<int> sample_without_replacement(int n, int m);

private:
    std::mt19937_64 gen_;
};

}  // namespace fedprune
