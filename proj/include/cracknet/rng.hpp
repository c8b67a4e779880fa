#pragma once
#include <cstdint>
#include <random>
#include <vector>

namespace cracknet {

// splitmix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// mt19937 core with hand-rolled distributions. std::uniform_* distributions
// are implementation-defined, which would break cross-platform determinism
// of splits, sampling and weight init.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(mix64(seed))) {}

    uint32_t next_u32() { return gen_(); }

    // [0,1) with 24 bits, exactly representable in float
    float uniform_float() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }

    // [0,1) with 53 bits
    double uniform() {
        uint64_t hi = next_u32(), lo = next_u32();
        return static_cast<double>(((hi << 32) | lo) >> 11) * (1.0 / 9007199254740992.0);
    }

    float uniform_float(float lo, float hi) { return lo + (hi - lo) * uniform_float(); }

    // inclusive range, rejection sampling to avoid modulo bias
    int uniform_int(int lo, int hi) {
        uint32_t span = static_cast<uint32_t>(hi - lo) + 1u;
        if (span == 0) return lo + static_cast<int>(next_u32());  // full 32-bit range
        uint32_t limit = UINT32_MAX - UINT32_MAX % span;
        uint32_t v;
        do { v = next_u32(); } while (v >= limit);
        return lo + static_cast<int>(v % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937 gen_;
};

}  // namespace cracknet
