#pragma once

#include <cstdint>
#include <random>

namespace frism {

// Portable seeded generator: std::mt19937_64 (its output sequence is fixed by the
// C++ standard) seeded through std::seed_seq, whose mixing is also standardized.
// The conversions below are written out by hand because the std distributions
// are implementation-defined.
class rng {
public:
    explicit rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64() { return engine_(); }

    // 53-bit uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // floor(uniform() * n), in [0, n)
    std::uint64_t below(std::uint64_t n);

    // Box-Muller; every call consumes exactly two draws
    double normal();

private:
    std::mt19937_64 engine_;
};

} // namespace frism
