#pragma once

#include <cstdint>
#include <random>

namespace erohprf {

// Uniform draw in [0, 1) built directly from the top 53 bits of the engine
// output. std::mt19937_64 is fully specified by the standard, so sequences
// are identical on every platform; the std distributions are not.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform draw in [-1, 1).
inline double uniform_sym(std::mt19937_64& rng) {
    return 2.0 * uniform_unit(rng) - 1.0;
}

// Uniform draw in [-scale, scale).
inline double uniform_scaled(std::mt19937_64& rng, double scale) {
    return scale * uniform_sym(rng);
}

}  // namespace erohprf
