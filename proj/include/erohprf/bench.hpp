#pragma once

#include <cstdint>

#include "erohprf/block.hpp"

namespace erohprf {

struct LatencyReport {
    double train_ms_per_image = 0.0;   // median over runs
    double merged_ms_per_image = 0.0;  // median over runs
    int runs = 0;

    double speedup() const {
        return merged_ms_per_image > 0.0 ? train_ms_per_image / merged_ms_per_image : 0.0;
    }
};

// Times the multi-branch forward against the single merged convolution on
// seeded random input, 32-bit elements (the deployment precision). Reports
// the median wall time per image over `runs` timed repetitions.
LatencyReport latency_compare(const HPRFBConfig& config, int runs, int batch, int height,
                              int width, std::uint64_t seed);

}  // namespace erohprf
