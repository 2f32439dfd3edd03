#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "erohprf/block.hpp"

namespace erohprf {

struct GradCheckEntry {
    std::string parameter_class;  // kernel, bias, gamma, beta, input
    double max_rel_error = 0.0;
    std::size_t coords = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;

    bool pass(double tol) const { return max_rel_error < tol; }
};

struct GradCheckOptions {
    int batch = 1;
    int height = 6;
    int width = 6;
    double step = 1e-5;  // central-difference half step
};

// Central finite differences of sum(forward_train(x, w) * R) against the
// analytic backward, over every kernel entry, bias, gamma, beta, and input
// element. Parameters are randomized (including BN statistics) so every
// gradient path is exercised. Errors are |analytic - fd| / max(|a|,|fd|,1).
GradCheckReport gradcheck_block(const HPRFBConfig& config, std::uint64_t seed,
                                const GradCheckOptions& opts = {});

// Randomize every branch parameter of an initialized bag: kernels keep their
// fan-in scale, biases/BN draw from ranges that keep var+eps positive. Draws
// happen in double, so a seed selects the same point for both precisions.
template <typename T>
void randomize_parameters(HPRFBWeights<T>& w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (BranchParams<T>& b : w.branches) {
        for (T& v : b.bias) v = static_cast<T>(uniform_scaled(rng, 0.5));
        for (T& v : b.bn.gamma) v = static_cast<T>(1.0 + uniform_scaled(rng, 0.5));
        for (T& v : b.bn.beta) v = static_cast<T>(uniform_scaled(rng, 0.5));
        for (T& v : b.bn.mean) v = static_cast<T>(uniform_scaled(rng, 0.3));
        for (T& v : b.bn.var) v = static_cast<T>(1.0 + uniform_scaled(rng, 0.5));
    }
}

}  // namespace erohprf
