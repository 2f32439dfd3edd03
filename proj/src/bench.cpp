#include "erohprf/bench.hpp"

#include <algorithm>
#include <chrono>
#include <vector>

#include "erohprf/rand.hpp"
#include "erohprf/reparam.hpp"

namespace erohprf {

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Keeps the optimizer from discarding the timed forward.
volatile float g_sink = 0.0f;

}  // namespace

LatencyReport latency_compare(const HPRFBConfig& config, int runs, int batch, int height,
                              int width, std::uint64_t seed) {
    if (runs < 1) throw ConfigError("latency runs must be >= 1");
    const HPRFBWeights<float> w = init_weights<float>(config, seed);
    const MergedConv<float> merged = reparameterize(w);

    std::mt19937_64 rng(seed ^ 0x94d049bb133111ebULL);
    Tensor4<float> x(batch, config.in_channels, height, width);
    for (float& v : x.values()) v = static_cast<float>(uniform_sym(rng));

    const auto time_ms = [&](auto&& fn) {
        const auto t0 = Clock::now();
        const Tensor4<float> y = fn();
        g_sink = g_sink + y.values()[0];
        const auto t1 = Clock::now();
        return std::chrono::duration<double, std::milli>(t1 - t0).count();
    };

    for (int i = 0; i < 3; ++i) {  // warmup
        time_ms([&] { return forward_train(x, w); });
        time_ms([&] { return forward_inference(x, merged); });
    }

    std::vector<double> train_ms, merged_ms;
    train_ms.reserve(runs);
    merged_ms.reserve(runs);
    for (int i = 0; i < runs; ++i) {
        train_ms.push_back(time_ms([&] { return forward_train(x, w); }));
        merged_ms.push_back(time_ms([&] { return forward_inference(x, merged); }));
    }

    LatencyReport report;
    report.runs = runs;
    report.train_ms_per_image = median(train_ms) / batch;
    report.merged_ms_per_image = median(merged_ms) / batch;
    return report;
}

}  // namespace erohprf
