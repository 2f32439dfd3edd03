#include "erohprf/gradcheck.hpp"

#include <cmath>

#include "erohprf/rand.hpp"

namespace erohprf {

namespace {

double rel_error(double a, double f) {
    return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1.0});
}

}  // namespace

GradCheckReport gradcheck_block(const HPRFBConfig& config, std::uint64_t seed,
                                const GradCheckOptions& opts) {
    HPRFBWeights<double> w = init_weights<double>(config, seed);
    randomize_parameters(w, seed ^ 0x9e3779b97f4a7c15ULL);

    std::mt19937_64 rng(seed ^ 0xbf58476d1ce4e5b9ULL);
    Tensor4<double> x(opts.batch, config.in_channels, opts.height, opts.width);
    for (double& v : x.values()) v = uniform_sym(rng);
    Tensor4<double> probe;  // dL/dY for the scalar loss L = sum(Y .* probe)
    {
        const Tensor4<double> y = forward_train(x, w);
        probe = Tensor4<double>(y.n(), y.c(), y.h(), y.w());
        for (double& v : probe.values()) v = uniform_sym(rng);
    }

    const auto loss = [&](const Tensor4<double>& input) {
        const Tensor4<double> y = forward_train(input, w);
        double l = 0.0;
        auto yv = y.values();
        auto pv = probe.values();
        for (std::size_t i = 0; i < yv.size(); ++i) l += yv[i] * pv[i];
        return l;
    };

    const GradientBundle<double> analytic = backward(x, w, probe);
    const double h = opts.step;

    GradCheckReport report;
    const auto check_coord = [&](GradCheckEntry& entry, double& coord, double analytic_grad) {
        const double saved = coord;
        coord = saved + h;
        const double lp = loss(x);
        coord = saved - h;
        const double lm = loss(x);
        coord = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double err = rel_error(analytic_grad, fd);
        if (err > entry.max_rel_error) entry.max_rel_error = err;
        entry.coords += 1;
    };

    GradCheckEntry kernel_entry{"kernel"}, bias_entry{"bias"}, gamma_entry{"gamma"},
        beta_entry{"beta"}, input_entry{"input"};
    for (std::size_t bi = 0; bi < w.branches.size(); ++bi) {
        BranchParams<double>& b = w.branches[bi];
        const BranchGradients<double>& g = analytic.branches[bi];
        auto kv = b.kernel.values();
        for (std::size_t i = 0; i < kv.size(); ++i) {
            check_coord(kernel_entry, kv[i], g.d_kernel.values()[i]);
        }
        for (std::size_t i = 0; i < b.bias.size(); ++i) {
            check_coord(bias_entry, b.bias[i], g.d_bias[i]);
        }
        for (std::size_t i = 0; i < b.bn.gamma.size(); ++i) {
            check_coord(gamma_entry, b.bn.gamma[i], g.d_gamma[i]);
        }
        for (std::size_t i = 0; i < b.bn.beta.size(); ++i) {
            check_coord(beta_entry, b.bn.beta[i], g.d_beta[i]);
        }
    }
    {
        auto xv = x.values();
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double saved = xv[i];
            xv[i] = saved + h;
            const double lp = loss(x);
            xv[i] = saved - h;
            const double lm = loss(x);
            xv[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double err = rel_error(analytic.d_input.values()[i], fd);
            if (err > input_entry.max_rel_error) input_entry.max_rel_error = err;
            input_entry.coords += 1;
        }
    }

    report.entries = {kernel_entry, bias_entry, gamma_entry, beta_entry, input_entry};
    for (const GradCheckEntry& e : report.entries) {
        if (e.max_rel_error > report.max_rel_error) report.max_rel_error = e.max_rel_error;
    }
    return report;
}

}  // namespace erohprf
