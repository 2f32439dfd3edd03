#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "erohprf/block.hpp"
#include "erohprf/errors.hpp"
#include "erohprf/rand.hpp"
#include "erohprf/tensor.hpp"

namespace erohprf {

// Branch with its BN folded into the convolution. Merge arithmetic is always
// 64-bit regardless of the deployment precision; casting happens once at the
// end of the pipeline.
struct FoldedBranch {
    int scale = 3;
    RFType rf_type = RFType::S;
    Kernel4<double> kernel;  // W^ = gamma*W/sqrt(var+eps)
    std::vector<double> bias;  // B^ = gamma*(B-mean)/sqrt(var+eps) + beta
};

// All branches of one scale summed into a single i x i kernel.
struct MergedBag {
    int scale = 3;
    Kernel4<double> kernel;
    std::vector<double> bias;
};

// The single reparameterized convolution: kernel is K x K with K the largest
// scale, applied at pad floor(K/2) with the bag's stride and groups.
template <typename T>
struct MergedConv {
    Kernel4<T> kernel;
    std::vector<T> bias;
    int stride = 1;
    int groups = 1;

    int pad() const { return kernel.kh() / 2; }
    ConvGeometry geometry() const { return ConvGeometry{stride, pad(), pad(), groups}; }
};

template <typename T>
MergedConv<T> cast_merged(const MergedConv<double>& m) {
    MergedConv<T> out;
    out.kernel = Kernel4<T>(m.kernel.cout(), m.kernel.cg(), m.kernel.kh(), m.kernel.kw());
    for (std::size_t i = 0; i < m.kernel.size(); ++i) {
        out.kernel.values()[i] = static_cast<T>(m.kernel.values()[i]);
    }
    out.bias.resize(m.bias.size());
    for (std::size_t i = 0; i < m.bias.size(); ++i) out.bias[i] = static_cast<T>(m.bias[i]);
    out.stride = m.stride;
    out.groups = m.groups;
    return out;
}

// Stage-1a: absorb the frozen BN affine into the branch's weights and bias.
template <typename T>
FoldedBranch fold_bn(const BranchParams<T>& b) {
    b.bn.validate();
    if (b.bn.channels() != b.kernel.cout() ||
        b.bias.size() != static_cast<std::size_t>(b.kernel.cout())) {
        throw ShapeError("branch " + b.name() + " channel counts disagree");
    }
    FoldedBranch f;
    f.scale = b.scale;
    f.rf_type = b.rf_type;
    f.kernel = Kernel4<double>(b.kernel.cout(), b.kernel.cg(), b.kernel.kh(), b.kernel.kw());
    f.bias.resize(b.kernel.cout());
    for (int co = 0; co < b.kernel.cout(); ++co) {
        const double scale =
            static_cast<double>(b.bn.gamma[co]) /
            std::sqrt(static_cast<double>(b.bn.var[co]) + static_cast<double>(b.bn.eps));
        for (int ci = 0; ci < b.kernel.cg(); ++ci) {
            for (int kh = 0; kh < b.kernel.kh(); ++kh) {
                for (int kw = 0; kw < b.kernel.kw(); ++kw) {
                    f.kernel.at(co, ci, kh, kw) =
                        scale * static_cast<double>(b.kernel.at(co, ci, kh, kw));
                }
            }
        }
        f.bias[co] = scale * (static_cast<double>(b.bias[co]) -
                              static_cast<double>(b.bn.mean[co])) +
                     static_cast<double>(b.bn.beta[co]);
    }
    return f;
}

// Stage-1b: zero-pad every folded branch of one scale to i x i and sum.
inline MergedBag merge_bag(std::span<const FoldedBranch> folded) {
    if (folded.empty()) throw ConfigError("merge_bag needs at least one branch");
    const int scale = folded.front().scale;
    const int cout = folded.front().kernel.cout();
    const int cg = folded.front().kernel.cg();
    MergedBag bag;
    bag.scale = scale;
    bag.kernel = Kernel4<double>(cout, cg, scale, scale);
    bag.bias.assign(cout, 0.0);
    for (const FoldedBranch& f : folded) {
        if (f.scale != scale) {
            throw ConfigError("merge_bag received mixed scales " + std::to_string(scale) +
                              " and " + std::to_string(f.scale));
        }
        if (f.kernel.cout() != cout || f.kernel.cg() != cg) {
            throw ConfigError("merge_bag received mixed channel geometry");
        }
        const Kernel4<double> padded = pad_kernel(f.kernel, scale, scale);
        for (std::size_t i = 0; i < padded.size(); ++i) {
            bag.kernel.values()[i] += padded.values()[i];
        }
        for (int co = 0; co < cout; ++co) bag.bias[co] += f.bias[co];
    }
    return bag;
}

// Stage-2: zero-pad every per-scale bag to K x K (K = largest scale) and sum
// into the final single convolution.
inline MergedConv<double> merge_pyramid(std::span<const MergedBag> bags, int stride = 1,
                                        int groups = 1) {
    if (bags.empty()) throw ConfigError("merge_pyramid needs at least one bag");
    int max_scale = 0;
    for (const MergedBag& b : bags) {
        for (const MergedBag& o : bags) {
            if (&b != &o && b.scale == o.scale) {
                throw ConfigError("merge_pyramid received duplicate scale " +
                                  std::to_string(b.scale));
            }
        }
        if (b.scale > max_scale) max_scale = b.scale;
    }
    const int cout = bags.front().kernel.cout();
    const int cg = bags.front().kernel.cg();
    MergedConv<double> m;
    m.kernel = Kernel4<double>(cout, cg, max_scale, max_scale);
    m.bias.assign(cout, 0.0);
    m.stride = stride;
    m.groups = groups;
    for (const MergedBag& b : bags) {
        if (b.kernel.cout() != cout || b.kernel.cg() != cg) {
            throw ConfigError("merge_pyramid received mixed channel geometry");
        }
        const Kernel4<double> padded = pad_kernel(b.kernel, max_scale, max_scale);
        for (std::size_t i = 0; i < padded.size(); ++i) {
            m.kernel.values()[i] += padded.values()[i];
        }
        for (int co = 0; co < cout; ++co) m.bias[co] += b.bias[co];
    }
    return m;
}

// Full two-stage pipeline: fold BN per branch, merge each scale's bag, merge
// the pyramid. Summation order is scale-ascending, VC,HC,VR,HR,S.
template <typename T>
MergedConv<T> reparameterize(const HPRFBWeights<T>& w) {
    w.validate();
    std::vector<MergedBag> bags;
    bags.reserve(w.config.scales.size());
    std::size_t idx = 0;
    for (std::size_t s = 0; s < w.config.scales.size(); ++s) {
        std::vector<FoldedBranch> folded;
        folded.reserve(w.config.rf_types.size());
        for (std::size_t t = 0; t < w.config.rf_types.size(); ++t) {
            folded.push_back(fold_bn(w.branches[idx++]));
        }
        bags.push_back(merge_bag(folded));
    }
    return cast_merged<T>(merge_pyramid(bags, w.config.stride, w.config.groups));
}

// Inference-form forward: one convolution with the merged kernel and bias at
// pad floor(K/2).
template <typename T>
Tensor4<T> forward_inference(const Tensor4<T>& x, const MergedConv<T>& m) {
    return conv2d_forward(x, m.kernel, m.bias, m.geometry());
}

enum class Form { train, inference };

// Parameter counts: training form sums every branch's weights, bias, and the
// four BN vectors; inference form is the single K x K conv plus bias.
inline std::int64_t count_params(const HPRFBConfig& config, Form form) {
    config.validate();
    const std::int64_t cout = config.out_channels;
    const std::int64_t cg = config.channels_per_group();
    if (form == Form::inference) {
        const std::int64_t k = config.max_scale();
        return cout * cg * k * k + cout;
    }
    std::int64_t total = 0;
    for (int scale : config.scales) {
        for (RFType t : config.rf_types) {
            const KernelShape shape = branch_kernel_shape(scale, t);
            total += cout * cg * shape.kh * shape.kw;  // weights
            total += cout;                             // bias
            total += 4 * cout;                         // mean, var, gamma, beta
        }
    }
    return total;
}

// MACs of one direct convolution: Cout*Hout*Wout*Cg*Kh*Kw.
inline std::int64_t conv_mac_count(int cout, int hout, int wout, int cg, int kh, int kw) {
    return static_cast<std::int64_t>(cout) * hout * wout * cg * kh * kw;
}

// Multiply-accumulate count for one sample of spatial size in_h x in_w.
// Each conv costs Cout*Hout*Wout*Cg*Kh*Kw; in the training form every
// branch's BN adds 2 ops per output element.
inline std::int64_t count_macs(const HPRFBConfig& config, Form form, int in_h, int in_w) {
    config.validate();
    const std::int64_t cout = config.out_channels;
    const std::int64_t cg = config.channels_per_group();
    if (form == Form::inference) {
        const int k = config.max_scale();
        const ConvGeometry g{config.stride, k / 2, k / 2, config.groups};
        const auto [ho, wo] = output_shape(in_h, in_w, k, k, g);
        return conv_mac_count(static_cast<int>(cout), ho, wo, static_cast<int>(cg), k, k);
    }
    std::int64_t total = 0;
    for (int scale : config.scales) {
        for (RFType t : config.rf_types) {
            const KernelShape shape = branch_kernel_shape(scale, t);
            const ConvGeometry g = config.branch_geometry(shape);
            const auto [ho, wo] = output_shape(in_h, in_w, shape.kh, shape.kw, g);
            total += conv_mac_count(static_cast<int>(cout), ho, wo, static_cast<int>(cg),
                                    shape.kh, shape.kw);
            total += 2 * cout * ho * wo;  // BN scale + shift
        }
    }
    return total;
}

struct VerifyReport {
    std::vector<double> trial_errors;  // max-abs error per trial
    double max_abs_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct VerifyOptions {
    int batch = 2;
    int height = 16;
    int width = 16;
};

// Runs seeded random inputs (uniform in [-1,1]) through the training form
// and the given merged form; passes iff the max-abs output difference stays
// within tol on every trial. The merged-conv overload exists so fault
// injection (a corrupted merge) is observable as a FAIL report.
template <typename T>
VerifyReport verify_equivalence(const HPRFBWeights<T>& w, const MergedConv<T>& merged,
                                int trials, std::uint64_t seed, double tol,
                                const VerifyOptions& opts = {}) {
    if (trials < 1) throw ConfigError("verify needs at least one trial");
    std::mt19937_64 rng(seed);
    VerifyReport report;
    report.tolerance = tol;
    for (int t = 0; t < trials; ++t) {
        Tensor4<T> x(opts.batch, w.config.in_channels, opts.height, opts.width);
        for (T& v : x.values()) v = static_cast<T>(uniform_sym(rng));
        const Tensor4<T> y_train = forward_train(x, w);
        const Tensor4<T> y_inf = forward_inference(x, merged);
        double err = 0.0;
        auto a = y_train.values();
        auto b = y_inf.values();
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
            if (d > err) err = d;
        }
        report.trial_errors.push_back(err);
        if (err > report.max_abs_error) report.max_abs_error = err;
    }
    report.pass = report.max_abs_error <= tol;
    return report;
}

template <typename T>
VerifyReport verify_equivalence(const HPRFBWeights<T>& w, int trials, std::uint64_t seed,
                                double tol, const VerifyOptions& opts = {}) {
    return verify_equivalence(w, reparameterize(w), trials, seed, tol, opts);
}

}  // namespace erohprf
