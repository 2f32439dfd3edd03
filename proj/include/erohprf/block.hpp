#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "erohprf/errors.hpp"
#include "erohprf/rand.hpp"
#include "erohprf/tensor.hpp"

namespace erohprf {

// The five receptive-field types of a heterogeneous bag. For scale i the
// kernel shapes are: VC i x 1, HC 1 x i, VR i x (i-2), HR (i-2) x i, S i x i.
enum class RFType : std::uint8_t { VC, HC, VR, HR, S };

// Canonical type order; all branch lists are kept in this order per scale.
inline constexpr std::array<RFType, 5> kAllRFTypes{RFType::VC, RFType::HC, RFType::VR,
                                                   RFType::HR, RFType::S};

inline std::string_view to_string(RFType t) {
    switch (t) {
        case RFType::VC: return "VC";
        case RFType::HC: return "HC";
        case RFType::VR: return "VR";
        case RFType::HR: return "HR";
        case RFType::S: return "S";
    }
    return "?";
}

inline RFType parse_rf_type(std::string_view s) {
    for (RFType t : kAllRFTypes) {
        if (s == to_string(t)) return t;
    }
    throw ParseError("unknown RF type '" + std::string(s) + "'");
}

struct KernelShape {
    int kh = 0;
    int kw = 0;
    bool operator==(const KernelShape&) const = default;
};

// Kernel shape dictated by (scale, RF type). Scale must be odd and >= 3.
inline KernelShape branch_kernel_shape(int scale, RFType type) {
    if (scale < 3 || scale % 2 == 0) {
        throw GeometryError("RF scale must be odd and >= 3, got " + std::to_string(scale));
    }
    switch (type) {
        case RFType::VC: return {scale, 1};
        case RFType::HC: return {1, scale};
        case RFType::VR: return {scale, scale - 2};
        case RFType::HR: return {scale - 2, scale};
        case RFType::S: return {scale, scale};
    }
    throw GeometryError("invalid RF type");
}

// Full bag configuration: pyramid scales, enabled RF types, and the shared
// channel/group/stride geometry of every branch.
struct HPRFBConfig {
    std::vector<int> scales{3, 5, 7};
    std::vector<RFType> rf_types{kAllRFTypes.begin(), kAllRFTypes.end()};
    int in_channels = 1;
    int out_channels = 1;
    int groups = 1;
    int stride = 1;
    double bn_eps = 1e-5;

    void validate() const {
        if (scales.empty()) throw ConfigError("scales must be non-empty");
        for (std::size_t i = 0; i < scales.size(); ++i) {
            if (scales[i] < 3 || scales[i] % 2 == 0) {
                throw ConfigError("scales must be odd and >= 3, got " + std::to_string(scales[i]));
            }
            if (i > 0 && scales[i] <= scales[i - 1]) {
                throw ConfigError("scales must be strictly ascending");
            }
        }
        if (rf_types.empty()) throw ConfigError("rf_types must be non-empty");
        std::size_t cursor = 0;
        for (RFType t : rf_types) {
            // enforce canonical VC,HC,VR,HR,S order without duplicates
            while (cursor < kAllRFTypes.size() && kAllRFTypes[cursor] != t) ++cursor;
            if (cursor == kAllRFTypes.size()) {
                throw ConfigError("rf_types must follow the canonical VC,HC,VR,HR,S order "
                                  "without duplicates");
            }
            ++cursor;
        }
        if (in_channels < 1 || out_channels < 1) {
            throw ConfigError("channel counts must be >= 1");
        }
        if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
            throw ConfigError("groups must divide both channel counts");
        }
        if (stride < 1) throw ConfigError("stride must be >= 1");
        if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must be positive");
    }

    int max_scale() const { return scales.empty() ? 0 : scales.back(); }
    int channels_per_group() const { return in_channels / groups; }
    std::size_t branch_count() const { return scales.size() * rf_types.size(); }

    // Per-branch padding (floor(Kh/2), floor(Kw/2)): the unique choice that
    // makes every branch alias a K x K conv at pad floor(K/2) for any stride.
    ConvGeometry branch_geometry(KernelShape shape) const {
        return ConvGeometry{stride, shape.kh / 2, shape.kw / 2, groups};
    }
};

// One RF branch: convolution kernel + bias followed by batch normalization.
template <typename T>
struct BranchParams {
    int scale = 3;
    RFType rf_type = RFType::S;
    Kernel4<T> kernel;
    std::vector<T> bias;
    BNParams<T> bn;

    std::string name() const {
        return std::to_string(scale) + "." + std::string(to_string(rf_type));
    }
};

// The full heterogeneous pyramid bag. Branches are stored in the fixed
// (scale-ascending, VC,HC,VR,HR,S) order; floating-point sums follow it.
template <typename T>
struct HPRFBWeights {
    HPRFBConfig config;
    std::vector<BranchParams<T>> branches;

    void validate() const {
        config.validate();
        if (branches.size() != config.branch_count()) {
            throw ConfigError("expected " + std::to_string(config.branch_count()) +
                              " branches, got " + std::to_string(branches.size()));
        }
        const int cg = config.channels_per_group();
        std::size_t idx = 0;
        for (int scale : config.scales) {
            for (RFType t : config.rf_types) {
                const BranchParams<T>& b = branches[idx++];
                if (b.scale != scale || b.rf_type != t) {
                    throw ConfigError("branch order violated at index " + std::to_string(idx - 1) +
                                      ": expected " + std::to_string(scale) + "." +
                                      std::string(to_string(t)) + ", got " + b.name());
                }
                const KernelShape shape = branch_kernel_shape(scale, t);
                if (b.kernel.cout() != config.out_channels || b.kernel.cg() != cg ||
                    b.kernel.kh() != shape.kh || b.kernel.kw() != shape.kw) {
                    throw ConfigError("branch " + b.name() + " kernel dims " +
                                      b.kernel.dims_string() + " violate the (scale,type) rule");
                }
                if (static_cast<int>(b.bias.size()) != config.out_channels ||
                    b.bn.channels() != config.out_channels) {
                    throw ConfigError("branch " + b.name() + " bias/BN channel count mismatch");
                }
                b.bn.validate();
            }
        }
    }
};

// Gradients for one branch's parameters.
template <typename T>
struct BranchGradients {
    Kernel4<T> d_kernel;
    std::vector<T> d_bias;
    std::vector<T> d_gamma;
    std::vector<T> d_beta;
};

template <typename T>
struct GradientBundle {
    Tensor4<T> d_input;
    std::vector<BranchGradients<T>> branches;
};

// Kernels drawn uniform in [-1/sqrt(fan-in), 1/sqrt(fan-in)) per branch,
// biases zero, BN at identity statistics (mean 0, var 1, gamma 1, beta 0).
// Draws happen in double and are cast, so a seed selects the same point for
// both element precisions.
template <typename T>
HPRFBWeights<T> init_weights(const HPRFBConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    HPRFBWeights<T> w;
    w.config = config;
    const int cg = config.channels_per_group();
    for (int scale : config.scales) {
        for (RFType t : config.rf_types) {
            const KernelShape shape = branch_kernel_shape(scale, t);
            BranchParams<T> b;
            b.scale = scale;
            b.rf_type = t;
            b.kernel = Kernel4<T>(config.out_channels, cg, shape.kh, shape.kw);
            const double bound = 1.0 / std::sqrt(static_cast<double>(cg) * shape.kh * shape.kw);
            for (T& v : b.kernel.values()) {
                v = static_cast<T>(uniform_scaled(rng, bound));
            }
            b.bias.assign(config.out_channels, T(0));
            b.bn = BNParams<T>::identity(config.out_channels, static_cast<T>(config.bn_eps));
            w.branches.push_back(std::move(b));
        }
    }
    return w;
}

// Training-form forward: elementwise sum over all branches of
// BN(conv(x, branch)), reduced in the fixed branch order.
template <typename T>
Tensor4<T> forward_train(const Tensor4<T>& x, const HPRFBWeights<T>& w) {
    w.validate();
    if (x.c() != w.config.in_channels) {
        throw ShapeError("input channels " + std::to_string(x.c()) + " != configured " +
                         std::to_string(w.config.in_channels));
    }
    Tensor4<T> out;
    for (const BranchParams<T>& b : w.branches) {
        const ConvGeometry g = w.config.branch_geometry({b.kernel.kh(), b.kernel.kw()});
        Tensor4<T> y = batchnorm_inference(conv2d_forward(x, b.kernel, b.bias, g),
                                           b.bn);
        if (out.empty()) {
            out = std::move(y);
        } else {
            auto ov = out.values();
            auto yv = y.values();
            for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += yv[i];
        }
    }
    return out;
}

// Analytic backward through every branch. Each branch's parameter gradients
// depend only on (x, delta, that branch); d_input is the branch sum in fixed
// order. BN statistics are treated as frozen constants.
template <typename T>
GradientBundle<T> backward(const Tensor4<T>& x, const HPRFBWeights<T>& w,
                           const Tensor4<T>& delta) {
    w.validate();
    if (x.c() != w.config.in_channels) {
        throw ShapeError("input channels do not match configuration");
    }
    GradientBundle<T> bundle;
    bundle.d_input = Tensor4<T>(x.n(), x.c(), x.h(), x.w());
    bundle.branches.reserve(w.branches.size());

    for (const BranchParams<T>& b : w.branches) {
        const ConvGeometry g = w.config.branch_geometry({b.kernel.kh(), b.kernel.kw()});
        const auto [ho, wo] = output_shape(x.h(), x.w(), b.kernel.kh(), b.kernel.kw(), g);
        if (delta.n() != x.n() || delta.c() != w.config.out_channels || delta.h() != ho ||
            delta.w() != wo) {
            throw ShapeError("delta dims " + delta.dims_string() +
                             " do not match forward output");
        }

        b.bn.validate();
        std::vector<T> scale(w.config.out_channels);
        for (int c = 0; c < w.config.out_channels; ++c) {
            scale[c] = b.bn.gamma[c] / std::sqrt(b.bn.var[c] + b.bn.eps);
        }

        // dL/dz for the branch's pre-BN output z: delta scaled per channel.
        Tensor4<T> dz(delta.n(), delta.c(), delta.h(), delta.w());
        for (int n = 0; n < delta.n(); ++n) {
            for (int c = 0; c < delta.c(); ++c) {
                for (int h = 0; h < delta.h(); ++h) {
                    for (int wI = 0; wI < delta.w(); ++wI) {
                        dz.at(n, c, h, wI) = delta.at(n, c, h, wI) * scale[c];
                    }
                }
            }
        }

        WeightGradients<T> wg =
            conv2d_backward_weight(x, dz, g, b.kernel.kh(), b.kernel.kw());
        Tensor4<T> dx = conv2d_backward_input(dz, b.kernel, g, x.h(), x.w());
        {
            auto acc = bundle.d_input.values();
            auto src = dx.values();
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
        }

        // d_gamma needs the normalized pre-BN activations; recompute z.
        Tensor4<T> z = conv2d_forward(x, b.kernel, b.bias, g);
        BranchGradients<T> bg;
        bg.d_kernel = std::move(wg.d_kernel);
        bg.d_bias = std::move(wg.d_bias);
        bg.d_gamma.assign(w.config.out_channels, T(0));
        bg.d_beta.assign(w.config.out_channels, T(0));
        for (int n = 0; n < delta.n(); ++n) {
            for (int c = 0; c < delta.c(); ++c) {
                const T inv_std = T(1) / std::sqrt(b.bn.var[c] + b.bn.eps);
                for (int h = 0; h < delta.h(); ++h) {
                    for (int wI = 0; wI < delta.w(); ++wI) {
                        const T d = delta.at(n, c, h, wI);
                        bg.d_gamma[c] += d * (z.at(n, c, h, wI) - b.bn.mean[c]) * inv_std;
                        bg.d_beta[c] += d;
                    }
                }
            }
        }
        bundle.branches.push_back(std::move(bg));
    }
    return bundle;
}

}  // namespace erohprf
