#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "erohprf/errors.hpp"

namespace erohprf {

// Dense 4-D feature map in N x C x H x W layout, row-major.
template <typename T>
class Tensor4 {
public:
    Tensor4() = default;

    Tensor4(int n, int c, int h, int w)
        : n_(n), c_(c), h_(h), w_(w), data_(checked_size(n, c, h, w), T(0)) {}

    Tensor4(int n, int c, int h, int w, std::vector<T> data)
        : n_(n), c_(c), h_(h), w_(w), data_(std::move(data)) {
        if (data_.size() != checked_size(n, c, h, w)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match dims " + dims_string());
        }
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w];
    }
    const T& at(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w];
    }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    bool same_dims(const Tensor4& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    std::string dims_string() const {
        return std::to_string(n_) + "x" + std::to_string(c_) + "x" +
               std::to_string(h_) + "x" + std::to_string(w_);
    }

private:
    static std::size_t checked_size(int n, int c, int h, int w) {
        if (n < 1 || c < 1 || h < 1 || w < 1) {
            throw ShapeError("tensor dims must all be >= 1, got " + std::to_string(n) + "x" +
                             std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
        }
        return static_cast<std::size_t>(n) * c * h * w;
    }

    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<T> data_;
};

// Convolution weights in Cout x Cg x Kh x Kw layout. Cg is the per-group
// input channel count.
template <typename T>
class Kernel4 {
public:
    Kernel4() = default;

    Kernel4(int cout, int cg, int kh, int kw)
        : cout_(cout), cg_(cg), kh_(kh), kw_(kw), data_(checked_size(cout, cg, kh, kw), T(0)) {}

    Kernel4(int cout, int cg, int kh, int kw, std::vector<T> data)
        : cout_(cout), cg_(cg), kh_(kh), kw_(kw), data_(std::move(data)) {
        if (data_.size() != checked_size(cout, cg, kh, kw)) {
            throw ShapeError("kernel data length " + std::to_string(data_.size()) +
                             " does not match dims " + dims_string());
        }
    }

    int cout() const { return cout_; }
    int cg() const { return cg_; }
    int kh() const { return kh_; }
    int kw() const { return kw_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(int co, int ci, int kh, int kw) {
        return data_[((static_cast<std::size_t>(co) * cg_ + ci) * kh_ + kh) * kw_ + kw];
    }
    const T& at(int co, int ci, int kh, int kw) const {
        return data_[((static_cast<std::size_t>(co) * cg_ + ci) * kh_ + kh) * kw_ + kw];
    }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    std::string dims_string() const {
        return std::to_string(cout_) + "x" + std::to_string(cg_) + "x" +
               std::to_string(kh_) + "x" + std::to_string(kw_);
    }

private:
    static std::size_t checked_size(int cout, int cg, int kh, int kw) {
        if (cout < 1 || cg < 1 || kh < 1 || kw < 1) {
            throw ShapeError("kernel dims must all be >= 1, got " + std::to_string(cout) + "x" +
                             std::to_string(cg) + "x" + std::to_string(kh) + "x" +
                             std::to_string(kw));
        }
        return static_cast<std::size_t>(cout) * cg * kh * kw;
    }

    int cout_ = 0, cg_ = 0, kh_ = 0, kw_ = 0;
    std::vector<T> data_;
};

// Stride is the same on both axes; dilation is fixed at 1.
struct ConvGeometry {
    int stride = 1;
    int pad_h = 0;
    int pad_w = 0;
    int groups = 1;

    void validate() const {
        if (stride < 1) throw GeometryError("stride must be >= 1, got " + std::to_string(stride));
        if (pad_h < 0 || pad_w < 0) {
            throw GeometryError("padding must be >= 0, got " + std::to_string(pad_h) + "," +
                                std::to_string(pad_w));
        }
        if (groups < 1) throw GeometryError("groups must be >= 1, got " + std::to_string(groups));
    }
};

// Inference-mode batch normalization parameters, one entry per out-channel.
template <typename T>
struct BNParams {
    std::vector<T> mean;
    std::vector<T> var;
    std::vector<T> gamma;
    std::vector<T> beta;
    T eps = T(1e-5);

    int channels() const { return static_cast<int>(mean.size()); }

    static BNParams identity(int channels, T eps = T(1e-5)) {
        BNParams bn;
        bn.mean.assign(channels, T(0));
        bn.var.assign(channels, T(1));
        bn.gamma.assign(channels, T(1));
        bn.beta.assign(channels, T(0));
        bn.eps = eps;
        return bn;
    }

    void validate() const {
        const std::size_t c = mean.size();
        if (var.size() != c || gamma.size() != c || beta.size() != c) {
            throw ShapeError("BN parameter vectors must share one channel count");
        }
        for (std::size_t i = 0; i < c; ++i) {
            if (!(static_cast<double>(var[i]) + static_cast<double>(eps) > 0.0)) {
                throw NumericError("var + eps must be positive at channel " + std::to_string(i));
            }
        }
    }
};

// Hout = floor((H + 2*pad - K)/stride) + 1, same for width. Throws when the
// kernel does not fit or the output would be empty.
inline std::pair<int, int> output_shape(int in_h, int in_w, int kh, int kw,
                                        const ConvGeometry& g) {
    g.validate();
    if (in_h < 1 || in_w < 1 || kh < 1 || kw < 1) {
        throw GeometryError("input and kernel extents must be >= 1");
    }
    const long eh = static_cast<long>(in_h) + 2L * g.pad_h - kh;
    const long ew = static_cast<long>(in_w) + 2L * g.pad_w - kw;
    if (eh < 0 || ew < 0) {
        throw GeometryError("kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                            " exceeds padded input " + std::to_string(in_h + 2 * g.pad_h) + "x" +
                            std::to_string(in_w + 2 * g.pad_w));
    }
    return {static_cast<int>(eh / g.stride) + 1, static_cast<int>(ew / g.stride) + 1};
}

namespace detail {

template <typename T>
inline void check_conv_operands(const Tensor4<T>& x, const Kernel4<T>& k,
                                const std::vector<T>& bias, const ConvGeometry& g) {
    g.validate();
    if (x.c() != g.groups * k.cg()) {
        throw ShapeError("input channels " + std::to_string(x.c()) + " != groups*Cg = " +
                         std::to_string(g.groups) + "*" + std::to_string(k.cg()));
    }
    if (k.cout() % g.groups != 0) {
        throw ShapeError("out channels " + std::to_string(k.cout()) + " not divisible by groups " +
                         std::to_string(g.groups));
    }
    if (!bias.empty() && static_cast<int>(bias.size()) != k.cout()) {
        throw ShapeError("bias length " + std::to_string(bias.size()) + " != out channels " +
                         std::to_string(k.cout()));
    }
}

}  // namespace detail

// Direct 2-D convolution with zero padding. Out-of-bounds input reads
// contribute zero. An empty bias vector means zero bias. The per-pixel
// accumulation order is fixed (kh, then kw, then ci) so results are
// bit-reproducible run to run.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Kernel4<T>& k, const std::vector<T>& bias,
                          const ConvGeometry& g) {
    detail::check_conv_operands(x, k, bias, g);
    const auto [ho, wo] = output_shape(x.h(), x.w(), k.kh(), k.kw(), g);

    Tensor4<T> out(x.n(), k.cout(), ho, wo);
    const int oc_per_group = k.cout() / g.groups;
    for (int n = 0; n < x.n(); ++n) {
        for (int co = 0; co < k.cout(); ++co) {
            const int ci0 = (co / oc_per_group) * k.cg();
            for (int oh = 0; oh < ho; ++oh) {
                const int ih0 = oh * g.stride - g.pad_h;
                for (int ow = 0; ow < wo; ++ow) {
                    const int iw0 = ow * g.stride - g.pad_w;
                    T acc = bias.empty() ? T(0) : bias[co];
                    for (int kh = 0; kh < k.kh(); ++kh) {
                        const int ih = ih0 + kh;
                        if (ih < 0 || ih >= x.h()) continue;
                        for (int kw = 0; kw < k.kw(); ++kw) {
                            const int iw = iw0 + kw;
                            if (iw < 0 || iw >= x.w()) continue;
                            for (int ci = 0; ci < k.cg(); ++ci) {
                                acc += x.at(n, ci0 + ci, ih, iw) * k.at(co, ci, kh, kw);
                            }
                        }
                    }
                    out.at(n, co, oh, ow) = acc;
                }
            }
        }
    }
    return out;
}

// Gradient of the convolution output w.r.t. its input: the exact transpose
// convolution of delta with k. in_h/in_w are the forward input extents.
template <typename T>
Tensor4<T> conv2d_backward_input(const Tensor4<T>& delta, const Kernel4<T>& k,
                                 const ConvGeometry& g, int in_h, int in_w) {
    g.validate();
    if (delta.c() != k.cout()) {
        throw ShapeError("delta channels " + std::to_string(delta.c()) + " != kernel out channels " +
                         std::to_string(k.cout()));
    }
    if (k.cout() % g.groups != 0) {
        throw ShapeError("out channels not divisible by groups");
    }
    const auto [ho, wo] = output_shape(in_h, in_w, k.kh(), k.kw(), g);
    if (ho != delta.h() || wo != delta.w()) {
        throw ShapeError("delta spatial dims " + std::to_string(delta.h()) + "x" +
                         std::to_string(delta.w()) + " do not match forward output " +
                         std::to_string(ho) + "x" + std::to_string(wo));
    }

    Tensor4<T> dx(delta.n(), g.groups * k.cg(), in_h, in_w);
    const int oc_per_group = k.cout() / g.groups;
    for (int n = 0; n < delta.n(); ++n) {
        for (int co = 0; co < k.cout(); ++co) {
            const int ci0 = (co / oc_per_group) * k.cg();
            for (int oh = 0; oh < delta.h(); ++oh) {
                const int ih0 = oh * g.stride - g.pad_h;
                for (int ow = 0; ow < delta.w(); ++ow) {
                    const int iw0 = ow * g.stride - g.pad_w;
                    const T d = delta.at(n, co, oh, ow);
                    for (int kh = 0; kh < k.kh(); ++kh) {
                        const int ih = ih0 + kh;
                        if (ih < 0 || ih >= in_h) continue;
                        for (int kw = 0; kw < k.kw(); ++kw) {
                            const int iw = iw0 + kw;
                            if (iw < 0 || iw >= in_w) continue;
                            for (int ci = 0; ci < k.cg(); ++ci) {
                                dx.at(n, ci0 + ci, ih, iw) += d * k.at(co, ci, kh, kw);
                            }
                        }
                    }
                }
            }
        }
    }
    return dx;
}

template <typename T>
struct WeightGradients {
    Kernel4<T> d_kernel;
    std::vector<T> d_bias;
};

// Gradient of the convolution output w.r.t. weights and bias: the weight
// gradient is the cross-correlation of x with delta; the bias gradient is the
// per-out-channel sum of delta.
template <typename T>
WeightGradients<T> conv2d_backward_weight(const Tensor4<T>& x, const Tensor4<T>& delta,
                                          const ConvGeometry& g, int kh, int kw) {
    g.validate();
    if (x.n() != delta.n()) {
        throw ShapeError("batch mismatch between input and delta");
    }
    if (x.c() % g.groups != 0 || delta.c() % g.groups != 0) {
        throw ShapeError("channels not divisible by groups");
    }
    const auto [ho, wo] = output_shape(x.h(), x.w(), kh, kw, g);
    if (ho != delta.h() || wo != delta.w()) {
        throw ShapeError("delta spatial dims do not match one forward call");
    }

    const int cg = x.c() / g.groups;
    const int cout = delta.c();
    const int oc_per_group = cout / g.groups;
    WeightGradients<T> grads{Kernel4<T>(cout, cg, kh, kw), std::vector<T>(cout, T(0))};
    for (int n = 0; n < x.n(); ++n) {
        for (int co = 0; co < cout; ++co) {
            const int ci0 = (co / oc_per_group) * cg;
            for (int oh = 0; oh < delta.h(); ++oh) {
                const int ih0 = oh * g.stride - g.pad_h;
                for (int ow = 0; ow < delta.w(); ++ow) {
                    const int iw0 = ow * g.stride - g.pad_w;
                    const T d = delta.at(n, co, oh, ow);
                    grads.d_bias[co] += d;
                    for (int ki = 0; ki < kh; ++ki) {
                        const int ih = ih0 + ki;
                        if (ih < 0 || ih >= x.h()) continue;
                        for (int kj = 0; kj < kw; ++kj) {
                            const int iw = iw0 + kj;
                            if (iw < 0 || iw >= x.w()) continue;
                            for (int ci = 0; ci < cg; ++ci) {
                                grads.d_kernel.at(co, ci, ki, kj) += d * x.at(n, ci0 + ci, ih, iw);
                            }
                        }
                    }
                }
            }
        }
    }
    return grads;
}

// Per-channel affine: out = (x - mean) * gamma / sqrt(var + eps) + beta.
template <typename T>
Tensor4<T> batchnorm_inference(const Tensor4<T>& x, const BNParams<T>& bn) {
    bn.validate();
    if (bn.channels() != x.c()) {
        throw ShapeError("BN channel count " + std::to_string(bn.channels()) +
                         " != tensor channels " + std::to_string(x.c()));
    }
    Tensor4<T> out(x.n(), x.c(), x.h(), x.w());
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T scale = bn.gamma[c] / std::sqrt(bn.var[c] + bn.eps);
            const T shift = bn.beta[c] - bn.mean[c] * scale;
            for (int h = 0; h < x.h(); ++h) {
                for (int w = 0; w < x.w(); ++w) {
                    out.at(n, c, h, w) = x.at(n, c, h, w) * scale + shift;
                }
            }
        }
    }
    return out;
}

// Embeds k centered in a zero-filled target_kh x target_kw kernel. The
// center offsets (target-K)/2 must be integral, which holds whenever source
// and target extents are both odd.
template <typename T>
Kernel4<T> pad_kernel(const Kernel4<T>& k, int target_kh, int target_kw) {
    if (target_kh < k.kh() || target_kw < k.kw()) {
        throw GeometryError("pad target " + std::to_string(target_kh) + "x" +
                            std::to_string(target_kw) + " smaller than source " +
                            std::to_string(k.kh()) + "x" + std::to_string(k.kw()));
    }
    if ((target_kh - k.kh()) % 2 != 0 || (target_kw - k.kw()) % 2 != 0) {
        throw GeometryError("pad difference must be even on each axis");
    }
    const int off_h = (target_kh - k.kh()) / 2;
    const int off_w = (target_kw - k.kw()) / 2;
    Kernel4<T> out(k.cout(), k.cg(), target_kh, target_kw);
    for (int co = 0; co < k.cout(); ++co) {
        for (int ci = 0; ci < k.cg(); ++ci) {
            for (int kh = 0; kh < k.kh(); ++kh) {
                for (int kw = 0; kw < k.kw(); ++kw) {
                    out.at(co, ci, off_h + kh, off_w + kw) = k.at(co, ci, kh, kw);
                }
            }
        }
    }
    return out;
}

}  // namespace erohprf
