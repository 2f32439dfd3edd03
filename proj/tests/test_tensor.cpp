#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "erohprf/tensor.hpp"
#include "testutil.hpp"

using namespace erohprf;
using testutil::brute_conv;
using testutil::max_abs_diff;
using testutil::max_rel_diff;
using testutil::random_kernel;
using testutil::random_tensor;
using testutil::random_values;

namespace {

Kernel4<double> identity_3x3() {
    Kernel4<double> k(1, 1, 3, 3);
    k.at(0, 0, 1, 1) = 1.0;
    return k;
}

}  // namespace

TEST_CASE("output_shape formula and errors") {
    CHECK(output_shape(8, 8, 7, 7, {1, 3, 3, 1}) == std::pair{8, 8});
    CHECK(output_shape(8, 8, 3, 3, {2, 1, 1, 1}) == std::pair{4, 4});
    CHECK_THROWS_AS(output_shape(5, 5, 7, 7, {1, 0, 0, 1}), GeometryError);
    CHECK_THROWS_AS(output_shape(8, 8, 3, 3, {0, 1, 1, 1}), GeometryError);
    CHECK_THROWS_AS(output_shape(8, 8, 3, 3, {1, -1, 0, 1}), GeometryError);
}

TEST_CASE("conv2d_forward: identity kernel is the identity map, exactly") {
    std::mt19937_64 rng(11);
    const auto x = random_tensor<double>(rng, 1, 1, 4, 4);
    const auto y = conv2d_forward(x, identity_3x3(), {}, {1, 1, 1, 1});
    CHECK(x.same_dims(y));
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x.values()[i] == y.values()[i]);
    }
}

TEST_CASE("conv2d_forward: all-ones 3x3 over a padded 2x2 sums everything") {
    Tensor4<double> x(1, 1, 2, 2, {1, 2, 3, 4});
    Kernel4<double> k(1, 1, 3, 3, std::vector<double>(9, 1.0));
    const auto y = conv2d_forward(x, k, {}, {1, 1, 1, 1});
    REQUIRE(y.size() == 4);
    for (double v : y.values()) CHECK(v == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("conv2d_forward: 1x1 kernel is scale-and-shift") {
    Tensor4<double> x(1, 1, 2, 2, {1, 2, 3, 4});
    Kernel4<double> k(1, 1, 1, 1, {2.0});
    const std::vector<double> bias{1.0};
    const auto y = conv2d_forward(x, k, bias, {1, 0, 0, 1});
    CHECK(y.values()[0] == 3.0);
    CHECK(y.values()[1] == 5.0);
    CHECK(y.values()[2] == 7.0);
    CHECK(y.values()[3] == 9.0);
}

TEST_CASE("conv2d_forward shape errors") {
    std::mt19937_64 rng(3);
    const auto x = random_tensor<double>(rng, 1, 3, 4, 4);
    const auto k = random_kernel<double>(rng, 2, 2, 3, 3);
    CHECK_THROWS_AS(conv2d_forward(x, k, {}, {1, 1, 1, 1}), ShapeError);  // 3 != 1*2
    const auto k2 = random_kernel<double>(rng, 3, 3, 3, 3);
    const std::vector<double> bad_bias{1.0};
    CHECK_THROWS_AS(conv2d_forward(x, k2, bad_bias, {1, 1, 1, 1}), ShapeError);
    CHECK_THROWS_AS(conv2d_forward(x, k2, {}, {1, 0, 0, 3}), ShapeError);  // groups*cg
}

TEST_CASE("conv2d_forward matches the brute-force oracle on random geometry") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 120; ++trial) {
        const int groups = 1 + static_cast<int>(rng() % 3);
        const int cg = 1 + static_cast<int>(rng() % 2);
        const int cout = groups * (1 + static_cast<int>(rng() % 2));
        const int kh = 1 + 2 * static_cast<int>(rng() % 3);
        const int kw = 1 + 2 * static_cast<int>(rng() % 3);
        const int h = kh + static_cast<int>(rng() % 5);
        const int w = kw + static_cast<int>(rng() % 5);
        const ConvGeometry g{1 + static_cast<int>(rng() % 2), static_cast<int>(rng() % 3),
                             static_cast<int>(rng() % 3), groups};
        const auto x = random_tensor<double>(rng, 1 + static_cast<int>(rng() % 2),
                                             groups * cg, h, w);
        const auto k = random_kernel<double>(rng, cout, cg, kh, kw);
        const auto bias = random_values(rng, cout);
        const auto y = conv2d_forward(x, k, bias, g);
        const auto ref = brute_conv(x, k, bias, g);
        CHECK(max_abs_diff(y, ref) < 1e-12);
    }
}

TEST_CASE("homogeneity: conv(x, a*W, a*B) == a*conv(x, W, B)") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 120; ++trial) {
        const auto x = random_tensor<double>(rng, 1, 2, 5, 5);
        const auto k = random_kernel<double>(rng, 2, 2, 3, 3);
        const auto bias = random_values(rng, 2);
        const double a = uniform_scaled(rng, 3.0);
        Kernel4<double> ka = k;
        for (double& v : ka.values()) v *= a;
        std::vector<double> ba = bias;
        for (double& v : ba) v *= a;
        const ConvGeometry g{1, 1, 1, 1};
        auto lhs = conv2d_forward(x, ka, ba, g);
        auto rhs = conv2d_forward(x, k, bias, g);
        for (double& v : rhs.values()) v *= a;
        CHECK(max_rel_diff(lhs, rhs) < 1e-12);
    }
}

TEST_CASE("additivity: conv(x,W1,B1)+conv(x,W2,B2) == conv(x,W1+W2,B1+B2)") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 120; ++trial) {
        const auto x = random_tensor<double>(rng, 2, 1, 5, 5);
        const auto k1 = random_kernel<double>(rng, 2, 1, 3, 3);
        const auto k2 = random_kernel<double>(rng, 2, 1, 3, 3);
        const auto b1 = random_values(rng, 2);
        const auto b2 = random_values(rng, 2);
        Kernel4<double> ks = k1;
        for (std::size_t i = 0; i < ks.size(); ++i) ks.values()[i] += k2.values()[i];
        std::vector<double> bs(2);
        for (int i = 0; i < 2; ++i) bs[i] = b1[i] + b2[i];
        const ConvGeometry g{1, 1, 1, 1};
        auto lhs = conv2d_forward(x, k1, b1, g);
        const auto y2 = conv2d_forward(x, k2, b2, g);
        for (std::size_t i = 0; i < lhs.size(); ++i) lhs.values()[i] += y2.values()[i];
        const auto rhs = conv2d_forward(x, ks, bs, g);
        CHECK(max_rel_diff(lhs, rhs) < 1e-12);
    }
}

TEST_CASE("pad-equivalence: padded kernel with raised input padding, any stride") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 120; ++trial) {
        const int kh = 1 + 2 * static_cast<int>(rng() % 2);
        const int kw = 1 + 2 * static_cast<int>(rng() % 2);
        const int target = 5;
        const auto x = random_tensor<double>(rng, 1, 1, 6, 6);
        const auto k = random_kernel<double>(rng, 1, 1, kh, kw);
        const auto bias = random_values(rng, 1);
        const int stride = 1 + static_cast<int>(rng() % 2);
        const ConvGeometry g{stride, kh / 2, kw / 2, 1};
        const ConvGeometry g2{stride, kh / 2 + (target - kh) / 2, kw / 2 + (target - kw) / 2, 1};
        const auto y1 = conv2d_forward(x, k, bias, g);
        const auto y2 =
            conv2d_forward(x, pad_kernel(k, target, target), bias, g2);
        CHECK(max_rel_diff(y1, y2) < 1e-12);
    }
}

TEST_CASE("pad_kernel placement and errors") {
    Kernel4<double> k1(1, 1, 1, 1, {2.0});
    const auto p1 = pad_kernel(k1, 3, 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(p1.at(0, 0, i, j) == (i == 1 && j == 1 ? 2.0 : 0.0));
        }
    }
    Kernel4<double> col(1, 1, 3, 1, {1.0, 2.0, 3.0});
    const auto p2 = pad_kernel(col, 3, 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(p2.at(0, 0, i, j) == (j == 1 ? static_cast<double>(i + 1) : 0.0));
        }
    }
    CHECK_THROWS_AS(pad_kernel(col, 1, 1), GeometryError);   // shrinking
    CHECK_THROWS_AS(pad_kernel(col, 4, 3), GeometryError);   // odd difference
}

TEST_CASE("batchnorm_inference examples") {
    std::mt19937_64 rng(10);
    const auto x = random_tensor<double>(rng, 1, 2, 3, 3);

    SUBCASE("unit affine is the identity") {
        BNParams<double> bn = BNParams<double>::identity(2, 1e-5);
        for (double& g : bn.gamma) g = std::sqrt(1.0 + 1e-5);
        const auto y = batchnorm_inference(x, bn);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
    }
    SUBCASE("direct evaluation of the formula") {
        Tensor4<double> one(1, 1, 1, 1, {1.0});
        BNParams<double> bn;
        bn.mean = {0.5};
        bn.var = {0.75};
        bn.gamma = {3.0};
        bn.beta = {0.1};
        bn.eps = 0.25;
        const auto y = batchnorm_inference(one, bn);
        CHECK(y.values()[0] == doctest::Approx(1.6).epsilon(1e-14));
    }
    SUBCASE("constant input equal to mean maps to beta") {
        Tensor4<double> c(1, 1, 2, 2, {0.7, 0.7, 0.7, 0.7});
        BNParams<double> bn;
        bn.mean = {0.7};
        bn.var = {2.0};
        bn.gamma = {1.3};
        bn.beta = {-0.4};
        const auto y = batchnorm_inference(c, bn);
        for (double v : y.values()) CHECK(v == doctest::Approx(-0.4).epsilon(1e-14));
    }
    SUBCASE("channel mismatch and invalid variance") {
        BNParams<double> bad = BNParams<double>::identity(3);
        CHECK_THROWS_AS(batchnorm_inference(x, bad), ShapeError);
        BNParams<double> neg = BNParams<double>::identity(2);
        neg.var[1] = -1.0;
        CHECK_THROWS_AS(batchnorm_inference(x, neg), NumericError);
    }
}

TEST_CASE("conv2d_backward_input examples") {
    std::mt19937_64 rng(12);
    SUBCASE("zero delta gives zero gradient") {
        const auto k = random_kernel<double>(rng, 1, 1, 3, 3);
        Tensor4<double> delta(1, 1, 4, 4);
        const auto dx = conv2d_backward_input(delta, k, {1, 1, 1, 1}, 4, 4);
        for (double v : dx.values()) CHECK(v == 0.0);
    }
    SUBCASE("1x1 kernel is the scalar chain rule") {
        const double c = -1.7;
        Kernel4<double> k(1, 1, 1, 1, {c});
        const auto delta = random_tensor<double>(rng, 1, 1, 3, 3);
        const auto dx = conv2d_backward_input(delta, k, {1, 0, 0, 1}, 3, 3);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            CHECK(dx.values()[i] == doctest::Approx(c * delta.values()[i]).epsilon(1e-15));
        }
    }
    SUBCASE("shape mismatch") {
        const auto k = random_kernel<double>(rng, 1, 1, 3, 3);
        Tensor4<double> delta(1, 1, 3, 3);
        CHECK_THROWS_AS(conv2d_backward_input(delta, k, {1, 1, 1, 1}, 4, 4), ShapeError);
    }
}

TEST_CASE("conv2d_backward_weight examples") {
    SUBCASE("zero delta gives zero gradients") {
        Tensor4<double> x(1, 1, 3, 3, std::vector<double>(9, 1.0));
        Tensor4<double> delta(1, 1, 3, 3);
        const auto g = conv2d_backward_weight(x, delta, {1, 1, 1, 1}, 3, 3);
        for (double v : g.d_kernel.values()) CHECK(v == 0.0);
        CHECK(g.d_bias[0] == 0.0);
    }
    SUBCASE("single pixel, 1x1 kernel: product rule") {
        Tensor4<double> x(1, 1, 1, 1, {2.5});
        Tensor4<double> delta(1, 1, 1, 1, {-0.5});
        const auto g = conv2d_backward_weight(x, delta, {1, 0, 0, 1}, 1, 1);
        CHECK(g.d_kernel.values()[0] == doctest::Approx(-1.25).epsilon(1e-15));
        CHECK(g.d_bias[0] == -0.5);
    }
}

// Central finite differences of L = sum(conv_forward .* probe) against both
// backward directions, on random instances up to 2x4x9x9.
TEST_CASE("backward operations match finite differences") {
    std::mt19937_64 rng(42);
    const double h = 1e-5;
    for (int trial = 0; trial < 12; ++trial) {
        const int groups = 1 + static_cast<int>(rng() % 2);
        const int cg = 1 + static_cast<int>(rng() % 2);
        const int cin = groups * cg;
        const int cout = groups * (1 + static_cast<int>(rng() % 2));
        const int kh = 1 + 2 * static_cast<int>(rng() % 2);
        const int kw = 1 + 2 * static_cast<int>(rng() % 2);
        const int hin = 5 + static_cast<int>(rng() % 5);
        const int win = 5 + static_cast<int>(rng() % 5);
        const ConvGeometry g{1 + static_cast<int>(rng() % 2), kh / 2, kw / 2, groups};
        auto x = random_tensor<double>(rng, 1 + static_cast<int>(rng() % 2), cin, hin, win);
        auto k = random_kernel<double>(rng, cout, cg, kh, kw);
        const auto bias = random_values(rng, cout);

        const auto y0 = conv2d_forward(x, k, bias, g);
        Tensor4<double> probe(y0.n(), y0.c(), y0.h(), y0.w());
        for (double& v : probe.values()) v = uniform_sym(rng);
        const auto loss = [&] {
            const auto y = conv2d_forward(x, k, bias, g);
            double l = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                l += y.values()[i] * probe.values()[i];
            }
            return l;
        };

        const auto dx = conv2d_backward_input(probe, k, g, x.h(), x.w());
        const auto dw = conv2d_backward_weight(x, probe, g, kh, kw);

        double worst = 0.0;
        auto xv = x.values();
        for (std::size_t i = 0; i < xv.size(); i += 7) {  // sampled coordinates
            const double saved = xv[i];
            xv[i] = saved + h;
            const double lp = loss();
            xv[i] = saved - h;
            const double lm = loss();
            xv[i] = saved;
            worst = std::max(worst, testutil::rel_err(dx.values()[i], (lp - lm) / (2 * h)));
        }
        auto kv = k.values();
        for (std::size_t i = 0; i < kv.size(); i += 3) {
            const double saved = kv[i];
            kv[i] = saved + h;
            const double lp = loss();
            kv[i] = saved - h;
            const double lm = loss();
            kv[i] = saved;
            worst = std::max(worst,
                             testutil::rel_err(dw.d_kernel.values()[i], (lp - lm) / (2 * h)));
        }
        CHECK(worst < 1e-5);
    }
}
