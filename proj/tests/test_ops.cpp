#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pgpseg/gradcheck.hpp"
#include "pgpseg/ops.hpp"
#include "pgpseg/rng.hpp"
#include "pgpseg/tensor.hpp"

using namespace pgpseg;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, std::uint64_t stream, bool rg = false) {
    Philox rng(seed, stream);
    return Tensor::randn(std::move(shape), rng, 1.0, rg);
}

}  // namespace

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

TEST(Philox, MatchesReferenceVectors) {
    // Known-answer vectors for philox4x32-10.
    std::uint32_t c1[4] = {0, 0, 0, 0};
    Philox::block(c1, 0, 0);
    EXPECT_EQ(c1[0], 0x6627e8d5u);
    EXPECT_EQ(c1[1], 0xe169c58du);
    EXPECT_EQ(c1[2], 0xbc57ac4cu);
    EXPECT_EQ(c1[3], 0x9b00dbd8u);

    std::uint32_t c2[4] = {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu};
    Philox::block(c2, 0xffffffffu, 0xffffffffu);
    EXPECT_EQ(c2[0], 0x408f276du);
    EXPECT_EQ(c2[1], 0x41c83b0eu);
    EXPECT_EQ(c2[2], 0xa20bc7c6u);
    EXPECT_EQ(c2[3], 0x6d5451fdu);

    std::uint32_t c3[4] = {0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u};
    Philox::block(c3, 0xa4093822u, 0x299f31d0u);
    EXPECT_EQ(c3[0], 0xd16cfe09u);
    EXPECT_EQ(c3[1], 0x94fdccebu);
    EXPECT_EQ(c3[2], 0x5001e420u);
    EXPECT_EQ(c3[3], 0x24126ea1u);
}

TEST(Philox, StreamsAreIndependentAndDeterministic) {
    Philox a(7, stream_id("x")), b(7, stream_id("x")), c(7, stream_id("y"));
    for (int i = 0; i < 100; ++i) {
        const double va = a.uniform();
        EXPECT_EQ(va, b.uniform());  // bitwise identical
        EXPECT_GE(va, 0.0);
        EXPECT_LT(va, 1.0);
    }
    bool differs = false;
    Philox a2(7, stream_id("x"));
    for (int i = 0; i < 10; ++i) differs |= a2.uniform() != c.uniform();
    EXPECT_TRUE(differs);
}

TEST(Philox, UniformIntBounds) {
    Philox rng(3, 1);
    for (int i = 0; i < 1000; ++i) {
        const auto v = rng.uniform_int(7);
        EXPECT_GE(v, 0);
        EXPECT_LT(v, 7);
    }
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TEST(Matmul, Identity) {
    Tensor i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor out = matmul(i2, i2);
    EXPECT_EQ(out.data(), (std::vector<double>{1, 0, 0, 1}));
}

TEST(Matmul, HandChecked2x2) {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 1}, {0, 1});
    Tensor out = matmul(a, b);
    EXPECT_EQ(out.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(out.at(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(out.at(1, 0), 4.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
    Tensor a = random_tensor({5, 3}, 11, 0);
    Tensor b = random_tensor({3, 4}, 11, 1);
    Tensor out = matmul(a, b);
    EXPECT_LT(oracle::max_abs_diff(out.data(), oracle::matmul(a, b)), 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("(2,3)"), std::string::npos) << msg;
        EXPECT_NE(msg.find("(4,2)"), std::string::npos) << msg;
    }
}

TEST(Matmul, Gradient) {
    Tensor a = random_tensor({4, 3}, 12, 0, true);
    Tensor b = random_tensor({3, 5}, 12, 1, true);
    auto rep = grad_check([&] { return sum_all(mul(matmul(a, b), matmul(a, b))); }, {a, b});
    EXPECT_LT(rep.max_rel_err, 1e-4);
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

TEST(Softmax, UniformLogits) {
    Tensor x = Tensor::zeros({3});
    Tensor y = softmax(x, 0);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, StableForLargeLogits) {
    Tensor x = Tensor::from({2}, {1000.0, 0.0});
    Tensor y = softmax(x, 0);
    EXPECT_DOUBLE_EQ(y.at(0), 1.0);
    EXPECT_DOUBLE_EQ(y.at(1), 0.0);  // underflows cleanly, no overflow anywhere
    for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Softmax, RowsSumToOne) {
    Tensor x = random_tensor({4, 6}, 13, 0);
    Tensor y = softmax(x, 1);
    for (int i = 0; i < 4; ++i) {
        double s = 0.0;
        for (int j = 0; j < 6; ++j) s += y.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Softmax, SlicesSumToOneForBoundedInputs) {
    // Property over |x| <= 1e3, every axis of a rank-3 tensor.
    Philox rng(99, stream_id("softmax-prop"));
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = Tensor::rand_uniform({3, 4, 5}, rng, -1e3, 1e3);
        for (int axis = 0; axis < 3; ++axis) {
            Tensor y = softmax(x, axis);
            const auto& s = x.shape();
            std::int64_t outer = 1, inner = 1;
            for (int i = 0; i < axis; ++i) outer *= s[i];
            for (int i = axis + 1; i < 3; ++i) inner *= s[i];
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    double sum = 0.0;
                    for (int l = 0; l < s[axis]; ++l) sum += y.data()[(o * s[axis] + l) * inner + in];
                    EXPECT_NEAR(sum, 1.0, 1e-6);
                }
        }
    }
}

TEST(Softmax, NanInputThrows) {
    Tensor x = Tensor::from({2}, {0.0, std::nan("")});
    EXPECT_THROW(softmax(x, 0), NumericError);
}

TEST(Softmax, AxisOutOfRangeThrows) {
    EXPECT_THROW(softmax(Tensor::zeros({2, 2}), 2), ShapeError);
}

TEST(Softmax, Gradient) {
    Tensor x = random_tensor({3, 4}, 14, 0, true);
    Tensor w = random_tensor({3, 4}, 14, 1);
    for (int axis = 0; axis < 2; ++axis) {
        auto rep = grad_check([&] { return sum_all(mul(softmax(x, axis), w)); }, {x});
        EXPECT_LT(rep.max_rel_err, 1e-4) << "axis " << axis;
    }
}

// ---------------------------------------------------------------------------
// avg_pool_axis
// ---------------------------------------------------------------------------

TEST(AvgPool, ConstantTensor) {
    Tensor x = Tensor::full({3, 4, 2}, 2.5);
    for (auto ax : {Axis3::height, Axis3::width, Axis3::channel}) {
        Tensor y = avg_pool_axis(x, ax);
        for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 2.5);
    }
}

TEST(AvgPool, HandChecked2x2) {
    Tensor x = Tensor::from({2, 2, 1}, {1, 2, 3, 5});
    Tensor y = avg_pool_axis(x, Axis3::height);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 1}));
    EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 2.0);
    EXPECT_DOUBLE_EQ(y.at(0, 1, 0), 3.5);
}

TEST(AvgPool, MatchesLoopOracle) {
    Tensor x = random_tensor({8, 8, 4}, 15, 0);
    for (int ax = 0; ax < 3; ++ax) {
        Tensor y = avg_pool_axis(x, static_cast<Axis3>(ax));
        EXPECT_LT(oracle::max_abs_diff(y.data(), oracle::avg_pool(x, ax)), 1e-12);
    }
}

TEST(AvgPool, Gradient) {
    Tensor x = random_tensor({4, 5, 3}, 16, 0, true);
    for (int ax = 0; ax < 3; ++ax) {
        auto rep = grad_check(
            [&] {
                Tensor y = avg_pool_axis(x, static_cast<Axis3>(ax));
                return sum_all(mul(y, y));
            },
            {x});
        EXPECT_LT(rep.max_rel_err, 1e-4);
    }
}

TEST(AvgPool, RequiresRank3) {
    EXPECT_THROW(avg_pool_axis(Tensor::zeros({2, 2}), Axis3::height), ShapeError);
}

// ---------------------------------------------------------------------------
// strip_conv
// ---------------------------------------------------------------------------

TEST(StripConv, IdentityPointwiseKernel) {
    const int C = 3;
    Tensor x = random_tensor({4, 5, C}, 17, 0);
    Tensor w = Tensor::zeros({1, C, C});
    for (int c = 0; c < C; ++c) w.at(0, c, c) = 1.0;
    Tensor b = Tensor::zeros({C});
    Tensor y = strip_conv(x, w, b, StripDir::pointwise);
    EXPECT_LT(oracle::max_abs_diff(y.data(), x.data()), 1e-15);
}

TEST(StripConv, DeltaKernelLeavesRowsUnchanged) {
    const int C = 2;
    Tensor x = random_tensor({3, 7, C}, 18, 0);
    Tensor w = Tensor::zeros({3, C, C});
    for (int c = 0; c < C; ++c) w.at(1, c, c) = 1.0;  // [0,1,0] tap
    Tensor b = Tensor::zeros({C});
    Tensor y = strip_conv(x, w, b, StripDir::along_width);
    EXPECT_LT(oracle::max_abs_diff(y.data(), x.data()), 1e-15);
}

TEST(StripConv, MatchesLoopOracle) {
    Tensor x = random_tensor({6, 6, 2}, 19, 0);
    Tensor w = random_tensor({3, 2, 4}, 19, 1);
    Tensor b = random_tensor({4}, 19, 2);
    Tensor yh = strip_conv(x, w, b, StripDir::along_height);
    EXPECT_LT(oracle::max_abs_diff(yh.data(), oracle::strip_conv(x, w, b, 1)), 1e-12);
    Tensor yw = strip_conv(x, w, b, StripDir::along_width);
    EXPECT_LT(oracle::max_abs_diff(yw.data(), oracle::strip_conv(x, w, b, 0)), 1e-12);
}

TEST(StripConv, EvenKernelRejected) {
    Tensor x = Tensor::zeros({4, 4, 2});
    Tensor w = Tensor::zeros({4, 2, 2});
    Tensor b = Tensor::zeros({2});
    EXPECT_THROW(strip_conv(x, w, b, StripDir::along_width), ConfigError);
}

TEST(StripConv, Gradient) {
    Tensor x = random_tensor({4, 4, 2}, 20, 0, true);
    Tensor w = random_tensor({3, 2, 3}, 20, 1, true);
    Tensor b = random_tensor({3}, 20, 2, true);
    for (auto dir : {StripDir::along_width, StripDir::along_height}) {
        auto rep = grad_check(
            [&] {
                Tensor y = strip_conv(x, w, b, dir);
                return sum_all(mul(y, y));
            },
            {x, w, b});
        EXPECT_LT(rep.max_rel_err, 1e-4);
    }
}

// ---------------------------------------------------------------------------
// cosine_topk
// ---------------------------------------------------------------------------

TEST(CosineTopk, SelfSimilarity) {
    Philox rng(21, 0);
    Tensor pool = Tensor::randn({8, 5}, rng);
    Tensor query = Tensor::from({1, 5}, std::vector<double>(pool.data().begin() + 3 * 5,
                                                            pool.data().begin() + 4 * 5));
    TopKResult r = cosine_topk(query, pool, 1);
    EXPECT_EQ(r.index(0, 0), 3);
    EXPECT_NEAR(r.score(0, 0), 1.0, 1e-9);
}

TEST(CosineTopk, FullSortWhenKEqualsQ) {
    Tensor q = random_tensor({2, 4}, 22, 0);
    Tensor pool = random_tensor({6, 4}, 22, 1);
    TopKResult r = cosine_topk(q, pool, 6);
    auto expect = oracle::cosine_topk(q, pool, 6);
    EXPECT_EQ(r.indices, expect);
    for (int n = 0; n < 2; ++n)
        for (int j = 1; j < 6; ++j) EXPECT_LE(r.score(n, j), r.score(n, j - 1));
}

TEST(CosineTopk, MatchesFullSortOracleOn1000Instances) {
    Philox rng(23, stream_id("topk-oracle"));
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor q = Tensor::randn({4, 8}, rng);
        Tensor pool = Tensor::randn({32, 8}, rng);
        TopKResult r = cosine_topk(q, pool, 3);
        EXPECT_EQ(r.indices, oracle::cosine_topk(q, pool, 3)) << "trial " << trial;
    }
}

TEST(CosineTopk, ZeroNormRowMapsToMinusOne) {
    Tensor q = Tensor::from({1, 3}, {0, 0, 0});
    Tensor pool = Tensor::from({2, 3}, {1, 0, 0, 0, 2, 0});
    TopKResult r = cosine_topk(q, pool, 2);
    EXPECT_TRUE(r.degenerate);
    EXPECT_DOUBLE_EQ(r.score(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(r.score(0, 1), -1.0);
    // tie broken by lower index
    EXPECT_EQ(r.index(0, 0), 0);
    EXPECT_EQ(r.index(0, 1), 1);
}

TEST(CosineTopk, TieBreaksByLowerIndex) {
    // pool rows 1 and 2 are identical, both tie on similarity.
    Tensor q = Tensor::from({1, 2}, {1, 0});
    Tensor pool = Tensor::from({3, 2}, {0, 1, 1, 1, 1, 1});
    TopKResult r = cosine_topk(q, pool, 2);
    EXPECT_EQ(r.index(0, 0), 1);
    EXPECT_EQ(r.index(0, 1), 2);
}

TEST(CosineTopk, InvalidKRejected) {
    Tensor q = Tensor::zeros({1, 2});
    Tensor pool = Tensor::zeros({3, 2});
    EXPECT_THROW(cosine_topk(q, pool, 0), ConfigError);
    EXPECT_THROW(cosine_topk(q, pool, 4), ConfigError);
}

// ---------------------------------------------------------------------------
// grad_check on analytic cases
// ---------------------------------------------------------------------------

TEST(GradCheck, QuadraticHasAnalyticGradient) {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    auto rep = grad_check([&] { return sum_all(mul(x, x)); }, {x});
    EXPECT_LT(rep.max_rel_err, 1e-8);
    x.zero_grad();
    Tensor loss = sum_all(mul(x, x));
    loss.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
    EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
}

TEST(GradCheck, ConstantFunctionHasZeroGradient) {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    auto rep = grad_check([&] { return Tensor::scalar(4.0); }, {x});
    EXPECT_EQ(rep.max_rel_err, 0.0);
    EXPECT_EQ(rep.max_abs_err, 0.0);
}

TEST(GradCheck, NonFiniteLossThrows) {
    Tensor x = Tensor::from({1}, {1.0}, true);
    EXPECT_THROW(
        grad_check([&] { return Tensor::scalar(std::numeric_limits<double>::infinity()); }, {x}),
        NumericError);
}

// ---------------------------------------------------------------------------
// remaining differentiable ops: forward identities + gradients
// ---------------------------------------------------------------------------

TEST(Elementwise, Gradients) {
    Tensor a = random_tensor({3, 4}, 30, 0, true);
    Tensor b = add_const(random_tensor({3, 4}, 30, 1, true), 3.0);  // keep b away from 0 for div
    auto check = [&](std::function<Tensor()> f) {
        auto rep = grad_check(f, {a, b});
        EXPECT_LT(rep.max_rel_err, 1e-4);
    };
    check([&] { return sum_all(mul(add(a, b), add(a, b))); });
    check([&] { return sum_all(mul(sub(a, b), sub(a, b))); });
    check([&] { return sum_all(mul(mul(a, b), mul(a, b))); });
    check([&] { return sum_all(mul(div(a, b), div(a, b))); });
    check([&] { return mean_all(mul(scale(a, 1.7), b)); });
}

TEST(Activations, Gradients) {
    // keep relu inputs away from the kink at 0
    Tensor x = Tensor::from({5}, {-1.5, -0.4, 0.3, 0.9, 2.0}, true);
    for (auto f : {sigmoid, relu, gelu}) {
        auto rep = grad_check([&] { return sum_all(mul(f(x), f(x))); }, {x});
        EXPECT_LT(rep.max_rel_err, 1e-4);
    }
}

TEST(Activations, KnownValues) {
    Tensor x = Tensor::from({3}, {-1.0, 0.0, 1.0});
    Tensor s = sigmoid(x);
    EXPECT_NEAR(s.at(1), 0.5, 1e-15);
    Tensor r = relu(x);
    EXPECT_EQ(r.data(), (std::vector<double>{0, 0, 1}));
    Tensor g = gelu(x);
    EXPECT_NEAR(g.at(1), 0.0, 1e-15);
    EXPECT_NEAR(g.at(2), 0.841344746068543, 1e-12);  // 0.5*(1+erf(1/sqrt 2))
}

TEST(LayerNorm, NormalizesLastAxis) {
    Tensor x = random_tensor({4, 6}, 31, 0);
    Tensor gamma = Tensor::full({6}, 1.0);
    Tensor beta = Tensor::zeros({6});
    Tensor y = layer_norm(x, gamma, beta);
    for (int r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 6; ++c) mean += y.at(r, c);
        mean /= 6;
        for (int c = 0; c < 6; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
        var /= 6;
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-4);  // eps-limited
    }
}

TEST(LayerNorm, Gradient) {
    Tensor x = random_tensor({3, 5}, 32, 0, true);
    Tensor gamma = random_tensor({5}, 32, 1, true);
    Tensor beta = random_tensor({5}, 32, 2, true);
    auto rep = grad_check(
        [&] {
            Tensor y = layer_norm(x, gamma, beta);
            return sum_all(mul(y, y));
        },
        {x, gamma, beta});
    EXPECT_LT(rep.max_rel_err, 1e-4);
}

TEST(ShapeOps, Gradients) {
    Tensor x = random_tensor({3, 4, 2}, 33, 0, true);
    Tensor m = random_tensor({4, 3}, 33, 1, true);
    auto check = [&](std::function<Tensor()> f, std::vector<Tensor> params) {
        auto rep = grad_check(f, params);
        EXPECT_LT(rep.max_rel_err, 1e-4);
    };
    check([&] { Tensor y = reshape(x, {6, 4}); return sum_all(mul(y, y)); }, {x});
    check([&] { Tensor y = transpose(m); return sum_all(mul(y, y)); }, {m});
    check([&] { Tensor y = hwc_to_chw(x); return sum_all(mul(y, y)); }, {x});
    check([&] { Tensor y = slice_axis0(m, 1); return sum_all(mul(y, y)); }, {m});
    check([&] { Tensor y = normalize_rows(add_const(mul(m, m), 0.5)); return sum_all(mul(y, y)); }, {m});
}

TEST(ExpandAndConcat, ForwardAndGradient) {
    Tensor h = random_tensor({1, 4, 3}, 34, 0, true);
    Tensor w = random_tensor({5, 1, 3}, 34, 1, true);
    Tensor eh = expand3(h, 5, 4);
    EXPECT_EQ(eh.shape(), (Shape{5, 4, 3}));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j)
            for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(eh.at(i, j, c), h.at(0, j, c));
    auto rep = grad_check(
        [&] {
            Tensor y = add(expand3(h, 5, 4), expand3(w, 5, 4));
            return sum_all(mul(y, y));
        },
        {h, w});
    EXPECT_LT(rep.max_rel_err, 1e-4);

    Tensor a = random_tensor({3, 2}, 34, 2, true);
    Tensor b = random_tensor({3, 4}, 34, 3, true);
    Tensor cc = concat_cols(a, b);
    EXPECT_EQ(cc.shape(), (Shape{3, 6}));
    Tensor r0 = random_tensor({2, 4}, 34, 4, true);
    auto rep2 = grad_check(
        [&] {
            Tensor y = concat_rows(concat_cols(a, b), concat_cols(r0, Tensor::zeros({2, 2})));
            return sum_all(mul(y, y));
        },
        {a, b, r0});
    EXPECT_LT(rep2.max_rel_err, 1e-4);
}

TEST(GatherScatter, RoundTripAndGradient) {
    Tensor base = random_tensor({6, 3}, 35, 0, true);
    Tensor upd = random_tensor({3, 3}, 35, 1, true);
    const std::vector<int> idx = {4, 0, 2};

    Tensor scattered = scatter_add_rows(base, upd, idx);
    Tensor gathered = gather_rows(scattered, idx);
    Tensor orig = gather_rows(base, idx);
    // disjoint indices: gather(scatter) - gather(base) == updates exactly
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c)
            EXPECT_DOUBLE_EQ(gathered.at(i, c) - orig.at(i, c), upd.at(i, c));

    auto rep = grad_check(
        [&] {
            Tensor y = scatter_add_rows(base, upd, idx);
            return sum_all(mul(y, y));
        },
        {base, upd});
    EXPECT_LT(rep.max_rel_err, 1e-4);

    auto rep2 = grad_check(
        [&] {
            Tensor y = gather_rows(base, {1, 1, 5});  // repeated index accumulates
            return sum_all(mul(y, y));
        },
        {base});
    EXPECT_LT(rep2.max_rel_err, 1e-4);
}

TEST(PatchEmbedAndUpsample, ShapesAndGradients) {
    Tensor img = random_tensor({8, 8, 1}, 36, 0);
    Tensor w = random_tensor({16, 5}, 36, 1, true);
    Tensor b = random_tensor({5}, 36, 2, true);
    Tensor emb = patch_embed(img, w, b, 4);
    EXPECT_EQ(emb.shape(), (Shape{2, 2, 5}));
    auto rep = grad_check(
        [&] {
            Tensor y = patch_embed(img, w, b, 4);
            return sum_all(mul(y, y));
        },
        {w, b});
    EXPECT_LT(rep.max_rel_err, 1e-4);

    EXPECT_THROW(patch_embed(random_tensor({6, 6, 1}, 36, 3), w, b, 4), ConfigError);

    Tensor x = random_tensor({2, 2, 3}, 36, 4, true);
    Tensor wt = random_tensor({2, 2, 3, 2}, 36, 5, true);
    Tensor bt = random_tensor({2}, 36, 6, true);
    Tensor up = conv_transpose_2x(x, wt, bt);
    EXPECT_EQ(up.shape(), (Shape{4, 4, 2}));
    auto rep2 = grad_check(
        [&] {
            Tensor y = conv_transpose_2x(x, wt, bt);
            return sum_all(mul(y, y));
        },
        {x, wt, bt});
    EXPECT_LT(rep2.max_rel_err, 1e-4);

    Tensor big = bilinear_resize(x, 4, 6);
    EXPECT_EQ(big.shape(), (Shape{4, 6, 3}));
    auto rep3 = grad_check(
        [&] {
            Tensor y = bilinear_resize(x, 4, 6);
            return sum_all(mul(y, y));
        },
        {x});
    EXPECT_LT(rep3.max_rel_err, 1e-4);
}

TEST(BilinearResize, IdentityWhenSameSize) {
    Tensor x = random_tensor({3, 5, 2}, 37, 0);
    Tensor y = bilinear_resize(x, 3, 5);
    EXPECT_LT(oracle::max_abs_diff(y.data(), x.data()), 1e-15);
}

TEST(Determinism, OpsAreBitwiseReproducible) {
    Tensor a1 = random_tensor({16, 16}, 40, 7);
    Tensor a2 = random_tensor({16, 16}, 40, 7);
    EXPECT_EQ(a1.data(), a2.data());
    Tensor b = random_tensor({16, 16}, 40, 8);
    Tensor m1 = matmul(a1, b);
    Tensor m2 = matmul(a2, b);
    EXPECT_EQ(m1.data(), m2.data());
    Tensor s1 = softmax(m1, 1);
    Tensor s2 = softmax(m2, 1);
    EXPECT_EQ(s1.data(), s2.data());
}

TEST(Finiteness, ForwardOpsStayFiniteOnFiniteInputs) {
    Philox rng(41, stream_id("finite"));
    Tensor x = Tensor::rand_uniform({6, 6, 4}, rng, -100.0, 100.0);
    Tensor w = Tensor::rand_uniform({3, 4, 4}, rng, -5.0, 5.0);
    Tensor b = Tensor::rand_uniform({4}, rng, -5.0, 5.0);
    for (const Tensor& t : {strip_conv(x, w, b, StripDir::along_height), softmax(x, 2),
                            avg_pool_axis(x, Axis3::width), gelu(x), sigmoid(x)}) {
        for (double v : t.data()) EXPECT_TRUE(std::isfinite(v));
    }
}
