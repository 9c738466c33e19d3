#include <gtest/gtest.h>

#include <cmath>

#include "msgblocks/nn.hpp"

using namespace msgblocks;

namespace {

DenseLayer make_dense(std::size_t out, std::size_t in, Activation act,
                      const std::vector<double>& w, const std::vector<double>& b) {
    DenseLayer l("test", out, in, act);
    l.weight.w.v = w;
    l.bias.w.v = b;
    return l;
}

} // namespace

// ------------------------------------------------------------ dense forward

TEST(Dense, IdentityWeights) {
    const auto l = make_dense(2, 2, Activation::none, {1, 0, 0, 1}, {0, 0});
    EXPECT_EQ(dense_forward(l, {3, -1}), (std::vector<double>{3, -1}));
}

TEST(Dense, ZeroWeightsReturnBias) {
    const auto l = make_dense(2, 2, Activation::none, {0, 0, 0, 0}, {1, 2});
    EXPECT_EQ(dense_forward(l, {7, -3}), (std::vector<double>{1, 2}));
    EXPECT_EQ(dense_forward(l, {0, 0}), (std::vector<double>{1, 2}));
}

TEST(Dense, ReluHandComputed) {
    // W=[[1,2],[3,4]], x=[1,-1] -> Wx=[-1,-1] -> relu -> [0,0]
    const auto l = make_dense(2, 2, Activation::relu, {1, 2, 3, 4}, {0, 0});
    EXPECT_EQ(dense_forward(l, {1, -1}), (std::vector<double>{0, 0}));
}

TEST(Dense, ShapeMismatchRejected) {
    const auto l = make_dense(2, 2, Activation::none, {1, 0, 0, 1}, {0, 0});
    EXPECT_THROW(dense_forward(l, {1, 2, 3}), std::invalid_argument);
}

TEST(Dense, BackwardBeforeForwardRejected) {
    auto l = make_dense(2, 2, Activation::none, {1, 0, 0, 1}, {0, 0});
    DenseCache cache;  // never filled
    Mat dy(1, 2);
    EXPECT_THROW(l.backward(dy, cache), std::logic_error);
}

// ----------------------------------------------------------------- softmax

TEST(Softmax, Symmetry) {
    const auto p = softmax({0, 0});
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
    const auto p = softmax({1000, 1000, 1000});
    for (double x : p) EXPECT_NEAR(x, 1.0 / 3.0, 1e-12);
}

TEST(Softmax, ClosedForm) {
    const auto p = softmax({std::log(1.0), std::log(2.0), std::log(3.0)});
    EXPECT_NEAR(p[0], 1.0 / 6.0, 1e-12);
    EXPECT_NEAR(p[1], 2.0 / 6.0, 1e-12);
    EXPECT_NEAR(p[2], 3.0 / 6.0, 1e-12);
}

TEST(Softmax, EmptyRejected) { EXPECT_THROW(softmax({}), std::invalid_argument); }

TEST(Softmax, SumsToOneAndShiftInvariant) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> logits(1 + rng.below(8));
        for (double& x : logits) x = rng.uniform(-20, 20);
        const auto p = softmax(logits);
        double sum = 0.0;
        for (double x : p) {
            EXPECT_GT(x, 0.0);
            sum += x;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);

        const double c = rng.uniform(-50, 50);
        std::vector<double> shifted = logits;
        for (double& x : shifted) x += c;
        const auto q = softmax(shifted);
        for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-9);
    }
}

// ------------------------------------------------------------ cross entropy

TEST(CrossEntropy, PerfectPrediction) {
    EXPECT_NEAR(cross_entropy({1.0, 0.0}, 0), 0.0, 1e-12);
}

TEST(CrossEntropy, UniformIsLogC) {
    EXPECT_NEAR(cross_entropy({0.25, 0.25, 0.25, 0.25}, 2), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, HandValue) {
    EXPECT_NEAR(cross_entropy({0.7, 0.3}, 1), 1.2039728043259361, 1e-12);
}

TEST(CrossEntropy, OutOfRangeLabelRejected) {
    EXPECT_THROW(cross_entropy({0.5, 0.5}, 2), std::invalid_argument);
}

TEST(CrossEntropy, ZeroProbabilityClamped) {
    const double loss = cross_entropy({1.0, 0.0}, 1);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, -std::log(1e-12), 1e-9);
}

// ---------------------------------------------------------------- attention

TEST(Attention, SingleTokenWeightIsOne) {
    Mat q(1, 2), k(1, 2), v(1, 2);
    q.v = {0.3, -0.7};
    k.v = {1.1, 0.2};
    v.v = {5.0, -2.0};
    Mat attn;
    const Mat ctx = attention_core(q, k, v, {false}, &attn);
    EXPECT_DOUBLE_EQ(attn.at(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(ctx.at(0, 0), 5.0);
    EXPECT_DOUBLE_EQ(ctx.at(0, 1), -2.0);
}

TEST(Attention, ZeroProjectionsGiveUniformWeights) {
    AttentionLayer layer("enc", 4, 2, 8);
    Rng rng(3);
    layer.init(rng);
    layer.wq.w.zero();
    layer.wk.w.zero();

    Mat x(4, 4);
    for (double& xi : x.v) xi = rng.normal();
    const std::vector<bool> pad = {false, false, false, true};  // 3 live positions

    AttentionCache cache;
    layer.forward(x, pad, &cache);
    for (const Mat& attn : cache.attn) {
        for (std::size_t i = 0; i < attn.rows; ++i) {
            for (std::size_t j = 0; j < attn.cols; ++j) {
                EXPECT_NEAR(attn.at(i, j), pad[j] ? 0.0 : 1.0 / 3.0, 1e-12);
            }
        }
    }
}

TEST(Attention, HandComputedTwoTokenCore) {
    // Q=I, K=[[1,2],[3,4]], V=I; scale = 1/sqrt(2)
    Mat q(2, 2), k(2, 2), v(2, 2);
    q.v = {1, 0, 0, 1};
    k.v = {1, 2, 3, 4};
    v.v = {1, 0, 0, 1};
    Mat attn;
    const Mat ctx = attention_core(q, k, v, {false, false}, &attn);

    const double s = 1.0 / std::sqrt(2.0);
    // row 0 scores: (1, 3) * s; row 1 scores: (2, 4) * s
    const double e00 = std::exp(1 * s), e01 = std::exp(3 * s);
    const double e10 = std::exp(2 * s), e11 = std::exp(4 * s);
    const double a00 = e00 / (e00 + e01), a01 = e01 / (e00 + e01);
    const double a10 = e10 / (e10 + e11), a11 = e11 / (e10 + e11);
    EXPECT_NEAR(attn.at(0, 0), a00, 1e-12);
    EXPECT_NEAR(attn.at(0, 1), a01, 1e-12);
    EXPECT_NEAR(attn.at(1, 0), a10, 1e-12);
    EXPECT_NEAR(attn.at(1, 1), a11, 1e-12);
    // V = I, so the context equals the attention rows
    EXPECT_NEAR(ctx.at(0, 0), a00, 1e-12);
    EXPECT_NEAR(ctx.at(0, 1), a01, 1e-12);
    EXPECT_NEAR(ctx.at(1, 0), a10, 1e-12);
    EXPECT_NEAR(ctx.at(1, 1), a11, 1e-12);
}

TEST(Attention, AllPaddedRejected) {
    AttentionLayer layer("enc", 4, 2, 8);
    Rng rng(5);
    layer.init(rng);
    Mat x(2, 4);
    EXPECT_THROW(layer.forward(x, {true, true}), std::invalid_argument);
}

// ------------------------------------------------- backward closed forms

TEST(Backward, LogisticRegressionGradient) {
    // single dense layer + softmax + CE: dW = (p - onehot) x^T, db = p - onehot
    DenseLayer l("lr", 3, 4, Activation::none);
    Rng rng(7);
    l.init(rng);
    std::vector<double> x = {0.5, -1.2, 2.0, 0.1};
    const std::size_t label = 1;

    DenseCache cache;
    Mat in(1, 4);
    in.v = x;
    const auto probs = softmax(l.forward(in, &cache).v);
    Mat dlogits(1, 3);
    dlogits.v = probs;
    dlogits.v[label] -= 1.0;
    l.weight.zero_grad();
    l.bias.zero_grad();
    l.backward(dlogits, cache);

    for (std::size_t o = 0; o < 3; ++o) {
        const double dl = probs[o] - (o == label ? 1.0 : 0.0);
        EXPECT_NEAR(l.bias.g.v[o], dl, 1e-14);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_NEAR(l.weight.g.at(o, i), dl * x[i], 1e-14);
        }
    }
}

TEST(Backward, ParameterOffTheLossPathGetsExactlyZeroGradient) {
    // loss reads only output 0, so row 1 of the weights contributes nothing
    DenseLayer l("z", 2, 3, Activation::none);
    Rng rng(41);
    l.init(rng);
    Mat x(1, 3);
    x.v = {0.4, -1.0, 2.2};
    DenseCache cache;
    l.forward(x, &cache);
    Mat dy(1, 2);
    dy.v = {1.0, 0.0};
    l.weight.zero_grad();
    l.bias.zero_grad();
    l.backward(dy, cache);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(l.weight.g.at(1, i), 0.0);
    EXPECT_EQ(l.bias.g.v[1], 0.0);
    EXPECT_NE(l.weight.g.at(0, 0), 0.0);
}

TEST(Backward, DenseFiniteDifferences) {
    DenseLayer l("fd", 5, 3, Activation::relu);
    Rng rng(13);
    l.init(rng);
    Mat x(2, 3);
    for (double& xi : x.v) xi = rng.normal();
    std::vector<double> coeff(10);
    for (double& c : coeff) c = rng.normal();

    const auto loss_fn = [&]() {
        const Mat y = l.forward(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.v.size(); ++i) s += coeff[i] * y.v[i];
        return s;
    };
    std::vector<Param*> params;
    l.collect(params);
    DenseCache cache;
    l.forward(x, &cache);
    Mat dy(2, 5);
    dy.v = coeff;
    zero_grads(params);
    l.backward(dy, cache);
    const auto res = finite_diff_check(params, loss_fn);
    EXPECT_LT(res.max_rel_err, 1e-4) << "worst: " << res.worst_param;
}

TEST(Backward, LayerNormFiniteDifferences) {
    LayerNorm ln("fd", 6);
    Rng rng(17);
    for (double& g : ln.gamma.w.v) g = rng.uniform(0.5, 1.5);
    for (double& b : ln.beta.w.v) b = rng.normal();
    Mat x(3, 6);
    for (double& xi : x.v) xi = rng.normal();
    std::vector<double> coeff(18);
    for (double& c : coeff) c = rng.normal();

    const auto loss_fn = [&]() {
        const Mat y = ln.forward(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.v.size(); ++i) s += coeff[i] * y.v[i];
        return s;
    };
    LayerNormCache cache;
    ln.forward(x, &cache);
    Mat dy(3, 6);
    dy.v = coeff;
    ln.gamma.zero_grad();
    ln.beta.zero_grad();
    ln.backward(dy, cache);

    std::vector<Param*> params;
    ln.collect(params);
    const auto res = finite_diff_check(params, loss_fn);
    EXPECT_LT(res.max_rel_err, 1e-4) << "worst: " << res.worst_param;
}

TEST(Backward, AttentionLayerFiniteDifferences) {
    AttentionLayer layer("fd", 8, 2, 12);
    Rng rng(23);
    layer.init(rng);
    Mat x(5, 8);
    for (double& xi : x.v) xi = rng.normal();
    const std::vector<bool> pad = {false, false, false, true, true};
    std::vector<double> coeff(40);
    for (double& c : coeff) c = rng.normal();

    const auto loss_fn = [&]() {
        const Mat y = layer.forward(x, pad);
        double s = 0.0;
        for (std::size_t i = 0; i < y.v.size(); ++i) s += coeff[i] * y.v[i];
        return s;
    };
    AttentionCache cache;
    layer.forward(x, pad, &cache);
    Mat dy(5, 8);
    dy.v = coeff;
    std::vector<Param*> params;
    layer.collect(params);
    zero_grads(params);
    layer.backward(dy, cache);

    const auto res = finite_diff_check(params, loss_fn);
    EXPECT_LT(res.max_rel_err, 1e-4) << "worst: " << res.worst_param << " analytic "
                                     << res.analytic << " numeric " << res.numeric;
}

// ----------------------------------------------------------------- optimizer

TEST(Optimizer, ZeroGradientLeavesParamsUnchanged) {
    for (const auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
        Param p("p", 2, 2);
        p.w.v = {1, 2, 3, 4};
        OptimizerState opt;
        opt.kind = kind;
        opt.lr = 0.1;
        optimizer_step(opt, {&p});
        EXPECT_EQ(p.w.v, (std::vector<double>{1, 2, 3, 4}));
        EXPECT_EQ(opt.step_count, 1u);
    }
}

TEST(Optimizer, SgdDefinition) {
    Param p("p", 1, 1);
    p.w.v = {2.0};
    p.g.v = {0.5};
    OptimizerState opt = OptimizerState::sgd_with(1.0);
    optimizer_step(opt, {&p});
    EXPECT_DOUBLE_EQ(p.w.v[0], 1.5);
}

TEST(Optimizer, AdamFirstStepMovesByLr) {
    Param p("p", 1, 3);
    p.w.v = {1.0, -2.0, 0.5};
    p.g.v = {0.3, -4.0, 1e-3};
    OptimizerState opt = OptimizerState::adam_with(1e-3);
    optimizer_step(opt, {&p});
    // first bias-corrected step is lr * g / (|g| + eps) ~= lr * sign(g)
    EXPECT_NEAR(std::abs(1.0 - p.w.v[0]), 1e-3, 1e-6);
    EXPECT_NEAR(std::abs(-2.0 - p.w.v[1]), 1e-3, 1e-6);
    EXPECT_NEAR(std::abs(0.5 - p.w.v[2]), 1e-3, 1e-6);
}

TEST(Optimizer, NonFiniteGradientRejected) {
    Param p("p", 1, 1);
    p.g.v = {std::numeric_limits<double>::quiet_NaN()};
    OptimizerState opt;
    EXPECT_THROW(optimizer_step(opt, {&p}), std::runtime_error);
}

TEST(Optimizer, ClipGlobalNorm) {
    Param a("a", 1, 2), b("b", 1, 2);
    a.g.v = {3.0, 0.0};
    b.g.v = {0.0, 4.0};  // global norm 5
    clip_global_norm({&a, &b}, 5.0);
    EXPECT_DOUBLE_EQ(a.g.v[0], 3.0);  // at the limit, unchanged
    a.g.v = {30.0, 0.0};
    b.g.v = {0.0, 40.0};
    clip_global_norm({&a, &b}, 5.0);
    EXPECT_NEAR(a.g.v[0], 3.0, 1e-12);
    EXPECT_NEAR(b.g.v[1], 4.0, 1e-12);
}

// ---------------------------------------------------------------- properties

TEST(Training, DeterministicUnderFixedSeed) {
    const auto run = [] {
        DenseLayer l("d", 3, 5, Activation::none);
        Rng rng(99);
        l.init(rng);
        OptimizerState opt = OptimizerState::adam_with(1e-2);
        Rng data(7);
        std::vector<Param*> params;
        l.collect(params);
        for (int step = 0; step < 25; ++step) {
            Mat x(1, 5);
            for (double& xi : x.v) xi = data.normal();
            const std::size_t label = data.below(3);
            DenseCache cache;
            const auto probs = softmax(l.forward(x, &cache).v);
            Mat d(1, 3);
            d.v = probs;
            d.v[label] -= 1.0;
            zero_grads(params);
            l.backward(d, cache);
            optimizer_step(opt, params);
        }
        return std::make_pair(l.weight.w.v, l.bias.w.v);
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.first, b.first);    // bit-identical
    EXPECT_EQ(a.second, b.second);
}

TEST(Training, LossDropsOnSeparableToyProblem) {
    // two well-separated gaussian blobs, single dense layer, 200 sgd steps
    Rng rng(31);
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    for (int i = 0; i < 40; ++i) {
        const std::size_t label = i % 2;
        const double cx = label == 0 ? -2.0 : 2.0;
        x.push_back({cx + 0.3 * rng.normal(), cx + 0.3 * rng.normal()});
        y.push_back(label);
    }
    DenseLayer l("toy", 2, 2, Activation::none);
    l.init(rng);
    std::vector<Param*> params;
    l.collect(params);
    OptimizerState opt = OptimizerState::sgd_with(0.1);

    const auto mean_loss = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            Mat in(1, 2);
            in.v = x[i];
            s += cross_entropy(softmax(l.forward(in).v), y[i]);
        }
        return s / static_cast<double>(x.size());
    };

    const double before = mean_loss();
    for (int step = 0; step < 200; ++step) {
        zero_grads(params);
        for (std::size_t i = 0; i < x.size(); ++i) {
            Mat in(1, 2);
            in.v = x[i];
            DenseCache cache;
            const auto probs = softmax(l.forward(in, &cache).v);
            Mat d(1, 2);
            d.v = probs;
            d.v[y[i]] -= 1.0;
            for (double& g : d.v) g /= static_cast<double>(x.size());
            l.backward(d, cache);
        }
        optimizer_step(opt, params);
    }
    const double after = mean_loss();
    EXPECT_LE(after, 0.5 * before);
}
