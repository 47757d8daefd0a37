#include <gtest/gtest.h>

#include <cmath>

#include "infodrop/layers.hpp"
#include "infodrop/rng.hpp"
#include "oracles.hpp"

using namespace infodrop;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

ConvLayerState make_conv(std::size_t c_out, std::size_t c_in, std::size_t k,
                         std::size_t stride, std::size_t pad, Rng& rng) {
    ConvLayerState conv;
    conv.kernel = random_tensor({c_out, c_in, k, k}, rng);
    conv.bias = random_tensor({c_out}, rng);
    conv.stride = stride;
    conv.padding = pad;
    return conv;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
    Tensor in = Tensor::full({1, 3, 3}, 1.0);
    ConvLayerState conv;
    conv.kernel = Tensor({1, 1, 1, 1}, {1.0});
    conv.bias = Tensor({1});
    Tensor out = conv2d_forward(in, conv);
    EXPECT_EQ(out.shape, (std::vector<std::size_t>{1, 3, 3}));
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Conv2d, SumKernel) {
    Tensor in({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    ConvLayerState conv;
    conv.kernel = Tensor::full({1, 1, 3, 3}, 1.0);
    conv.bias = Tensor({1});
    Tensor out = conv2d_forward(in, conv);
    EXPECT_EQ(out.shape, (std::vector<std::size_t>{1, 1, 1}));
    EXPECT_DOUBLE_EQ(out[0], 45.0);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
    Rng rng(42);
    for (int trial = 0; trial < 8; ++trial) {
        std::size_t stride = 1 + trial % 2;
        std::size_t pad = trial % 3;
        Tensor in = random_tensor({2, 5, 5}, rng);
        ConvLayerState conv = make_conv(3, 2, 3, stride, pad, rng);
        Tensor got = conv2d_forward(in, conv);
        Tensor want = oracles::conv_oracle(in, conv.kernel, conv.bias, stride, pad);
        ASSERT_EQ(got.shape, want.shape);
        for (std::size_t i = 0; i < got.numel(); ++i)
            EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(Conv2d, ShapeAndFiniteErrors) {
    Rng rng(1);
    ConvLayerState conv = make_conv(1, 2, 3, 1, 0, rng);
    Tensor wrong_channels = random_tensor({3, 5, 5}, rng);
    EXPECT_THROW(conv2d_forward(wrong_channels, conv), std::invalid_argument);
    Tensor too_small = random_tensor({2, 2, 2}, rng);
    EXPECT_THROW(conv2d_forward(too_small, conv), std::invalid_argument);
    Tensor bad = random_tensor({2, 5, 5}, rng);
    bad[7] = std::nan("");
    EXPECT_THROW(conv2d_forward(bad, conv), std::domain_error);
}

TEST(Conv2dBackward, ZeroCotangent) {
    Rng rng(7);
    Tensor in = random_tensor({2, 4, 4}, rng);
    ConvLayerState conv = make_conv(2, 2, 3, 1, 1, rng);
    Tensor up = Tensor::zeros({2, 4, 4});
    ConvGrads g = conv2d_backward(in, conv, up);
    for (double v : g.input_grad.data) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : g.kernel_grad.data) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : g.bias_grad.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Conv2dBackward, BiasGradIsUpstreamSum) {
    Rng rng(8);
    Tensor in = random_tensor({1, 4, 4}, rng);
    ConvLayerState conv = make_conv(2, 1, 1, 1, 0, rng);
    Tensor up = random_tensor({2, 4, 4}, rng);
    ConvGrads g = conv2d_backward(in, conv, up);
    for (std::size_t co = 0; co < 2; ++co) {
        double s = 0.0;
        for (std::size_t i = 0; i < 16; ++i) s += up.data[co * 16 + i];
        EXPECT_NEAR(g.bias_grad[co], s, 1e-12);
    }
}

// loss(x) = sum(upstream .* conv(x)); every gradient entry against central
// finite differences.
TEST(Conv2dBackward, FiniteDifference) {
    Rng rng(9);
    Tensor in = random_tensor({2, 6, 6}, rng);
    ConvLayerState conv = make_conv(3, 2, 3, 2, 1, rng);
    Tensor up = random_tensor({3, 3, 3}, rng);

    ConvGrads g = conv2d_backward(in, conv, up);
    auto loss = [&] { return dot(conv2d_forward(in, conv), up); };

    for (std::size_t i = 0; i < in.numel(); ++i) {
        double num = oracles::central_diff(in.data, i, loss);
        EXPECT_LT(oracles::rel_err(g.input_grad[i], num), 1e-4) << "input grad " << i;
    }
    for (std::size_t i = 0; i < conv.kernel.numel(); ++i) {
        double num = oracles::central_diff(conv.kernel.data, i, loss);
        EXPECT_LT(oracles::rel_err(g.kernel_grad[i], num), 1e-4) << "kernel grad " << i;
    }
    for (std::size_t i = 0; i < conv.bias.numel(); ++i) {
        double num = oracles::central_diff(conv.bias.data, i, loss);
        EXPECT_LT(oracles::rel_err(g.bias_grad[i], num), 1e-4) << "bias grad " << i;
    }
}

TEST(Relu, ForwardExample) {
    Tensor x({3}, {-1.0, 0.0, 2.0});
    Tensor y = relu_forward(x);
    EXPECT_EQ(y.data, (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(Relu, FiniteDifference) {
    Rng rng(10);
    // keep values away from the kink
    Tensor x = random_tensor({2, 3, 3}, rng);
    for (double& v : x.data)
        if (std::abs(v) < 0.05) v = 0.1;
    Tensor up = random_tensor({2, 3, 3}, rng);
    Tensor g = relu_backward(x, up);
    auto loss = [&] { return dot(relu_forward(x), up); };
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double num = oracles::central_diff(x.data, i, loss);
        EXPECT_LT(oracles::rel_err(g[i], num), 1e-4);
    }
}

TEST(Pooling, MaxAndAvgFiniteDifference) {
    Rng rng(11);
    Tensor x = random_tensor({2, 6, 6}, rng);
    // distinct values so the argmax is stable under the fd step
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += double(i) * 1e-3;
    Tensor up = random_tensor({2, 3, 3}, rng);
    PoolSpec p{2, 2};

    Tensor gm = maxpool_backward(x, p, up);
    auto loss_m = [&] { return dot(maxpool_forward(x, p), up); };
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double num = oracles::central_diff(x.data, i, loss_m);
        EXPECT_LT(oracles::rel_err(gm[i], num), 1e-4) << "maxpool " << i;
    }

    Tensor ga = avgpool_backward(x, p, up);
    auto loss_a = [&] { return dot(avgpool_forward(x, p), up); };
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double num = oracles::central_diff(x.data, i, loss_a);
        EXPECT_LT(oracles::rel_err(ga[i], num), 1e-4) << "avgpool " << i;
    }
}

TEST(Linear, FiniteDifference) {
    Rng rng(12);
    Tensor x = random_tensor({10}, rng);
    LinearState lin{random_tensor({4, 10}, rng), random_tensor({4}, rng)};
    Tensor up = random_tensor({4}, rng);
    LinearGrads g = linear_backward(x, lin, up);
    auto loss = [&] { return dot(linear_forward(x, lin), up); };
    for (std::size_t i = 0; i < x.numel(); ++i)
        EXPECT_LT(oracles::rel_err(g.input_grad[i], oracles::central_diff(x.data, i, loss)),
                  1e-4);
    for (std::size_t i = 0; i < lin.weight.numel(); ++i)
        EXPECT_LT(oracles::rel_err(g.weight_grad[i],
                                   oracles::central_diff(lin.weight.data, i, loss)),
                  1e-4);
    for (std::size_t i = 0; i < lin.bias.numel(); ++i)
        EXPECT_LT(
            oracles::rel_err(g.bias_grad[i], oracles::central_diff(lin.bias.data, i, loss)),
            1e-4);
}

TEST(BatchNorm, TrainFiniteDifference) {
    Rng rng(13);
    std::vector<Tensor> batch{random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng),
                              random_tensor({2, 3, 3}, rng)};
    std::vector<Tensor> up{random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng),
                           random_tensor({2, 3, 3}, rng)};
    BatchNormState bn(2);
    bn.gamma = random_tensor({2}, rng, 0.5, 1.5);
    bn.beta = random_tensor({2}, rng);

    auto loss = [&] {
        BatchNormState scratch = bn;  // keep running stats untouched
        std::vector<Tensor> y = batchnorm2d_forward(batch, scratch, true);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += dot(y[i], up[i]);
        return s;
    };

    BatchNormState work = bn;
    BatchNormCache cache;
    batchnorm2d_forward(batch, work, true, &cache);
    BatchNormGrads g = batchnorm2d_backward(batch, bn, cache, up);

    for (std::size_t it = 0; it < batch.size(); ++it)
        for (std::size_t i = 0; i < batch[it].numel(); ++i) {
            double num = oracles::central_diff(batch[it].data, i, loss);
            EXPECT_LT(oracles::rel_err(g.input_grads[it][i], num), 1e-4)
                << "item " << it << " idx " << i;
        }
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_LT(oracles::rel_err(g.gamma_grad[i],
                                   oracles::central_diff(bn.gamma.data, i, loss)),
                  1e-4);
        EXPECT_LT(
            oracles::rel_err(g.beta_grad[i], oracles::central_diff(bn.beta.data, i, loss)),
            1e-4);
    }
}

TEST(BatchNorm, EvalIsDeterministicAffine) {
    Rng rng(14);
    BatchNormState bn(3);
    bn.running_mean = random_tensor({3}, rng);
    bn.running_var = random_tensor({3}, rng, 0.5, 2.0);
    bn.gamma = random_tensor({3}, rng, 0.5, 1.5);
    bn.beta = random_tensor({3}, rng);

    Tensor x = random_tensor({3, 4, 4}, rng);
    Tensor other = random_tensor({3, 4, 4}, rng);

    std::vector<Tensor> alone = batchnorm2d_forward({x}, bn, false);
    std::vector<Tensor> with_other = batchnorm2d_forward({x, other}, bn, false);
    for (std::size_t i = 0; i < x.numel(); ++i)
        EXPECT_DOUBLE_EQ(alone[0][i], with_other[0][i]);  // no batch dependence

    // y = a*x + b per channel
    for (std::size_t c = 0; c < 3; ++c) {
        double a = bn.gamma[c] / std::sqrt(bn.running_var[c] + bn.eps);
        double b = bn.beta[c] - a * bn.running_mean[c];
        for (std::size_t i = 0; i < 16; ++i) {
            double xi = x.data[c * 16 + i];
            EXPECT_NEAR(alone[0].data[c * 16 + i], a * xi + b, 1e-12);
        }
    }
}

TEST(BatchNorm, RunningStatsUpdate) {
    BatchNormState bn(1);
    std::vector<Tensor> batch{Tensor({1, 2, 2}, {1, 2, 3, 4})};
    batchnorm2d_forward(batch, bn, true);
    // mean 2.5, biased var 1.25, unbiased 5/3
    EXPECT_NEAR(bn.running_mean[0], 0.9 * 0.0 + 0.1 * 2.5, 1e-12);
    EXPECT_NEAR(bn.running_var[0], 0.9 * 1.0 + 0.1 * (5.0 / 3.0), 1e-12);
    EXPECT_THROW(batchnorm2d_forward({}, bn, true), std::invalid_argument);
}

TEST(SoftmaxXent, UniformLogitsGiveLogK) {
    for (std::size_t k : {2, 5, 10}) {
        Tensor logits({1, k});
        SoftmaxXentResult r = softmax_xent_forward(logits, {int(k) - 1});
        EXPECT_NEAR(r.loss, std::log(double(k)), 1e-12);
    }
}

TEST(SoftmaxXent, FiniteDifference) {
    Rng rng(15);
    Tensor logits = random_tensor({3, 5}, rng, -2.0, 2.0);
    std::vector<int> labels{0, 3, 4};
    SoftmaxXentResult r = softmax_xent_forward(logits, labels);
    Tensor g = softmax_xent_backward(r, labels);
    auto loss = [&] { return softmax_xent_forward(logits, labels).loss; };
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        double num = oracles::central_diff(logits.data, i, loss);
        EXPECT_LT(oracles::rel_err(g[i], num), 1e-4);
    }
}

TEST(SoftmaxXent, ErrorPaths) {
    Tensor logits({2, 3});
    EXPECT_THROW(softmax_xent_forward(logits, {0}), std::invalid_argument);
    EXPECT_THROW(softmax_xent_forward(logits, {0, 3}), std::invalid_argument);
    Tensor empty({0, 3});
    EXPECT_THROW(softmax_xent_forward(empty, {}), std::invalid_argument);
}

TEST(Sgd, PlainStep) {
    Tensor w({1}, {0.0}), g({1}, {1.0}), v({1});
    sgd_step(w, g, v, SgdParams{1.0, 0.0, 0.0});
    EXPECT_DOUBLE_EQ(w[0], -1.0);
}

TEST(Sgd, PureDecay) {
    Tensor w({1}, {2.0}), g({1}), v({1});
    SgdParams hp{0.1, 0.0, 0.5};
    sgd_step(w, g, v, hp);
    EXPECT_NEAR(w[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Sgd, MomentumMatchesHandUnrolledRecurrence) {
    Tensor w({1}, {1.0}), v({1});
    SgdParams hp{0.1, 0.9, 0.01};
    double g1 = 0.3, g2 = -0.2;

    // hand-unrolled: v1 = g1 + wd*w0; w1 = w0 - lr*v1; v2 = mu*v1 + g2 + wd*w1; ...
    double w0 = 1.0;
    double v1 = g1 + 0.01 * w0;
    double w1 = w0 - 0.1 * v1;
    double v2 = 0.9 * v1 + g2 + 0.01 * w1;
    double w2 = w1 - 0.1 * v2;

    Tensor grad({1}, {g1});
    sgd_step(w, grad, v, hp);
    EXPECT_NEAR(w[0], w1, 1e-15);
    grad[0] = g2;
    sgd_step(w, grad, v, hp);
    EXPECT_NEAR(w[0], w2, 1e-15);
}
