#include <catch2/catch_amalgamated.hpp>

#include "scarnet/nn_ops.hpp"
#include "scarnet/tensor.hpp"

#include "test_util.hpp"

using namespace scarnet;
using scarnet::testutil::fd_check;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(std::move(shape), rng, lo, hi);
}

// Project the op output down to a scalar with fixed random weights so the
// gradient check exercises non-uniform output sensitivities.
Tensor project(const Tensor& out, const Tensor& proj) { return sum(mul(out, proj)); }

} // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(101);
    std::vector<Tensor> in{rand_tensor({3, 5}, rng).set_requires_grad(true),
                           rand_tensor({3, 5}, rng).set_requires_grad(true)};
    Tensor proj = rand_tensor({3, 5}, rng);

    auto check = [&](const std::function<Tensor(std::vector<Tensor>&)>& f) {
        REQUIRE(fd_check(in, f) < 1e-6);
        for (Tensor& t : in)
            t.zero_grad();
    };

    check([&](auto& v) { return project(add(v[0], v[1]), proj); });
    check([&](auto& v) { return project(sub(v[0], v[1]), proj); });
    check([&](auto& v) { return project(mul(v[0], v[1]), proj); });
    check([&](auto& v) { return project(add_scalar(v[0], 0.37), proj); });
    check([&](auto& v) { return project(mul_scalar(v[0], -2.1), proj); });
    check([&](auto& v) { return project(sub_from_scalar(1.0, v[0]), proj); });
    check([&](auto& v) { return project(gelu(v[0]), proj); });
    check([&](auto& v) { return project(sigmoid(v[0]), proj); });
    check([&](auto& v) { return mean(mul(v[0], v[1])); });
}

TEST_CASE("guarded op gradients (div, pow, log, relu) match finite differences") {
    Rng rng(102);
    // Keep inputs away from the kinks/poles so central differences are valid.
    std::vector<Tensor> in{rand_tensor({4, 4}, rng, 0.5, 2.0).set_requires_grad(true),
                           rand_tensor({4, 4}, rng, 0.5, 2.0).set_requires_grad(true)};
    Tensor proj = rand_tensor({4, 4}, rng);

    auto check = [&](const std::function<Tensor(std::vector<Tensor>&)>& f) {
        REQUIRE(fd_check(in, f) < 1e-6);
        for (Tensor& t : in)
            t.zero_grad();
    };

    check([&](auto& v) { return project(div(v[0], v[1]), proj); });
    check([&](auto& v) { return project(pow_scalar(v[0], 0.75), proj); });
    check([&](auto& v) { return project(clamped_log(v[0], 1e-6), proj); });
    check([&](auto& v) { return project(relu(sub_from_scalar(1.0, v[0])), proj); });
}

TEST_CASE("matmul and layout op gradients match finite differences") {
    Rng rng(103);
    std::vector<Tensor> in{rand_tensor({3, 4}, rng).set_requires_grad(true),
                           rand_tensor({4, 5}, rng).set_requires_grad(true)};
    Tensor proj = rand_tensor({3, 5}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(matmul(v[0], v[1]), proj); }) < 1e-6);

    std::vector<Tensor> in2{rand_tensor({3, 4}, rng).set_requires_grad(true),
                            rand_tensor({4}, rng).set_requires_grad(true)};
    Tensor proj2 = rand_tensor({4, 3}, rng);
    REQUIRE(fd_check(in2, [&](auto& v) { return project(transpose2d(v[0]), proj2); }) < 1e-6);
    in2[0].zero_grad();
    Tensor proj3 = rand_tensor({3, 4}, rng);
    REQUIRE(fd_check(in2, [&](auto& v) { return project(add_rowvec(v[0], v[1]), proj3); }) < 1e-6);
    in2[0].zero_grad();
    in2[1].zero_grad();
    Tensor proj4 = rand_tensor({12}, rng);
    REQUIRE(fd_check(in2, [&](auto& v) { return project(reshape(v[0], {12}), proj4); }) < 1e-6);

    std::vector<Tensor> in3{rand_tensor({3, 6}, rng).set_requires_grad(true),
                            rand_tensor({3, 2}, rng).set_requires_grad(true)};
    Tensor proj5 = rand_tensor({3, 2}, rng);
    REQUIRE(fd_check(in3, [&](auto& v) { return project(slice_cols(v[0], 2, 4), proj5); }) < 1e-6);
    in3[0].zero_grad();
    Tensor proj6 = rand_tensor({3, 8}, rng);
    REQUIRE(fd_check(in3, [&](auto& v) {
                return project(concat_cols({v[0], v[1]}), proj6);
            }) < 1e-6);
}

TEST_CASE("softmax rows: normalization and gradient") {
    Rng rng(104);
    Tensor x = rand_tensor({5, 7}, rng, -3.0, 3.0);
    Tensor y = softmax_rows(x);
    for (int r = 0; r < 5; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c)
            s += y[static_cast<std::size_t>(r) * 7 + c];
        REQUIRE(s == Catch::Approx(1.0).epsilon(1e-9));
    }
    std::vector<Tensor> in{x.set_requires_grad(true)};
    Tensor proj = rand_tensor({5, 7}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(softmax_rows(v[0]), proj); }) < 1e-6);
}

TEST_CASE("conv2d matches a direct convolution oracle") {
    Rng rng(105);
    // 1x3x3 input with a hand-set kernel, evaluated against explicit index
    // arithmetic at every output position.
    Tensor x = Tensor::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w = Tensor::from_data({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1);
    for (std::size_t i = 0; i < 9; ++i)
        REQUIRE(y[i] == Catch::Approx(x[i])); // identity kernel

    Tensor w2 = rand_tensor({2, 1, 3, 3}, rng);
    Tensor b2 = rand_tensor({2}, rng);
    Tensor y2 = conv2d(x, w2, b2, 1);
    // direct oracle
    for (int co = 0; co < 2; ++co)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = b2[co];
                for (int ki = 0; ki < 3; ++ki)
                    for (int kj = 0; kj < 3; ++kj) {
                        const int si = i + ki - 1, sj = j + kj - 1;
                        if (si >= 0 && si < 3 && sj >= 0 && sj < 3)
                            acc += x[static_cast<std::size_t>(si) * 3 + sj] *
                                   w2[(static_cast<std::size_t>(co) * 9) + ki * 3 + kj];
                    }
                REQUIRE(y2[(static_cast<std::size_t>(co) * 9) + i * 3 + j] ==
                        Catch::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("conv op gradients match finite differences") {
    Rng rng(106);
    std::vector<Tensor> in{rand_tensor({2, 4, 4}, rng).set_requires_grad(true),
                           rand_tensor({3, 2, 3, 3}, rng).set_requires_grad(true),
                           rand_tensor({3}, rng).set_requires_grad(true)};
    Tensor proj = rand_tensor({3, 4, 4}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(conv2d(v[0], v[1], v[2], 1), proj); }) <
            1e-6);

    std::vector<Tensor> in1x1{rand_tensor({3, 4, 4}, rng).set_requires_grad(true),
                              rand_tensor({2, 3, 1, 1}, rng).set_requires_grad(true),
                              rand_tensor({2}, rng).set_requires_grad(true)};
    Tensor proj1 = rand_tensor({2, 4, 4}, rng);
    REQUIRE(fd_check(in1x1, [&](auto& v) { return project(conv2d(v[0], v[1], v[2], 0), proj1); }) <
            1e-6);

    std::vector<Tensor> int_{rand_tensor({3, 3, 3}, rng).set_requires_grad(true),
                             rand_tensor({3, 2, 2, 2}, rng).set_requires_grad(true),
                             rand_tensor({2}, rng).set_requires_grad(true)};
    Tensor projt = rand_tensor({2, 6, 6}, rng);
    REQUIRE(fd_check(int_, [&](auto& v) {
                return project(conv_transpose2d_2x(v[0], v[1], v[2]), projt);
            }) < 1e-6);
}

TEST_CASE("pooling / resampling gradients match finite differences") {
    Rng rng(107);
    std::vector<Tensor> in{rand_tensor({2, 4, 4}, rng).set_requires_grad(true)};

    Tensor proj_p = rand_tensor({2, 2, 2}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(maxpool2x2(v[0]), proj_p); }) < 1e-6);
    in[0].zero_grad();
    REQUIRE(fd_check(in, [&](auto& v) { return project(avgpool_block(v[0], 2), proj_p); }) < 1e-6);
    in[0].zero_grad();
    Tensor proj_g = rand_tensor({2}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(global_avg_pool(v[0]), proj_g); }) < 1e-6);
    in[0].zero_grad();
    Tensor proj_u = rand_tensor({2, 8, 8}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(upsample_nearest2x(v[0]), proj_u); }) <
            1e-6);
    in[0].zero_grad();
    Tensor proj_b = rand_tensor({2, 7, 5}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(upsample_bilinear(v[0], 7, 5), proj_b); }) <
            1e-6);
}

TEST_CASE("maxpool of a constant map is constant") {
    Tensor x = Tensor::full({3, 8, 8}, 1.25);
    Tensor y = maxpool2x2(x);
    for (std::size_t i = 0; i < y.numel(); ++i)
        REQUIRE(y[i] == 1.25);
}

TEST_CASE("normalization layer gradients match finite differences") {
    Rng rng(108);
    std::vector<Tensor> in{rand_tensor({3, 4, 4}, rng).set_requires_grad(true),
                           rand_tensor({3}, rng, 0.5, 1.5).set_requires_grad(true),
                           rand_tensor({3}, rng).set_requires_grad(true)};
    Tensor proj = rand_tensor({3, 4, 4}, rng);
    REQUIRE(fd_check(in, [&](auto& v) {
                return project(instance_norm(v[0], v[1], v[2]), proj);
            }, 1e-5, 1e-5) < 1e-4);

    std::vector<Tensor> in2{rand_tensor({5, 6}, rng).set_requires_grad(true),
                            rand_tensor({6}, rng, 0.5, 1.5).set_requires_grad(true),
                            rand_tensor({6}, rng).set_requires_grad(true)};
    Tensor proj2 = rand_tensor({5, 6}, rng);
    REQUIRE(fd_check(in2, [&](auto& v) {
                return project(layer_norm_rows(v[0], v[1], v[2]), proj2);
            }, 1e-5, 1e-5) < 1e-4);
}

TEST_CASE("channel ops and gates: gradients match finite differences") {
    Rng rng(109);
    std::vector<Tensor> in{rand_tensor({3, 4, 4}, rng).set_requires_grad(true),
                           rand_tensor({2, 4, 4}, rng).set_requires_grad(true)};
    Tensor proj5 = rand_tensor({5, 4, 4}, rng);
    REQUIRE(fd_check(in, [&](auto& v) {
                return project(concat_channels(v[0], v[1]), proj5);
            }) < 1e-6);
    for (Tensor& t : in)
        t.zero_grad();
    Tensor proj1 = rand_tensor({1, 4, 4}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(channel_mean(v[0]), proj1); }) < 1e-6);
    in[0].zero_grad();
    REQUIRE(fd_check(in, [&](auto& v) { return project(channel_max(v[0]), proj1); }) < 1e-6);
    in[0].zero_grad();
    Tensor proj2 = rand_tensor({2, 4, 4}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(slice_channels(v[0], 1, 3), proj2); }) <
            1e-6);
    in[0].zero_grad();
    Tensor proj3 = rand_tensor({4, 4}, rng);
    (void)proj3;

    std::vector<Tensor> ing{rand_tensor({3, 4, 4}, rng).set_requires_grad(true),
                            rand_tensor({3}, rng, 0.1, 0.9).set_requires_grad(true)};
    Tensor projg = rand_tensor({3, 4, 4}, rng);
    REQUIRE(fd_check(ing, [&](auto& v) { return project(mul_channel_gate(v[0], v[1]), projg); }) <
            1e-6);

    std::vector<Tensor> ins{rand_tensor({3, 4, 4}, rng).set_requires_grad(true),
                            rand_tensor({1, 4, 4}, rng, 0.1, 0.9).set_requires_grad(true)};
    REQUIRE(fd_check(ins, [&](auto& v) { return project(mul_spatial_gate(v[0], v[1]), projg); }) <
            1e-6);
}

TEST_CASE("token/map transposition round-trips and gradients") {
    Rng rng(110);
    Tensor t = rand_tensor({6, 4}, rng);
    Tensor m = tokens_to_map(t, 2, 3);
    REQUIRE(m.shape() == Shape{4, 2, 3});
    Tensor t2 = map_to_tokens(m);
    REQUIRE(t2.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i)
        REQUIRE(t2[i] == t[i]);

    std::vector<Tensor> in{t.set_requires_grad(true)};
    Tensor proj = rand_tensor({4, 2, 3}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(tokens_to_map(v[0], 2, 3), proj); }) < 1e-6);
    in[0].zero_grad();
    Tensor proj2 = rand_tensor({6, 4}, rng);
    REQUIRE(fd_check(in, [&](auto& v) {
                return project(map_to_tokens(tokens_to_map(v[0], 2, 3)), proj2);
            }) < 1e-6);
}

TEST_CASE("softmax over channels normalizes per pixel and differentiates") {
    Rng rng(111);
    Tensor x = rand_tensor({4, 3, 3}, rng, -2.0, 2.0);
    Tensor p = softmax_channels(x);
    for (int px = 0; px < 9; ++px) {
        double s = 0.0;
        for (int c = 0; c < 4; ++c)
            s += p[static_cast<std::size_t>(c) * 9 + px];
        REQUIRE(s == Catch::Approx(1.0).epsilon(1e-9));
    }
    std::vector<Tensor> in{x.set_requires_grad(true)};
    Tensor proj = rand_tensor({4, 3, 3}, rng);
    REQUIRE(fd_check(in, [&](auto& v) { return project(softmax_channels(v[0]), proj); }) < 1e-6);
}

TEST_CASE("dropout: identity at rate 0, masked scaling and gradient at rate > 0") {
    Rng rng(112);
    Tensor x = rand_tensor({4, 4}, rng);
    Rng r0(7);
    Tensor y = dropout(x, 0.0, r0);
    for (std::size_t i = 0; i < x.numel(); ++i)
        REQUIRE(y[i] == x[i]);

    std::vector<Tensor> in{x.set_requires_grad(true)};
    Tensor proj = rand_tensor({4, 4}, rng);
    REQUIRE(fd_check(in, [&](auto& v) {
                Rng r(99); // same mask on every evaluation
                return project(dropout(v[0], 0.4, r), proj);
            }) < 1e-6);
}

TEST_CASE("backward accumulates across shared subgraphs") {
    // y = x*x + x  =>  dy/dx = 2x + 1
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    Tensor y = add(mul(x, x), x);
    y.backward();
    REQUIRE(x.grad()[0] == Catch::Approx(7.0));
}

TEST_CASE("no-grad mode records nothing") {
    Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
    NoGradGuard ng;
    Tensor y = mul(x, x);
    REQUIRE_FALSE(y.requires_grad());
    REQUIRE_FALSE(y.node()->backward);
}
