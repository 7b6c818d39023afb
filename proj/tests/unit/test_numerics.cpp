#include <catch2/catch_amalgamated.hpp>

#include "mixseg/ops.hpp"

#include "test_util.hpp"

using namespace mixseg;
using test_util::uniform_tensor;

namespace {

// Independent oracle: naive quintuple-loop 3x3 cross-correlation with zero
// padding, written directly from the definition.
Tensor<double> conv3x3_loop_oracle(const Tensor<double>& in, const Tensor<double>& w,
                                   const Tensor<double>& b) {
    const std::size_t N = in.dim(0), Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
    const std::size_t Cout = w.dim(0);
    Tensor<double> out({N, Cout, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    double acc = b.data[co];
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int yy = static_cast<int>(y) + ky - 1;
                                const int xx = static_cast<int>(x) + kx - 1;
                                if (yy < 0 || xx < 0 || yy >= static_cast<int>(H) ||
                                    xx >= static_cast<int>(W))
                                    continue;
                                acc += w.at4(co, ci, ky, kx) *
                                       in.at4(n, ci, static_cast<std::size_t>(yy),
                                              static_cast<std::size_t>(xx));
                            }
                    out.at4(n, co, y, x) = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d matches hand examples") {
    Tensor<double> ones({1, 1, 3, 3}, 1.0);
    Tensor<double> kernel({1, 1, 3, 3}, 1.0);
    Tensor<double> bias({1}, 0.0);
    const Tensor<double> out = conv2d_infer(ones, kernel, bias);
    CHECK(out.at4(0, 0, 1, 1) == 9.0);   // center sees all nine ones
    CHECK(out.at4(0, 0, 0, 0) == 4.0);   // corner sees four

    Tensor<double> zero_w({2, 1, 3, 3}, 0.0);
    Tensor<double> zero_b({2}, 0.0);
    const Tensor<double> z = conv2d_infer(ones, zero_w, zero_b);
    for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches the loop oracle on random instances") {
    Rng rng(42);
    for (int rep = 0; rep < 5; ++rep) {
        const Tensor<double> in = uniform_tensor({2, 3, 5, 5}, rng);
        const Tensor<double> w = uniform_tensor({4, 3, 3, 3}, rng);
        const Tensor<double> b = uniform_tensor({4}, rng);
        const Tensor<double> got = conv2d_infer(in, w, b);
        const Tensor<double> want = conv3x3_loop_oracle(in, w, b);
        for (std::size_t i = 0; i < got.numel(); ++i)
            CHECK(got.data[i] == Catch::Approx(want.data[i]).margin(1e-12));
    }
}

TEST_CASE("conv2d rejects mismatched shapes") {
    Tensor<double> in({1, 2, 4, 4}, 1.0);
    Tensor<double> w({3, 5, 3, 3}, 1.0);
    Tensor<double> b({3}, 0.0);
    CHECK_THROWS_AS(conv2d_infer(in, w, b), ConfigError);
    Tensor<double> w_ok({3, 2, 3, 3}, 1.0);
    Tensor<double> b_bad({4}, 0.0);
    CHECK_THROWS_AS(conv2d_infer(in, w_ok, b_bad), ConfigError);
}

TEST_CASE("relu forward and subgradient convention") {
    Tensor<double> x = Tensor<double>::from({3}, {-1.0, 0.0, 2.0});
    const Tensor<double> y = relu_infer(x);
    CHECK(y.data == std::vector<double>{0.0, 0.0, 2.0});

    Tensor<double> pos({4}, 1.5);
    CHECK(relu_infer(pos).data == pos.data);

    // gradient of sum(relu(x)) at [-1, 2] is [0, 1]
    Tensor<double> probe = Tensor<double>::from({2}, {-1.0, 2.0});
    probe.requires_grad = true;
    Tape<double> tape;
    auto loss = sum(tape, relu(tape, tape.leaf_bound(probe)));
    tape.backward(loss);
    CHECK(probe.grad == std::vector<double>{0.0, 1.0});
}

TEST_CASE("softmax_channel: symmetry, stability and the direct formula") {
    Tensor<double> even({1, 4, 2, 2}, 3.0);
    const Tensor<double> uniform = softmax_channel_infer(even);
    for (double v : uniform.data) CHECK(v == Catch::Approx(0.25).margin(1e-12));

    Tensor<double> extreme = Tensor<double>::from({1, 2, 1, 1}, {1000.0, 0.0});
    const Tensor<double> stable = softmax_channel_infer(extreme);
    CHECK(stable.data[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(stable.data[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(stable.all_finite());

    Rng rng(7);
    const Tensor<double> z = uniform_tensor({1, 3, 2, 2}, rng, -3.0, 3.0);
    const Tensor<double> p = softmax_channel_infer(z);
    for (std::size_t j = 0; j < 4; ++j) {
        double denom = 0.0;
        for (std::size_t c = 0; c < 3; ++c) denom += std::exp(z.data[c * 4 + j]);
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(p.data[c * 4 + j] == Catch::Approx(std::exp(z.data[c * 4 + j]) / denom).epsilon(1e-12));
    }
}

TEST_CASE("softmax channel sums stay within 1e-9 up to |logit| = 1e4") {
    Rng rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor<double> z = uniform_tensor({1, 5, 4, 4}, rng, -1e4, 1e4);
        const Tensor<double> p = softmax_channel_infer(z);
        for (std::size_t j = 0; j < 16; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < 5; ++c) s += p.data[c * 16 + j];
            CHECK(std::abs(s - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("backward: linear and quadratic analytic cases") {
    Rng rng(11);
    Tensor<double> x = uniform_tensor({2, 3, 4, 4}, rng);
    x.requires_grad = true;

    {
        Tape<double> tape;
        auto loss = sum(tape, tape.leaf_bound(x));
        tape.backward(loss);
        for (double g : x.grad) CHECK(g == 1.0);
    }
    {
        Tape<double> tape;
        auto leaf = tape.leaf_bound(x);
        auto loss = scale(tape, sum(tape, mul(tape, leaf, leaf)), 0.5);
        tape.backward(loss);
        for (std::size_t i = 0; i < x.numel(); ++i)
            CHECK(x.grad[i] == Catch::Approx(x.data[i]).margin(1e-14));
    }
}

TEST_CASE("backward demands a scalar loss and leaves unreached grads alone") {
    Tensor<double> x = Tensor<double>::from({2}, {1.0, 2.0});
    x.requires_grad = true;
    Tensor<double> y = Tensor<double>::from({2}, {3.0, 4.0});
    y.requires_grad = true;
    y.grad = {9.0, 9.0};  // pre-existing grad on an unreachable tensor

    Tape<double> tape;
    auto lx = tape.leaf_bound(x);
    tape.leaf_bound(y);
    CHECK_THROWS_AS(tape.backward(lx), ConfigError);  // non-scalar loss

    auto loss = sum(tape, lx);
    tape.backward(loss);
    CHECK(x.grad == std::vector<double>{1.0, 1.0});
    CHECK(y.grad == std::vector<double>{9.0, 9.0});
}

TEST_CASE("backward is deterministic") {
    Rng rng(13);
    const Tensor<double> in = uniform_tensor({1, 2, 6, 6}, rng);
    Tensor<double> w = uniform_tensor({3, 2, 3, 3}, rng);
    w.requires_grad = true;
    auto run_once = [&]() {
        Tensor<double> local = w;
        Tape<double> tape;
        auto c = conv2d(tape, tape.leaf(in), tape.leaf_bound(local),
                        tape.leaf(Tensor<double>({3}, 0.1)));
        tape.backward(sum(tape, mul(tape, c, c)));
        return local.grad;
    };
    const auto g1 = run_once();
    const auto g2 = run_once();
    CHECK(g1 == g2);  // bit-identical
}

TEST_CASE("grad_check: exact linear case and quadratic case") {
    Rng rng(17);
    const Tensor<double> x = uniform_tensor({3, 3}, rng);
    const double lin = grad_check(
        [](Tape<double>& t, Tape<double>::NodeId leaf) { return sum(t, leaf); }, x);
    CHECK(lin < 1e-10);

    const double quad = grad_check(
        [](Tape<double>& t, Tape<double>::NodeId leaf) {
            return sum(t, mul(t, leaf, leaf));
        },
        x);
    CHECK(quad < 1e-7);
}

TEST_CASE("gradient suite: every op on >= 20 random instances") {
    Rng rng(19);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        Tensor<double> x = uniform_tensor({1, 2, 5, 5}, rng);
        Tensor<double> w = uniform_tensor({3, 2, 3, 3}, rng, -0.7, 0.7);
        Tensor<double> b = uniform_tensor({3}, rng, -0.3, 0.3);
        worst = std::max(worst, grad_check(
            [&](Tape<double>& t, Tape<double>::NodeId leaf) {
                auto c = conv2d(t, leaf, t.leaf(w), t.leaf(b));
                return sum(t, mul(t, c, c));
            },
            x));
        worst = std::max(worst, grad_check(
            [&](Tape<double>& t, Tape<double>::NodeId leaf) {
                auto c = conv2d(t, t.leaf(x), leaf, t.leaf(b));
                return sum(t, mul(t, c, c));
            },
            w));
        worst = std::max(worst, grad_check(
            [&](Tape<double>& t, Tape<double>::NodeId leaf) {
                auto c = conv2d(t, t.leaf(x), t.leaf(w), leaf);
                return sum(t, mul(t, c, c));
            },
            b));

        Tensor<double> rx = uniform_tensor({2, 8}, rng);
        for (auto& v : rx.data) v += (v >= 0 ? 0.2 : -0.2);  // jitter off the kink
        worst = std::max(worst, grad_check(
            [](Tape<double>& t, Tape<double>::NodeId leaf) {
                auto r = relu(t, leaf);
                return sum(t, mul(t, r, r));
            },
            rx));

        Tensor<double> z = uniform_tensor({1, 4, 3, 3}, rng, -2.0, 2.0);
        worst = std::max(worst, grad_check(
            [](Tape<double>& t, Tape<double>::NodeId leaf) {
                auto p = softmax_channel(t, leaf);
                return sum(t, mul(t, p, p));
            },
            z));
    }
    INFO("max relative error " << worst);
    CHECK(worst < 1e-4);
}
