#include <catch2/catch_amalgamated.hpp>

#include "mixseg/optim.hpp"

#include "test_util.hpp"

using namespace mixseg;

namespace {

Params<double> one_tensor_params(std::vector<double> values) {
    Params<double> p;
    p.arch.hidden = {};
    Tensor<double> t({values.size()});
    t.data = std::move(values);
    t.requires_grad = true;
    p.tensors.push_back({"w", std::move(t)});
    return p;
}

}  // namespace

TEST_CASE("warmup_lr ramps linearly and is non-decreasing") {
    CHECK(warmup_lr(0, 1.0, 100) == Catch::Approx(0.01));
    CHECK(warmup_lr(99, 1.0, 100) == 1.0);
    CHECK(warmup_lr(100, 1.0, 100) == 1.0);
    CHECK(warmup_lr(5000, 2.5, 100) == 2.5);
    CHECK(warmup_lr(7, 3.0, 0) == 3.0);

    double prev = 0.0;
    for (std::size_t s = 0; s < 300; ++s) {
        const double lr = warmup_lr(s, 1.0, 128);
        CHECK(lr >= prev);
        prev = lr;
    }
}

TEST_CASE("adamw: zero grads and zero weight decay leave params unchanged") {
    auto p = one_tensor_params({1.0, -2.0, 3.0});
    p.tensors[0].value.grad = {0.0, 0.0, 0.0};
    AdamW<double> opt(0.9, 0.999, 1e-8, 0.0);
    for (int i = 0; i < 5; ++i) opt.step(p, {0.1});
    CHECK(p.tensors[0].value.data == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adamw first step matches the bias-corrected closed form") {
    auto p = one_tensor_params({1.0});
    p.tensors[0].value.grad = {1.0};
    AdamW<double> opt(0.9, 0.999, 1e-8, 0.0);
    opt.step(p, {0.1});
    // mhat = g, vhat = g^2  =>  p' = 1 - 0.1 * 1/(1 + eps)
    CHECK(p.tensors[0].value.data[0] == Catch::Approx(0.9).margin(1e-8));
}

TEST_CASE("adamw matches an independent transcription over 100 random steps") {
    const std::size_t n = 8;
    Rng rng(3);
    std::vector<double> init(n);
    for (auto& v : init) v = rng.uniform(-1.0, 1.0);
    auto p = one_tensor_params(init);

    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01, lr = 0.05;
    AdamW<double> opt(b1, b2, eps, wd);

    // reference recurrence, written independently over plain vectors
    std::vector<double> ref = init, m(n, 0.0), v(n, 0.0);
    Rng grad_rng(rng);

    for (int step = 1; step <= 100; ++step) {
        std::vector<double> g(n);
        for (auto& x : g) x = rng.uniform(-1.0, 1.0);
        p.tensors[0].value.grad = g;
        opt.step(p, {lr});

        std::vector<double> g_ref(n);
        for (auto& x : g_ref) x = grad_rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g_ref[i];
            v[i] = b2 * v[i] + (1 - b2) * g_ref[i] * g_ref[i];
            const double mhat = m[i] / (1.0 - std::pow(b1, step));
            const double vhat = v[i] / (1.0 - std::pow(b2, step));
            ref[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * ref[i]);
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        CHECK(std::abs(p.tensors[0].value.data[i] - ref[i]) < 1e-12);
}

TEST_CASE("adamw decoupled weight decay shrinks params with zero gradient") {
    auto p = one_tensor_params({2.0});
    p.tensors[0].value.grad = {0.0};
    AdamW<double> opt(0.9, 0.999, 1e-8, 0.1);
    opt.step(p, {0.5});
    // p' = p - lr * wd * p = 2 - 0.5*0.1*2
    CHECK(p.tensors[0].value.data[0] == Catch::Approx(1.9).margin(1e-15));
}

TEST_CASE("adamw treats a missing grad buffer as zero gradient") {
    auto p = one_tensor_params({1.5});
    p.tensors[0].value.grad.clear();
    AdamW<double> opt(0.9, 0.999, 1e-8, 0.0);
    opt.step(p, {0.1});
    CHECK(p.tensors[0].value.data[0] == 1.5);
}
