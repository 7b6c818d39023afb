#include <catch2/catch_amalgamated.hpp>

#include "mixseg/losses.hpp"

#include "test_util.hpp"

using namespace mixseg;
using test_util::random_label;
using test_util::uniform_tensor;

namespace {

// Loop oracle written straight from the definition: weight times the mean
// over valid pixels of -log softmax at the label.
double ce_loop_oracle(const Tensor<double>& z, std::span<const LabelMap> labels, double w) {
    const std::size_t N = z.dim(0), C = z.dim(1), H = z.dim(2), W = z.dim(3);
    double sum = 0.0;
    std::size_t valid = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const std::uint8_t lab = labels[n].at(y, x);
                if (lab == LabelMap::kIgnore) continue;
                double denom = 0.0;
                for (std::size_t c = 0; c < C; ++c) denom += std::exp(z.at4(n, c, y, x));
                sum += -std::log(std::exp(z.at4(n, lab, y, x)) / denom);
                ++valid;
            }
    return valid ? w * sum / double(valid) : 0.0;
}

double ce_value(const Tensor<double>& z, const std::vector<LabelMap>& labels, double w) {
    Tape<double> t;
    auto node = ce_loss(t, t.leaf(z), labels, w);
    return t.value(node).data[0];
}

}  // namespace

TEST_CASE("ce_loss on uniform logits is ln C") {
    Tensor<double> z({2, 5, 4, 4}, 0.0);
    Rng rng(1);
    std::vector<LabelMap> labels{random_label(4, 4, 5, rng), random_label(4, 4, 5, rng)};
    CHECK(ce_value(z, labels, 1.0) == Catch::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(std::log(5.0) == Catch::Approx(1.6094).margin(1e-4));
}

TEST_CASE("ce_loss saturates to zero with a huge correct-class margin") {
    Tensor<double> z({1, 3, 2, 2}, 0.0);
    LabelMap lbl(2, 2, 1);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x) z.at4(0, 1, y, x) = 100.0;
    std::vector<LabelMap> labels{lbl};
    CHECK(ce_value(z, labels, 1.0) < 1e-6);
}

TEST_CASE("ce_loss matches the loop oracle with a fractional weight") {
    Rng rng(2);
    for (int rep = 0; rep < 10; ++rep) {
        const Tensor<double> z = uniform_tensor({1, 3, 2, 2}, rng, -3.0, 3.0);
        std::vector<LabelMap> labels{random_label(2, 2, 3, rng)};
        const double got = ce_value(z, labels, 0.75);
        const double want = ce_loop_oracle(z, labels, 0.75);
        CHECK(got == Catch::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("ce_loss weight q is exactly q times the unweighted loss") {
    Rng rng(3);
    const Tensor<double> z = uniform_tensor({1, 4, 3, 3}, rng, -2.0, 2.0);
    std::vector<LabelMap> labels{random_label(3, 3, 4, rng)};
    const double unweighted = ce_value(z, labels, 1.0);
    for (double q : {0.0, 0.125, 0.5, 0.9375}) {
        CHECK(ce_value(z, labels, q) == q * unweighted);  // bit-level
    }
}

TEST_CASE("ignored pixels contribute zero loss and zero gradient") {
    Rng rng(4);
    Tensor<double> z = uniform_tensor({1, 3, 2, 2}, rng, -2.0, 2.0);
    LabelMap lbl(2, 2, 1);
    lbl.at(0, 0) = LabelMap::kIgnore;
    lbl.at(1, 1) = LabelMap::kIgnore;

    LabelMap lbl_only(2, 2, 1);
    // value equals the mean over only the two valid pixels
    Tensor<double> z_valid({1, 3, 1, 2});
    for (std::size_t c = 0; c < 3; ++c) {
        z_valid.at4(0, c, 0, 0) = z.at4(0, c, 0, 1);
        z_valid.at4(0, c, 0, 1) = z.at4(0, c, 1, 0);
    }
    std::vector<LabelMap> l1{lbl};
    std::vector<LabelMap> l2{LabelMap(1, 2, 1)};
    CHECK(ce_value(z, l1, 1.0) == Catch::Approx(ce_value(z_valid, l2, 1.0)).epsilon(1e-12));

    z.requires_grad = true;
    Tape<double> t;
    auto node = ce_loss(t, t.leaf_bound(z), l1, 1.0);
    t.backward(node);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(z.grad[(c * 2 + 0) * 2 + 0] == 0.0);  // ignored pixel (0,0)
        CHECK(z.grad[(c * 2 + 1) * 2 + 1] == 0.0);  // ignored pixel (1,1)
        CHECK(z.grad[(c * 2 + 0) * 2 + 1] != 0.0);
    }

    LabelMap all_ignore(2, 2, LabelMap::kIgnore);
    std::vector<LabelMap> l3{all_ignore};
    CHECK(ce_value(z, l3, 1.0) == 0.0);
}

TEST_CASE("ce_loss rejects out-of-range labels") {
    Tensor<double> z({1, 3, 2, 2}, 0.0);
    LabelMap bad(2, 2, 7);
    std::vector<LabelMap> labels{bad};
    Tape<double> t;
    CHECK_THROWS_AS(ce_loss(t, t.leaf(z), labels, 1.0), ConfigError);
}

TEST_CASE("ce gradient matches finite differences") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor<double> z = uniform_tensor({1, 4, 3, 3}, rng, -2.0, 2.0);
        LabelMap lbl = random_label(3, 3, 4, rng);
        if (rep % 3 == 0) lbl.at(0, 0) = LabelMap::kIgnore;
        const double err = grad_check(
            [&](Tape<double>& t, Tape<double>::NodeId leaf) {
                std::vector<LabelMap> labels{lbl};
                return ce_loss(t, leaf, labels, 0.8);
            },
            z);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("total_loss combines the four streams per the weighted sum") {
    auto scalar_leaf = [](Tape<double>& t, double v) {
        return t.leaf(Tensor<double>::from({1}, {v}));
    };

    {
        // paper defaults: lambda=1, mu=2 with unit components -> total 5
        Tape<double> t;
        StreamLosses<double> s;
        s.l_s = scalar_leaf(t, 1.0);
        s.l_t = scalar_leaf(t, 1.0);
        s.l_inter = scalar_leaf(t, 1.0);
        s.l_intra = scalar_leaf(t, 1.0);
        auto [total, bd] = total_loss(t, s, 1.0, 2.0);
        CHECK(t.value(total).data[0] == 5.0);
        CHECK(bd.total == 5.0);
    }
    {
        // lambda = mu = 0 reduces to the supervised sum
        Tape<double> t;
        StreamLosses<double> s;
        s.l_s = scalar_leaf(t, 0.7);
        s.l_t = scalar_leaf(t, 0.3);
        auto [total, bd] = total_loss(t, s, 0.0, 0.0);
        CHECK(t.value(total).data[0] == Catch::Approx(1.0).margin(1e-15));
        CHECK(bd.l_inter == 0.0);
        CHECK(bd.l_intra == 0.0);
    }
    {
        Rng rng(6);
        for (int rep = 0; rep < 20; ++rep) {
            const double ls = rng.uniform(), lt = rng.uniform(), li = rng.uniform(),
                         lm = rng.uniform();
            const double lambda = rng.uniform(0.0, 3.0), mu = rng.uniform(0.0, 3.0);
            Tape<double> t;
            StreamLosses<double> s;
            s.l_s = scalar_leaf(t, ls);
            s.l_t = scalar_leaf(t, lt);
            s.l_inter = scalar_leaf(t, li);
            s.l_intra = scalar_leaf(t, lm);
            auto [total, bd] = total_loss(t, s, lambda, mu);
            const double want = ls + lt + lambda * li + mu * lm;
            CHECK(t.value(total).data[0] == Catch::Approx(want).epsilon(1e-12));
            CHECK(std::abs(bd.total - (bd.l_s + bd.l_t + bd.lambda * bd.l_inter +
                                       bd.mu * bd.l_intra)) <= 1e-9 * std::max(1.0, bd.total));
        }
    }

    Tape<double> t;
    StreamLosses<double> s;
    s.l_s = scalar_leaf(t, 1.0);
    CHECK_THROWS_AS(total_loss(t, s, -1.0, 0.0), ConfigError);
}

TEST_CASE("disabled streams contribute no gradient and no records") {
    Rng rng(7);
    Tensor<double> z_on = uniform_tensor({1, 3, 2, 2}, rng, -1.0, 1.0);
    Tensor<double> z_off = uniform_tensor({1, 3, 2, 2}, rng, -1.0, 1.0);
    z_on.requires_grad = true;
    z_off.requires_grad = true;
    std::vector<LabelMap> labels{random_label(2, 2, 3, rng)};

    Tape<double> t;
    auto on = ce_loss(t, t.leaf_bound(z_on), labels, 1.0);
    const std::size_t records_before = t.size();
    t.leaf_bound(z_off);  // stream present on tape but not in the loss
    StreamLosses<double> s;
    s.l_s = on;
    auto [total, bd] = total_loss(t, s, 1.0, 2.0);
    CHECK(t.size() == records_before + 1);  // just the off-stream leaf
    t.backward(total);
    CHECK_FALSE(z_on.grad.empty());
    CHECK(z_off.grad.empty());  // untouched
}

TEST_CASE("scaling lambda scales the inter-stream gradient exactly") {
    Rng rng(8);
    const Tensor<double> z0 = uniform_tensor({1, 3, 2, 2}, rng, -1.0, 1.0);
    std::vector<LabelMap> labels{random_label(2, 2, 3, rng)};

    auto grads_for = [&](double lambda) {
        Tensor<double> z = z0;
        z.requires_grad = true;
        Tape<double> t;
        StreamLosses<double> s;
        s.l_inter = ce_loss(t, t.leaf_bound(z), labels, 1.0);
        auto [total, bd] = total_loss(t, s, lambda, 0.0);
        t.backward(total);
        return z.grad;
    };
    const auto g1 = grads_for(1.0);
    const auto g3 = grads_for(3.0);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g3[i] == Catch::Approx(3.0 * g1[i]).epsilon(1e-12));
}
