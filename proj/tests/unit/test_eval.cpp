#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "mixseg/eval.hpp"

#include "test_util.hpp"

using namespace mixseg;
using test_util::random_label;

TEST_CASE("accumulate: diagonal on perfect predictions, skip on ignore") {
    Rng rng(1);
    const LabelMap truth = random_label(6, 6, 4, rng);

    ConfusionMatrix cm(4);
    cm.accumulate(truth, truth);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t p = 0; p < 4; ++p)
            if (t != p) CHECK(cm.at(t, p) == 0);
    CHECK(cm.total() == 36);

    ConfusionMatrix cm2(4);
    LabelMap all_ignore(6, 6, LabelMap::kIgnore);
    cm2.accumulate(truth, all_ignore);
    CHECK(cm2.total() == 0);

    LabelMap small(3, 3, 0);
    CHECK_THROWS_AS(cm2.accumulate(small, truth), ConfigError);
}

TEST_CASE("accumulate matches per-pixel loop counting") {
    Rng rng(2);
    const LabelMap pred = random_label(8, 8, 3, rng);
    LabelMap truth = random_label(8, 8, 3, rng);
    truth.at(0, 0) = LabelMap::kIgnore;

    ConfusionMatrix cm(3);
    cm.accumulate(pred, truth);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p) {
            std::uint64_t want = 0;
            for (std::size_t i = 0; i < 64; ++i)
                if (truth.v[i] == t && pred.v[i] == p) ++want;
            CHECK(cm.at(t, p) == want);
        }
}

TEST_CASE("miou: perfect predictions give 1.0") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 10;
    cm.at(1, 1) = 5;
    cm.at(2, 2) = 1;
    const IouReport r = miou(cm);
    CHECK(r.mean == 1.0);
    for (std::size_t c = 0; c < 3; ++c) CHECK(r.per_class[c] == 1.0);
}

TEST_CASE("miou hand case: [[2,2],[0,4]] gives 7/12") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 2;
    cm.at(0, 1) = 2;
    cm.at(1, 0) = 0;
    cm.at(1, 1) = 4;
    const IouReport r = miou(cm);
    CHECK(r.per_class[0] == Catch::Approx(2.0 / 4.0));
    CHECK(r.per_class[1] == Catch::Approx(4.0 / 6.0));
    CHECK(r.mean == Catch::Approx(7.0 / 12.0));
}

TEST_CASE("miou: one predicted class over uniform truth, against the loop oracle") {
    const std::size_t C = 5;
    LabelMap pred(C, C, 2);        // everything predicted class 2
    LabelMap truth(C, C);
    for (std::size_t y = 0; y < C; ++y)
        for (std::size_t x = 0; x < C; ++x) truth.at(y, x) = static_cast<std::uint8_t>(y);

    ConfusionMatrix cm(C);
    cm.accumulate(pred, truth);
    const IouReport r = miou(cm);
    // class 2: intersection 5, union 25
    CHECK(r.per_class[2] == Catch::Approx(5.0 / 25.0));
    CHECK(r.per_class[2] == Catch::Approx(1.0 / C));
    for (std::size_t c = 0; c < C; ++c) {
        if (c == 2) continue;
        CHECK(r.per_class[c] == 0.0);  // predicted never, truth 5 pixels
        CHECK(r.valid[c]);
    }
}

TEST_CASE("miou excludes classes absent from both sides") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 4;
    cm.at(1, 1) = 4;
    const IouReport r = miou(cm);
    CHECK_FALSE(r.valid[2]);
    CHECK(r.mean == 1.0);

    ConfusionMatrix empty(3);
    CHECK_THROWS_AS(miou(empty), RuntimeAbort);
}

TEST_CASE("permuting classes permutes per-class IoUs and keeps the mean") {
    Rng rng(3);
    const LabelMap pred = random_label(10, 10, 4, rng);
    const LabelMap truth = random_label(10, 10, 4, rng);
    ConfusionMatrix cm(4);
    cm.accumulate(pred, truth);
    const IouReport base = miou(cm);

    const std::size_t perm[4] = {2, 0, 3, 1};
    LabelMap pred_p = pred, truth_p = truth;
    for (auto& v : pred_p.v) v = static_cast<std::uint8_t>(perm[v]);
    for (auto& v : truth_p.v) v = static_cast<std::uint8_t>(perm[v]);
    ConfusionMatrix cm_p(4);
    cm_p.accumulate(pred_p, truth_p);
    const IouReport permuted = miou(cm_p);

    CHECK(permuted.mean == Catch::Approx(base.mean).epsilon(1e-12));
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(permuted.per_class[perm[c]] == Catch::Approx(base.per_class[c]).epsilon(1e-12));
}

TEST_CASE("accumulation order does not matter") {
    Rng rng(4);
    std::vector<LabelMap> preds, truths;
    for (int i = 0; i < 6; ++i) {
        preds.push_back(random_label(5, 5, 3, rng));
        truths.push_back(random_label(5, 5, 3, rng));
    }
    ConfusionMatrix fwd(3), rev(3), merged(3);
    for (int i = 0; i < 6; ++i) fwd.accumulate(preds[i], truths[i]);
    for (int i = 5; i >= 0; --i) rev.accumulate(preds[i], truths[i]);
    for (int i = 0; i < 6; ++i) {
        ConfusionMatrix one(3);
        one.accumulate(preds[i], truths[i]);
        merged.merge(one);
    }
    CHECK(fwd.counts == rev.counts);
    CHECK(fwd.counts == merged.counts);
}
