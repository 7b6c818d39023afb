#pragma once

#include <functional>
#include <optional>
#include <sstream>
#include <vector>

#include "mixseg/eval.hpp"
#include "mixseg/losses.hpp"
#include "mixseg/mixing.hpp"

namespace mixseg {

// A named release-gate check; returns a failure message or nothing.
struct Check {
    std::string name;
    std::function<std::optional<std::string>()> fn;
};

namespace selfcheck_detail {

inline std::uint64_t ms_check_seed() { return 0x5e1fc4ec5ULL; }

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

inline LabelMap random_label(std::size_t h, std::size_t w, std::size_t C, Rng& rng) {
    LabelMap m(h, w);
    for (auto& v : m.v) v = static_cast<std::uint8_t>(rng.uniform_int(C));
    return m;
}

inline std::optional<std::string> expect(bool ok, const std::string& msg) {
    if (ok) return std::nullopt;
    return msg;
}

inline std::optional<std::string> check_grad_ops() {
    Rng rng(ms_check_seed());
    double worst = 0.0;
    for (int rep = 0; rep < 4; ++rep) {
        // conv2d wrt input and weight, through a quadratic head.
        Tensor<double> x = random_tensor({1, 2, 6, 6}, rng);
        Tensor<double> w = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
        Tensor<double> b = random_tensor({3}, rng, -0.2, 0.2);
        auto via_conv_x = [&](Tape<double>& t, Tape<double>::NodeId leaf) {
            auto c = conv2d(t, leaf, t.leaf(w), t.leaf(b));
            return sum(t, mul(t, c, c));
        };
        worst = std::max(worst, grad_check(via_conv_x, x));
        auto via_conv_w = [&](Tape<double>& t, Tape<double>::NodeId leaf) {
            auto c = conv2d(t, t.leaf(x), leaf, t.leaf(b));
            return sum(t, mul(t, c, c));
        };
        worst = std::max(worst, grad_check(via_conv_w, w));

        // relu, jittered off the kink.
        Tensor<double> rx = random_tensor({2, 3, 4, 4}, rng);
        for (auto& v : rx.data) v += (v >= 0 ? 0.2 : -0.2);
        auto via_relu = [](Tape<double>& t, Tape<double>::NodeId leaf) {
            auto r = relu(t, leaf);
            return sum(t, mul(t, r, r));
        };
        worst = std::max(worst, grad_check(via_relu, rx));

        // softmax through a quadratic.
        Tensor<double> z = random_tensor({1, 4, 3, 3}, rng, -2.0, 2.0);
        auto via_softmax = [](Tape<double>& t, Tape<double>::NodeId leaf) {
            auto p = softmax_channel(t, leaf);
            return sum(t, mul(t, p, p));
        };
        worst = std::max(worst, grad_check(via_softmax, z));

        // cross-entropy with a fractional weight.
        LabelMap lbl = random_label(3, 3, 4, rng);
        auto via_ce = [&](Tape<double>& t, Tape<double>::NodeId leaf) {
            std::vector<LabelMap> labels{lbl};
            return ce_loss(t, leaf, labels, 0.75);
        };
        worst = std::max(worst, grad_check(via_ce, z));
    }
    std::ostringstream os;
    os << "max relative error " << worst;
    return expect(worst < 1e-4, os.str());
}

inline std::optional<std::string> check_grad_model() {
    Rng rng(seed_combine(ms_check_seed(), 1));
    Arch arch;
    arch.hidden = {4, 4};
    arch.num_classes = 3;
    double worst = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
        Params<double> params = init_params<double>(100 + rep, arch);
        Tensor<double> img = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
        LabelMap lbl = random_label(8, 8, 3, rng);
        auto loss_from_input = [&](Tape<double>& t, Tape<double>::NodeId leaf) {
            Params<double> local = params;
            for (auto& nt : local.tensors) nt.value.requires_grad = false;
            auto sp = stage_params(t, local);
            std::vector<LabelMap> labels{lbl};
            return ce_loss(t, forward(t, sp, leaf), labels, 0.9);
        };
        worst = std::max(worst, grad_check(loss_from_input, img));
    }
    std::ostringstream os;
    os << "max relative error " << worst;
    return expect(worst < 1e-4, os.str());
}

inline std::optional<std::string> check_mix_equations() {
    Rng rng(seed_combine(ms_check_seed(), 2));
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t H = 8, W = 8;
        Tensor<float> donor({3, H, W}), recip({3, H, W});
        for (auto& v : donor.data) v = static_cast<float>(rng.uniform());
        for (auto& v : recip.data) v = static_cast<float>(rng.uniform());
        LabelMap donor_lbl = random_label(H, W, 5, rng);
        LabelMap recip_lbl = random_label(H, W, 5, rng);
        const auto classes = select_classes(donor_lbl, rng);
        const ClassMask mask = build_mask(donor_lbl, classes);
        const MixResult got = mix(donor, donor_lbl, recip, recip_lbl, mask);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const bool in = mask.at(y, x) != 0;
                for (std::size_t c = 0; c < 3; ++c) {
                    const float want = in ? donor.at3(c, y, x) : recip.at3(c, y, x);
                    if (got.image.at3(c, y, x) != want) return "mixed image mismatch";
                }
                const std::uint8_t want = in ? donor_lbl.at(y, x) : recip_lbl.at(y, x);
                if (got.label.at(y, x) != want) return "mixed label mismatch";
            }
    }
    return std::nullopt;
}

inline std::optional<std::string> check_ema_closed_form() {
    Arch arch;
    arch.hidden = {4};
    arch.num_classes = 2;
    Params<double> student = init_params<double>(7, arch);
    TeacherState<double> teacher = make_teacher(student, 0.99, 0.968);
    Params<double> theta = student;
    Rng rng(seed_combine(ms_check_seed(), 3));
    for (auto& nt : theta.tensors)
        for (auto& v : nt.value.data) v = rng.uniform(-1.0, 1.0);
    const Params<double> phi0 = teacher.params;
    const int n = 50;
    for (int i = 0; i < n; ++i) ema_update(teacher, theta);
    const double an = std::pow(0.99, n);
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.tensors.size(); ++i)
        for (std::size_t k = 0; k < theta.tensors[i].value.numel(); ++k) {
            const double want = theta.tensors[i].value.data[k] +
                                an * (phi0.tensors[i].value.data[k] - theta.tensors[i].value.data[k]);
            worst = std::max(worst, std::abs(want - teacher.params.tensors[i].value.data[k]));
        }
    std::ostringstream os;
    os << "max abs deviation " << worst;
    return expect(worst < 1e-10, os.str());
}

inline std::optional<std::string> check_quality_fraction() {
    Rng rng(seed_combine(ms_check_seed(), 4));
    Arch arch;
    arch.hidden = {4};
    arch.num_classes = 4;
    for (int rep = 0; rep < 50; ++rep) {
        Params<double> params = init_params<double>(30 + rep, arch);
        TeacherState<double> teacher = make_teacher(params, 0.99, 0.6);
        Tensor<double> img = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
        const PseudoLabel got = pseudo_label(teacher, img);

        Tensor<double> batched;
        batched.shape = {1, 3, 8, 8};
        batched.data = img.data;
        const Tensor<double> probs = softmax_channel_infer(infer_logits(teacher.params, batched));
        std::size_t confident = 0;
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) {
                double best = probs.at4(0, 0, y, x);
                std::size_t arg = 0;
                for (std::size_t c = 1; c < 4; ++c)
                    if (probs.at4(0, c, y, x) > best) {
                        best = probs.at4(0, c, y, x);
                        arg = c;
                    }
                if (got.label.at(y, x) != arg) return "pseudo-label argmax mismatch";
                if (best > 0.6) ++confident;
            }
        const double want = confident / 64.0;
        if (got.quality != want) return "quality fraction mismatch";
    }
    return std::nullopt;
}

inline std::optional<std::string> check_miou() {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 2;
    cm.at(0, 1) = 2;
    cm.at(1, 0) = 0;
    cm.at(1, 1) = 4;
    const IouReport r = miou(cm);
    if (std::abs(r.per_class[0] - 0.5) > 1e-12 || std::abs(r.per_class[1] - 4.0 / 6.0) > 1e-12 ||
        std::abs(r.mean - 7.0 / 12.0) > 1e-12)
        return "hand-computed confusion case mismatch";

    Rng rng(seed_combine(ms_check_seed(), 5));
    for (int rep = 0; rep < 20; ++rep) {
        LabelMap pred = random_label(6, 6, 3, rng);
        LabelMap truth = random_label(6, 6, 3, rng);
        ConfusionMatrix m(3);
        m.accumulate(pred, truth);
        const IouReport r2 = miou(m);
        for (std::size_t c = 0; c < 3; ++c) {
            std::size_t inter = 0, uni = 0;
            for (std::size_t i = 0; i < pred.v.size(); ++i) {
                const bool p = pred.v[i] == c, t = truth.v[i] == c;
                inter += p && t;
                uni += p || t;
            }
            if (uni && std::abs(r2.per_class[c] - double(inter) / double(uni)) > 1e-12)
                return "random-instance IoU mismatch";
        }
    }
    return std::nullopt;
}

}  // namespace selfcheck_detail

inline std::vector<Check> standard_checks() {
    using namespace selfcheck_detail;
    return {
        {"gradients: elementary ops", check_grad_ops},
        {"gradients: composed model", check_grad_model},
        {"equations: class mixing", check_mix_equations},
        {"equations: teacher ema", check_ema_closed_form},
        {"equations: pseudo-label quality", check_quality_fraction},
        {"metrics: miou", check_miou},
    };
}

// Runs checks in order, printing one status line each; true means all passed.
inline bool run_checks(const std::vector<Check>& checks, std::ostream& os) {
    bool ok = true;
    for (const auto& c : checks) {
        std::optional<std::string> failure;
        try {
            failure = c.fn();
        } catch (const std::exception& e) {
            failure = std::string("exception: ") + e.what();
        }
        if (failure) {
            os << "[FAIL] " << c.name << " (" << *failure << ")\n";
            ok = false;
        } else {
            os << "[PASS] " << c.name << "\n";
        }
    }
    return ok;
}

}  // namespace mixseg
