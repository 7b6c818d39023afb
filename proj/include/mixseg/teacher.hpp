#pragma once

#include "mixseg/model.hpp"

namespace mixseg {

// EMA copy of the student. alpha and tau stay fixed over a run.
template <typename T>
struct TeacherState {
    Params<T> params;
    double alpha = 0.99;
    double tau = 0.968;
    std::int64_t step = 0;
};

// Teacher starts as an exact copy of the student, so step-0 pseudo-labels
// equal student predictions. Teacher tensors never require gradients.
template <typename T>
TeacherState<T> make_teacher(const Params<T>& student, double alpha, double tau) {
    if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("alpha must be in [0,1)");
    if (tau <= 0.0 || tau >= 1.0) throw ConfigError("tau must be in (0,1)");
    TeacherState<T> t;
    t.params = student;
    for (auto& nt : t.params.tensors) {
        nt.value.requires_grad = false;
        nt.value.grad.clear();
    }
    t.alpha = alpha;
    t.tau = tau;
    return t;
}

// phi <- alpha*phi + (1-alpha)*theta, elementwise over the paired tensor
// lists. A convex combination, so elementwise bounds are preserved.
template <typename T>
void ema_update(TeacherState<T>& teacher, const Params<T>& student) {
    if (teacher.params.tensors.size() != student.tensors.size())
        throw ConfigError("ema_update: parameter list mismatch");
    const T a = static_cast<T>(teacher.alpha);
    const T b = T(1) - a;
    for (std::size_t i = 0; i < student.tensors.size(); ++i) {
        auto& phi = teacher.params.tensors[i].value;
        const auto& theta = student.tensors[i].value;
        if (phi.shape != theta.shape)
            throw ConfigError("ema_update: tensor shape mismatch at index " + std::to_string(i));
        for (std::size_t k = 0; k < phi.numel(); ++k)
            phi.data[k] = a * phi.data[k] + b * theta.data[k];
    }
    ++teacher.step;
}

struct PseudoLabel {
    LabelMap label;
    double quality = 0.0;  // fraction of pixels whose max softmax prob exceeds tau
};

// Argmax map plus confidence ratio over a [1,C,H,W] probability tensor. The
// threshold comparison is strict, so a pixel at exactly tau does not count.
template <typename T>
PseudoLabel argmax_and_quality(const Tensor<T>& probs, double tau) {
    const std::size_t C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const T tau_t = static_cast<T>(tau);
    PseudoLabel out;
    out.label = LabelMap(H, W);
    std::size_t confident = 0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            std::size_t best = 0;
            T bv = probs.at4(0, 0, y, x);
            for (std::size_t c = 1; c < C; ++c) {
                const T v = probs.at4(0, c, y, x);
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            out.label.at(y, x) = static_cast<std::uint8_t>(best);
            if (bv > tau_t) ++confident;
        }
    out.quality = static_cast<double>(confident) / static_cast<double>(H * W);
    return out;
}

// Pseudo-label for one clean unlabeled image [3,H,W]. Inference path only:
// no gradient records exist afterward.
template <typename T>
PseudoLabel pseudo_label(const TeacherState<T>& teacher, const Tensor<T>& x_u) {
    if (x_u.rank() != 3)
        throw ConfigError("pseudo_label expects a single [C,H,W] image");
    Tensor<T> batched;
    batched.shape = {1, x_u.dim(0), x_u.dim(1), x_u.dim(2)};
    batched.data = x_u.data;
    const Tensor<T> probs = softmax_channel_infer(infer_logits(teacher.params, batched));
    return argmax_and_quality(probs, teacher.tau);
}

}  // namespace mixseg
