#pragma once

#include <optional>
#include <span>

#include "mixseg/labelmap.hpp"
#include "mixseg/ops.hpp"

namespace mixseg {

// Per-step loss record; mirrors the metrics CSV columns.
struct LossBreakdown {
    double l_s = 0.0;
    double l_t = 0.0;
    double l_inter = 0.0;
    double l_intra = 0.0;
    double total = 0.0;
    double lambda = 0.0;
    double mu = 0.0;
};

// weight * mean over non-ignored pixels of -log softmax(logits)[label].
// Log-softmax is fused for stability; the weight multiplies the reduced mean
// once at the end, so weighting by q is exactly q times the unweighted loss.
template <typename T>
typename Tape<T>::NodeId ce_loss(Tape<T>& tape, typename Tape<T>::NodeId logits,
                                 std::span<const LabelMap> labels, T weight) {
    using NodeId = typename Tape<T>::NodeId;
    const Tensor<T>& z = tape.value(logits);
    require_nchw(z.shape, "ce_loss logits");
    const std::size_t N = z.dim(0), C = z.dim(1), H = z.dim(2), W = z.dim(3);
    if (labels.size() != N)
        throw ConfigError("ce_loss got " + std::to_string(labels.size()) + " label maps for batch " +
                          std::to_string(N));
    for (const LabelMap& m : labels) {
        if (m.h != H || m.w != W)
            throw ConfigError("ce_loss label size mismatch");
        for (std::uint8_t c : m.v)
            if (c != LabelMap::kIgnore && c >= C)
                throw ConfigError("ce_loss label " + std::to_string(int(c)) +
                                  " out of range for " + std::to_string(C) + " classes");
    }

    const std::size_t HW = H * W;
    const T* zd = z.data.data();
    T sum = T(0);
    std::size_t valid = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const T* zn = zd + n * C * HW;
        const std::uint8_t* lab = labels[n].v.data();
        for (std::size_t j = 0; j < HW; ++j) {
            if (lab[j] == LabelMap::kIgnore) continue;
            T m = zn[j];
            for (std::size_t c = 1; c < C; ++c) m = std::max(m, zn[c * HW + j]);
            T lse = T(0);
            for (std::size_t c = 0; c < C; ++c) lse += std::exp(zn[c * HW + j] - m);
            lse = std::log(lse) + m;
            sum += lse - zn[std::size_t(lab[j]) * HW + j];
            ++valid;
        }
    }
    const T mean = valid ? sum / static_cast<T>(valid) : T(0);
    const T value = weight * mean;

    std::vector<LabelMap> labels_copy(labels.begin(), labels.end());
    return tape.emplace(Tensor<T>::from({1}, {value}), {logits},
                        [logits, labels_copy = std::move(labels_copy), weight,
                         valid](Tape<T>& t, NodeId self) {
        if (valid == 0) return;
        const T g = t.grad_buffer(self)[0] * weight / static_cast<T>(valid);
        const Tensor<T>& z2 = t.value(logits);
        const std::size_t N2 = z2.dim(0), C2 = z2.dim(1), HW2 = z2.dim(2) * z2.dim(3);
        const T* zd2 = z2.data.data();
        T* gz = t.grad_buffer(logits).data();
        std::vector<T> p(C2);
        for (std::size_t n = 0; n < N2; ++n) {
            const T* zn = zd2 + n * C2 * HW2;
            T* gn = gz + n * C2 * HW2;
            const std::uint8_t* lab = labels_copy[n].v.data();
            for (std::size_t j = 0; j < HW2; ++j) {
                if (lab[j] == LabelMap::kIgnore) continue;
                T m = zn[j];
                for (std::size_t c = 1; c < C2; ++c) m = std::max(m, zn[c * HW2 + j]);
                T s = T(0);
                for (std::size_t c = 0; c < C2; ++c) {
                    p[c] = std::exp(zn[c * HW2 + j] - m);
                    s += p[c];
                }
                const T inv = T(1) / s;
                for (std::size_t c = 0; c < C2; ++c)
                    gn[c * HW2 + j] += g * (p[c] * inv - (c == lab[j] ? T(1) : T(0)));
            }
        }
    });
}

// Stream losses present on the current tape; absent streams contribute
// exactly zero and add no records.
template <typename T>
struct StreamLosses {
    std::optional<typename Tape<T>::NodeId> l_s;
    std::optional<typename Tape<T>::NodeId> l_t;
    std::optional<typename Tape<T>::NodeId> l_inter;
    std::optional<typename Tape<T>::NodeId> l_intra;
};

// total = l_s + l_t + lambda*l_inter + mu*l_intra.
template <typename T>
std::pair<typename Tape<T>::NodeId, LossBreakdown> total_loss(Tape<T>& tape,
                                                              const StreamLosses<T>& streams,
                                                              T lambda, T mu) {
    using NodeId = typename Tape<T>::NodeId;
    if (lambda < T(0) || mu < T(0))
        throw ConfigError("loss weights lambda and mu must be non-negative");

    LossBreakdown bd;
    bd.lambda = static_cast<double>(lambda);
    bd.mu = static_cast<double>(mu);

    std::optional<NodeId> total;
    auto accumulate = [&](std::optional<NodeId> term) {
        if (!term) return;
        total = total ? add(tape, *total, *term) : *term;
    };

    auto scalar = [&](std::optional<NodeId> id) {
        return id ? static_cast<double>(tape.value(*id).data[0]) : 0.0;
    };
    bd.l_s = scalar(streams.l_s);
    bd.l_t = scalar(streams.l_t);
    bd.l_inter = scalar(streams.l_inter);
    bd.l_intra = scalar(streams.l_intra);

    accumulate(streams.l_s);
    accumulate(streams.l_t);
    if (streams.l_inter) accumulate(scale(tape, *streams.l_inter, lambda));
    if (streams.l_intra) accumulate(scale(tape, *streams.l_intra, mu));
    if (!total) total = tape.leaf(Tensor<T>::from({1}, {T(0)}));

    bd.total = static_cast<double>(tape.value(*total).data[0]);
    return {*total, bd};
}

}  // namespace mixseg
