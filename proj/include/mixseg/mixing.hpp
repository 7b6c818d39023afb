#pragma once

#include <span>
#include <vector>

#include "mixseg/data.hpp"
#include "mixseg/teacher.hpp"

namespace mixseg {

// Binary paste mask; 1 selects the donor pixel.
struct ClassMask {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> v;

    ClassMask() = default;
    ClassMask(std::size_t height, std::size_t width, std::uint8_t fill = 0)
        : h(height), w(width), v(height * width, fill) {}
    std::uint8_t at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : v) n += b;
        return n;
    }
};

inline std::vector<std::uint8_t> present_classes(const LabelMap& label) {
    bool seen[256] = {};
    for (std::uint8_t c : label.v) seen[c] = true;
    std::vector<std::uint8_t> out;
    for (int c = 0; c < 255; ++c)
        if (seen[c]) out.push_back(static_cast<std::uint8_t>(c));
    return out;
}

// Uniformly samples ceil(k/2) of the k classes present in the donor label.
// A single-class label degenerates to pasting the whole image.
inline std::vector<std::uint8_t> select_classes(const LabelMap& label, Rng& rng) {
    std::vector<std::uint8_t> classes = present_classes(label);
    if (classes.empty()) throw ConfigError("select_classes: label has no valid classes");
    const std::size_t take = (classes.size() + 1) / 2;
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.uniform_int(classes.size() - i);
        std::swap(classes[i], classes[j]);
    }
    classes.resize(take);
    std::sort(classes.begin(), classes.end());
    return classes;
}

inline ClassMask build_mask(const LabelMap& label, std::span<const std::uint8_t> classes) {
    ClassMask m(label.h, label.w);
    bool pick[256] = {};
    for (std::uint8_t c : classes) pick[c] = true;
    for (std::size_t i = 0; i < label.v.size(); ++i)
        m.v[i] = pick[label.v[i]] ? 1 : 0;
    return m;
}

struct MixResult {
    Tensor<float> image;
    LabelMap label;
};

// Pixelwise paste: mask=1 takes the donor, mask=0 keeps the recipient, for
// image and label alike. Selection is exact at any float precision.
inline MixResult mix(const Tensor<float>& donor_img, const LabelMap& donor_lbl,
                     const Tensor<float>& recipient_img, const LabelMap& recipient_lbl,
                     const ClassMask& mask) {
    if (donor_img.shape != recipient_img.shape || donor_img.rank() != 3)
        throw ConfigError("mix: image shape mismatch");
    const std::size_t H = donor_img.dim(1), W = donor_img.dim(2);
    if (donor_lbl.h != H || donor_lbl.w != W || recipient_lbl.h != H || recipient_lbl.w != W ||
        mask.h != H || mask.w != W)
        throw ConfigError("mix: label/mask shape mismatch");
    MixResult out{recipient_img, recipient_lbl};
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            if (!mask.at(y, x)) continue;
            for (std::size_t c = 0; c < 3; ++c)
                out.image.at3(c, y, x) = donor_img.at3(c, y, x);
            out.label.at(y, x) = donor_lbl.at(y, x);
        }
#ifndef NDEBUG
    for (std::size_t i = 0; i < mask.v.size(); ++i)
        assert(out.label.v[i] == (mask.v[i] ? donor_lbl.v[i] : recipient_lbl.v[i]));
#endif
    return out;
}

enum class Strategy { OneXuTwoStreams, TwoXuTwoStreams, OneXuOneStream };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::OneXuTwoStreams: return "one_xu_two_streams";
        case Strategy::TwoXuTwoStreams: return "two_xu_two_streams";
        case Strategy::OneXuOneStream: return "one_xu_one_stream";
    }
    return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
    if (s == "one_xu_two_streams") return Strategy::OneXuTwoStreams;
    if (s == "two_xu_two_streams") return Strategy::TwoXuTwoStreams;
    if (s == "one_xu_one_stream") return Strategy::OneXuOneStream;
    throw ConfigError("unknown strategy '" + s + "'");
}

enum class StreamKind { Inter, Intra, Combined };

struct MixedBatch {
    Tensor<float> image;
    LabelMap label;
    ClassMask mask;  // 1 where a donor pixel was pasted
    double quality = 0.0;
    StreamKind kind = StreamKind::Inter;
    int recipient_id = 0;
};

// Builds the mixed training inputs for one batch slot. `unlabeled` carries
// one sample for the one-x^u strategies and two for TwoXuTwoStreams;
// `teacher_out` is parallel to it. Mask classes are drawn inter first, then
// intra, only for enabled streams, so a disabled stream consumes no
// randomness.
inline std::vector<MixedBatch> compose_strategy(Strategy strategy, const Sample& source,
                                                const Sample& labeled_target,
                                                std::span<const Sample> unlabeled,
                                                std::span<const PseudoLabel> teacher_out,
                                                Rng& rng, bool enable_inter = true,
                                                bool enable_intra = true) {
    if (unlabeled.empty() || teacher_out.size() != unlabeled.size())
        throw ConfigError("compose_strategy: unlabeled samples and teacher outputs must pair up");
    std::vector<MixedBatch> out;
    if (!enable_inter && !enable_intra) return out;

    auto recipient = [&](std::size_t i) -> const Sample& { return unlabeled[i]; };

    switch (strategy) {
        case Strategy::OneXuTwoStreams:
        case Strategy::TwoXuTwoStreams: {
            std::size_t intra_slot = 0;
            if (strategy == Strategy::TwoXuTwoStreams) {
                if (unlabeled.size() < 2)
                    throw ConfigError("two_xu_two_streams needs two unlabeled samples");
                intra_slot = 1;
            }
            if (enable_inter) {
                const auto cls = select_classes(source.label, rng);
                auto m = build_mask(source.label, cls);
                auto mixed = mix(source.image, source.label, recipient(0).image,
                                 teacher_out[0].label, m);
                out.push_back({std::move(mixed.image), std::move(mixed.label), std::move(m),
                               teacher_out[0].quality, StreamKind::Inter, recipient(0).id});
            }
            if (enable_intra) {
                const auto cls = select_classes(labeled_target.label, rng);
                auto m = build_mask(labeled_target.label, cls);
                auto mixed = mix(labeled_target.image, labeled_target.label,
                                 recipient(intra_slot).image, teacher_out[intra_slot].label, m);
                out.push_back({std::move(mixed.image), std::move(mixed.label), std::move(m),
                               teacher_out[intra_slot].quality, StreamKind::Intra,
                               recipient(intra_slot).id});
            }
            break;
        }
        case Strategy::OneXuOneStream: {
            // Both pastes land on the same recipient; where the masks overlap
            // the labeled-target paste wins.
            MixResult acc{recipient(0).image, teacher_out[0].label};
            ClassMask pasted(recipient(0).label.h, recipient(0).label.w, 0);
            StreamKind kind = StreamKind::Combined;
            if (enable_inter) {
                const auto cls = select_classes(source.label, rng);
                const auto m = build_mask(source.label, cls);
                acc = mix(source.image, source.label, acc.image, acc.label, m);
                for (std::size_t i = 0; i < pasted.v.size(); ++i) pasted.v[i] |= m.v[i];
                if (!enable_intra) kind = StreamKind::Inter;
            }
            if (enable_intra) {
                const auto cls = select_classes(labeled_target.label, rng);
                const auto m = build_mask(labeled_target.label, cls);
                acc = mix(labeled_target.image, labeled_target.label, acc.image, acc.label, m);
                for (std::size_t i = 0; i < pasted.v.size(); ++i) pasted.v[i] |= m.v[i];
                if (!enable_inter) kind = StreamKind::Intra;
            }
            out.push_back({std::move(acc.image), std::move(acc.label), std::move(pasted),
                           teacher_out[0].quality, kind, recipient(0).id});
            break;
        }
    }
    return out;
}

}  // namespace mixseg
