#pragma once

#include <string>
#include <vector>

#include "mixseg/labelmap.hpp"
#include "mixseg/ops.hpp"
#include "mixseg/rng.hpp"

namespace mixseg {

// Resolution-preserving fully convolutional net: a stack of conv3x3+ReLU
// layers followed by a conv3x3 head producing one logit plane per class.
// Default widths give an 11x11 receptive field.
struct Arch {
    std::size_t in_channels = 3;
    std::vector<std::size_t> hidden = {16, 32, 32, 16};
    std::size_t num_classes = 5;

    bool operator==(const Arch& o) const {
        return in_channels == o.in_channels && hidden == o.hidden && num_classes == o.num_classes;
    }

    std::size_t param_count() const {
        std::size_t n = 0, cin = in_channels;
        for (std::size_t h : hidden) {
            n += h * cin * 9 + h;
            cin = h;
        }
        n += num_classes * cin * 9 + num_classes;
        return n;
    }
};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> value;
};

// Ordered parameter list; the order is the EMA pairing contract between
// student and teacher. Head tensors are the last two entries.
template <typename T>
struct Params {
    Arch arch;
    std::vector<NamedTensor<T>> tensors;

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.value.numel();
        return n;
    }
    bool is_head(std::size_t i) const { return i + 2 >= tensors.size(); }
};

// He-scaled seeded initialization; biases start at zero. Same seed gives
// bit-identical parameters.
template <typename T>
Params<T> init_params(std::uint64_t seed, const Arch& arch) {
    if (arch.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (arch.hidden.empty()) throw ConfigError("hidden channel list must be non-empty");
    Rng rng(seed_combine(seed, seed_tag("params")));
    Params<T> p;
    p.arch = arch;
    std::size_t cin = arch.in_channels;
    auto add_conv = [&](const std::string& name, std::size_t cout) {
        const double stddev = std::sqrt(2.0 / (double(cin) * 9.0));
        p.tensors.push_back({name + ".weight",
                             Tensor<T>::randn({cout, cin, 3, 3}, rng, 0.0, stddev)});
        p.tensors.push_back({name + ".bias", Tensor<T>::zeros({cout})});
        cin = cout;
    };
    for (std::size_t i = 0; i < arch.hidden.size(); ++i)
        add_conv("conv" + std::to_string(i), arch.hidden[i]);
    add_conv("head", arch.num_classes);
    for (auto& t : p.tensors) t.value.requires_grad = true;
    return p;
}

template <typename T>
Params<T> init_params(std::uint64_t seed, std::vector<std::size_t> channels,
                      std::size_t num_classes) {
    Arch a;
    a.hidden = std::move(channels);
    a.num_classes = num_classes;
    return init_params<T>(seed, a);
}

// Parameter node ids after staging onto a tape for one training step.
template <typename T>
struct StagedParams {
    const Arch* arch = nullptr;
    std::vector<typename Tape<T>::NodeId> ids;
};

template <typename T>
StagedParams<T> stage_params(Tape<T>& tape, Params<T>& params) {
    StagedParams<T> s;
    s.arch = &params.arch;
    s.ids.reserve(params.tensors.size());
    for (auto& t : params.tensors) s.ids.push_back(tape.leaf_bound(t.value));
    return s;
}

template <typename T>
typename Tape<T>::NodeId forward(Tape<T>& tape, const StagedParams<T>& params,
                                 typename Tape<T>::NodeId images) {
    const Tensor<T>& in = tape.value(images);
    require_nchw(in.shape, "model input");
    if (in.dim(1) != params.arch->in_channels)
        throw ConfigError("model expects " + std::to_string(params.arch->in_channels) +
                          " input channels, got " + std::to_string(in.dim(1)));
    if (in.dim(2) < 8 || in.dim(3) < 8)
        throw ConfigError("model input must be at least 8x8");
    auto x = images;
    const std::size_t n_layers = params.ids.size() / 2;
    for (std::size_t i = 0; i < n_layers; ++i) {
        x = conv2d(tape, x, params.ids[2 * i], params.ids[2 * i + 1]);
        if (i + 1 < n_layers) x = relu(tape, x);
    }
    return x;
}

// Teacher/evaluation path: no gradient records.
template <typename T>
Tensor<T> infer_logits(const Params<T>& params, const Tensor<T>& images) {
    require_nchw(images.shape, "model input");
    if (images.dim(1) != params.arch.in_channels)
        throw ConfigError("model expects " + std::to_string(params.arch.in_channels) +
                          " input channels, got " + std::to_string(images.dim(1)));
    if (images.dim(2) < 8 || images.dim(3) < 8)
        throw ConfigError("model input must be at least 8x8");
    Tensor<T> x = images;
    const std::size_t n_layers = params.tensors.size() / 2;
    for (std::size_t i = 0; i < n_layers; ++i) {
        x = conv2d_infer(x, params.tensors[2 * i].value, params.tensors[2 * i + 1].value);
        if (i + 1 < n_layers) x = relu_infer(x);
    }
    return x;
}

// Per-pixel argmax over channels; ties break to the lowest class index.
template <typename T>
LabelMap argmax_channel(const Tensor<T>& logits, std::size_t n) {
    const std::size_t C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    LabelMap out(H, W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            std::size_t best = 0;
            T bv = logits.at4(n, 0, y, x);
            for (std::size_t c = 1; c < C; ++c) {
                const T v = logits.at4(n, c, y, x);
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            out.at(y, x) = static_cast<std::uint8_t>(best);
        }
    return out;
}

template <typename T>
std::vector<LabelMap> predict(const Params<T>& params, const Tensor<T>& images) {
    const Tensor<T> probs = softmax_channel_infer(infer_logits(params, images));
    std::vector<LabelMap> maps;
    maps.reserve(probs.dim(0));
    for (std::size_t n = 0; n < probs.dim(0); ++n) maps.push_back(argmax_channel(probs, n));
    return maps;
}

}  // namespace mixseg
