#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "mixseg/labelmap.hpp"
#include "mixseg/tape.hpp"
#include "mixseg/tensor.hpp"

namespace mixseg {

#ifndef NDEBUG
#define MIXSEG_CHECK_FINITE(t, name)                                       \
    do {                                                                   \
        if (!(t).all_finite()) throw RuntimeAbort("non-finite values in " name); \
    } while (0)
#else
#define MIXSEG_CHECK_FINITE(t, name) (void)0
#endif

namespace detail {

// 3x3 cross-correlation kernels, stride 1, zero padding 1 (resolution
// preserving), layout [N,C,H,W]. Planes are staged into a zero-padded
// (H+2)x(W+2) scratch buffer so every inner loop runs branch-free over the
// full row and the nine taps fuse into one vectorized pass.

template <typename T>
std::vector<T>& padded_scratch() {
    thread_local std::vector<T> scratch;
    return scratch;
}

template <typename T>
void pad_planes(const T* src, T* dst, std::size_t C, std::size_t H, std::size_t W) {
    const std::size_t P = W + 2;
    for (std::size_t c = 0; c < C; ++c) {
        T* d = dst + c * (H + 2) * P;
        const T* s = src + c * H * W;
        std::fill(d, d + P, T(0));
        for (std::size_t y = 0; y < H; ++y) {
            T* row = d + (y + 1) * P;
            row[0] = T(0);
            std::copy(s + y * W, s + (y + 1) * W, row + 1);
            row[W + 1] = T(0);
        }
        std::fill(d + (H + 1) * P, d + (H + 2) * P, T(0));
    }
}

// dst[y][x] += sum over taps of w9[t] * padded[y + ty][x + tx]
template <typename T>
void stencil_accum(const T* __restrict padded, const T* __restrict w9, T* __restrict dst,
                   std::size_t H, std::size_t W) {
    const std::size_t P = W + 2;
    const T w0 = w9[0], w1 = w9[1], w2 = w9[2];
    const T w3 = w9[3], w4 = w9[4], w5 = w9[5];
    const T w6 = w9[6], w7 = w9[7], w8 = w9[8];
    for (std::size_t y = 0; y < H; ++y) {
        const T* __restrict r0 = padded + y * P;
        const T* __restrict r1 = r0 + P;
        const T* __restrict r2 = r1 + P;
        T* __restrict d = dst + y * W;
#pragma omp simd
        for (std::size_t x = 0; x < W; ++x)
            d[x] += w0 * r0[x] + w1 * r0[x + 1] + w2 * r0[x + 2] +
                    w3 * r1[x] + w4 * r1[x + 1] + w5 * r1[x + 2] +
                    w6 * r2[x] + w7 * r2[x + 1] + w8 * r2[x + 2];
    }
}

// w9_acc[t] += sum over pixels of g[y][x] * in[y + ty - 1][x + tx - 1].
// Both planes arrive zero-padded to (H+2)x(W+2); the input plane additionally
// carries a (W+3)-element zero guard on both sides so all nine shifted streams
// stay in bounds. One flat pass, a single horizontal reduction at the end.
template <typename T>
void stencil_grad_flat(const T* __restrict in_center, const T* __restrict g_padded,
                       T* __restrict w9_acc, std::size_t H, std::size_t W) {
    const std::size_t P = W + 2;
    const std::size_t total = (H + 2) * P;
    const T* __restrict q0 = in_center - P - 1;
    const T* __restrict q1 = in_center - P;
    const T* __restrict q2 = in_center - P + 1;
    const T* __restrict q3 = in_center - 1;
    const T* __restrict q4 = in_center;
    const T* __restrict q5 = in_center + 1;
    const T* __restrict q6 = in_center + P - 1;
    const T* __restrict q7 = in_center + P;
    const T* __restrict q8 = in_center + P + 1;
    T a0{}, a1{}, a2{}, a3{}, a4{}, a5{}, a6{}, a7{}, a8{};
#pragma omp simd reduction(+ : a0, a1, a2, a3, a4, a5, a6, a7, a8)
    for (std::size_t i = 0; i < total; ++i) {
        const T gv = g_padded[i];
        a0 += gv * q0[i];
        a1 += gv * q1[i];
        a2 += gv * q2[i];
        a3 += gv * q3[i];
        a4 += gv * q4[i];
        a5 += gv * q5[i];
        a6 += gv * q6[i];
        a7 += gv * q7[i];
        a8 += gv * q8[i];
    }
    w9_acc[0] += a0; w9_acc[1] += a1; w9_acc[2] += a2;
    w9_acc[3] += a3; w9_acc[4] += a4; w9_acc[5] += a5;
    w9_acc[6] += a6; w9_acc[7] += a7; w9_acc[8] += a8;
}

template <typename T>
void conv3x3_forward(const T* in, const T* w, const T* b, T* out,
                     std::size_t N, std::size_t Cin, std::size_t Cout,
                     std::size_t H, std::size_t W) {
    const std::size_t plane = H * W;
    const std::size_t padded_plane = (H + 2) * (W + 2);
    auto& scratch = padded_scratch<T>();
    scratch.resize(Cin * padded_plane);
    for (std::size_t n = 0; n < N; ++n) {
        pad_planes(in + n * Cin * plane, scratch.data(), Cin, H, W);
        for (std::size_t co = 0; co < Cout; ++co) {
            T* o = out + (n * Cout + co) * plane;
            std::fill(o, o + plane, b[co]);
            for (std::size_t ci = 0; ci < Cin; ++ci)
                stencil_accum(scratch.data() + ci * padded_plane, w + (co * Cin + ci) * 9, o,
                              H, W);
        }
    }
}

// gin[ci] += sum over co of gout[co] correlated with the rotated kernel
template <typename T>
void conv3x3_backward_input(const T* gout, const T* w, T* gin,
                            std::size_t N, std::size_t Cin, std::size_t Cout,
                            std::size_t H, std::size_t W) {
    const std::size_t plane = H * W;
    const std::size_t padded_plane = (H + 2) * (W + 2);
    auto& scratch = padded_scratch<T>();
    scratch.resize(Cout * padded_plane);
    for (std::size_t n = 0; n < N; ++n) {
        pad_planes(gout + n * Cout * plane, scratch.data(), Cout, H, W);
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            T* gi = gin + (n * Cin + ci) * plane;
            for (std::size_t co = 0; co < Cout; ++co) {
                const T* wk = w + (co * Cin + ci) * 9;
                T rot[9];
                for (int t = 0; t < 9; ++t) rot[t] = wk[8 - t];
                stencil_accum(scratch.data() + co * padded_plane, rot, gi, H, W);
            }
        }
    }
}

template <typename T>
void conv3x3_backward_bias(const T* gout, T* gb, std::size_t N, std::size_t Cout,
                           std::size_t HW) {
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
            const T* __restrict g = gout + (n * Cout + co) * HW;
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (std::size_t i = 0; i < HW; ++i) acc += g[i];
            gb[co] += acc;
        }
}

template <typename T>
void conv3x3_backward_weight(const T* gout, const T* in, T* gw,
                             std::size_t N, std::size_t Cin, std::size_t Cout,
                             std::size_t H, std::size_t W) {
    const std::size_t plane = H * W;
    const std::size_t P = W + 2;
    const std::size_t padded_plane = (H + 2) * P;
    const std::size_t guard = P + 1;
    const std::size_t stride = padded_plane + 2 * guard;
    auto& scratch = padded_scratch<T>();
    scratch.resize(Cin * stride + padded_plane);
    T* g_pad = scratch.data() + Cin * stride;
    for (std::size_t ci = 0; ci < Cin; ++ci) {
        T* base = scratch.data() + ci * stride;
        std::fill(base, base + guard, T(0));
        std::fill(base + guard + padded_plane, base + stride, T(0));
    }
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t ci = 0; ci < Cin; ++ci)
            pad_planes(in + (n * Cin + ci) * plane, scratch.data() + ci * stride + guard, 1, H, W);
        for (std::size_t co = 0; co < Cout; ++co) {
            pad_planes(gout + (n * Cout + co) * plane, g_pad, 1, H, W);
            for (std::size_t ci = 0; ci < Cin; ++ci)
                stencil_grad_flat(scratch.data() + ci * stride + guard, g_pad,
                                  gw + (co * Cin + ci) * 9, H, W);
        }
    }
}

// Per-pixel softmax over the channel axis with max subtraction.
template <typename T>
void softmax_channel_forward(const T* z, T* p, std::size_t N, std::size_t C,
                             std::size_t HW) {
    for (std::size_t n = 0; n < N; ++n) {
        const T* zn = z + n * C * HW;
        T* pn = p + n * C * HW;
        for (std::size_t j = 0; j < HW; ++j) {
            T m = zn[j];
            for (std::size_t c = 1; c < C; ++c) m = std::max(m, zn[c * HW + j]);
            T sum = T(0);
            for (std::size_t c = 0; c < C; ++c) {
                const T e = std::exp(zn[c * HW + j] - m);
                pn[c * HW + j] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (std::size_t c = 0; c < C; ++c) pn[c * HW + j] *= inv;
        }
    }
}

}  // namespace detail

inline void require_nchw(const Shape& s, const char* what) {
    if (s.size() != 4)
        throw ConfigError(std::string(what) + " must be 4-D [N,C,H,W], got " + shape_str(s));
}

// ---------------------------------------------------------------------------
// Inference-path ops (no recording). Used by the teacher, prediction and
// evaluation; by contract these never contribute gradient records.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_infer(const Tensor<T>& input, const Tensor<T>& weight,
                       const Tensor<T>& bias) {
    require_nchw(input.shape, "conv2d input");
    if (weight.rank() != 4 || weight.dim(2) != 3 || weight.dim(3) != 3)
        throw ConfigError("conv2d weight must be [Cout,Cin,3,3], got " + shape_str(weight.shape));
    if (weight.dim(1) != input.dim(1))
        throw ConfigError("conv2d channel mismatch: input " + shape_str(input.shape) +
                          " vs weight " + shape_str(weight.shape));
    if (bias.numel() != weight.dim(0))
        throw ConfigError("conv2d bias length " + std::to_string(bias.numel()) +
                          " != Cout " + std::to_string(weight.dim(0)));
    const std::size_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Cout = weight.dim(0);
    Tensor<T> out({N, Cout, H, W});
    detail::conv3x3_forward(input.data.data(), weight.data.data(), bias.data.data(),
                            out.data.data(), N, Cin, Cout, H, W);
    MIXSEG_CHECK_FINITE(out, "conv2d output");
    return out;
}

template <typename T>
Tensor<T> relu_infer(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return out;
}

template <typename T>
Tensor<T> softmax_channel_infer(const Tensor<T>& logits) {
    require_nchw(logits.shape, "softmax input");
    if (logits.dim(1) < 2) throw ConfigError("softmax needs at least 2 channels");
    Tensor<T> out(logits.shape);
    detail::softmax_channel_forward(logits.data.data(), out.data.data(),
                                    logits.dim(0), logits.dim(1),
                                    logits.dim(2) * logits.dim(3));
    MIXSEG_CHECK_FINITE(out, "softmax output");
    return out;
}

// ---------------------------------------------------------------------------
// Tape-recorded ops.
// ---------------------------------------------------------------------------

template <typename T>
typename Tape<T>::NodeId conv2d(Tape<T>& tape, typename Tape<T>::NodeId input,
                                typename Tape<T>::NodeId weight,
                                typename Tape<T>::NodeId bias) {
    using NodeId = typename Tape<T>::NodeId;
    Tensor<T> out = conv2d_infer(tape.value(input), tape.value(weight), tape.value(bias));
    return tape.emplace(std::move(out), {input, weight, bias},
                        [input, weight, bias](Tape<T>& t, NodeId self) {
        const Tensor<T>& in_v = t.value(input);
        const Tensor<T>& w_v = t.value(weight);
        const std::size_t N = in_v.dim(0), Cin = in_v.dim(1), H = in_v.dim(2), W = in_v.dim(3);
        const std::size_t Cout = w_v.dim(0);
        const T* g = t.grad_buffer(self).data();
        if (t.needs_grad(input))
            detail::conv3x3_backward_input(g, w_v.data.data(), t.grad_buffer(input).data(),
                                           N, Cin, Cout, H, W);
        if (t.needs_grad(weight))
            detail::conv3x3_backward_weight(g, in_v.data.data(), t.grad_buffer(weight).data(),
                                            N, Cin, Cout, H, W);
        if (t.needs_grad(bias))
            detail::conv3x3_backward_bias(g, t.grad_buffer(bias).data(), N, Cout, H * W);
    });
}

// Subgradient at exactly 0 is 0.
template <typename T>
typename Tape<T>::NodeId relu(Tape<T>& tape, typename Tape<T>::NodeId input) {
    using NodeId = typename Tape<T>::NodeId;
    Tensor<T> out = relu_infer(tape.value(input));
    return tape.emplace(std::move(out), {input}, [input](Tape<T>& t, NodeId self) {
        const auto& in_data = t.value(input).data;
        const auto& g = t.grad_buffer(self);
        auto& gi = t.grad_buffer(input);
        for (std::size_t i = 0; i < in_data.size(); ++i)
            if (in_data[i] > T(0)) gi[i] += g[i];
    });
}

template <typename T>
typename Tape<T>::NodeId softmax_channel(Tape<T>& tape, typename Tape<T>::NodeId logits) {
    using NodeId = typename Tape<T>::NodeId;
    Tensor<T> out = softmax_channel_infer(tape.value(logits));
    return tape.emplace(std::move(out), {logits}, [logits](Tape<T>& t, NodeId self) {
        // dL/dz_c = p_c * (g_c - sum_k g_k p_k), per pixel.
        const Tensor<T>& p = t.value(self);
        const std::size_t N = p.dim(0), C = p.dim(1), HW = p.dim(2) * p.dim(3);
        const T* pd = p.data.data();
        const T* g = t.grad_buffer(self).data();
        T* gz = t.grad_buffer(logits).data();
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = n * C * HW;
            for (std::size_t j = 0; j < HW; ++j) {
                T dot = T(0);
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t i = base + c * HW + j;
                    dot += g[i] * pd[i];
                }
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t i = base + c * HW + j;
                    gz[i] += pd[i] * (g[i] - dot);
                }
            }
        }
    });
}

template <typename T>
typename Tape<T>::NodeId add(Tape<T>& tape, typename Tape<T>::NodeId a,
                             typename Tape<T>::NodeId b) {
    using NodeId = typename Tape<T>::NodeId;
    const Tensor<T>& av = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    if (av.shape != bv.shape)
        throw ConfigError("add shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor<T> out(av.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
    return tape.emplace(std::move(out), {a, b}, [a, b](Tape<T>& t, NodeId self) {
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(a);
        auto& gb = t.grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

template <typename T>
typename Tape<T>::NodeId mul(Tape<T>& tape, typename Tape<T>::NodeId a,
                             typename Tape<T>::NodeId b) {
    using NodeId = typename Tape<T>::NodeId;
    const Tensor<T>& av = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    if (av.shape != bv.shape)
        throw ConfigError("mul shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor<T> out(av.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = av.data[i] * bv.data[i];
    return tape.emplace(std::move(out), {a, b}, [a, b](Tape<T>& t, NodeId self) {
        const auto& g = t.grad_buffer(self);
        const auto& av2 = t.value(a).data;
        const auto& bv2 = t.value(b).data;
        auto& ga = t.grad_buffer(a);
        auto& gb = t.grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv2[i];
            gb[i] += g[i] * av2[i];
        }
    });
}

template <typename T>
typename Tape<T>::NodeId scale(Tape<T>& tape, typename Tape<T>::NodeId a, T c) {
    using NodeId = typename Tape<T>::NodeId;
    Tensor<T> out = tape.value(a);
    for (auto& v : out.data) v *= c;
    return tape.emplace(std::move(out), {a}, [a, c](Tape<T>& t, NodeId self) {
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

template <typename T>
typename Tape<T>::NodeId sum(Tape<T>& tape, typename Tape<T>::NodeId a) {
    using NodeId = typename Tape<T>::NodeId;
    const Tensor<T>& av = tape.value(a);
    T s = T(0);
    for (T v : av.data) s += v;
    return tape.emplace(Tensor<T>::from({1}, {s}), {a}, [a](Tape<T>& t, NodeId self) {
        const T g = t.grad_buffer(self)[0];
        auto& ga = t.grad_buffer(a);
        for (auto& v : ga) v += g;
    });
}

// ---------------------------------------------------------------------------
// Gradient check harness.
// ---------------------------------------------------------------------------

// f builds a scalar loss on the tape from one leaf. Returns the max over
// components of |analytic - central difference| / max(1, |analytic|).
template <typename T, typename F>
double grad_check(F f, const Tensor<T>& x, double eps = 1e-5) {
    Tensor<T> probe = x;
    probe.requires_grad = true;

    Tape<T> tape;
    auto leaf = tape.leaf_bound(probe);
    auto loss = f(tape, leaf);
    tape.backward(loss);
    std::vector<T> analytic = probe.grad;

    auto eval = [&](const Tensor<T>& point) {
        Tape<T> t;
        Tensor<T> p = point;
        p.requires_grad = false;
        auto l = f(t, t.leaf(p));
        return static_cast<double>(t.value(l).data[0]);
    };

    double worst = 0.0;
    Tensor<T> shifted = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T orig = shifted.data[i];
        shifted.data[i] = orig + static_cast<T>(eps);
        const double fp = eval(shifted);
        shifted.data[i] = orig - static_cast<T>(eps);
        const double fm = eval(shifted);
        shifted.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = static_cast<double>(analytic[i]);
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace mixseg
