#pragma once

#include <cmath>
#include <vector>

#include "mixseg/model.hpp"

namespace mixseg {

// Linear warmup ramp: base_lr * min(1, (step+1)/warmup_iters).
inline double warmup_lr(std::size_t step, double base_lr, std::size_t warmup_iters) {
    if (warmup_iters == 0) return base_lr;
    const double ramp = static_cast<double>(step + 1) / static_cast<double>(warmup_iters);
    return base_lr * (ramp < 1.0 ? ramp : 1.0);
}

// AdamW with decoupled weight decay:
//   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
//   p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)
// Moment buffers are allocated on first use and keyed by tensor position.
template <typename T>
class AdamW {
public:
    AdamW() = default;
    AdamW(double beta1, double beta2, double eps, double weight_decay)
        : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

    // lrs holds one learning rate per parameter tensor. A tensor whose grad
    // buffer is empty is treated as having zero gradient.
    void step(Params<T>& params, const std::vector<double>& lrs) {
        if (lrs.size() != params.tensors.size())
            throw ConfigError("adamw: one learning rate per tensor required");
        if (m_.empty()) {
            m_.resize(params.tensors.size());
            v_.resize(params.tensors.size());
            for (std::size_t i = 0; i < params.tensors.size(); ++i) {
                m_[i].assign(params.tensors[i].value.numel(), T(0));
                v_[i].assign(params.tensors[i].value.numel(), T(0));
            }
        }
        ++t_;
        const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(b1_, static_cast<double>(t_))));
        const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(b2_, static_cast<double>(t_))));
        const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
        const T eps = static_cast<T>(eps_), wd = static_cast<T>(wd_);
        for (std::size_t i = 0; i < params.tensors.size(); ++i) {
            auto& p = params.tensors[i].value;
            const bool has_grad = p.grad.size() == p.data.size();
            const T lr = static_cast<T>(lrs[i]);
            T* __restrict pd = p.data.data();
            const T* __restrict gd = has_grad ? p.grad.data() : nullptr;
            T* __restrict m = m_[i].data();
            T* __restrict v = v_[i].data();
            for (std::size_t k = 0; k < p.data.size(); ++k) {
                const T g = gd ? gd[k] : T(0);
                m[k] = b1 * m[k] + (T(1) - b1) * g;
                v[k] = b2 * v[k] + (T(1) - b2) * g * g;
                const T mhat = m[k] * c1;
                const T vhat = v[k] * c2;
                pd[k] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * pd[k]);
            }
        }
    }

    std::size_t step_count() const { return t_; }

private:
    double b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8, wd_ = 0.01;
    std::vector<std::vector<T>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace mixseg
