#pragma once

// Flat-vector optimizers. Update rules are pinned here and locked by unit
// oracles; training code must not reimplement them.

#include <cmath>

#include "glss/nn/engine.hpp"

namespace glss::nn {

// RMSprop: v <- decay*v + (1-decay)*g^2; p <- p - lr * g / (sqrt(v) + eps).
template <typename S>
class RMSprop {
public:
    RMSprop(S learning_rate, long size, S decay = S(0.9), S epsilon = S(1e-8))
        : lr_(learning_rate), decay_(decay), eps_(epsilon) {
        v_ = VecX<S>::Zero(size);
    }

    void step(VecX<S>& params, const VecX<S>& grads) {
        v_ = decay_ * v_ + (S(1) - decay_) * grads.array().square().matrix();
        params.array() -= lr_ * grads.array() / (v_.array().sqrt() + eps_);
    }

private:
    S lr_;
    S decay_;
    S eps_;
    VecX<S> v_;
};

// Bias-corrected Adam:
//   m <- b1*m + (1-b1)*g;   v <- b2*v + (1-b2)*g^2;   t <- t+1
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
template <typename S>
class Adam {
public:
    Adam(S learning_rate, long size, S beta1 = S(0.9), S beta2 = S(0.99), S epsilon = S(1e-8))
        : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {
        m_ = VecX<S>::Zero(size);
        v_ = VecX<S>::Zero(size);
    }

    void step(VecX<S>& params, const VecX<S>& grads) {
        ++t_;
        m_ = b1_ * m_ + (S(1) - b1_) * grads;
        v_ = b2_ * v_ + (S(1) - b2_) * grads.array().square().matrix();
        const S c1 = S(1) - std::pow(b1_, static_cast<S>(t_));
        const S c2 = S(1) - std::pow(b2_, static_cast<S>(t_));
        params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

private:
    S lr_;
    S b1_;
    S b2_;
    S eps_;
    long t_ = 0;
    VecX<S> m_;
    VecX<S> v_;
};

// Scales a gradient segment so its L2 norm is at most max_norm; returns the
// norm before clipping.
template <typename S>
S clip_global_norm(Eigen::Ref<VecX<S>> grads, S max_norm) {
    const S norm = grads.norm();
    if (norm > max_norm && norm > S(0)) {
        grads *= max_norm / norm;
    }
    return norm;
}

}  // namespace glss::nn
