#pragma once

// Differentiable image objectives composed from engine ops. These mirror
// the 64-bit reference implementations in glss::imgmath; unit tests pin the
// two against each other.

#include "glss/imgmath.hpp"
#include "glss/nn/engine.hpp"

namespace glss::nn {

// Mean squared difference between two same-shape nodes.
template <typename S>
Node<S>* mse_node(Tape<S>& tape, Node<S>* x, Node<S>* y) {
    Node<S>* d = tape.sub(x, y);
    return tape.mean_all(tape.mul(d, d));
}

// Mean absolute difference.
template <typename S>
Node<S>* mae_node(Tape<S>& tape, Node<S>* x, Node<S>* y) {
    return tape.mean_all(tape.abs(tape.sub(x, y)));
}

// 1 - mean windowed SSIM (simplified exponent form; the general-exponent
// variant exists only on the non-differentiable metric path).
template <typename S>
Node<S>* ssim_loss_node(Tape<S>& tape, Node<S>* x, Node<S>* y,
                        const imgmath::SSIMParams& p = {}) {
    p.validate();
    if (!p.simplified()) {
        throw InvalidInputError("ssim_loss_node: only unit exponents are differentiable");
    }
    if (x->shape().h < p.window_size || x->shape().w < p.window_size) {
        throw InvalidInputError("ssim_loss_node: window does not fit image");
    }
    const MatX<S> window = imgmath::gaussian_window(p.window_size, p.window_sigma).template cast<S>();
    const S c1 = static_cast<S>(p.c1());
    const S c2 = static_cast<S>(p.c2());

    Node<S>* mu_x = tape.window_conv_valid(x, window);
    Node<S>* mu_y = tape.window_conv_valid(y, window);
    Node<S>* xx = tape.window_conv_valid(tape.mul(x, x), window);
    Node<S>* yy = tape.window_conv_valid(tape.mul(y, y), window);
    Node<S>* xy = tape.window_conv_valid(tape.mul(x, y), window);

    Node<S>* mu_x2 = tape.mul(mu_x, mu_x);
    Node<S>* mu_y2 = tape.mul(mu_y, mu_y);
    Node<S>* mu_xy = tape.mul(mu_x, mu_y);
    Node<S>* var_x = tape.sub(xx, mu_x2);
    Node<S>* var_y = tape.sub(yy, mu_y2);
    Node<S>* cov = tape.sub(xy, mu_xy);

    Node<S>* num = tape.mul(tape.affine(mu_xy, S(2), c1), tape.affine(cov, S(2), c2));
    Node<S>* den = tape.mul(tape.affine(tape.add(mu_x2, mu_y2), S(1), c1),
                            tape.affine(tape.add(var_x, var_y), S(1), c2));
    Node<S>* mean_ssim = tape.mean_all(tape.div(num, den));
    return tape.affine(mean_ssim, S(-1), S(1));
}

}  // namespace glss::nn
