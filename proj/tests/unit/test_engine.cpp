#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "glss/common.hpp"
#include "glss/imgmath.hpp"
#include "glss/nn/engine.hpp"
#include "glss/nn/objectives.hpp"
#include "glss/nn/optim.hpp"

using glss::Rng;
namespace nn = glss::nn;
using nn::MatX;
using nn::Node;
using nn::Shape4;
using nn::Tape;
using nn::VecX;

namespace {

// Builds a graph over parameters theta via `build`, then compares the
// analytic gradient of the scalar loss against central finite differences
// at every coordinate. Returns the worst relative error.
double gradcheck(long n_params,
                 const std::function<Node<double>*(Tape<double>&, const VecX<double>*)>& build,
                 VecX<double>& theta, double step = 1e-5) {
    Tape<double> tape;
    Node<double>* loss = build(tape, &theta);
    tape.forward_all();
    tape.backward(loss);
    VecX<double> analytic = VecX<double>::Zero(n_params);
    tape.store_grads(analytic);

    double worst = 0.0;
    for (long i = 0; i < n_params; ++i) {
        const double saved = theta(i);
        theta(i) = saved + step;
        tape.forward_all();
        const double up = loss->val(0, 0);
        theta(i) = saved - step;
        tape.forward_all();
        const double down = loss->val(0, 0);
        theta(i) = saved;
        const double fd = (up - down) / (2.0 * step);
        const double err = std::abs(fd - analytic(i)) /
                           std::max({std::abs(fd), std::abs(analytic(i)), 1e-6});
        worst = std::max(worst, err);
    }
    tape.forward_all();  // restore clean state
    return worst;
}

VecX<double> random_vec(long n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    VecX<double> v(n);
    for (long i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
    return v;
}

MatX<double> random_mat(long r, long c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    MatX<double> m(r, c);
    for (long j = 0; j < c; ++j) {
        for (long i = 0; i < r; ++i) m(i, j) = rng.uniform(lo, hi);
    }
    return m;
}

// Random projection to a scalar, so every output element receives a
// distinct gradient.
Node<double>* project(Tape<double>& tape, Node<double>* x, Rng& rng) {
    const MatX<double> w = random_mat(x->val.rows(), x->val.cols(), rng);
    return tape.sum_all(tape.mul(x, tape.constant(x->shape(), w)));
}

}  // namespace

TEST_CASE("gradcheck: conv2d stride 1 and stride 2 and 1x1") {
    Rng rng(101);
    const struct {
        int cin, cout, h, w, n, k, stride, pad;
    } cases[] = {
        {3, 4, 6, 5, 2, 3, 1, 1},
        {2, 5, 6, 8, 2, 3, 2, 1},
        {4, 3, 5, 5, 1, 1, 1, 0},
        {1, 2, 9, 9, 3, 3, 2, 1},  // more images than one chunk column block
    };
    for (const auto& c : cases) {
        const long n_x = static_cast<long>(c.n) * c.cin * c.h * c.w;
        const long n_w = static_cast<long>(c.cout) * c.cin * c.k * c.k;
        const long n_b = c.cout;
        VecX<double> theta = random_vec(n_x + n_w + n_b, rng);
        const auto build = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
            auto* x = tape.param(Shape4{c.n, c.cin, c.h, c.w}, flat, 0);
            auto* w = tape.param(Shape4{1, c.cout, 1, c.cin * c.k * c.k}, flat, n_x);
            auto* b = tape.param(Shape4{1, c.cout, 1, 1}, flat, n_x + n_w);
            return project(tape, tape.conv2d(x, w, b, c.k, c.stride, c.pad), rng);
        };
        Rng proj_rng(rng.raw());
        rng = proj_rng;  // keep the projection deterministic per case
        CHECK(gradcheck(theta.size(), build, theta) < 1e-6);
    }
}

TEST_CASE("gradcheck: linear, flatten, reshape chain") {
    Rng rng(103);
    const int n = 3, cin = 4, h = 4, w = 4, feat = cin * h * w, out = 5;
    const long n_x = static_cast<long>(n) * cin * h * w;
    const long n_w = static_cast<long>(out) * feat;
    VecX<double> theta = random_vec(n_x + n_w + out, rng);
    const auto build = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
        auto* x = tape.param(Shape4{n, cin, h, w}, flat, 0);
        auto* wn = tape.param(Shape4{1, out, 1, feat}, flat, n_x);
        auto* bn = tape.param(Shape4{1, out, 1, 1}, flat, n_x + n_w);
        auto* lin = tape.linear(tape.flatten(x), wn, bn);
        auto* back = tape.reshape(lin, out, 1, 1);
        return project(tape, back, rng);
    };
    CHECK(gradcheck(theta.size(), build, theta) < 1e-6);
}

TEST_CASE("gradcheck: activations") {
    Rng rng(107);
    const int n = 2, c = 3, h = 4, w = 5;
    const long size = static_cast<long>(n) * c * h * w;
    // Bounded away from the leaky-relu kink at zero.
    VecX<double> theta(size);
    for (long i = 0; i < size; ++i) {
        const double v = rng.uniform(0.1, 1.0);
        theta(i) = rng.uniform01() < 0.5 ? v : -v;
    }
    for (const char* which : {"leaky", "sigmoid", "tanh"}) {
        const auto build = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
            auto* x = tape.param(Shape4{n, c, h, w}, flat, 0);
            Node<double>* y = nullptr;
            if (std::string(which) == "leaky") y = tape.leaky_relu(x, 0.2);
            if (std::string(which) == "sigmoid") y = tape.sigmoid(x);
            if (std::string(which) == "tanh") y = tape.tanh(x);
            return project(tape, y, rng);
        };
        CHECK(gradcheck(size, build, theta) < 1e-6);
    }
}

TEST_CASE("gradcheck: maxpool2 and upsample2") {
    Rng rng(109);
    const int n = 2, c = 2, h = 6, w = 4;
    const long size = static_cast<long>(n) * c * h * w;
    // Distinct well-separated values so the argmax is stable under the
    // finite-difference step.
    VecX<double> theta(size);
    std::vector<int> order(static_cast<std::size_t>(size));
    for (long i = 0; i < size; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);
    for (long i = size - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1))]);
    }
    for (long i = 0; i < size; ++i) theta(i) = 0.01 * order[static_cast<std::size_t>(i)];

    const auto build_pool = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
        auto* x = tape.param(Shape4{n, c, h, w}, flat, 0);
        return project(tape, tape.maxpool2(x), rng);
    };
    CHECK(gradcheck(size, build_pool, theta, 1e-4) < 1e-6);

    const auto build_up = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
        auto* x = tape.param(Shape4{n, c, h, w}, flat, 0);
        return project(tape, tape.upsample2(x), rng);
    };
    CHECK(gradcheck(size, build_up, theta) < 1e-6);
}

TEST_CASE("gradcheck: concat and elementwise binaries") {
    Rng rng(113);
    const int n = 2, c = 2, h = 3, w = 3;
    const long half = static_cast<long>(n) * c * h * w;
    VecX<double> theta = random_vec(2 * half, rng, 0.5, 1.5);  // div-safe, abs-safe

    const auto build_concat = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
        auto* a = tape.param(Shape4{n, c, h, w}, flat, 0);
        auto* b = tape.param(Shape4{n, c, h, w}, flat, half);
        return project(tape, tape.concat(a, b), rng);
    };
    CHECK(gradcheck(2 * half, build_concat, theta) < 1e-6);

    for (const auto op : {nn::BinaryOp::add, nn::BinaryOp::sub, nn::BinaryOp::mul,
                          nn::BinaryOp::div}) {
        const auto build = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
            auto* a = tape.param(Shape4{n, c, h, w}, flat, 0);
            auto* b = tape.param(Shape4{n, c, h, w}, flat, half);
            return project(tape, tape.make<nn::BinaryNode<double>>(a, b, op), rng);
        };
        CHECK(gradcheck(2 * half, build, theta) < 1e-6);
    }

    const auto build_misc = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
        auto* a = tape.param(Shape4{n, c, h, w}, flat, 0);
        auto* b = tape.param(Shape4{n, c, h, w}, flat, half);
        auto* y = project(tape, tape.affine(tape.abs(a), 1.7, -0.3), rng);
        return tape.add(y, tape.mean_all(b));
    };
    CHECK(gradcheck(2 * half, build_misc, theta) < 1e-6);
}

TEST_CASE("gradcheck: window convolution") {
    Rng rng(127);
    const int n = 2, c = 1, h = 9, w = 9;
    const long size = static_cast<long>(n) * c * h * w;
    VecX<double> theta = random_vec(size, rng, 0.0, 1.0);
    const MatX<double> kernel = glss::imgmath::gaussian_window(5, 1.5);
    const auto build = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
        auto* x = tape.param(Shape4{n, c, h, w}, flat, 0);
        return project(tape, tape.window_conv_valid(x, kernel), rng);
    };
    CHECK(gradcheck(size, build, theta) < 1e-6);
}

TEST_CASE("gradcheck: reparameterize and kl") {
    Rng rng(131);
    const int d = 6, n = 3;
    const long half = static_cast<long>(d) * n;
    VecX<double> theta = random_vec(2 * half, rng, -0.8, 0.8);
    const MatX<double> noise = random_mat(d, n, rng);

    const auto build = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
        auto* mu = tape.param(Shape4{n, d, 1, 1}, flat, 0);
        auto* lv = tape.param(Shape4{n, d, 1, 1}, flat, half);
        auto* noise_node = tape.constant(Shape4{n, d, 1, 1}, noise);
        auto* z = tape.reparameterize(mu, lv, noise_node);
        return tape.add(project(tape, z, rng), tape.kl_mean(mu, lv));
    };
    CHECK(gradcheck(2 * half, build, theta) < 1e-6);
}

TEST_CASE("gradcheck: segmentation losses") {
    Rng rng(137);
    const int n = 2, h = 4, w = 4;
    const long size = static_cast<long>(n) * h * w;
    VecX<double> theta = random_vec(size, rng, 0.05, 0.95);
    MatX<double> target(1, size);
    for (long i = 0; i < size; ++i) target(0, i) = rng.uniform01() < 0.5 ? 1.0 : 0.0;

    for (const char* which : {"bce", "dice", "focal2", "focal0"}) {
        const auto build = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
            auto* p = tape.param(Shape4{n, 1, h, w}, flat, 0);
            auto* t = tape.constant(Shape4{n, 1, h, w}, target);
            const std::string name(which);
            if (name == "bce") return tape.bce(p, t);
            if (name == "dice") return tape.dice_loss(p, t);
            if (name == "focal2") return tape.focal(p, t, 2.0, 0.75);
            return tape.focal(p, t, 0.0, 0.5);
        };
        CHECK(gradcheck(size, build, theta) < 1e-6);
    }
}

TEST_CASE("gradcheck: composite ssim objective") {
    Rng rng(139);
    const int h = 12, w = 12;
    const long size = static_cast<long>(h) * w;
    VecX<double> theta = random_vec(size, rng, 0.0, 1.0);
    const MatX<double> target = random_mat(1, size, rng, 0.0, 1.0);
    glss::imgmath::SSIMParams params;
    params.window_size = 7;

    const auto build = [&](Tape<double>& tape, const VecX<double>* flat) -> Node<double>* {
        auto* x = tape.param(Shape4{1, 1, h, w}, flat, 0);
        auto* y = tape.constant(Shape4{1, 1, h, w}, target);
        return nn::ssim_loss_node(tape, x, y, params);
    };
    CHECK(gradcheck(size, build, theta) < 1e-6);
}

TEST_CASE("graph ssim agrees with the reference implementation") {
    Rng rng(149);
    for (int trial = 0; trial < 5; ++trial) {
        const int h = 13, w = 15;
        std::vector<double> xa(static_cast<std::size_t>(h) * w);
        std::vector<double> ya(xa.size());
        for (auto& v : xa) v = rng.uniform01();
        for (auto& v : ya) v = rng.uniform01();
        const glss::ImageTensor xi(h, w, 1, xa);
        const glss::ImageTensor yi(h, w, 1, ya);

        Tape<double> tape;
        MatX<double> xm = Eigen::Map<const MatX<double>>(xa.data(), 1, static_cast<long>(xa.size()));
        MatX<double> ym = Eigen::Map<const MatX<double>>(ya.data(), 1, static_cast<long>(ya.size()));
        auto* xn = tape.constant(Shape4{1, 1, h, w}, xm);
        auto* yn = tape.constant(Shape4{1, 1, h, w}, ym);
        auto* loss = nn::ssim_loss_node(tape, xn, yn);
        tape.forward_all();
        CHECK(loss->val(0, 0) ==
              doctest::Approx(glss::imgmath::ssim_loss(xi, yi)).epsilon(1e-9));

        auto* mse_n = nn::mse_node(tape, xn, yn);
        auto* mae_n = nn::mae_node(tape, xn, yn);
        tape.forward_all();
        CHECK(mse_n->val(0, 0) == doctest::Approx(glss::imgmath::mse(xi, yi)).epsilon(1e-12));
        CHECK(mae_n->val(0, 0) == doctest::Approx(glss::imgmath::mae(xi, yi)).epsilon(1e-12));
    }
}

TEST_CASE("rmsprop matches the hand-computed two-step oracle") {
    // lr 0.1, decay 0.9, eps 1e-8, p0 = 1, gradients 1.0 then 0.5:
    //   v1 = 0.1,   p1 = 1 - 0.1/(sqrt(0.1) + 1e-8)   = 0.68377224398316172
    //   v2 = 0.115, p2 = p1 - 0.05/(sqrt(0.115)+1e-8) = 0.53633029217609063
    nn::RMSprop<double> opt(0.1, 1);
    VecX<double> p(1);
    p << 1.0;
    VecX<double> g(1);
    g << 1.0;
    opt.step(p, g);
    CHECK(p(0) == doctest::Approx(0.68377224398316172).epsilon(1e-15));
    g << 0.5;
    opt.step(p, g);
    CHECK(p(0) == doctest::Approx(0.53633029217609063).epsilon(1e-15));
}

TEST_CASE("adam matches the hand-computed two-step oracle") {
    // lr 0.1, b1 0.9, b2 0.99, eps 1e-8, p0 = 1, gradients 1.0 then 0.5:
    //   p1 = 0.90000000099999988, p2 = 0.80665520200525442
    nn::Adam<double> opt(0.1, 1);
    VecX<double> p(1);
    p << 1.0;
    VecX<double> g(1);
    g << 1.0;
    opt.step(p, g);
    CHECK(p(0) == doctest::Approx(0.90000000099999988).epsilon(1e-15));
    g << 0.5;
    opt.step(p, g);
    CHECK(p(0) == doctest::Approx(0.80665520200525442).epsilon(1e-15));
}

TEST_CASE("adam first step size is lr-bounded regardless of gradient scale") {
    for (const double scale : {1e-6, 1.0, 1e6}) {
        nn::Adam<double> opt(0.1, 1);
        VecX<double> p(1);
        p << 0.0;
        VecX<double> g(1);
        g << scale;
        opt.step(p, g);
        // First bias-corrected step is -lr * g/(|g| + eps); eps shaves up to
        // ~1% off at the smallest scale tested.
        CHECK(p(0) == doctest::Approx(-0.1).epsilon(0.02));
    }
}

TEST_CASE("clip_global_norm scales only oversized gradients") {
    VecX<double> g(3);
    g << 3.0, 4.0, 0.0;  // norm 5
    const double norm = nn::clip_global_norm<double>(g, 10.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(g(0) == 3.0);
    const double norm2 = nn::clip_global_norm<double>(g, 2.5);
    CHECK(norm2 == doctest::Approx(5.0));
    CHECK(g.norm() == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(g(0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("tape reuse: editing inputs and re-running is consistent") {
    Rng rng(151);
    Tape<double> tape;
    auto* x = tape.input(Shape4{1, 2, 3, 3});
    auto* y = tape.mean_all(tape.mul(x, x));
    MatX<double> a = random_mat(2, 9, rng);
    x->set(a);
    tape.forward_all();
    const double va = y->val(0, 0);
    MatX<double> b = random_mat(2, 9, rng);
    x->set(b);
    tape.forward_all();
    const double vb = y->val(0, 0);
    x->set(a);
    tape.forward_all();
    CHECK(y->val(0, 0) == va);
    CHECK(va != vb);

    // Repeated backward accumulates into freshly zeroed gradients each time.
    tape.backward(y);
    const MatX<double> g1 = x->grad;
    tape.backward(y);
    CHECK((x->grad - g1).norm() == 0.0);
}
