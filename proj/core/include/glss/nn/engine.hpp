#pragma once

// Minimal reverse-mode autodiff over batched feature maps.
//
// A feature map with batch N, channels C, height H, width W is stored as a
// C x (N*H*W) column-major matrix whose column index is n*H*W + y*W + x.
// Vectors (latents, flattened activations) use H = W = 1. A Tape owns the
// nodes of one computation graph; the graph is built once per fixed batch
// shape, then re-run with forward_all()/backward() as data changes. Nodes
// are evaluated in creation order forward and reverse order backward, so a
// node may only consume previously created nodes. Templated on the scalar:
// float for the training/inference paths, double for finite-difference
// gradient checks.

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "glss/common.hpp"

namespace glss::nn {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Batched feature-map shape.
struct Shape4 {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;
    long cols() const { return static_cast<long>(n) * h * w; }
    long plane() const { return static_cast<long>(h) * w; }
    long size() const { return static_cast<long>(c) * cols(); }
    bool operator==(const Shape4&) const = default;
    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
               std::to_string(w);
    }
};

template <typename S>
class Tape;

template <typename S>
class Node {
public:
    explicit Node(Shape4 shape) : shape_(shape) {
        val.setZero(shape.c, shape.cols());
        grad.setZero(shape.c, shape.cols());
    }
    virtual ~Node() = default;

    virtual void forward() = 0;
    virtual void backward() = 0;

    const Shape4& shape() const { return shape_; }

    MatX<S> val;
    MatX<S> grad;

protected:
    Shape4 shape_;
};

// Mutable leaf; its value is loaded from outside between runs.
template <typename S>
class InputNode final : public Node<S> {
public:
    explicit InputNode(Shape4 shape) : Node<S>(shape) {}
    void forward() override {}
    void backward() override {}

    void set(const MatX<S>& data) {
        if (data.rows() != this->val.rows() || data.cols() != this->val.cols()) {
            throw InvalidInputError("InputNode: shape mismatch in set()");
        }
        this->val = data;
    }
};

// Immutable leaf.
template <typename S>
class ConstNode final : public Node<S> {
public:
    ConstNode(Shape4 shape, const MatX<S>& data) : Node<S>(shape) {
        if (data.rows() != this->val.rows() || data.cols() != this->val.cols()) {
            throw InvalidInputError("ConstNode: shape mismatch");
        }
        this->val = data;
    }
    void forward() override {}
    void backward() override {}
};

// Leaf bound to a slice [offset, offset+size) of an external flat parameter
// vector; forward() refreshes the value after optimizer steps and the tape
// scatters the node gradient back through store_grads().
template <typename S>
class ParamNode final : public Node<S> {
public:
    ParamNode(Shape4 shape, const VecX<S>* flat, long offset) : Node<S>(shape), flat_(flat), offset_(offset) {
        if (offset < 0 || offset + this->shape().size() > flat->size()) {
            throw InvalidInputError("ParamNode: slice outside parameter vector");
        }
        forward();
    }
    void forward() override {
        this->val = Eigen::Map<const MatX<S>>(flat_->data() + offset_, this->val.rows(), this->val.cols());
    }
    void backward() override {}

    long offset() const { return offset_; }
    const VecX<S>* bound_vector() const { return flat_; }

private:
    const VecX<S>* flat_;
    long offset_;
};

namespace detail {

template <typename S>
void check_same(const Node<S>* a, const Node<S>* b, const char* op) {
    if (!(a->shape() == b->shape())) {
        throw InvalidInputError(std::string(op) + ": shape mismatch " + a->shape().str() + " vs " +
                                b->shape().str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

// 2-D convolution with zero padding. Weight layout: (c_out) x (c_in*kh*kw)
// with column index ci*kh*kw + ky*kw + kx; bias optional (c_out x 1).
// Batched im2col GEMM, processing images in fixed-size chunks to bound
// scratch memory; backward recomputes the column matrix per chunk.
template <typename S>
class Conv2dNode final : public Node<S> {
public:
    static constexpr int kChunkImages = 8;

    Conv2dNode(Node<S>* x, Node<S>* weight, Node<S>* bias, int kernel, int stride, int pad)
        : Node<S>(out_shape(x, weight, kernel, stride, pad)),
          x_(x),
          weight_(weight),
          bias_(bias),
          kernel_(kernel),
          stride_(stride),
          pad_(pad) {}

    void forward() override {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        const long chunk_cols = static_cast<long>(kChunkImages) * os.plane();
        col_.resize(static_cast<long>(xs.c) * kernel_ * kernel_, chunk_cols);
        for (int n0 = 0; n0 < xs.n; n0 += kChunkImages) {
            const int nc = std::min(kChunkImages, xs.n - n0);
            const long cols = static_cast<long>(nc) * os.plane();
            im2col(n0, nc);
            auto out = this->val.middleCols(static_cast<long>(n0) * os.plane(), cols);
            out.noalias() = weight_->val * col_.leftCols(cols);
            if (bias_ != nullptr) out.colwise() += bias_->val.col(0);
        }
    }

    void backward() override {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        for (int n0 = 0; n0 < xs.n; n0 += kChunkImages) {
            const int nc = std::min(kChunkImages, xs.n - n0);
            const long cols = static_cast<long>(nc) * os.plane();
            auto dy = this->grad.middleCols(static_cast<long>(n0) * os.plane(), cols);
            im2col(n0, nc);
            weight_->grad.noalias() += dy * col_.leftCols(cols).transpose();
            if (bias_ != nullptr) bias_->grad.col(0).noalias() += dy.rowwise().sum();
            dcol_.resize(col_.rows(), col_.cols());
            dcol_.leftCols(cols).noalias() = weight_->val.transpose() * dy;
            col2im_add(n0, nc);
        }
    }

private:
    static Shape4 out_shape(Node<S>* x, Node<S>* weight, int kernel, int stride, int pad) {
        const Shape4& xs = x->shape();
        const int oh = (xs.h + 2 * pad - kernel) / stride + 1;
        const int ow = (xs.w + 2 * pad - kernel) / stride + 1;
        if (oh <= 0 || ow <= 0) throw InvalidInputError("conv2d: output would be empty");
        const int c_out = static_cast<int>(weight->shape().c);
        if (weight->shape().cols() != static_cast<long>(xs.c) * kernel * kernel) {
            throw InvalidInputError("conv2d: weight shape does not match input channels");
        }
        return Shape4{xs.n, c_out, oh, ow};
    }

    // Gather the padded receptive fields of images [n0, n0+nc) into col_.
    void im2col(int n0, int nc) {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        const long xplane = xs.plane();
        const long oplane = os.plane();
        for (int i = 0; i < nc; ++i) {
            const long xbase = static_cast<long>(n0 + i) * xplane;
            const long obase = static_cast<long>(i) * oplane;
            for (int oy = 0; oy < os.h; ++oy) {
                for (int ky = 0; ky < kernel_; ++ky) {
                    const int sy = oy * stride_ - pad_ + ky;
                    const bool row_ok = sy >= 0 && sy < xs.h;
                    for (int kx = 0; kx < kernel_; ++kx) {
                        for (int ci = 0; ci < xs.c; ++ci) {
                            const long crow = (static_cast<long>(ci) * kernel_ + ky) * kernel_ + kx;
                            S* dst = &col_(crow, obase + static_cast<long>(oy) * os.w);
                            if (!row_ok) {
                                for (int ox = 0; ox < os.w; ++ox) dst[static_cast<long>(ox) * col_.rows()] = S(0);
                                continue;
                            }
                            const S* src_row = &x_->val(ci, xbase + static_cast<long>(sy) * xs.w);
                            const long src_stride = x_->val.rows();
                            for (int ox = 0; ox < os.w; ++ox) {
                                const int sx = ox * stride_ - pad_ + kx;
                                dst[static_cast<long>(ox) * col_.rows()] =
                                    (sx >= 0 && sx < xs.w) ? src_row[static_cast<long>(sx) * src_stride] : S(0);
                            }
                        }
                    }
                }
            }
        }
    }

    // Scatter-add dcol_ back into x_->grad for images [n0, n0+nc).
    void col2im_add(int n0, int nc) {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        const long xplane = xs.plane();
        const long oplane = os.plane();
        for (int i = 0; i < nc; ++i) {
            const long xbase = static_cast<long>(n0 + i) * xplane;
            const long obase = static_cast<long>(i) * oplane;
            for (int oy = 0; oy < os.h; ++oy) {
                for (int ky = 0; ky < kernel_; ++ky) {
                    const int sy = oy * stride_ - pad_ + ky;
                    if (sy < 0 || sy >= xs.h) continue;
                    for (int kx = 0; kx < kernel_; ++kx) {
                        for (int ci = 0; ci < xs.c; ++ci) {
                            const long crow = (static_cast<long>(ci) * kernel_ + ky) * kernel_ + kx;
                            const S* src = &dcol_(crow, obase + static_cast<long>(oy) * os.w);
                            S* dst_row = &x_->grad(ci, xbase + static_cast<long>(sy) * xs.w);
                            const long dst_stride = x_->grad.rows();
                            for (int ox = 0; ox < os.w; ++ox) {
                                const int sx = ox * stride_ - pad_ + kx;
                                if (sx >= 0 && sx < xs.w) {
                                    dst_row[static_cast<long>(sx) * dst_stride] +=
                                        src[static_cast<long>(ox) * dcol_.rows()];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Node<S>* x_;
    Node<S>* weight_;
    Node<S>* bias_;
    int kernel_;
    int stride_;
    int pad_;
    MatX<S> col_;
    MatX<S> dcol_;
};

// Fully connected layer on (features x N) vectors.
template <typename S>
class LinearNode final : public Node<S> {
public:
    LinearNode(Node<S>* x, Node<S>* weight, Node<S>* bias)
        : Node<S>(Shape4{x->shape().n, static_cast<int>(weight->shape().c), 1, 1}),
          x_(x),
          weight_(weight),
          bias_(bias) {
        if (x->shape().h != 1 || x->shape().w != 1) {
            throw InvalidInputError("linear: input must be flattened");
        }
        if (weight->shape().cols() != x->shape().c) {
            throw InvalidInputError("linear: weight columns must equal input features");
        }
    }

    void forward() override {
        this->val.noalias() = weight_->val * x_->val;
        if (bias_ != nullptr) this->val.colwise() += bias_->val.col(0);
    }

    void backward() override {
        weight_->grad.noalias() += this->grad * x_->val.transpose();
        if (bias_ != nullptr) bias_->grad.col(0).noalias() += this->grad.rowwise().sum();
        x_->grad.noalias() += weight_->val.transpose() * this->grad;
    }

private:
    Node<S>* x_;
    Node<S>* weight_;
    Node<S>* bias_;
};

// (N,C,H,W) -> (N, C*H*W) column vectors; channel index fastest in memory.
template <typename S>
class FlattenNode final : public Node<S> {
public:
    explicit FlattenNode(Node<S>* x)
        : Node<S>(Shape4{x->shape().n, static_cast<int>(x->shape().size() / x->shape().n), 1, 1}), x_(x) {}

    void forward() override {
        const long per_image = this->shape().c;
        for (int n = 0; n < x_->shape().n; ++n) {
            this->val.col(n) = Eigen::Map<const VecX<S>>(
                x_->val.data() + static_cast<long>(n) * per_image, per_image);
        }
    }

    void backward() override {
        const long per_image = this->shape().c;
        for (int n = 0; n < x_->shape().n; ++n) {
            Eigen::Map<VecX<S>>(x_->grad.data() + static_cast<long>(n) * per_image, per_image) +=
                this->grad.col(n);
        }
    }

private:
    Node<S>* x_;
};

// (N, C*H*W) vectors -> (N,C,H,W); inverse of FlattenNode.
template <typename S>
class ReshapeNode final : public Node<S> {
public:
    ReshapeNode(Node<S>* x, int c, int h, int w) : Node<S>(Shape4{x->shape().n, c, h, w}), x_(x) {
        if (x->shape().h != 1 || x->shape().w != 1 || x->shape().c != static_cast<long>(c) * h * w) {
            throw InvalidInputError("reshape: source must be flat vectors of matching size");
        }
    }

    void forward() override {
        const long per_image = x_->shape().c;
        for (int n = 0; n < this->shape().n; ++n) {
            Eigen::Map<VecX<S>>(this->val.data() + static_cast<long>(n) * per_image, per_image) =
                x_->val.col(n);
        }
    }

    void backward() override {
        const long per_image = x_->shape().c;
        for (int n = 0; n < this->shape().n; ++n) {
            x_->grad.col(n) += Eigen::Map<const VecX<S>>(
                this->grad.data() + static_cast<long>(n) * per_image, per_image);
        }
    }

private:
    Node<S>* x_;
};

template <typename S>
class LeakyReluNode final : public Node<S> {
public:
    LeakyReluNode(Node<S>* x, S slope) : Node<S>(x->shape()), x_(x), slope_(slope) {}
    void forward() override {
        this->val = (x_->val.array() > S(0)).select(x_->val, x_->val * slope_);
    }
    void backward() override {
        x_->grad.array() +=
            (x_->val.array() > S(0)).select(this->grad, this->grad * slope_).array();
    }

private:
    Node<S>* x_;
    S slope_;
};

template <typename S>
class SigmoidNode final : public Node<S> {
public:
    explicit SigmoidNode(Node<S>* x) : Node<S>(x->shape()), x_(x) {}
    void forward() override {
        this->val = (S(1) / (S(1) + (-x_->val.array()).exp())).matrix();
    }
    void backward() override {
        x_->grad.array() += this->grad.array() * this->val.array() * (S(1) - this->val.array());
    }

private:
    Node<S>* x_;
};

template <typename S>
class TanhNode final : public Node<S> {
public:
    explicit TanhNode(Node<S>* x) : Node<S>(x->shape()), x_(x) {}
    void forward() override { this->val = x_->val.array().tanh().matrix(); }
    void backward() override {
        x_->grad.array() += this->grad.array() * (S(1) - this->val.array().square());
    }

private:
    Node<S>* x_;
};

// 2x2 max pooling, stride 2; input height/width must be even.
template <typename S>
class MaxPool2Node final : public Node<S> {
public:
    explicit MaxPool2Node(Node<S>* x)
        : Node<S>(Shape4{x->shape().n, static_cast<int>(x->shape().c), x->shape().h / 2, x->shape().w / 2}),
          x_(x) {
        if (x->shape().h % 2 != 0 || x->shape().w % 2 != 0) {
            throw InvalidInputError("maxpool2: spatial dims must be even");
        }
        argmax_.resize(static_cast<std::size_t>(this->shape().size()));
    }

    void forward() override {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        for (int n = 0; n < os.n; ++n) {
            for (int oy = 0; oy < os.h; ++oy) {
                for (int ox = 0; ox < os.w; ++ox) {
                    const long ocol = static_cast<long>(n) * os.plane() + static_cast<long>(oy) * os.w + ox;
                    const long base = static_cast<long>(n) * xs.plane() + static_cast<long>(2 * oy) * xs.w + 2 * ox;
                    const long cand[4] = {base, base + 1, base + xs.w, base + xs.w + 1};
                    for (int c = 0; c < os.c; ++c) {
                        int best = 0;
                        S best_v = x_->val(c, cand[0]);
                        for (int k = 1; k < 4; ++k) {
                            const S v = x_->val(c, cand[k]);
                            if (v > best_v) {
                                best_v = v;
                                best = k;
                            }
                        }
                        this->val(c, ocol) = best_v;
                        argmax_[static_cast<std::size_t>(ocol * os.c + c)] = cand[best];
                    }
                }
            }
        }
    }

    void backward() override {
        const Shape4& os = this->shape();
        for (long ocol = 0; ocol < os.cols(); ++ocol) {
            for (int c = 0; c < os.c; ++c) {
                x_->grad(c, argmax_[static_cast<std::size_t>(ocol * os.c + c)]) += this->grad(c, ocol);
            }
        }
    }

private:
    Node<S>* x_;
    std::vector<long> argmax_;
};

// 2x nearest-neighbor upsampling.
template <typename S>
class UpsampleNearest2Node final : public Node<S> {
public:
    explicit UpsampleNearest2Node(Node<S>* x)
        : Node<S>(Shape4{x->shape().n, static_cast<int>(x->shape().c), x->shape().h * 2, x->shape().w * 2}),
          x_(x) {}

    void forward() override {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        for (int n = 0; n < os.n; ++n) {
            for (int oy = 0; oy < os.h; ++oy) {
                const long obase = static_cast<long>(n) * os.plane() + static_cast<long>(oy) * os.w;
                const long ibase = static_cast<long>(n) * xs.plane() + static_cast<long>(oy / 2) * xs.w;
                for (int ox = 0; ox < os.w; ++ox) {
                    this->val.col(obase + ox) = x_->val.col(ibase + ox / 2);
                }
            }
        }
    }

    void backward() override {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        for (int n = 0; n < os.n; ++n) {
            for (int oy = 0; oy < os.h; ++oy) {
                const long obase = static_cast<long>(n) * os.plane() + static_cast<long>(oy) * os.w;
                const long ibase = static_cast<long>(n) * xs.plane() + static_cast<long>(oy / 2) * xs.w;
                for (int ox = 0; ox < os.w; ++ox) {
                    x_->grad.col(ibase + ox / 2) += this->grad.col(obase + ox);
                }
            }
        }
    }

private:
    Node<S>* x_;
};

// Channel concatenation of two maps with equal batch and spatial dims.
template <typename S>
class ConcatChannelsNode final : public Node<S> {
public:
    ConcatChannelsNode(Node<S>* a, Node<S>* b)
        : Node<S>(Shape4{a->shape().n, static_cast<int>(a->shape().c + b->shape().c), a->shape().h,
                         a->shape().w}),
          a_(a),
          b_(b) {
        if (a->shape().n != b->shape().n || a->shape().h != b->shape().h ||
            a->shape().w != b->shape().w) {
            throw InvalidInputError("concat: batch/spatial dims must match");
        }
    }

    void forward() override {
        this->val.topRows(a_->shape().c) = a_->val;
        this->val.bottomRows(b_->shape().c) = b_->val;
    }

    void backward() override {
        a_->grad += this->grad.topRows(a_->shape().c);
        b_->grad += this->grad.bottomRows(b_->shape().c);
    }

private:
    Node<S>* a_;
    Node<S>* b_;
};

// Elementwise binary operations on same-shape nodes.
enum class BinaryOp { add, sub, mul, div };

template <typename S>
class BinaryNode final : public Node<S> {
public:
    BinaryNode(Node<S>* a, Node<S>* b, BinaryOp op) : Node<S>(a->shape()), a_(a), b_(b), op_(op) {
        detail::check_same(a, b, "binary op");
    }

    void forward() override {
        switch (op_) {
            case BinaryOp::add: this->val = a_->val + b_->val; break;
            case BinaryOp::sub: this->val = a_->val - b_->val; break;
            case BinaryOp::mul: this->val = a_->val.cwiseProduct(b_->val); break;
            case BinaryOp::div: this->val = a_->val.cwiseQuotient(b_->val); break;
        }
    }

    void backward() override {
        switch (op_) {
            case BinaryOp::add:
                a_->grad += this->grad;
                b_->grad += this->grad;
                break;
            case BinaryOp::sub:
                a_->grad += this->grad;
                b_->grad -= this->grad;
                break;
            case BinaryOp::mul:
                a_->grad += this->grad.cwiseProduct(b_->val);
                b_->grad += this->grad.cwiseProduct(a_->val);
                break;
            case BinaryOp::div:
                a_->grad += this->grad.cwiseQuotient(b_->val);
                b_->grad.array() -=
                    this->grad.array() * this->val.array() / b_->val.array();
                break;
        }
    }

private:
    Node<S>* a_;
    Node<S>* b_;
    BinaryOp op_;
};

// y = a*x + b with scalar constants.
template <typename S>
class AffineNode final : public Node<S> {
public:
    AffineNode(Node<S>* x, S mul, S add) : Node<S>(x->shape()), x_(x), mul_(mul), add_(add) {}
    void forward() override { this->val = (x_->val.array() * mul_ + add_).matrix(); }
    void backward() override { x_->grad += this->grad * mul_; }

private:
    Node<S>* x_;
    S mul_;
    S add_;
};

template <typename S>
class AbsNode final : public Node<S> {
public:
    explicit AbsNode(Node<S>* x) : Node<S>(x->shape()), x_(x) {}
    void forward() override { this->val = x_->val.array().abs().matrix(); }
    void backward() override {
        x_->grad.array() += this->grad.array() * x_->val.array().sign();
    }

private:
    Node<S>* x_;
};

// Mean over every element; produces a 1x1 scalar node.
template <typename S>
class MeanAllNode final : public Node<S> {
public:
    explicit MeanAllNode(Node<S>* x) : Node<S>(Shape4{1, 1, 1, 1}), x_(x) {}
    void forward() override { this->val(0, 0) = x_->val.mean(); }
    void backward() override {
        x_->grad.array() += this->grad(0, 0) / static_cast<S>(x_->val.size());
    }

private:
    Node<S>* x_;
};

template <typename S>
class SumAllNode final : public Node<S> {
public:
    explicit SumAllNode(Node<S>* x) : Node<S>(Shape4{1, 1, 1, 1}), x_(x) {}
    void forward() override { this->val(0, 0) = x_->val.sum(); }
    void backward() override { x_->grad.array() += this->grad(0, 0); }

private:
    Node<S>* x_;
};

// Depthwise valid-region correlation with a fixed (non-learned) kernel;
// the window convolution used by the differentiable SSIM objective.
template <typename S>
class WindowConvValidNode final : public Node<S> {
public:
    WindowConvValidNode(Node<S>* x, const MatX<S>& kernel)
        : Node<S>(Shape4{x->shape().n, static_cast<int>(x->shape().c),
                         x->shape().h - static_cast<int>(kernel.rows()) + 1,
                         x->shape().w - static_cast<int>(kernel.cols()) + 1}),
          x_(x),
          kernel_(kernel) {
        if (this->shape().h <= 0 || this->shape().w <= 0) {
            throw InvalidInputError("window conv: kernel larger than input");
        }
    }

    void forward() override {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        const int k = static_cast<int>(kernel_.rows());
        this->val.setZero();
        for (int n = 0; n < os.n; ++n) {
            for (int oy = 0; oy < os.h; ++oy) {
                for (int ky = 0; ky < k; ++ky) {
                    const long ibase = static_cast<long>(n) * xs.plane() + static_cast<long>(oy + ky) * xs.w;
                    const long obase = static_cast<long>(n) * os.plane() + static_cast<long>(oy) * os.w;
                    for (int kx = 0; kx < k; ++kx) {
                        const S kv = kernel_(ky, kx);
                        for (int ox = 0; ox < os.w; ++ox) {
                            this->val.col(obase + ox) += kv * x_->val.col(ibase + ox + kx);
                        }
                    }
                }
            }
        }
    }

    void backward() override {
        const Shape4& xs = x_->shape();
        const Shape4& os = this->shape();
        const int k = static_cast<int>(kernel_.rows());
        for (int n = 0; n < os.n; ++n) {
            for (int oy = 0; oy < os.h; ++oy) {
                for (int ky = 0; ky < k; ++ky) {
                    const long ibase = static_cast<long>(n) * xs.plane() + static_cast<long>(oy + ky) * xs.w;
                    const long obase = static_cast<long>(n) * os.plane() + static_cast<long>(oy) * os.w;
                    for (int kx = 0; kx < k; ++kx) {
                        const S kv = kernel_(ky, kx);
                        for (int ox = 0; ox < os.w; ++ox) {
                            x_->grad.col(ibase + ox + kx) += kv * this->grad.col(obase + ox);
                        }
                    }
                }
            }
        }
    }

private:
    Node<S>* x_;
    MatX<S> kernel_;
};

// z = mu + exp(0.5 * log_var) .* noise, with externally supplied noise.
template <typename S>
class ReparameterizeNode final : public Node<S> {
public:
    ReparameterizeNode(Node<S>* mu, Node<S>* log_var, Node<S>* noise)
        : Node<S>(mu->shape()), mu_(mu), log_var_(log_var), noise_(noise) {
        detail::check_same(mu, log_var, "reparameterize");
        detail::check_same(mu, noise, "reparameterize");
    }

    void forward() override {
        sd_ = (log_var_->val.array() * S(0.5)).exp().matrix();
        this->val = mu_->val + sd_.cwiseProduct(noise_->val);
    }

    void backward() override {
        mu_->grad += this->grad;
        log_var_->grad.array() +=
            this->grad.array() * noise_->val.array() * sd_.array() * S(0.5);
    }

private:
    Node<S>* mu_;
    Node<S>* log_var_;
    Node<S>* noise_;
    MatX<S> sd_;
};

// Batch-mean KL divergence from N(mu, diag(exp(log_var))) to N(0, I):
// mean over columns of 0.5 * sum_d (mu^2 + exp(lv) - 1 - lv).
template <typename S>
class KlMeanNode final : public Node<S> {
public:
    KlMeanNode(Node<S>* mu, Node<S>* log_var)
        : Node<S>(Shape4{1, 1, 1, 1}), mu_(mu), log_var_(log_var) {
        detail::check_same(mu, log_var, "kl");
    }

    void forward() override {
        const auto mu = mu_->val.array();
        const auto lv = log_var_->val.array();
        this->val(0, 0) =
            S(0.5) * (mu.square() + lv.exp() - S(1) - lv).sum() / static_cast<S>(mu_->val.cols());
    }

    void backward() override {
        const S g = this->grad(0, 0) / static_cast<S>(mu_->val.cols());
        mu_->grad.array() += g * mu_->val.array();
        log_var_->grad.array() += g * S(0.5) * (log_var_->val.array().exp() - S(1));
    }

private:
    Node<S>* mu_;
    Node<S>* log_var_;
};

// Mean binary cross-entropy of a probability map against a constant target,
// clamping probabilities to [eps, 1-eps] before logarithms.
template <typename S>
class BceNode final : public Node<S> {
public:
    BceNode(Node<S>* p, Node<S>* target) : Node<S>(Shape4{1, 1, 1, 1}), p_(p), target_(target) {
        detail::check_same(p, target, "bce");
    }

    void forward() override {
        const auto q = p_->val.array().min(S(1) - kEps).max(kEps);
        const auto t = target_->val.array();
        this->val(0, 0) = -(t * q.log() + (S(1) - t) * (S(1) - q).log()).mean();
    }

    void backward() override {
        const S g = this->grad(0, 0) / static_cast<S>(p_->val.size());
        const auto q = p_->val.array().min(S(1) - kEps).max(kEps);
        const auto t = target_->val.array();
        // d/dq of -(t log q + (1-t) log(1-q)) = (q - t) / (q (1-q));
        // zero where the clamp is active.
        const auto inside =
            (p_->val.array() > kEps && p_->val.array() < S(1) - kEps).template cast<S>();
        p_->grad.array() += inside * (q - t) / (q * (S(1) - q)) * g;
    }

private:
    static constexpr S kEps = S(1e-7);
    Node<S>* p_;
    Node<S>* target_;
};

// Mean over the batch of per-image soft-dice loss with unit smoothing.
template <typename S>
class DiceLossNode final : public Node<S> {
public:
    DiceLossNode(Node<S>* p, Node<S>* target) : Node<S>(Shape4{1, 1, 1, 1}), p_(p), target_(target) {
        detail::check_same(p, target, "dice loss");
        if (p->shape().c != 1) throw InvalidInputError("dice loss: single-channel maps only");
        inter_.resize(p->shape().n);
        total_.resize(p->shape().n);
    }

    void forward() override {
        const Shape4& s = p_->shape();
        S acc = S(0);
        for (int n = 0; n < s.n; ++n) {
            const auto pn = p_->val.middleCols(static_cast<long>(n) * s.plane(), s.plane()).array();
            const auto tn = target_->val.middleCols(static_cast<long>(n) * s.plane(), s.plane()).array();
            inter_[static_cast<std::size_t>(n)] = (pn * tn).sum();
            total_[static_cast<std::size_t>(n)] = pn.sum() + tn.sum();
            acc += S(1) - (S(2) * inter_[static_cast<std::size_t>(n)] + S(1)) /
                              (total_[static_cast<std::size_t>(n)] + S(1));
        }
        this->val(0, 0) = acc / static_cast<S>(s.n);
    }

    void backward() override {
        const Shape4& s = p_->shape();
        const S g = this->grad(0, 0) / static_cast<S>(s.n);
        for (int n = 0; n < s.n; ++n) {
            const S denom = total_[static_cast<std::size_t>(n)] + S(1);
            const S num = S(2) * inter_[static_cast<std::size_t>(n)] + S(1);
            const auto tn = target_->val.middleCols(static_cast<long>(n) * s.plane(), s.plane()).array();
            // d/dp_i [1 - num/denom] = -(2 t_i * denom - num) / denom^2.
            p_->grad.middleCols(static_cast<long>(n) * s.plane(), s.plane()).array() +=
                g * (-(S(2) * tn * denom - num) / (denom * denom));
        }
    }

private:
    Node<S>* p_;
    Node<S>* target_;
    std::vector<S> inter_;
    std::vector<S> total_;
};

// Mean binary focal loss -alpha_t (1 - p_t)^gamma log(p_t) against a
// constant binary target.
template <typename S>
class FocalNode final : public Node<S> {
public:
    FocalNode(Node<S>* p, Node<S>* target, S gamma, S alpha)
        : Node<S>(Shape4{1, 1, 1, 1}), p_(p), target_(target), gamma_(gamma), alpha_(alpha) {
        detail::check_same(p, target, "focal loss");
    }

    void forward() override {
        const auto q = p_->val.array().min(S(1) - kEps).max(kEps);
        const auto t = target_->val.array();
        const auto pt = t * q + (S(1) - t) * (S(1) - q);
        const auto at = t * alpha_ + (S(1) - t) * (S(1) - alpha_);
        this->val(0, 0) = (-at * (S(1) - pt).pow(gamma_) * pt.log()).mean();
    }

    void backward() override {
        const S g = this->grad(0, 0) / static_cast<S>(p_->val.size());
        const auto q = p_->val.array().min(S(1) - kEps).max(kEps);
        const auto t = target_->val.array();
        const auto pt = t * q + (S(1) - t) * (S(1) - q);
        const auto at = t * alpha_ + (S(1) - t) * (S(1) - alpha_);
        // dL/dpt = at * (gamma (1-pt)^(gamma-1) log(pt) - (1-pt)^gamma / pt);
        // dpt/dq = +1 for positives, -1 for negatives.
        MatX<S> dpt;
        if (gamma_ == S(0)) {
            dpt = (at * (-S(1) / pt)).matrix();
        } else {
            dpt = (at * (gamma_ * (S(1) - pt).pow(gamma_ - S(1)) * pt.log() -
                         (S(1) - pt).pow(gamma_) / pt))
                      .matrix();
        }
        const auto inside =
            (p_->val.array() > kEps && p_->val.array() < S(1) - kEps).template cast<S>();
        const auto sign = t * S(2) - S(1);
        p_->grad.array() += inside * dpt.array() * sign * g;
    }

private:
    static constexpr S kEps = S(1e-7);
    Node<S>* p_;
    Node<S>* target_;
    S gamma_;
    S alpha_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

// Owns one computation graph. Build once for a fixed batch shape, then per
// run: load inputs, forward_all(), backward(loss), read gradients.
template <typename S>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    template <typename NodeT, typename... Args>
    NodeT* make(Args&&... args) {
        auto node = std::make_unique<NodeT>(std::forward<Args>(args)...);
        NodeT* raw = node.get();
        nodes_.push_back(std::move(node));
        if constexpr (std::is_same_v<NodeT, ParamNode<S>>) {
            params_.push_back(raw);
        }
        return raw;
    }

    // Convenience builders.
    InputNode<S>* input(Shape4 shape) { return make<InputNode<S>>(shape); }
    ConstNode<S>* constant(Shape4 shape, const MatX<S>& data) {
        return make<ConstNode<S>>(shape, data);
    }
    ParamNode<S>* param(Shape4 shape, const VecX<S>* flat, long offset) {
        return make<ParamNode<S>>(shape, flat, offset);
    }
    Node<S>* conv2d(Node<S>* x, Node<S>* w, Node<S>* b, int kernel, int stride, int pad) {
        return make<Conv2dNode<S>>(x, w, b, kernel, stride, pad);
    }
    Node<S>* linear(Node<S>* x, Node<S>* w, Node<S>* b) { return make<LinearNode<S>>(x, w, b); }
    Node<S>* flatten(Node<S>* x) { return make<FlattenNode<S>>(x); }
    Node<S>* reshape(Node<S>* x, int c, int h, int w) { return make<ReshapeNode<S>>(x, c, h, w); }
    Node<S>* leaky_relu(Node<S>* x, S slope) { return make<LeakyReluNode<S>>(x, slope); }
    Node<S>* sigmoid(Node<S>* x) { return make<SigmoidNode<S>>(x); }
    Node<S>* tanh(Node<S>* x) { return make<TanhNode<S>>(x); }
    Node<S>* maxpool2(Node<S>* x) { return make<MaxPool2Node<S>>(x); }
    Node<S>* upsample2(Node<S>* x) { return make<UpsampleNearest2Node<S>>(x); }
    Node<S>* concat(Node<S>* a, Node<S>* b) { return make<ConcatChannelsNode<S>>(a, b); }
    Node<S>* add(Node<S>* a, Node<S>* b) { return make<BinaryNode<S>>(a, b, BinaryOp::add); }
    Node<S>* sub(Node<S>* a, Node<S>* b) { return make<BinaryNode<S>>(a, b, BinaryOp::sub); }
    Node<S>* mul(Node<S>* a, Node<S>* b) { return make<BinaryNode<S>>(a, b, BinaryOp::mul); }
    Node<S>* div(Node<S>* a, Node<S>* b) { return make<BinaryNode<S>>(a, b, BinaryOp::div); }
    Node<S>* affine(Node<S>* x, S mul, S add) { return make<AffineNode<S>>(x, mul, add); }
    Node<S>* abs(Node<S>* x) { return make<AbsNode<S>>(x); }
    Node<S>* mean_all(Node<S>* x) { return make<MeanAllNode<S>>(x); }
    Node<S>* sum_all(Node<S>* x) { return make<SumAllNode<S>>(x); }
    Node<S>* window_conv_valid(Node<S>* x, const MatX<S>& kernel) {
        return make<WindowConvValidNode<S>>(x, kernel);
    }
    Node<S>* reparameterize(Node<S>* mu, Node<S>* log_var, Node<S>* noise) {
        return make<ReparameterizeNode<S>>(mu, log_var, noise);
    }
    Node<S>* kl_mean(Node<S>* mu, Node<S>* log_var) { return make<KlMeanNode<S>>(mu, log_var); }
    Node<S>* bce(Node<S>* p, Node<S>* target) { return make<BceNode<S>>(p, target); }
    Node<S>* dice_loss(Node<S>* p, Node<S>* target) { return make<DiceLossNode<S>>(p, target); }
    Node<S>* focal(Node<S>* p, Node<S>* target, S gamma, S alpha) {
        return make<FocalNode<S>>(p, target, gamma, alpha);
    }

    void forward_all() {
        for (auto& node : nodes_) node->forward();
    }

    // Zeroes all gradients, seeds d(loss)/d(loss) = 1, and propagates in
    // reverse creation order. `loss` must be a 1x1 node of this tape.
    void backward(Node<S>* loss) {
        if (loss->val.size() != 1) throw InvalidInputError("backward: loss must be scalar");
        for (auto& node : nodes_) node->grad.setZero();
        loss->grad(0, 0) = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)->backward();
    }

    // Accumulates every ParamNode gradient into the flat vector (which must
    // be the same length as the parameter vector the nodes are bound to).
    void store_grads(VecX<S>& flat_grads) const {
        for (const ParamNode<S>* p : params_) {
            Eigen::Map<MatX<S>>(flat_grads.data() + p->offset(), p->grad.rows(), p->grad.cols()) +=
                p->grad;
        }
    }

    // As above, but gathers only the nodes bound to `owner`. Lets a graph mix
    // trainable parameters with a second, frozen parameter vector whose
    // gradients are simply never collected.
    void store_grads(const VecX<S>* owner, VecX<S>& flat_grads) const {
        for (const ParamNode<S>* p : params_) {
            if (p->bound_vector() != owner) continue;
            Eigen::Map<MatX<S>>(flat_grads.data() + p->offset(), p->grad.rows(), p->grad.cols()) +=
                p->grad;
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node<S>>> nodes_;
    std::vector<ParamNode<S>*> params_;
};

}  // namespace glss::nn
