#include "glss/imgmath.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "glss/common.hpp"

namespace glss::imgmath {

namespace {

constexpr double kProbEps = 1e-7;  // clamp bound before logarithms

void check_same_shape(const ImageTensor& x, const ImageTensor& y, const char* op) {
    if (!x.same_shape(y)) {
        throw InvalidInputError(std::string(op) + ": shape mismatch " +
                                std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                "x" + std::to_string(x.channels()) + " vs " +
                                std::to_string(y.height()) + "x" + std::to_string(y.width()) +
                                "x" + std::to_string(y.channels()));
    }
}

void check_mask_pair(const MaskTensor& a, const MaskTensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw InvalidInputError(std::string(op) + ": mask shape mismatch");
    }
}

void check_prob_vs_mask(const ImageTensor& p, const MaskTensor& gt, const char* op) {
    if (p.channels() != 1) {
        throw InvalidInputError(std::string(op) + ": probability map must be single-channel");
    }
    if (p.height() != gt.height() || p.width() != gt.width()) {
        throw InvalidInputError(std::string(op) + ": probability/mask shape mismatch");
    }
}

// Mean over channels as a single-channel plane.
Eigen::MatrixXd to_gray_plane(const ImageTensor& img) {
    Eigen::MatrixXd plane(img.height(), img.width());
    const double inv_c = 1.0 / img.channels();
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            double acc = 0.0;
            for (int c = 0; c < img.channels(); ++c) acc += img.at(y, x, c);
            plane(y, x) = acc * inv_c;
        }
    }
    return plane;
}

Eigen::MatrixXd channel_plane(const ImageTensor& img, int c) {
    Eigen::MatrixXd plane(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) plane(y, x) = img.at(y, x, c);
    }
    return plane;
}

// Valid-region correlation of `plane` with `window` (no padding).
Eigen::MatrixXd valid_filter(const Eigen::MatrixXd& plane, const Eigen::MatrixXd& window) {
    const int k = static_cast<int>(window.rows());
    const int oh = static_cast<int>(plane.rows()) - k + 1;
    const int ow = static_cast<int>(plane.cols()) - k + 1;
    Eigen::MatrixXd out(oh, ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            out(y, x) = (plane.block(y, x, k, k).array() * window.array()).sum();
        }
    }
    return out;
}

double ssim_one_channel(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                        const Eigen::MatrixXd& window, const SSIMParams& p) {
    const Eigen::MatrixXd mu_x = valid_filter(x, window);
    const Eigen::MatrixXd mu_y = valid_filter(y, window);
    const Eigen::MatrixXd xx = valid_filter(x.cwiseProduct(x), window);
    const Eigen::MatrixXd yy = valid_filter(y.cwiseProduct(y), window);
    const Eigen::MatrixXd xy = valid_filter(x.cwiseProduct(y), window);

    const Eigen::ArrayXXd mx = mu_x.array();
    const Eigen::ArrayXXd my = mu_y.array();
    const Eigen::ArrayXXd var_x = (xx.array() - mx * mx).max(0.0);
    const Eigen::ArrayXXd var_y = (yy.array() - my * my).max(0.0);
    const Eigen::ArrayXXd cov = xy.array() - mx * my;

    const double c1 = p.c1();
    const double c2 = p.c2();
    if (p.simplified()) {
        const Eigen::ArrayXXd num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        const Eigen::ArrayXXd den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        return (num / den).mean();
    }
    const double c3 = p.c3();
    const Eigen::ArrayXXd sd_x = var_x.sqrt();
    const Eigen::ArrayXXd sd_y = var_y.sqrt();
    const Eigen::ArrayXXd lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
    const Eigen::ArrayXXd con = (2.0 * sd_x * sd_y + c2) / (var_x + var_y + c2);
    const Eigen::ArrayXXd str = (cov + c3) / (sd_x * sd_y + c3);
    return (lum.pow(p.alpha) * con.pow(p.beta) * str.pow(p.gamma)).mean();
}

}  // namespace

void SSIMParams::validate() const {
    if (window_size <= 0 || window_size % 2 == 0) {
        throw InvalidInputError("SSIMParams: window_size must be odd and positive, got " +
                                std::to_string(window_size));
    }
    if (!(window_sigma > 0.0)) throw InvalidInputError("SSIMParams: window_sigma must be positive");
    if (!(c1() > 0.0) || !(c2() > 0.0) || !(c3() > 0.0)) {
        throw InvalidInputError("SSIMParams: C1, C2, C3 must be strictly positive");
    }
    if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0)) {
        throw InvalidInputError("SSIMParams: exponents must be positive");
    }
}

void FocalParams::validate() const {
    if (!(gamma >= 0.0)) throw InvalidInputError("FocalParams: gamma must be non-negative");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInputError("FocalParams: alpha must be in (0,1)");
}

ImageTensor sobel_edges(const ImageTensor& img) {
    if (img.height() < 3 || img.width() < 3) {
        throw InvalidInputError("sobel_edges: image must be at least 3x3, got " +
                                std::to_string(img.height()) + "x" + std::to_string(img.width()));
    }
    const Eigen::MatrixXd plane = to_gray_plane(img);
    const int h = img.height();
    const int w = img.width();
    auto clamp_y = [h](int y) { return std::clamp(y, 0, h - 1); };
    auto clamp_x = [w](int x) { return std::clamp(x, 0, w - 1); };

    std::vector<double> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Replicate-padded 3x3 neighborhood.
            const double p00 = plane(clamp_y(y - 1), clamp_x(x - 1));
            const double p01 = plane(clamp_y(y - 1), x);
            const double p02 = plane(clamp_y(y - 1), clamp_x(x + 1));
            const double p10 = plane(y, clamp_x(x - 1));
            const double p12 = plane(y, clamp_x(x + 1));
            const double p20 = plane(clamp_y(y + 1), clamp_x(x - 1));
            const double p21 = plane(clamp_y(y + 1), x);
            const double p22 = plane(clamp_y(y + 1), clamp_x(x + 1));
            const double gx = (p02 + 2.0 * p12 + p22) - (p00 + 2.0 * p10 + p20);
            const double gy = (p20 + 2.0 * p21 + p22) - (p00 + 2.0 * p01 + p02);
            out[static_cast<std::size_t>(y) * w + x] =
                std::sqrt(gx * gx + gy * gy) / kSobelMaxMagnitude;
        }
    }
    return ImageTensor(h, w, 1, std::move(out));
}

Eigen::MatrixXd gaussian_window(int size, double sigma) {
    if (size <= 0 || size % 2 == 0) {
        throw InvalidInputError("gaussian_window: size must be odd and positive, got " +
                                std::to_string(size));
    }
    if (!(sigma > 0.0)) throw InvalidInputError("gaussian_window: sigma must be positive");
    const int half = size / 2;
    Eigen::VectorXd axis(size);
    for (int i = 0; i < size; ++i) {
        const double d = static_cast<double>(i - half);
        axis(i) = std::exp(-(d * d) / (2.0 * sigma * sigma));
    }
    Eigen::MatrixXd window = axis * axis.transpose();
    window /= window.sum();
    return window;
}

double ssim(const ImageTensor& x, const ImageTensor& y, const SSIMParams& p) {
    check_same_shape(x, y, "ssim");
    p.validate();
    if (x.height() < p.window_size || x.width() < p.window_size) {
        throw InvalidInputError("ssim: window size " + std::to_string(p.window_size) +
                                " does not fit image " + std::to_string(x.height()) + "x" +
                                std::to_string(x.width()));
    }
    const Eigen::MatrixXd window = gaussian_window(p.window_size, p.window_sigma);
    double acc = 0.0;
    for (int c = 0; c < x.channels(); ++c) {
        acc += ssim_one_channel(channel_plane(x, c), channel_plane(y, c), window, p);
    }
    return acc / x.channels();
}

double ssim_loss(const ImageTensor& x, const ImageTensor& y, const SSIMParams& p) {
    return 1.0 - ssim(x, y, p);
}

double mse(const ImageTensor& x, const ImageTensor& y) {
    check_same_shape(x, y, "mse");
    double acc = 0.0;
    const auto& a = x.data();
    const auto& b = y.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

double mae(const ImageTensor& x, const ImageTensor& y) {
    check_same_shape(x, y, "mae");
    double acc = 0.0;
    const auto& a = x.data();
    const auto& b = y.data();
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

double iou(const MaskTensor& pred, const MaskTensor& gt) {
    check_mask_pair(pred, gt, "iou");
    long inter = 0;
    long uni = 0;
    const auto& a = pred.data();
    const auto& b = gt.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] & b[i]);
        uni += (a[i] | b[i]);
    }
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double dice(const MaskTensor& pred, const MaskTensor& gt) {
    check_mask_pair(pred, gt, "dice");
    long inter = 0;
    long total = 0;
    const auto& a = pred.data();
    const auto& b = gt.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] & b[i]);
        total += a[i] + b[i];
    }
    if (total == 0) return 1.0;  // both empty
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double bce_loss(const ImageTensor& pred_prob, const MaskTensor& gt) {
    check_prob_vs_mask(pred_prob, gt, "bce_loss");
    const auto& p = pred_prob.data();
    const auto& g = gt.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], kProbEps, 1.0 - kProbEps);
        acc += g[i] ? -std::log(q) : -std::log(1.0 - q);
    }
    return acc / static_cast<double>(p.size());
}

double dice_loss(const ImageTensor& pred_prob, const MaskTensor& gt) {
    check_prob_vs_mask(pred_prob, gt, "dice_loss");
    const auto& p = pred_prob.data();
    const auto& g = gt.data();
    double inter = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * g[i];
        total += p[i] + g[i];
    }
    // Soft dice with smoothing constant 1.0 in numerator and denominator.
    return 1.0 - (2.0 * inter + 1.0) / (total + 1.0);
}

double focal_loss(const ImageTensor& pred_prob, const MaskTensor& gt, const FocalParams& fp) {
    check_prob_vs_mask(pred_prob, gt, "focal_loss");
    fp.validate();
    const auto& p = pred_prob.data();
    const auto& g = gt.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], kProbEps, 1.0 - kProbEps);
        const double pt = g[i] ? q : 1.0 - q;
        const double at = g[i] ? fp.alpha : 1.0 - fp.alpha;
        acc += -at * std::pow(1.0 - pt, fp.gamma) * std::log(pt);
    }
    return acc / static_cast<double>(p.size());
}

double kl_diag_gaussian(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var) {
    if (mu.size() != log_var.size()) {
        throw InvalidInputError("kl_diag_gaussian: length mismatch " + std::to_string(mu.size()) +
                                " vs " + std::to_string(log_var.size()));
    }
    for (Eigen::Index i = 0; i < log_var.size(); ++i) {
        if (!std::isfinite(log_var(i)) || !std::isfinite(mu(i))) {
            throw InvalidInputError("kl_diag_gaussian: non-finite input");
        }
    }
    return 0.5 * (mu.array().square() + log_var.array().exp() - 1.0 - log_var.array()).sum();
}

}  // namespace glss::imgmath
