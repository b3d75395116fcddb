#pragma once

// Deterministic image mathematics: Sobel edges, windowed structural
// similarity, norm losses, segmentation losses, and overlap metrics.
// Everything here is pure, 64-bit, and safe to call from any worker.

#include <Eigen/Core>

#include "glss/image.hpp"

namespace glss::imgmath {

// Parameters of the windowed structural-similarity index.
struct SSIMParams {
    int window_size = 11;          // odd
    double window_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;    // L
    double alpha = 1.0;            // luminance exponent
    double beta = 1.0;             // contrast exponent
    double gamma = 1.0;            // structure exponent

    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
    double c3() const { return c2() / 2.0; }
    bool simplified() const { return alpha == 1.0 && beta == 1.0 && gamma == 1.0; }
    void validate() const;
};

// Parameters of the binary focal loss.
struct FocalParams {
    double gamma = 2.0;   // >= 0
    double alpha = 0.75;  // in (0, 1); weight of the positive class
    void validate() const;
};

// Largest Sobel gradient magnitude attainable on a [0,1] image
// (2*sqrt(5), attained by an L-shaped step); used to rescale magnitudes
// into [0, 1].
inline constexpr double kSobelMaxMagnitude = 4.47213595499957939282;

// Per-pixel Sobel gradient magnitude, replicate padding, rescaled to [0,1].
// Multi-channel inputs are averaged to one channel first.
ImageTensor sobel_edges(const ImageTensor& img);

// Normalized 2-D Gaussian window (entries sum to 1). size must be odd.
Eigen::MatrixXd gaussian_window(int size, double sigma);

// Mean windowed SSIM over all valid window positions and channels.
double ssim(const ImageTensor& x, const ImageTensor& y, const SSIMParams& p = {});

// 1 - ssim(x, y, p).
double ssim_loss(const ImageTensor& x, const ImageTensor& y, const SSIMParams& p = {});

// Mean squared / absolute per-element difference.
double mse(const ImageTensor& x, const ImageTensor& y);
double mae(const ImageTensor& x, const ImageTensor& y);

// Overlap metrics; both are 1.0 when both masks are empty.
double iou(const MaskTensor& pred, const MaskTensor& gt);
double dice(const MaskTensor& pred, const MaskTensor& gt);

// Segmentation losses over a probability map (single-channel image in
// [0,1]; probabilities are clamped to [1e-7, 1-1e-7] before logarithms).
double bce_loss(const ImageTensor& pred_prob, const MaskTensor& gt);
double dice_loss(const ImageTensor& pred_prob, const MaskTensor& gt);
double focal_loss(const ImageTensor& pred_prob, const MaskTensor& gt, const FocalParams& fp = {});

// Closed-form KL divergence from N(mu, diag(exp(log_var))) to N(0, I),
// summed over dimensions.
double kl_diag_gaussian(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var);

}  // namespace glss::imgmath
