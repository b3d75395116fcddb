#pragma once

// Pixel carriers: real-valued images in [0, 1] and binary masks. These are
// the interchange types between data generation, metrics, and the models.

#include <cstdint>
#include <vector>

namespace glss {

// H x W x C image, row-major with channel fastest; every value must lie in
// [0, 1] and be finite. Clamping is never implicit: callers that may produce
// out-of-range values clamp explicitly before construction.
class ImageTensor {
public:
    ImageTensor() = default;

    // Constant-filled image. Throws InvalidInputError on bad shape or fill.
    ImageTensor(int height, int width, int channels, double fill = 0.0);

    // Adopts `data` (size must be height*width*channels); validates range.
    ImageTensor(int height, int width, int channels, std::vector<double> data);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    bool empty() const { return data_.empty(); }

    double at(int y, int x, int c = 0) const {
        return data_[static_cast<std::size_t>((y * width_ + x) * channels_ + c)];
    }
    double& at(int y, int x, int c = 0) {
        return data_[static_cast<std::size_t>((y * width_ + x) * channels_ + c)];
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    // Re-checks the range invariant after in-place mutation through data().
    void validate() const;

    bool same_shape(const ImageTensor& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

// H x W binary mask; values are exactly 0 or 1.
class MaskTensor {
public:
    MaskTensor() = default;
    MaskTensor(int height, int width, std::uint8_t fill = 0);
    MaskTensor(int height, int width, std::vector<std::uint8_t> data);

    int height() const { return height_; }
    int width() const { return width_; }
    bool empty() const { return data_.empty(); }

    std::uint8_t at(int y, int x) const {
        return data_[static_cast<std::size_t>(y * width_ + x)];
    }
    std::uint8_t& at(int y, int x) {
        return data_[static_cast<std::size_t>(y * width_ + x)];
    }

    const std::vector<std::uint8_t>& data() const { return data_; }

    // Number of set pixels.
    long count() const;

    bool same_shape(const MaskTensor& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

// Clamps every element of `values` into [0, 1]; the explicit step callers
// run before constructing an ImageTensor from raw arithmetic.
std::vector<double> clamp01(std::vector<double> values);

}  // namespace glss
