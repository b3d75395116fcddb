#include "glss/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "glss/common.hpp"

namespace glss {

namespace {

void check_shape(int height, int width, int channels) {
    if (height <= 0 || width <= 0 || channels <= 0) {
        throw InvalidInputError("ImageTensor: dimensions must be positive, got " +
                                std::to_string(height) + "x" + std::to_string(width) + "x" +
                                std::to_string(channels));
    }
}

}  // namespace

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
    check_shape(height, width, channels);
    if (!(fill >= 0.0 && fill <= 1.0)) {
        throw InvalidInputError("ImageTensor: fill value outside [0,1]: " + std::to_string(fill));
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_shape(height, width, channels);
    if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
        throw InvalidInputError("ImageTensor: data size " + std::to_string(data_.size()) +
                                " does not match shape");
    }
    validate();
}

void ImageTensor::validate() const {
    for (const double v : data_) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw InvalidInputError("ImageTensor: value outside [0,1]: " + std::to_string(v));
        }
    }
}

MaskTensor::MaskTensor(int height, int width, std::uint8_t fill)
    : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
        throw InvalidInputError("MaskTensor: dimensions must be positive");
    }
    if (fill > 1) throw InvalidInputError("MaskTensor: fill must be 0 or 1");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
}

MaskTensor::MaskTensor(int height, int width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
    if (height <= 0 || width <= 0) {
        throw InvalidInputError("MaskTensor: dimensions must be positive");
    }
    if (data_.size() != static_cast<std::size_t>(height) * width) {
        throw InvalidInputError("MaskTensor: data size does not match shape");
    }
    for (const std::uint8_t v : data_) {
        if (v > 1) throw InvalidInputError("MaskTensor: values must be 0 or 1");
    }
}

long MaskTensor::count() const {
    long n = 0;
    for (const std::uint8_t v : data_) n += v;
    return n;
}

std::vector<double> clamp01(std::vector<double> values) {
    for (double& v : values) v = std::clamp(v, 0.0, 1.0);
    return values;
}

}  // namespace glss
