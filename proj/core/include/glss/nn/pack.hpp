#pragma once

#include <vector>

#include "glss/common.hpp"
#include "glss/image.hpp"
#include "glss/nn/engine.hpp"

namespace glss::nn {

// Feature-map matrices are laid out channels x (N*H*W) with column
// j = n*H*W + y*W + x. Single-channel images therefore pack as contiguous
// row-0 segments.

template <typename S>
void pack_image(const ImageTensor& img, MatX<S>& out, long image_index) {
    if (img.channels() != 1) throw InvalidInputError("pack_image: expected single channel");
    const long plane = static_cast<long>(img.height()) * img.width();
    const double* src = img.data().data();
    for (long i = 0; i < plane; ++i) {
        out(0, image_index * plane + i) = static_cast<S>(src[i]);
    }
}

template <typename S>
void pack_mask(const MaskTensor& mask, MatX<S>& out, long image_index) {
    const long plane = static_cast<long>(mask.height()) * mask.width();
    const std::uint8_t* src = mask.data().data();
    for (long i = 0; i < plane; ++i) {
        out(0, image_index * plane + i) = static_cast<S>(src[i]);
    }
}

// Extracts image `image_index` from a single-channel feature matrix, clamping
// float round-off just outside [0,1].
template <typename S>
ImageTensor unpack_image(const MatX<S>& m, long image_index, int h, int w) {
    const long plane = static_cast<long>(h) * w;
    std::vector<double> pix(static_cast<std::size_t>(plane));
    for (long i = 0; i < plane; ++i) {
        const double v = static_cast<double>(m(0, image_index * plane + i));
        pix[static_cast<std::size_t>(i)] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
    return ImageTensor(h, w, 1, pix);
}

}  // namespace glss::nn
