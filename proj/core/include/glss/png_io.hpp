#pragma once

// 8-bit single-channel PNG reading and writing; the storage format for
// dataset directories.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace glss {

struct Gray8Image {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // row-major, height*width entries
};

// Reads an 8-bit grayscale PNG. Throws InvalidInputError (naming the path)
// when the file is missing, is not a PNG, or is not single-channel
// grayscale. Sub-8-bit grayscale is expanded; 16-bit is rejected.
Gray8Image read_png_gray8(const std::filesystem::path& path);

// Writes an 8-bit grayscale PNG; creates parent directories.
void write_png_gray8(const std::filesystem::path& path, const Gray8Image& image);

}  // namespace glss
