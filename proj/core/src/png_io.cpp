#include "glss/png_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>

#include <png.h>

#include "glss/common.hpp"

namespace glss {

namespace {

// libpng reports errors through longjmp; keep every C++ object with a
// destructor constructed before the setjmp anchor so unwinding stays defined.

struct FileCloser {
    std::FILE* fp = nullptr;
    ~FileCloser() {
        if (fp != nullptr) std::fclose(fp);
    }
};

struct ReadCleanup {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~ReadCleanup() {
        if (png != nullptr) png_destroy_read_struct(&png, info != nullptr ? &info : nullptr, nullptr);
    }
};

struct WriteCleanup {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~WriteCleanup() {
        if (png != nullptr) png_destroy_write_struct(&png, info != nullptr ? &info : nullptr);
    }
};

}  // namespace

Gray8Image read_png_gray8(const std::filesystem::path& path) {
    Gray8Image out;
    std::vector<png_bytep> rows;
    ReadCleanup cleanup;
    FileCloser file;

    file.fp = std::fopen(path.string().c_str(), "rb");
    if (file.fp == nullptr) {
        throw InvalidInputError("cannot open PNG file: " + path.string());
    }
    png_byte header[8];
    if (std::fread(header, 1, 8, file.fp) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw InvalidInputError("not a PNG file: " + path.string());
    }

    cleanup.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (cleanup.png == nullptr) throw Error("png_create_read_struct failed");
    cleanup.info = png_create_info_struct(cleanup.png);
    if (cleanup.info == nullptr) throw Error("png_create_info_struct failed");

    if (setjmp(png_jmpbuf(cleanup.png))) {
        throw InvalidInputError("failed to decode PNG file: " + path.string());
    }

    png_init_io(cleanup.png, file.fp);
    png_set_sig_bytes(cleanup.png, 8);
    png_read_info(cleanup.png, cleanup.info);

    const png_uint_32 width = png_get_image_width(cleanup.png, cleanup.info);
    const png_uint_32 height = png_get_image_height(cleanup.png, cleanup.info);
    const int color_type = png_get_color_type(cleanup.png, cleanup.info);
    const int bit_depth = png_get_bit_depth(cleanup.png, cleanup.info);

    if (color_type != PNG_COLOR_TYPE_GRAY) {
        throw InvalidInputError("PNG is not single-channel grayscale: " + path.string());
    }
    if (bit_depth > 8) {
        throw InvalidInputError("PNG bit depth " + std::to_string(bit_depth) +
                                " unsupported (expected 8-bit grayscale): " + path.string());
    }
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(cleanup.png);
    png_read_update_info(cleanup.png, cleanup.info);

    if (height == 0 || width == 0) {
        throw InvalidInputError("PNG has an empty image: " + path.string());
    }

    out.height = static_cast<int>(height);
    out.width = static_cast<int>(width);
    out.pixels.assign(static_cast<std::size_t>(height) * width, 0);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) {
        rows[y] = out.pixels.data() + static_cast<std::size_t>(y) * width;
    }
    png_read_image(cleanup.png, rows.data());
    png_read_end(cleanup.png, nullptr);
    return out;
}

void write_png_gray8(const std::filesystem::path& path, const Gray8Image& image) {
    if (image.height <= 0 || image.width <= 0 ||
        image.pixels.size() !=
            static_cast<std::size_t>(image.height) * static_cast<std::size_t>(image.width)) {
        throw InvalidInputError("write_png_gray8: pixel buffer does not match dimensions");
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());

    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    WriteCleanup cleanup;
    FileCloser file;

    file.fp = std::fopen(path.string().c_str(), "wb");
    if (file.fp == nullptr) {
        throw InvalidInputError("cannot open PNG file for writing: " + path.string());
    }

    cleanup.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (cleanup.png == nullptr) throw Error("png_create_write_struct failed");
    cleanup.info = png_create_info_struct(cleanup.png);
    if (cleanup.info == nullptr) throw Error("png_create_info_struct failed");

    if (setjmp(png_jmpbuf(cleanup.png))) {
        throw Error("failed to encode PNG file: " + path.string());
    }

    png_init_io(cleanup.png, file.fp);
    png_set_IHDR(cleanup.png, cleanup.info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(cleanup.png, cleanup.info);

    // pixels is read-only here; libpng's row API just lacks const.
    auto* base = const_cast<png_bytep>(image.pixels.data());
    for (int y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] = base + static_cast<std::size_t>(y) * image.width;
    }
    png_write_image(cleanup.png, rows.data());
    png_write_end(cleanup.png, nullptr);
}

}  // namespace glss
