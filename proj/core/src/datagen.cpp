#include "glss/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "glss/png_io.hpp"

namespace fs = std::filesystem;

namespace glss {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

ShapeKind shape_kind_from_string(const std::string& s) {
    if (s == "ellipse") return ShapeKind::ellipse;
    if (s == "capsule") return ShapeKind::capsule;
    if (s == "polygon") return ShapeKind::polygon;
    throw InvalidInputError("unknown shape kind: " + s);
}

std::string to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::ellipse: return "ellipse";
        case ShapeKind::capsule: return "capsule";
        case ShapeKind::polygon: return "polygon";
    }
    throw InvalidInputError("unknown shape kind enum value");
}

bool DomainShift::is_identity() const {
    return gamma == 1.0 && brightness_offset == 0.0 && blur_sigma == 0.0 && noise_std == 0.0;
}

void DomainShift::validate() const {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        throw InvalidInputError("domain shift gamma must be positive");
    }
    if (!std::isfinite(brightness_offset)) {
        throw InvalidInputError("domain shift brightness offset must be finite");
    }
    if (!(blur_sigma >= 0.0) || !std::isfinite(blur_sigma)) {
        throw InvalidInputError("domain shift blur sigma must be non-negative");
    }
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
        throw InvalidInputError("domain shift noise std must be non-negative");
    }
}

void SynthConfig::validate() const {
    if (n_source_train < 1 || n_source_test < 1 || n_target_test < 1) {
        throw InvalidInputError("every split must have a positive image count");
    }
    if (image_size < 8) throw InvalidInputError("image_size must be at least 8");
    if (shape_palette.empty()) throw InvalidInputError("shape palette must not be empty");
    for (std::size_t i = 0; i < shape_palette.size(); ++i) {
        for (std::size_t j = i + 1; j < shape_palette.size(); ++j) {
            if (shape_palette[i] == shape_palette[j]) {
                throw InvalidInputError("shape palette contains duplicates");
            }
        }
    }
    if (!(0.0 <= skin_intensity_lo && skin_intensity_lo < skin_intensity_hi &&
          skin_intensity_hi <= 1.0)) {
        throw InvalidInputError("skin intensity range must satisfy 0 <= lo < hi <= 1");
    }
    if (!(background_base >= 0.0) || !(background_amplitude > 0.0) ||
        background_base + background_amplitude > 1.0) {
        throw InvalidInputError(
            "background base/amplitude must satisfy base >= 0, amplitude > 0, base+amplitude <= 1");
    }
    const double bg_lo = background_base;
    const double bg_hi = background_base + background_amplitude;
    const double overlap_lo = std::max(bg_lo, skin_intensity_lo);
    const double overlap_hi = std::min(bg_hi, skin_intensity_hi);
    if (!(overlap_lo < overlap_hi)) {
        throw InvalidInputError("skin and background intensity ranges must overlap");
    }
    const bool bg_outside = bg_lo < skin_intensity_lo || bg_hi > skin_intensity_hi;
    const bool skin_outside = skin_intensity_lo < bg_lo || skin_intensity_hi > bg_hi;
    if (!bg_outside || !skin_outside) {
        throw InvalidInputError(
            "skin and background intensity ranges must overlap only partially");
    }
    target_shift.validate();
    if (target_shift.is_identity()) {
        throw InvalidInputError("target domain shift must not be the identity");
    }
}

// ---------------------------------------------------------------------------
// Scene rendering
// ---------------------------------------------------------------------------

namespace {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Signed distance approximations; negative inside. Accuracy matters only
// within the one-pixel anti-aliasing band.

double ellipse_sdf(Vec2 p, Vec2 center, double a, double b, double rot) {
    const double c = std::cos(rot);
    const double s = std::sin(rot);
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    const double lx = (c * dx + s * dy) / a;
    const double ly = (-s * dx + c * dy) / b;
    return (std::sqrt(lx * lx + ly * ly) - 1.0) * std::min(a, b);
}

double capsule_sdf(Vec2 p, Vec2 center, double half_len, double radius, double rot) {
    const double c = std::cos(rot);
    const double s = std::sin(rot);
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    const double t = std::clamp(lx, -half_len, half_len);
    const double ex = lx - t;
    return std::sqrt(ex * ex + ly * ly) - radius;
}

// Exact signed distance to a simple polygon (positive outside).
double polygon_sdf(Vec2 p, const std::vector<Vec2>& v) {
    const std::size_t n = v.size();
    double d = (p.x - v[0].x) * (p.x - v[0].x) + (p.y - v[0].y) * (p.y - v[0].y);
    double sign = 1.0;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double ex = v[j].x - v[i].x;
        const double ey = v[j].y - v[i].y;
        const double wx = p.x - v[i].x;
        const double wy = p.y - v[i].y;
        const double t = std::clamp((wx * ex + wy * ey) / (ex * ex + ey * ey), 0.0, 1.0);
        const double bx = wx - ex * t;
        const double by = wy - ey * t;
        d = std::min(d, bx * bx + by * by);
        const bool c1 = p.y >= v[i].y;
        const bool c2 = p.y < v[j].y;
        const bool c3 = ex * wy > ey * wx;
        if ((c1 && c2 && c3) || (!c1 && !c2 && !c3)) sign = -sign;
    }
    return sign * std::sqrt(d);
}

struct Blob {
    ShapeKind kind = ShapeKind::ellipse;
    Vec2 center;
    double rot = 0.0;
    // ellipse: a/b; capsule: half_len/radius; polygon: vertex list
    double a = 0.0;
    double b = 0.0;
    std::vector<Vec2> vertices;
    double base_intensity = 0.5;
    Vec2 gradient_dir;
    double gradient_slope = 0.0;

    double sdf(Vec2 p) const {
        switch (kind) {
            case ShapeKind::ellipse: return ellipse_sdf(p, center, a, b, rot);
            case ShapeKind::capsule: return capsule_sdf(p, center, a, b, rot);
            case ShapeKind::polygon: return polygon_sdf(p, vertices);
        }
        return 0.0;
    }

    double intensity(Vec2 p, double size) const {
        return base_intensity +
               gradient_slope *
                   ((p.x - center.x) * gradient_dir.x + (p.y - center.y) * gradient_dir.y) / size;
    }
};

// Bilinearly interpolated grid of uniform values; control points sit at the
// image corners and evenly between.
struct ValueNoise {
    int grid = 2;  // control points per side
    std::vector<double> values;

    static ValueNoise draw(int grid, Rng& rng) {
        ValueNoise noise;
        noise.grid = grid;
        noise.values.resize(static_cast<std::size_t>(grid) * grid);
        for (auto& v : noise.values) v = rng.uniform01();
        return noise;
    }

    double at(double fx, double fy) const {  // fx, fy in [0, 1]
        const double gx = fx * (grid - 1);
        const double gy = fy * (grid - 1);
        const int x0 = std::min(static_cast<int>(gx), grid - 2);
        const int y0 = std::min(static_cast<int>(gy), grid - 2);
        const double tx = gx - x0;
        const double ty = gy - y0;
        const auto v = [&](int y, int x) {
            return values[static_cast<std::size_t>(y) * grid + x];
        };
        return (1.0 - ty) * ((1.0 - tx) * v(y0, x0) + tx * v(y0, x0 + 1)) +
               ty * ((1.0 - tx) * v(y0 + 1, x0) + tx * v(y0 + 1, x0 + 1));
    }
};

std::pair<ImageTensor, MaskTensor> render_scene_once(const SynthConfig& cfg, Rng& rng) {
    const int size = cfg.image_size;
    const double s = static_cast<double>(size);

    const ValueNoise coarse = ValueNoise::draw(5, rng);
    const ValueNoise fine = ValueNoise::draw(9, rng);

    const int n_blobs = 1 + static_cast<int>(rng.uniform_int(3));
    std::vector<Blob> blobs;
    const double r_hi = 0.30 * s;
    const double r_lo = std::min(std::max(0.12 * s, 1.5), 0.9 * r_hi);
    for (int i = 0; i < n_blobs; ++i) {
        Blob blob;
        blob.kind = cfg.shape_palette[rng.uniform_int(cfg.shape_palette.size())];
        blob.center = {rng.uniform(0.25, 0.75) * s, rng.uniform(0.25, 0.75) * s};
        blob.rot = rng.uniform(0.0, 3.14159265358979323846);
        blob.base_intensity = rng.uniform(cfg.skin_intensity_lo, cfg.skin_intensity_hi);
        const double grad_angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        blob.gradient_dir = {std::cos(grad_angle), std::sin(grad_angle)};
        blob.gradient_slope = rng.uniform(0.0, 0.10);
        switch (blob.kind) {
            case ShapeKind::ellipse:
                blob.a = rng.uniform(r_lo, r_hi);
                blob.b = rng.uniform(r_lo, r_hi);
                break;
            case ShapeKind::capsule:
                blob.a = rng.uniform(0.10 * s, 0.25 * s);                      // half length
                blob.b = rng.uniform(std::min(std::max(0.06 * s, 1.5), 0.13 * s), 0.15 * s);
                break;
            case ShapeKind::polygon: {
                const int k = 3 + static_cast<int>(rng.uniform_int(4));
                const double base_r = rng.uniform(r_lo, 0.28 * s);
                blob.vertices.resize(static_cast<std::size_t>(k));
                for (int j = 0; j < k; ++j) {
                    const double angle = blob.rot +
                                         2.0 * 3.14159265358979323846 * j / k +
                                         rng.uniform(-0.2, 0.2);
                    const double radius = base_r * rng.uniform(0.85, 1.15);
                    blob.vertices[static_cast<std::size_t>(j)] = {
                        blob.center.x + radius * std::cos(angle),
                        blob.center.y + radius * std::sin(angle)};
                }
                break;
            }
        }
        blobs.push_back(std::move(blob));
    }

    std::vector<double> pixels(static_cast<std::size_t>(size) * size);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(size) * size, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const Vec2 p{x + 0.5, y + 0.5};
            const std::size_t idx = static_cast<std::size_t>(y) * size + x;
            const double noise =
                0.65 * coarse.at(p.x / s, p.y / s) + 0.35 * fine.at(p.x / s, p.y / s);
            double value = cfg.background_base + cfg.background_amplitude * noise;
            for (const Blob& blob : blobs) {
                const double d = blob.sdf(p);
                const double alpha = std::clamp(0.5 - d, 0.0, 1.0);
                if (alpha > 0.0) {
                    const double skin = std::clamp(blob.intensity(p, s), 0.0, 1.0);
                    value = (1.0 - alpha) * value + alpha * skin;
                }
                if (d < 0.0) mask[idx] = 1;
            }
            pixels[idx] = std::clamp(value, 0.0, 1.0);
        }
    }
    return {ImageTensor(size, size, 1, std::move(pixels)),
            MaskTensor(size, size, std::move(mask))};
}

}  // namespace

ImageTensor quantize8(const ImageTensor& img) {
    std::vector<double> out = img.data();
    for (auto& v : out) v = std::round(v * 255.0) / 255.0;
    return ImageTensor(img.height(), img.width(), img.channels(), std::move(out));
}

std::pair<ImageTensor, MaskTensor> generate_scene(const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    const long total = static_cast<long>(cfg.image_size) * cfg.image_size;
    // The geometry bounds make a degenerate rasterization (all-foreground or
    // all-background) impossible in practice; the bounded retry keeps the
    // contract airtight for extreme configurations.
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto [image, mask] = render_scene_once(cfg, rng);
        const long count = mask.count();
        if (count > 0 && count < total) {
            return {quantize8(image), std::move(mask)};
        }
    }
    throw Error("generate_scene: could not render a two-class scene in 100 attempts");
}

// ---------------------------------------------------------------------------
// Domain shift
// ---------------------------------------------------------------------------

namespace {

// Separable Gaussian blur with replicate padding, per channel.
std::vector<double> gaussian_blur(const std::vector<double>& in, int h, int w, int channels,
                                  double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : kernel) v /= sum;

    const auto at = [&](const std::vector<double>& buf, int y, int x, int c) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return buf[static_cast<std::size_t>((y * w + x) * channels + c)];
    };

    std::vector<double> tmp(in.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    acc += kernel[static_cast<std::size_t>(i + radius)] * at(in, y, x + i, c);
                }
                tmp[static_cast<std::size_t>((y * w + x) * channels + c)] = acc;
            }
        }
    }
    std::vector<double> out(in.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    acc += kernel[static_cast<std::size_t>(i + radius)] * at(tmp, y + i, x, c);
                }
                out[static_cast<std::size_t>((y * w + x) * channels + c)] = acc;
            }
        }
    }
    return out;
}

}  // namespace

ImageTensor apply_domain_shift(const ImageTensor& img, const DomainShift& shift, Rng& rng) {
    shift.validate();
    if (img.empty()) throw InvalidInputError("apply_domain_shift: empty image");
    if (shift.is_identity()) return img;

    std::vector<double> data = img.data();
    if (shift.gamma != 1.0) {
        for (auto& v : data) v = std::pow(v, shift.gamma);
    }
    if (shift.brightness_offset != 0.0) {
        for (auto& v : data) v += shift.brightness_offset;
    }
    if (shift.blur_sigma > 0.0) {
        data = gaussian_blur(data, img.height(), img.width(), img.channels(), shift.blur_sigma);
    }
    if (shift.noise_std > 0.0) {
        for (auto& v : data) v += shift.noise_std * rng.normal();
    }
    for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
    return ImageTensor(img.height(), img.width(), img.channels(), std::move(data));
}

// ---------------------------------------------------------------------------
// Benchmark assembly
// ---------------------------------------------------------------------------

namespace {

std::string padded_index(int i) {
    std::string digits = std::to_string(i);
    while (digits.size() < 4) digits.insert(digits.begin(), '0');
    return digits;
}

}  // namespace

Benchmark build_benchmark(const SynthConfig& cfg) {
    cfg.validate();
    Benchmark bench;

    // Every scene draws from its own stream derived from (seed, ordinal), so
    // splits are disjoint by construction and generation order is free.
    std::uint64_t ordinal = 0;
    for (int i = 0; i < cfg.n_source_train; ++i, ++ordinal) {
        Rng rng(mix_seed(cfg.seed, ordinal));
        auto [image, mask] = generate_scene(cfg, rng);
        bench.source_train.add({std::move(image), std::move(mask), "src-train-" + padded_index(i)});
    }
    for (int i = 0; i < cfg.n_source_test; ++i, ++ordinal) {
        Rng rng(mix_seed(cfg.seed, ordinal));
        auto [image, mask] = generate_scene(cfg, rng);
        bench.source_test.add({std::move(image), std::move(mask), "src-test-" + padded_index(i)});
    }
    for (int i = 0; i < cfg.n_target_test; ++i, ++ordinal) {
        Rng rng(mix_seed(cfg.seed, ordinal));
        auto [image, mask] = generate_scene(cfg, rng);
        ImageTensor shifted = quantize8(apply_domain_shift(image, cfg.target_shift, rng));
        bench.target_test.add({std::move(shifted), std::move(mask), "tgt-test-" + padded_index(i)});
    }
    return bench;
}

// ---------------------------------------------------------------------------
// Dataset directory IO
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kManifestHeader = "id\tdomain\tsplit";

DomainTag domain_from_string(const std::string& s, const fs::path& source) {
    if (s == "source") return DomainTag::source;
    if (s == "target") return DomainTag::target;
    throw MalformedDatasetError("unknown domain '" + s + "' in " + source.string());
}

SplitTag split_from_string(const std::string& s, const fs::path& source) {
    if (s == "train") return SplitTag::train;
    if (s == "test") return SplitTag::test;
    throw MalformedDatasetError("unknown split '" + s + "' in " + source.string());
}

Gray8Image to_gray8(const ImageTensor& img) {
    Gray8Image out;
    out.height = img.height();
    out.width = img.width();
    out.pixels.resize(static_cast<std::size_t>(out.height) * out.width);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const double v = std::clamp(img.data()[i], 0.0, 1.0);
        out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

Gray8Image to_gray8(const MaskTensor& mask) {
    Gray8Image out;
    out.height = mask.height();
    out.width = mask.width();
    out.pixels.resize(static_cast<std::size_t>(out.height) * out.width);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        out.pixels[i] = mask.data()[i] != 0 ? std::uint8_t{255} : std::uint8_t{0};
    }
    return out;
}

}  // namespace

void save_dataset(const DomainDataset& ds, const fs::path& root) {
    const fs::path images_dir = root / "images";
    const fs::path masks_dir = root / "masks";
    fs::create_directories(images_dir);
    fs::create_directories(masks_dir);

    std::ofstream manifest(root / "manifest.tsv", std::ios::binary);
    if (!manifest) {
        throw InvalidInputError("cannot write manifest: " + (root / "manifest.tsv").string());
    }
    manifest << kManifestHeader << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::string& id = ds.id(i);
        write_png_gray8(images_dir / (id + ".png"), to_gray8(ds.image(i)));
        write_png_gray8(masks_dir / (id + ".png"), to_gray8(ds.mask(i)));
        manifest << id << '\t' << to_string(ds.domain_tag()) << '\t' << to_string(ds.split_tag())
                 << '\n';
    }
    if (!manifest) throw InvalidInputError("failed writing manifest under " + root.string());
}

DomainDataset load_dataset(const fs::path& root) {
    if (!fs::exists(root) || !fs::is_directory(root)) {
        throw InvalidInputError("dataset directory does not exist: " + root.string());
    }
    const fs::path images_dir = root / "images";
    const fs::path masks_dir = root / "masks";
    const fs::path manifest_path = root / "manifest.tsv";

    // Collect ids from the images directory (sorted for determinism).
    std::vector<std::string> dir_ids;
    if (fs::exists(images_dir) && fs::is_directory(images_dir)) {
        for (const auto& entry : fs::directory_iterator(images_dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") {
                dir_ids.push_back(entry.path().stem().string());
            }
        }
        std::sort(dir_ids.begin(), dir_ids.end());
    }

    DomainTag domain = DomainTag::source;
    SplitTag split = SplitTag::train;
    std::vector<std::string> ordered_ids = dir_ids;

    if (fs::exists(manifest_path)) {
        std::ifstream manifest(manifest_path, std::ios::binary);
        if (!manifest) throw InvalidInputError("cannot read manifest: " + manifest_path.string());
        std::string line;
        std::vector<std::string> manifest_ids;
        bool first_row = true;
        int line_no = 0;
        while (std::getline(manifest, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line == kManifestHeader) continue;
            std::istringstream row(line);
            std::string id, domain_str, split_str;
            if (!std::getline(row, id, '\t') || !std::getline(row, domain_str, '\t') ||
                !std::getline(row, split_str, '\t')) {
                throw MalformedDatasetError("manifest row " + std::to_string(line_no) +
                                            " malformed in " + manifest_path.string());
            }
            const DomainTag row_domain = domain_from_string(domain_str, manifest_path);
            const SplitTag row_split = split_from_string(split_str, manifest_path);
            if (first_row) {
                domain = row_domain;
                split = row_split;
                first_row = false;
            } else if (row_domain != domain || row_split != split) {
                throw MalformedDatasetError("manifest mixes domain/split tags: " +
                                            manifest_path.string());
            }
            manifest_ids.push_back(std::move(id));
        }
        // The manifest must describe exactly the files on disk.
        std::vector<std::string> sorted_manifest = manifest_ids;
        std::sort(sorted_manifest.begin(), sorted_manifest.end());
        if (sorted_manifest != dir_ids) {
            throw MalformedDatasetError("manifest ids do not match the images directory: " +
                                        manifest_path.string());
        }
        ordered_ids = std::move(manifest_ids);
    }

    DomainDataset ds(domain, split);
    if (ordered_ids.empty()) {
        std::cerr << "warning: dataset directory has no images: " << root.string() << "\n";
        return ds;
    }

    for (const std::string& id : ordered_ids) {
        const fs::path image_path = images_dir / (id + ".png");
        const fs::path mask_path = masks_dir / (id + ".png");
        if (!fs::exists(mask_path)) {
            throw MalformedDatasetError("missing mask for image: " + mask_path.string());
        }
        const Gray8Image image_raw = read_png_gray8(image_path);
        const Gray8Image mask_raw = read_png_gray8(mask_path);
        if (image_raw.height != mask_raw.height || image_raw.width != mask_raw.width) {
            throw MalformedDatasetError("image/mask dimension mismatch for id '" + id + "' in " +
                                        root.string());
        }

        std::vector<double> pixels(image_raw.pixels.size());
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            pixels[i] = static_cast<double>(image_raw.pixels[i]) / 255.0;
        }
        std::vector<std::uint8_t> mask_bits(mask_raw.pixels.size());
        for (std::size_t i = 0; i < mask_bits.size(); ++i) {
            const std::uint8_t v = mask_raw.pixels[i];
            if (v != 0 && v != 255) {
                throw MalformedDatasetError("mask contains value " + std::to_string(int(v)) +
                                            " (must be exactly 0 or 255): " + mask_path.string());
            }
            mask_bits[i] = v == 255 ? 1 : 0;
        }
        ds.add({ImageTensor(image_raw.height, image_raw.width, 1, std::move(pixels)),
                MaskTensor(mask_raw.height, mask_raw.width, std::move(mask_bits)), id});
    }
    return ds;
}

}  // namespace glss
