#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "glss/datagen.hpp"
#include "glss/imgmath.hpp"
#include "glss/png_io.hpp"

namespace fs = std::filesystem;
using glss::DomainShift;
using glss::DomainTag;
using glss::ImageTensor;
using glss::MaskTensor;
using glss::Rng;
using glss::ShapeKind;
using glss::SplitTag;
using glss::SynthConfig;

namespace {

SynthConfig tiny_cfg(int size = 32) {
    SynthConfig cfg;
    cfg.n_source_train = 6;
    cfg.n_source_test = 3;
    cfg.n_target_test = 3;
    cfg.image_size = size;
    return cfg;
}

struct SceneStats {
    double skin_mean = 0.0;
    double background_mean = 0.0;
    double skin_fraction = 0.0;
};

SceneStats scene_stats(const ImageTensor& img, const MaskTensor& mask) {
    SceneStats stats;
    long skin = 0;
    long background = 0;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (mask.at(y, x) != 0) {
                stats.skin_mean += img.at(y, x);
                ++skin;
            } else {
                stats.background_mean += img.at(y, x);
                ++background;
            }
        }
    }
    if (skin > 0) stats.skin_mean /= static_cast<double>(skin);
    if (background > 0) stats.background_mean /= static_cast<double>(background);
    stats.skin_fraction =
        static_cast<double>(skin) / static_cast<double>(img.height() * img.width());
    return stats;
}

// 2x2 RGB PNG; used to pin the "grayscale only" loading contract.
constexpr unsigned char kRgbPng[] = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x08, 0x02, 0x00, 0x00, 0x00, 0xfd,
    0xd4, 0x9a, 0x73, 0x00, 0x00, 0x00, 0x16, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x3c,
    0x21, 0x27, 0xc7, 0xc0, 0xc0, 0xc0, 0xc4, 0xc0, 0xc0, 0xc0, 0xc0, 0xc0, 0x00, 0x00, 0x0d,
    0x04, 0x01, 0x08, 0x7d, 0x71, 0xca, 0x66, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44,
    0xae, 0x42, 0x60, 0x82};

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("png io: round trip and failure modes") {
    const fs::path dir = fresh_dir("glss_test_png");
    glss::Gray8Image img;
    img.height = 16;
    img.width = 16;
    Rng rng(3);
    img.pixels.resize(256);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    img.pixels[0] = 0;
    img.pixels[1] = 255;

    const fs::path path = dir / "img.png";
    glss::write_png_gray8(path, img);
    const glss::Gray8Image back = glss::read_png_gray8(path);
    CHECK(back.height == img.height);
    CHECK(back.width == img.width);
    CHECK(back.pixels == img.pixels);

    CHECK_THROWS_AS(glss::read_png_gray8(dir / "missing.png"), glss::InvalidInputError);

    std::ofstream garbage(dir / "garbage.png", std::ios::binary);
    garbage << "this is not a png";
    garbage.close();
    CHECK_THROWS_AS(glss::read_png_gray8(dir / "garbage.png"), glss::InvalidInputError);

    std::ofstream rgb(dir / "rgb.png", std::ios::binary);
    rgb.write(reinterpret_cast<const char*>(kRgbPng), sizeof(kRgbPng));
    rgb.close();
    CHECK_THROWS_AS(glss::read_png_gray8(dir / "rgb.png"), glss::InvalidInputError);

    glss::Gray8Image bad;
    bad.height = 2;
    bad.width = 2;
    bad.pixels = {1, 2, 3};
    CHECK_THROWS_AS(glss::write_png_gray8(dir / "bad.png", bad), glss::InvalidInputError);
    fs::remove_all(dir);
}

TEST_CASE("synth config validation") {
    CHECK_NOTHROW(SynthConfig{}.validate());

    SynthConfig cfg = tiny_cfg();
    cfg.shape_palette.clear();
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);

    cfg = tiny_cfg();
    cfg.shape_palette = {ShapeKind::ellipse, ShapeKind::ellipse};
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);

    cfg = tiny_cfg();
    cfg.n_target_test = 0;
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);

    cfg = tiny_cfg();
    cfg.image_size = 4;
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);

    // Disjoint intensity ranges make the task trivially separable.
    cfg = tiny_cfg();
    cfg.background_base = 0.05;
    cfg.background_amplitude = 0.2;
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);

    // Full containment removes the intended ambiguity as well.
    cfg = tiny_cfg();
    cfg.skin_intensity_lo = 0.2;
    cfg.skin_intensity_hi = 0.45;
    cfg.background_base = 0.1;
    cfg.background_amplitude = 0.6;
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);

    cfg = tiny_cfg();
    cfg.target_shift = DomainShift{1.0, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);

    cfg = tiny_cfg();
    cfg.target_shift.gamma = 0.0;
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);

    CHECK(glss::shape_kind_from_string("capsule") == ShapeKind::capsule);
    CHECK(glss::to_string(ShapeKind::polygon) == "polygon");
    CHECK_THROWS_AS(glss::shape_kind_from_string("blob"), glss::InvalidInputError);
}

TEST_CASE("generate_scene: both classes present, deterministic, 8-bit aligned") {
    const SynthConfig cfg = tiny_cfg(32);
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        Rng rng(seed);
        const auto [image, mask] = glss::generate_scene(cfg, rng);
        const long count = mask.count();
        CHECK(count > 0);
        CHECK(count < 32L * 32L);
        CHECK(image.height() == 32);
        CHECK(image.channels() == 1);
    }

    Rng a(99);
    Rng b(99);
    const auto [img_a, mask_a] = glss::generate_scene(cfg, a);
    const auto [img_b, mask_b] = glss::generate_scene(cfg, b);
    CHECK(img_a.data() == img_b.data());
    CHECK(mask_a.data() == mask_b.data());

    // Every pixel sits on the stored-file grid.
    for (const double v : img_a.data()) {
        CHECK(v == std::round(v * 255.0) / 255.0);
    }

    // The tiniest supported frames still render both classes.
    const SynthConfig small = tiny_cfg(8);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(1000 + seed);
        const auto [image, mask] = glss::generate_scene(small, rng);
        CHECK(mask.count() > 0);
        CHECK(mask.count() < 64);
    }
}

TEST_CASE("generate_scene: source domain keeps skin brighter than background") {
    const SynthConfig cfg = tiny_cfg(64);
    int brighter = 0;
    double fraction_sum = 0.0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        Rng rng(glss::mix_seed(12345, static_cast<std::uint64_t>(i)));
        const auto [image, mask] = glss::generate_scene(cfg, rng);
        const SceneStats stats = scene_stats(image, mask);
        if (stats.skin_mean > stats.background_mean) ++brighter;
        fraction_sum += stats.skin_fraction;
    }
    CHECK(brighter >= n * 9 / 10);
    const double mean_fraction = fraction_sum / n;
    CHECK(mean_fraction >= 0.05);
    CHECK(mean_fraction <= 0.6);
}

TEST_CASE("apply_domain_shift: identity, gamma, noise, blur, clamp") {
    Rng rng(5);
    std::vector<double> pix(64 * 64);
    for (auto& v : pix) v = rng.uniform01();
    const ImageTensor img(64, 64, 1, pix);

    Rng shift_rng(0);
    const ImageTensor same =
        glss::apply_domain_shift(img, DomainShift{1.0, 0.0, 0.0, 0.0}, shift_rng);
    CHECK(same.data() == img.data());

    const ImageTensor half(8, 8, 1, 0.5);
    const ImageTensor squared =
        glss::apply_domain_shift(half, DomainShift{2.0, 0.0, 0.0, 0.0}, shift_rng);
    for (const double v : squared.data()) CHECK(v == 0.25);

    const ImageTensor offset_up =
        glss::apply_domain_shift(ImageTensor(8, 8, 1, 0.9), DomainShift{1.0, 0.3, 0.0, 0.0},
                                 shift_rng);
    for (const double v : offset_up.data()) CHECK(v == 1.0);  // clamped

    // A normalized blur kernel leaves constants untouched.
    const ImageTensor blurred =
        glss::apply_domain_shift(ImageTensor(16, 16, 1, 0.7), DomainShift{1.0, 0.0, 1.3, 0.0},
                                 shift_rng);
    for (const double v : blurred.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

    // Monte-Carlo expectation of squared noise: std^2 = 0.0025.
    Rng noise_rng(77);
    const ImageTensor mid(64, 64, 1, 0.5);
    const ImageTensor noisy =
        glss::apply_domain_shift(mid, DomainShift{1.0, 0.0, 0.0, 0.05}, noise_rng);
    const double noise_mse = glss::imgmath::mse(noisy, mid);
    CHECK(noise_mse > 0.0025 * 0.8);
    CHECK(noise_mse < 0.0025 * 1.2);

    DomainShift bad;
    bad.noise_std = -0.1;
    CHECK_THROWS_AS(glss::apply_domain_shift(mid, bad, noise_rng), glss::InvalidInputError);
}

TEST_CASE("quantize8 snaps to the 1/255 grid and is idempotent") {
    const ImageTensor img(2, 2, 1, std::vector<double>{0.0, 1.0, 0.5, 0.123456});
    const ImageTensor q = glss::quantize8(img);
    CHECK(q.data()[0] == 0.0);
    CHECK(q.data()[1] == 1.0);
    CHECK(q.data()[2] == 128.0 / 255.0);
    CHECK(q.data()[3] == std::round(0.123456 * 255.0) / 255.0);
    const ImageTensor qq = glss::quantize8(q);
    CHECK(qq.data() == q.data());
}

TEST_CASE("build_benchmark: sizes, disjoint ids, tags, determinism") {
    const SynthConfig cfg = tiny_cfg(16);
    const glss::Benchmark bench = glss::build_benchmark(cfg);

    CHECK(bench.source_train.size() == 6);
    CHECK(bench.source_test.size() == 3);
    CHECK(bench.target_test.size() == 3);
    CHECK(bench.source_train.domain_tag() == DomainTag::source);
    CHECK(bench.source_train.split_tag() == SplitTag::train);
    CHECK(bench.source_test.split_tag() == SplitTag::test);
    CHECK(bench.target_test.domain_tag() == DomainTag::target);

    std::set<std::string> ids;
    const auto collect = [&](const glss::DomainDataset& ds) {
        for (std::size_t i = 0; i < ds.size(); ++i) ids.insert(ds.id(i));
    };
    collect(bench.source_train);
    collect(bench.source_test);
    collect(bench.target_test);
    CHECK(ids.size() == 12);  // pairwise disjoint

    const glss::Benchmark again = glss::build_benchmark(cfg);
    for (std::size_t i = 0; i < bench.target_test.size(); ++i) {
        CHECK(bench.target_test.image(i).data() == again.target_test.image(i).data());
        CHECK(bench.target_test.mask(i).data() == again.target_test.mask(i).data());
    }
    for (std::size_t i = 0; i < bench.source_train.size(); ++i) {
        CHECK(bench.source_train.image(i).data() == again.source_train.image(i).data());
    }

    // Target images must carry a visible shift: they are not 8-bit re-renders
    // of any source-train/test image (fresh scenes), and their masks are
    // non-degenerate.
    for (std::size_t i = 0; i < bench.target_test.size(); ++i) {
        CHECK(bench.target_test.mask(i).count() > 0);
    }
}

TEST_CASE("dataset directory round trip is pixel-exact") {
    const SynthConfig cfg = tiny_cfg(16);
    const glss::Benchmark bench = glss::build_benchmark(cfg);
    const fs::path dir = fresh_dir("glss_test_dataset_rt");

    glss::save_dataset(bench.target_test, dir / "target_test");
    const glss::DomainDataset loaded = glss::load_dataset(dir / "target_test");

    REQUIRE(loaded.size() == bench.target_test.size());
    CHECK(loaded.domain_tag() == DomainTag::target);
    CHECK(loaded.split_tag() == SplitTag::test);
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded.id(i) == bench.target_test.id(i));
        CHECK(loaded.image(i).data() == bench.target_test.image(i).data());
        CHECK(loaded.mask(i).data() == bench.target_test.mask(i).data());
    }

    // Saving the loaded copy reproduces identical files.
    glss::save_dataset(loaded, dir / "copy");
    const glss::DomainDataset reloaded = glss::load_dataset(dir / "copy");
    for (std::size_t i = 0; i < reloaded.size(); ++i) {
        CHECK(reloaded.image(i).data() == loaded.image(i).data());
    }
    fs::remove_all(dir);
}

TEST_CASE("dataset loading failure modes") {
    const fs::path dir = fresh_dir("glss_test_dataset_err");

    CHECK_THROWS_AS(glss::load_dataset(dir / "nonexistent"), glss::InvalidInputError);

    // Present but empty: a warning case, not an error.
    fs::create_directories(dir / "empty" / "images");
    const glss::DomainDataset empty = glss::load_dataset(dir / "empty");
    CHECK(empty.empty());

    // Missing mask.
    const SynthConfig cfg = tiny_cfg(16);
    const glss::Benchmark bench = glss::build_benchmark(cfg);
    glss::save_dataset(bench.source_test, dir / "broken");
    fs::remove(dir / "broken" / "masks" / (bench.source_test.id(0) + ".png"));
    try {
        glss::load_dataset(dir / "broken");
        CHECK(false);
    } catch (const glss::MalformedDatasetError& e) {
        CHECK(std::string(e.what()).find(bench.source_test.id(0)) != std::string::npos);
    }

    // Mask with a value outside {0, 255}.
    glss::save_dataset(bench.source_test, dir / "gray_mask");
    {
        glss::Gray8Image bad;
        bad.height = 16;
        bad.width = 16;
        bad.pixels.assign(256, 128);
        glss::write_png_gray8(dir / "gray_mask" / "masks" / (bench.source_test.id(1) + ".png"),
                              bad);
    }
    try {
        glss::load_dataset(dir / "gray_mask");
        CHECK(false);
    } catch (const glss::MalformedDatasetError& e) {
        const std::string what = e.what();
        CHECK(what.find("128") != std::string::npos);
        CHECK(what.find(bench.source_test.id(1)) != std::string::npos);
    }

    // Non-grayscale image file.
    glss::save_dataset(bench.source_test, dir / "rgb_img");
    {
        std::ofstream rgb(dir / "rgb_img" / "images" / (bench.source_test.id(0) + ".png"),
                          std::ios::binary);
        rgb.write(reinterpret_cast<const char*>(kRgbPng), sizeof(kRgbPng));
    }
    CHECK_THROWS_AS(glss::load_dataset(dir / "rgb_img"), glss::InvalidInputError);

    // File on disk that the manifest does not know about.
    glss::save_dataset(bench.source_test, dir / "extra");
    {
        glss::Gray8Image extra;
        extra.height = 16;
        extra.width = 16;
        extra.pixels.assign(256, 7);
        glss::write_png_gray8(dir / "extra" / "images" / "zz-extra.png", extra);
    }
    CHECK_THROWS_AS(glss::load_dataset(dir / "extra"), glss::MalformedDatasetError);

    fs::remove_all(dir);
}
