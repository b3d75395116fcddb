#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "glss/common.hpp"
#include "glss/lemma.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("enum string round trips and rejection") {
    using glss::LemmaDistribution;
    using glss::LemmaMetric;
    CHECK(glss::lemma_distribution_from_string("uniform-square") ==
          LemmaDistribution::uniform_square);
    CHECK(glss::lemma_distribution_from_string("gaussian-2d") == LemmaDistribution::gaussian_2d);
    CHECK(glss::lemma_distribution_from_string("synthetic-image-patches") ==
          LemmaDistribution::synthetic_image_patches);
    CHECK(glss::to_string(LemmaDistribution::uniform_square) == "uniform-square");
    CHECK(glss::to_string(LemmaDistribution::gaussian_2d) == "gaussian-2d");
    CHECK(glss::to_string(LemmaDistribution::synthetic_image_patches) ==
          "synthetic-image-patches");
    CHECK(glss::lemma_metric_from_string("euclidean") == LemmaMetric::euclidean);
    CHECK(glss::lemma_metric_from_string("ssim-distance") == LemmaMetric::ssim_distance);
    CHECK(glss::to_string(LemmaMetric::euclidean) == "euclidean");
    CHECK(glss::to_string(LemmaMetric::ssim_distance) == "ssim-distance");
    CHECK_THROWS_AS(glss::lemma_distribution_from_string("donuts"), glss::InvalidInputError);
    CHECK_THROWS_AS(glss::lemma_metric_from_string("cosine"), glss::InvalidInputError);
}

TEST_CASE("config validation rejects bad settings") {
    glss::LemmaCheckConfig cfg;
    cfg.n_list = {};
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);
    cfg.n_list = {100, 100};
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);
    cfg.n_list = {100, 10};
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);
    cfg.n_list = {0, 10};
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);
    cfg.n_list = {10, 100};
    cfg.trials = 10;
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);
    cfg.trials = 40;
    cfg.metric = glss::LemmaMetric::ssim_distance;
    cfg.distribution = glss::LemmaDistribution::uniform_square;
    CHECK_THROWS_AS(cfg.validate(), glss::InvalidInputError);
    cfg.distribution = glss::LemmaDistribution::synthetic_image_patches;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("uniform square: shrinking neighbor distances and calibrated coverage") {
    glss::LemmaCheckConfig cfg;
    cfg.distribution = glss::LemmaDistribution::uniform_square;
    cfg.metric = glss::LemmaMetric::euclidean;
    cfg.n_list = {10, 100, 1000};
    cfg.trials = 60;
    cfg.seed = 7;

    const glss::LemmaCheckReport report = glss::lemma_check(cfg);
    REQUIRE(report.median_nn.size() == 3);
    CHECK(report.monotone);
    CHECK_FALSE(report.insufficient);
    CHECK(report.delta > 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(report.median_nn[i] > 0.0);
        CHECK(report.p95_nn[i] >= report.median_nn[i]);
        CHECK(report.empirical_coverage[i] >= 0.0);
        CHECK(report.empirical_coverage[i] <= 1.0);
        CHECK(report.coverage_se[i] >= 0.002);
        const double gap = std::abs(report.empirical_coverage[i] - report.predicted_coverage[i]);
        CHECK(gap <= 3.0 * report.coverage_se[i]);
    }
    CHECK(report.median_nn[2] < report.median_nn[0]);
    // Coverage grows with sample count toward 1.
    CHECK(report.predicted_coverage[2] >= report.predicted_coverage[0]);
}

TEST_CASE("gaussian distribution also contracts") {
    glss::LemmaCheckConfig cfg;
    cfg.distribution = glss::LemmaDistribution::gaussian_2d;
    cfg.n_list = {10, 100};
    cfg.trials = 40;
    cfg.seed = 11;
    const glss::LemmaCheckReport report = glss::lemma_check(cfg);
    CHECK(report.monotone);
    CHECK(report.median_nn[1] < report.median_nn[0]);
}

TEST_CASE("image patches support both metrics") {
    glss::LemmaCheckConfig cfg;
    cfg.distribution = glss::LemmaDistribution::synthetic_image_patches;
    cfg.n_list = {10, 60};
    cfg.trials = 30;
    cfg.seed = 3;

    const glss::LemmaCheckReport euclid = glss::lemma_check(cfg);
    CHECK(euclid.monotone);
    CHECK(euclid.median_nn[0] > 0.0);

    cfg.metric = glss::LemmaMetric::ssim_distance;
    const glss::LemmaCheckReport ssim = glss::lemma_check(cfg);
    CHECK(ssim.monotone);
    CHECK(ssim.median_nn[0] > 0.0);
    CHECK(ssim.median_nn[1] < ssim.median_nn[0]);
    // Structural distance is bounded by 1 for nonnegative images.
    CHECK(ssim.p95_nn[0] <= 1.0);
}

TEST_CASE("single point is flagged as insufficient for a trend") {
    glss::LemmaCheckConfig cfg;
    cfg.n_list = {50};
    cfg.trials = 30;
    const glss::LemmaCheckReport report = glss::lemma_check(cfg);
    CHECK(report.insufficient);
    CHECK(report.monotone);  // vacuously
    CHECK(report.note.find("insufficient points") != std::string::npos);
}

TEST_CASE("deterministic given seed, sensitive to seed") {
    glss::LemmaCheckConfig cfg;
    cfg.n_list = {10, 100};
    cfg.trials = 30;
    cfg.seed = 42;
    const glss::LemmaCheckReport a = glss::lemma_check(cfg);
    const glss::LemmaCheckReport b = glss::lemma_check(cfg);
    CHECK(a.median_nn == b.median_nn);
    CHECK(a.p95_nn == b.p95_nn);
    CHECK(a.empirical_coverage == b.empirical_coverage);
    CHECK(a.predicted_coverage == b.predicted_coverage);
    CHECK(a.delta == b.delta);

    cfg.seed = 43;
    const glss::LemmaCheckReport c = glss::lemma_check(cfg);
    CHECK(a.median_nn != c.median_nn);
}

TEST_CASE("report serialization") {
    glss::LemmaCheckConfig cfg;
    cfg.n_list = {10, 100};
    cfg.trials = 30;
    cfg.seed = 5;
    const glss::LemmaCheckReport report = glss::lemma_check(cfg);

    const fs::path dir = fs::temp_directory_path() /
                         ("glss-lemma-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const fs::path path = dir / "lemma.tsv";
    glss::write_lemma_tsv(path, report);
    const std::string tsv = read_file(path);
    int lines = 0;
    for (char c : tsv) lines += c == '\n' ? 1 : 0;
    CHECK(lines == 3);  // header + one line per n
    CHECK(tsv.find("uniform-square") != std::string::npos);
    CHECK(tsv.find("euclidean") != std::string::npos);
    CHECK(tsv.rfind("distribution\tmetric\tn\t", 0) == 0);
    fs::remove_all(dir);
}
