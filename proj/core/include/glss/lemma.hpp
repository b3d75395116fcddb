#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glss/common.hpp"

namespace glss {

// Built-in source/query distribution pairs for the nearest-neighbor
// convergence check. Each pairs a source distribution with a shifted query
// distribution whose support lies inside the source's, so nearest-neighbor
// distances must shrink as the sample count grows:
//   - uniform_square: source U([0,1]^2), query U([0.2,0.8]^2);
//   - gaussian_2d: source N(0, I), query N((0.5,0.5), 0.5^2 I);
//   - synthetic_image_patches: 16x16 crops of rendered scenes; queries come
//     from domain-shifted renders (the benchmark's target analog).
enum class LemmaDistribution { uniform_square, gaussian_2d, synthetic_image_patches };
enum class LemmaMetric { euclidean, ssim_distance };

LemmaDistribution lemma_distribution_from_string(const std::string& s);
LemmaMetric lemma_metric_from_string(const std::string& s);
std::string to_string(LemmaDistribution d);
std::string to_string(LemmaMetric m);

struct LemmaCheckConfig {
    LemmaDistribution distribution = LemmaDistribution::uniform_square;
    LemmaMetric metric = LemmaMetric::euclidean;
    std::vector<int> n_list = {10, 100, 1000, 10000};
    int trials = 100;
    std::uint64_t seed = 0;

    // n_list strictly increasing and positive; trials >= 30; ssim_distance
    // only applies to image patches.
    void validate() const;
};

struct LemmaCheckReport {
    std::string distribution;
    std::string metric;
    std::vector<int> n_list;

    // Per-n statistics over trials; distances are non-negative.
    std::vector<double> median_nn;
    std::vector<double> p95_nn;  // nearest-rank 95th percentile

    // Coverage identity: P(NN distance < delta) = 1 - (1 - p_delta)^n, where
    // p_delta is the per-query ball mass estimated from the trial's own
    // samples. `delta` is calibrated so coverage is mid-range at the middle n.
    double delta = 0.0;
    std::vector<double> empirical_coverage;
    std::vector<double> predicted_coverage;
    std::vector<double> coverage_se;  // SE of the empirical-predicted gap

    bool monotone = false;      // medians strictly decreasing in n
    bool insufficient = false;  // fewer than 2 entries in n_list
    std::string note;           // "insufficient points" when vacuous
};

// Monte-Carlo check of nearest-neighbor convergence: per trial, samples one
// query from the shifted distribution and a growing pool from the source
// distribution, recording the running-minimum distance at each n in n_list.
// Deterministic given cfg.seed; single-threaded.
LemmaCheckReport lemma_check(const LemmaCheckConfig& cfg);

// Plot-ready table, one row per n (verdict columns repeated on every row).
void write_lemma_tsv(const std::filesystem::path& path, const LemmaCheckReport& report);

}  // namespace glss
