#include "glss/lemma.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "glss/datagen.hpp"
#include "glss/harness.hpp"
#include "glss/imgmath.hpp"

namespace glss {
namespace {

constexpr int kSceneSize = 32;
constexpr int kPatchSize = 16;
constexpr int kCropsPerScene = 8;

struct Sample {
    std::vector<double> v;  // flat coordinates (2 for the planar cases)
    ImageTensor img;        // the patch itself, for structural distance
};

// Streams samples from one side (source or shifted query distribution) of a
// built-in distribution pair, consuming the trial's rng.
class SampleStream {
public:
    SampleStream(LemmaDistribution dist, bool shifted, Rng& rng)
        : dist_(dist), shifted_(shifted), rng_(rng) {
        scene_cfg_.image_size = kSceneSize;
    }

    Sample next() {
        Sample s;
        switch (dist_) {
            case LemmaDistribution::uniform_square:
                s.v = shifted_ ? std::vector<double>{rng_.uniform(0.2, 0.8),
                                                     rng_.uniform(0.2, 0.8)}
                               : std::vector<double>{rng_.uniform01(), rng_.uniform01()};
                return s;
            case LemmaDistribution::gaussian_2d:
                s.v = shifted_ ? std::vector<double>{0.5 + 0.5 * rng_.normal(),
                                                     0.5 + 0.5 * rng_.normal()}
                               : std::vector<double>{rng_.normal(), rng_.normal()};
                return s;
            case LemmaDistribution::synthetic_image_patches:
                return next_patch();
        }
        throw InvalidInputError("unknown lemma distribution");
    }

private:
    Sample next_patch() {
        if (crops_left_ == 0) {
            ImageTensor scene = generate_scene(scene_cfg_, rng_).first;
            if (shifted_) {
                scene = quantize8(apply_domain_shift(scene, scene_cfg_.target_shift, rng_));
            }
            scene_ = std::move(scene);
            crops_left_ = kCropsPerScene;
        }
        --crops_left_;
        const int span = kSceneSize - kPatchSize + 1;
        const int y0 = static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(span)));
        const int x0 = static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(span)));
        Sample s;
        s.img = ImageTensor(kPatchSize, kPatchSize, 1);
        s.v.resize(static_cast<std::size_t>(kPatchSize) * kPatchSize);
        for (int y = 0; y < kPatchSize; ++y) {
            for (int x = 0; x < kPatchSize; ++x) {
                const double value = scene_.at(y0 + y, x0 + x);
                s.img.at(y, x) = value;
                s.v[static_cast<std::size_t>(y) * kPatchSize + x] = value;
            }
        }
        return s;
    }

    LemmaDistribution dist_;
    bool shifted_;
    Rng& rng_;
    SynthConfig scene_cfg_;
    ImageTensor scene_;
    int crops_left_ = 0;
};

double sample_distance(const Sample& a, const Sample& b, LemmaMetric metric) {
    if (metric == LemmaMetric::ssim_distance) {
        return imgmath::ssim_loss(a.img, b.img);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

struct TrialOutcome {
    std::vector<double> nn_at;  // running-min NN distance at each n in n_list
    double ball_mass = 0.0;     // fraction of samples within delta of the query
};

// One trial: fixed query, streamed source points, running minimum distance.
TrialOutcome run_trial(const LemmaCheckConfig& cfg, const std::vector<int>& n_list, double delta,
                       std::uint64_t seed) {
    Rng rng(seed);
    SampleStream query_stream(cfg.distribution, true, rng);
    const Sample query = query_stream.next();
    SampleStream source(cfg.distribution, false, rng);

    TrialOutcome out;
    out.nn_at.reserve(n_list.size());
    const int n_max = n_list.back();
    double best = std::numeric_limits<double>::infinity();
    long hits = 0;
    std::size_t next_record = 0;
    for (int i = 1; i <= n_max; ++i) {
        const Sample s = source.next();
        const double d = sample_distance(s, query, cfg.metric);
        if (d < best) best = d;
        if (d < delta) ++hits;
        if (next_record < n_list.size() && i == n_list[next_record]) {
            out.nn_at.push_back(best);
            ++next_record;
        }
    }
    out.ball_mass = static_cast<double>(hits) / static_cast<double>(n_max);
    return out;
}

double median_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double percentile95(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const std::size_t rank =
        static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    return values[std::min(n - 1, rank == 0 ? 0 : rank - 1)];
}

}  // namespace

LemmaDistribution lemma_distribution_from_string(const std::string& s) {
    if (s == "uniform-square") return LemmaDistribution::uniform_square;
    if (s == "gaussian-2d") return LemmaDistribution::gaussian_2d;
    if (s == "synthetic-image-patches") return LemmaDistribution::synthetic_image_patches;
    throw InvalidInputError(
        "unknown distribution '" + s +
        "' (expected uniform-square, gaussian-2d, or synthetic-image-patches)");
}

LemmaMetric lemma_metric_from_string(const std::string& s) {
    if (s == "euclidean") return LemmaMetric::euclidean;
    if (s == "ssim-distance") return LemmaMetric::ssim_distance;
    throw InvalidInputError("unknown lemma metric '" + s +
                            "' (expected euclidean or ssim-distance)");
}

std::string to_string(LemmaDistribution d) {
    switch (d) {
        case LemmaDistribution::uniform_square: return "uniform-square";
        case LemmaDistribution::gaussian_2d: return "gaussian-2d";
        case LemmaDistribution::synthetic_image_patches: return "synthetic-image-patches";
    }
    throw InvalidInputError("unknown lemma distribution");
}

std::string to_string(LemmaMetric m) {
    return m == LemmaMetric::euclidean ? "euclidean" : "ssim-distance";
}

void LemmaCheckConfig::validate() const {
    if (n_list.empty()) throw InvalidInputError("lemma check needs a non-empty n list");
    for (std::size_t i = 0; i < n_list.size(); ++i) {
        if (n_list[i] < 1) throw InvalidInputError("lemma check n values must be positive");
        if (i > 0 && n_list[i] <= n_list[i - 1]) {
            throw InvalidInputError("lemma check n list must be strictly increasing");
        }
    }
    if (trials < 30) throw InvalidInputError("lemma check needs at least 30 trials");
    if (trials > 1000000) throw InvalidInputError("lemma check trial count is unreasonably large");
    if (metric == LemmaMetric::ssim_distance &&
        distribution != LemmaDistribution::synthetic_image_patches) {
        throw InvalidInputError("ssim-distance requires the synthetic-image-patches distribution");
    }
}

LemmaCheckReport lemma_check(const LemmaCheckConfig& cfg) {
    cfg.validate();

    LemmaCheckReport report;
    report.distribution = to_string(cfg.distribution);
    report.metric = to_string(cfg.metric);
    report.n_list = cfg.n_list;

    // Calibrate delta so coverage is mid-range at the middle n: the median
    // nearest-neighbor distance there makes P(NN < delta) be roughly 1/2.
    const int n_cal = cfg.n_list[(cfg.n_list.size() - 1) / 2];
    {
        constexpr int kCalibrationTrials = 30;
        std::vector<double> calibration;
        calibration.reserve(kCalibrationTrials);
        const std::vector<int> cal_list = {n_cal};
        for (int t = 0; t < kCalibrationTrials; ++t) {
            calibration.push_back(
                run_trial(cfg, cal_list, 0.0, mix_seed(cfg.seed, 1000000u + t)).nn_at[0]);
        }
        report.delta = median_of(std::move(calibration));
    }

    const std::size_t n_count = cfg.n_list.size();
    std::vector<std::vector<double>> nn(n_count);  // [n index][trial]
    std::vector<double> ball_masses;
    ball_masses.reserve(static_cast<std::size_t>(cfg.trials));
    for (int t = 0; t < cfg.trials; ++t) {
        const TrialOutcome trial = run_trial(cfg, cfg.n_list, report.delta, mix_seed(cfg.seed, t));
        for (std::size_t j = 0; j < n_count; ++j) nn[j].push_back(trial.nn_at[j]);
        ball_masses.push_back(trial.ball_mass);
    }

    const double trials = static_cast<double>(cfg.trials);
    for (std::size_t j = 0; j < n_count; ++j) {
        report.median_nn.push_back(median_of(nn[j]));
        report.p95_nn.push_back(percentile95(nn[j]));

        double empirical = 0.0;
        for (double d : nn[j]) empirical += d < report.delta ? 1.0 : 0.0;
        empirical /= trials;

        // Per-trial prediction from the coverage identity with the trial's
        // own ball-mass estimate; its spread contributes to the SE.
        double pred_sum = 0.0;
        double pred_sq_sum = 0.0;
        for (double p : ball_masses) {
            const double pred = 1.0 - std::pow(1.0 - p, static_cast<double>(cfg.n_list[j]));
            pred_sum += pred;
            pred_sq_sum += pred * pred;
        }
        const double predicted = pred_sum / trials;
        const double pred_var =
            std::max(0.0, pred_sq_sum / trials - predicted * predicted);
        const double se = std::sqrt(empirical * (1.0 - empirical) / trials + pred_var / trials);

        report.empirical_coverage.push_back(empirical);
        report.predicted_coverage.push_back(predicted);
        report.coverage_se.push_back(std::max(se, 0.002));
    }

    if (n_count < 2) {
        report.monotone = true;
        report.insufficient = true;
        report.note = "insufficient points";
    } else {
        report.monotone = true;
        for (std::size_t j = 1; j < n_count; ++j) {
            if (!(report.median_nn[j] < report.median_nn[j - 1])) report.monotone = false;
        }
    }
    return report;
}

void write_lemma_tsv(const std::filesystem::path& path, const LemmaCheckReport& report) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << "distribution\tmetric\tn\tmedian_nn\tp95_nn\tempirical_coverage"
           "\tpredicted_coverage\tcoverage_se\tdelta\tmonotone\tinsufficient\n";
    for (std::size_t j = 0; j < report.n_list.size(); ++j) {
        out << report.distribution << '\t' << report.metric << '\t' << report.n_list[j] << '\t'
            << format_cell(report.median_nn[j]) << '\t' << format_cell(report.p95_nn[j]) << '\t'
            << format_cell(report.empirical_coverage[j]) << '\t'
            << format_cell(report.predicted_coverage[j]) << '\t'
            << format_cell(report.coverage_se[j]) << '\t' << format_cell(report.delta) << '\t'
            << (report.monotone ? 1 : 0) << '\t' << (report.insufficient ? 1 : 0) << '\n';
    }
}

}  // namespace glss
