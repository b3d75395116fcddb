#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "glss/config.hpp"
#include "glss/datagen.hpp"
#include "glss/generative.hpp"
#include "glss/latent_search.hpp"
#include "glss/segmentation.hpp"

namespace glss {

// Per-target-image evaluation outcome. `final_loss` is the best search
// objective value reached for the image; NaN when no latent search ran.
struct ImageResult {
    std::string id;
    double iou = 0.0;
    double dice = 0.0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
};

// Full evaluation report for one pipeline run. Aggregates are always
// recomputable from `rows`; the stage timings are excluded from report.tsv
// and summary.tsv (they go to timing.tsv) so reruns stay byte-identical.
struct MetricsReport {
    std::vector<ImageResult> rows;  // target-test dataset order
    double mean_iou = 0.0;
    double median_iou = 0.0;  // lower-median/upper-median average for even n
    double mean_dice = 0.0;
    double source_only_mean_iou = 0.0;  // direct prediction on the raw targets
    std::string fingerprint;            // resolved-config fingerprint
    std::string mode;                   // "search" | "reconstruction" | "source-only"

    double data_seconds = 0.0;
    double train_seg_seconds = 0.0;
    double train_vae_seconds = 0.0;
    double eval_seconds = 0.0;

    // Instrumentation snapshots backing the leak-proofing guarantees: target
    // image reads observed right after the training stages, and target mask
    // reads observed right before the metrics block. Both must be zero.
    std::uint64_t target_image_reads_after_training = 0;
    std::uint64_t target_mask_reads_before_metrics = 0;
};

// Recomputes mean/median IoU and mean dice from `rows` in row order.
void recompute_aggregates(MetricsReport& report);

struct PipelineOptions {
    // Load checkpoints from output_dir instead of training; missing files
    // raise an error naming the expected path. Used by the `run` and `eval`
    // commands, which never train.
    bool require_checkpoints = false;
    // Load a checkpoint when the file already exists, train otherwise.
    bool reuse_checkpoints = false;
    // Persist resolved.cfg, checkpoints, reports, traces under output_dir.
    bool write_artifacts = true;
    // Suppress progress lines on stderr.
    bool quiet = false;
    // Worker-pool size for the per-image evaluation loop; 0 reads the
    // environment (auto-detect when unset).
    int workers = 0;
};

// Trained-model cache for multi-row drivers: the benchmark is rendered once,
// the segmentation network is shared, and VAE variants are keyed by
// (use_edge, use_perceptual).
struct PipelineModels {
    std::optional<Benchmark> data;
    std::optional<SegModel> seg;
    std::optional<VAEModel> vae[2][2];
};

// Runs the full pipeline for one flag combination: render the benchmark,
// train (or load) the segmentation network, train (or load) the VAE when any
// component needs it, then evaluate every target-test image:
//   - use_search true:  latent search, then segmentation of the clone;
//   - use_search false: segmentation of the VAE reconstruction (encode ->
//     decode with the posterior mean), the "no LS" mode;
//   - all flags false:  direct segmentation of the target (source-only).
// With use_edge false the decoder's edge input is an all-zero map during both
// training and inference; with use_perceptual false the feature-term weight
// is forced to 0. A stage failure raises Error naming the stage; artifacts
// already produced stay on disk.
MetricsReport run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opts = {},
                           PipelineModels* cache = nullptr);

struct AblationRow {
    AblationFlags flags;
    bool failed = false;
    std::string error;     // one-line reason when failed
    MetricsReport report;  // valid when !failed
};

// Runs all 8 combinations of (use_edge, use_perceptual, use_search) in
// lexicographic order over shared data and seeds: one segmentation network,
// one VAE per (edge, perceptual) variant. Per-row failures are recorded and
// the remaining rows still run. Writes ablation.tsv plus one artifact
// subdirectory per row under cfg.output_dir.
std::vector<AblationRow> run_ablation_matrix(const ExperimentConfig& cfg,
                                             const PipelineOptions& opts = {});

struct CurvePoint {
    SearchMetric metric = SearchMetric::ssim;
    int iteration = 0;
    double mean_loss = 0.0;  // mean best-so-far objective across images
    double mean_iou = 0.0;   // mean IoU of masks decoded from best-so-far z
};

// Search-progress curves: for each metric, runs one latent search per target
// image for k_max iterations (restarts forced to 1) initialized at the
// encoder posterior mean, recording the best iterate at checkpoints
// {0, 10, ..., k_max}. Checkpoint 0 is therefore exactly the
// VAE-reconstruction baseline, and mean_loss is non-increasing by
// construction. k_max must be a positive multiple of 10.
std::vector<CurvePoint> run_search_curve(const ExperimentConfig& cfg, int k_max,
                                         const std::vector<SearchMetric>& metrics,
                                         const PipelineOptions& opts = {},
                                         PipelineModels* cache = nullptr);

// Re-runs the evaluation stage from artifacts persisted in `output_dir`
// (resolved.cfg plus the checkpoints referenced by its flags) and rewrites
// report.tsv / summary.tsv; aggregates reproduce the original run bit-exactly.
MetricsReport run_evaluation_only(const std::filesystem::path& output_dir,
                                  const PipelineOptions& opts = {});

// Report writers. All numeric cells use the same fixed formatting (%.12g),
// so identical values serialize identically.
void write_metrics_report(const std::filesystem::path& output_dir, const MetricsReport& report);
void write_ablation_tsv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
void write_curve_tsv(const std::filesystem::path& path, const std::vector<CurvePoint>& points);

// Fixed numeric cell formatting shared by every table writer.
std::string format_cell(double v);

}  // namespace glss
