#include "glss/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

#include "glss/common.hpp"
#include "glss/imgmath.hpp"

namespace glss {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point since) {
    return std::chrono::duration<double>(Clock::now() - since).count();
}

void log_line(const PipelineOptions& opts, const std::string& line) {
    if (!opts.quiet) std::fprintf(stderr, "[glss] %s\n", line.c_str());
}

int effective_workers(const PipelineOptions& opts) {
    return opts.workers > 0 ? opts.workers : worker_count_from_env();
}

// Wraps one pipeline stage so failures carry the stage name; artifacts that
// earlier stages already wrote stay on disk.
template <typename Fn>
auto run_stage(const PipelineOptions& opts, const std::string& name, Fn&& fn)
    -> decltype(fn()) {
    log_line(opts, "stage " + name + " ...");
    const auto start = Clock::now();
    try {
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            log_line(opts, "stage " + name + " done (" + format_cell(elapsed_seconds(start)) +
                               " s)");
            return;
        } else {
            auto out = fn();
            log_line(opts, "stage " + name + " done (" + format_cell(elapsed_seconds(start)) +
                               " s)");
            return out;
        }
    } catch (const std::exception& e) {
        log_line(opts, "stage " + name + " FAILED");
        throw Error("pipeline stage '" + name + "' failed: " + e.what());
    }
}

fs::path seg_checkpoint_path(const ExperimentConfig& cfg) { return cfg.output_dir / "seg.ckpt"; }
fs::path vae_checkpoint_path(const ExperimentConfig& cfg) { return cfg.output_dir / "vae.ckpt"; }

bool pipeline_needs_vae(const AblationFlags& flags) {
    return flags.use_search || flags.use_edge || flags.use_perceptual;
}

std::string mode_name(const AblationFlags& flags) {
    if (flags.use_search) return "search";
    if (pipeline_needs_vae(flags)) return "reconstruction";
    return "source-only";
}

// Renders (or reuses) the benchmark for this configuration.
const Benchmark& ensure_data(const ExperimentConfig& cfg, const PipelineOptions& opts,
                             PipelineModels& cache, MetricsReport& report) {
    if (!cache.data.has_value()) {
        const auto start = Clock::now();
        run_stage(opts, "data", [&] { cache.data = build_benchmark(cfg.synth); });
        report.data_seconds = elapsed_seconds(start);
    }
    return *cache.data;
}

// Trains, loads, or reuses the segmentation network.
const SegModel& ensure_seg(const ExperimentConfig& cfg, const PipelineOptions& opts,
                           PipelineModels& cache, const Benchmark& data, MetricsReport& report) {
    const fs::path path = seg_checkpoint_path(cfg);
    if (cache.seg.has_value()) {
        // Keep every output directory self-contained for later eval-only runs.
        if (opts.write_artifacts && !fs::exists(path)) save_seg_model(*cache.seg, path);
        return *cache.seg;
    }
    const auto start = Clock::now();
    if (opts.require_checkpoints || (opts.reuse_checkpoints && fs::exists(path))) {
        if (!fs::exists(path)) {
            throw Error("segmentation checkpoint not found: " + path.string());
        }
        run_stage(opts, "load_seg", [&] { cache.seg = load_seg_model(path); });
    } else {
        run_stage(opts, "train_seg", [&] {
            Rng rng(cfg.seg.seed);
            cache.seg = train_seg(data.source_train, cfg.seg, rng);
            if (opts.write_artifacts) save_seg_model(*cache.seg, path);
        });
    }
    report.train_seg_seconds = elapsed_seconds(start);
    return *cache.seg;
}

// Trains, loads, or reuses the VAE variant selected by the ablation flags.
const VAEModel& ensure_vae(const ExperimentConfig& cfg, const PipelineOptions& opts,
                           PipelineModels& cache, const Benchmark& data, const SegModel& seg,
                           MetricsReport& report) {
    std::optional<VAEModel>& slot =
        cache.vae[cfg.flags.use_edge ? 1 : 0][cfg.flags.use_perceptual ? 1 : 0];
    const fs::path path = vae_checkpoint_path(cfg);
    if (slot.has_value()) {
        if (opts.write_artifacts && !fs::exists(path)) save_vae_model(*slot, path);
        return *slot;
    }
    const auto start = Clock::now();
    if (opts.require_checkpoints || (opts.reuse_checkpoints && fs::exists(path))) {
        if (!fs::exists(path)) {
            throw Error("VAE checkpoint not found: " + path.string());
        }
        run_stage(opts, "load_vae", [&] { slot = load_vae_model(path); });
    } else {
        run_stage(opts, "train_vae", [&] {
            VAEConfig vae_cfg = cfg.vae;
            if (!cfg.flags.use_perceptual) vae_cfg.perceptual_weight = 0.0;
            Rng rng(vae_cfg.seed);
            slot = train_vae(data.source_train, seg, vae_cfg, rng, cfg.flags.use_edge);
            if (opts.write_artifacts) save_vae_model(*slot, path);
        });
    }
    report.train_vae_seconds = elapsed_seconds(start);
    return *slot;
}

ImageTensor zero_edge_map(int size) { return ImageTensor(size, size, 1); }

std::string sanitize_one_line(std::string s) {
    for (char& c : s) {
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

}  // namespace

std::string format_cell(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
}

void recompute_aggregates(MetricsReport& report) {
    const std::size_t n = report.rows.size();
    if (n == 0) {
        report.mean_iou = report.median_iou = report.mean_dice = 0.0;
        return;
    }
    double iou_sum = 0.0;
    double dice_sum = 0.0;
    std::vector<double> ious;
    ious.reserve(n);
    for (const ImageResult& row : report.rows) {
        iou_sum += row.iou;
        dice_sum += row.dice;
        ious.push_back(row.iou);
    }
    std::sort(ious.begin(), ious.end());
    report.mean_iou = iou_sum / static_cast<double>(n);
    report.mean_dice = dice_sum / static_cast<double>(n);
    report.median_iou = (n % 2 == 1)
                            ? ious[n / 2]
                            : 0.5 * (ious[n / 2 - 1] + ious[n / 2]);
}

MetricsReport run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opts,
                           PipelineModels* cache) {
    cfg.validate();
    PipelineModels local_cache;
    PipelineModels& models = cache != nullptr ? *cache : local_cache;

    MetricsReport report;
    report.fingerprint = config_fingerprint(cfg);
    report.mode = mode_name(cfg.flags);

    if (opts.write_artifacts) {
        fs::create_directories(cfg.output_dir);
        write_config_file(cfg.output_dir / "resolved.cfg", to_key_values(cfg));
    }

    const Benchmark& data = ensure_data(cfg, opts, models, report);
    const DomainDataset& targets = data.target_test;
    targets.reset_image_reads();
    targets.reset_mask_reads();

    const SegModel& seg = ensure_seg(cfg, opts, models, data, report);
    const VAEModel* vae = nullptr;
    if (pipeline_needs_vae(cfg.flags)) {
        vae = &ensure_vae(cfg, opts, models, data, seg, report);
    }

    // Leak-proofing snapshot: training must never have touched the targets.
    report.target_image_reads_after_training = targets.image_reads();
    if (report.target_image_reads_after_training != 0) {
        throw Error("pipeline stage 'train' failed: target images were read during training (" +
                    std::to_string(report.target_image_reads_after_training) + " reads)");
    }

    const int n = static_cast<int>(targets.size());
    const int workers = effective_workers(opts);
    const ImageTensor zero_edge = zero_edge_map(cfg.synth.image_size);
    const double threshold = seg.cfg.threshold;

    std::vector<MaskTensor> masks(static_cast<std::size_t>(n));
    std::vector<MaskTensor> source_only_masks(static_cast<std::size_t>(n));
    std::vector<double> final_losses(static_cast<std::size_t>(n),
                                     std::numeric_limits<double>::quiet_NaN());
    std::vector<TraceRecord> traces;
    if (cfg.flags.use_search) traces.resize(static_cast<std::size_t>(n));

    const auto eval_start = Clock::now();
    run_stage(opts, "evaluate", [&] {
        parallel_for(n, workers, [&](int i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            const ImageTensor& img = targets.image(ui);
            const ImageTensor* edge_override = cfg.flags.use_edge ? nullptr : &zero_edge;
            if (cfg.flags.use_search) {
                SearchConfig sc = cfg.search;
                sc.seed = mix_seed(cfg.search.seed, static_cast<std::uint64_t>(i));
                const auto start = Clock::now();
                auto [mask, result] = glss_predict(*vae, seg, img, sc, edge_override);
                const double wall_ms = elapsed_seconds(start) * 1e3;
                masks[ui] = std::move(mask);
                final_losses[ui] = result.final_loss;
                traces[ui] = make_trace_record(targets.id(ui), result, wall_ms);
            } else if (vae != nullptr) {
                const GaussianLatent g = encode(*vae, img);
                const ImageTensor edge =
                    cfg.flags.use_edge ? imgmath::sobel_edges(img) : zero_edge;
                const ImageTensor recon = decode(*vae, g.mu, edge);
                masks[ui] = predict_mask(seg, recon, threshold);
            } else {
                masks[ui] = predict_mask(seg, img, threshold);
            }
            // The source-only comparison column, always computed.
            source_only_masks[ui] = (vae == nullptr)
                                        ? masks[ui]
                                        : predict_mask(seg, img, threshold);
        });
    });
    report.eval_seconds = elapsed_seconds(eval_start);

    // Metrics block: the first point where target masks are read.
    report.target_mask_reads_before_metrics = targets.mask_reads();
    if (report.target_mask_reads_before_metrics != 0) {
        throw Error(
            "pipeline stage 'evaluate' failed: target masks were read before the metrics "
            "block (" +
            std::to_string(report.target_mask_reads_before_metrics) + " reads)");
    }
    run_stage(opts, "metrics", [&] {
        report.rows.resize(static_cast<std::size_t>(n));
        double source_only_sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            const MaskTensor& gt = targets.mask(ui);
            ImageResult& row = report.rows[ui];
            row.id = targets.id(ui);
            row.iou = imgmath::iou(masks[ui], gt);
            row.dice = imgmath::dice(masks[ui], gt);
            row.final_loss = final_losses[ui];
            source_only_sum += imgmath::iou(source_only_masks[ui], gt);
        }
        report.source_only_mean_iou = n > 0 ? source_only_sum / n : 0.0;
        recompute_aggregates(report);
    });

    if (opts.write_artifacts) {
        run_stage(opts, "write_reports", [&] {
            if (cfg.flags.use_search) {
                write_search_trace(cfg.output_dir / "trace.jsonl", traces);
            }
            write_metrics_report(cfg.output_dir, report);
        });
    }
    log_line(opts, "mean_iou " + format_cell(report.mean_iou) + ", source-only " +
                       format_cell(report.source_only_mean_iou) + " (" + report.mode + ")");
    return report;
}

std::vector<AblationRow> run_ablation_matrix(const ExperimentConfig& cfg,
                                             const PipelineOptions& opts) {
    cfg.validate();
    PipelineModels cache;
    std::vector<AblationRow> rows;
    rows.reserve(8);
    for (int e = 0; e <= 1; ++e) {
        for (int p = 0; p <= 1; ++p) {
            for (int l = 0; l <= 1; ++l) {
                AblationRow row;
                row.flags = AblationFlags{e == 1, p == 1, l == 1};
                ExperimentConfig row_cfg = cfg;
                row_cfg.flags = row.flags;
                row_cfg.output_dir =
                    cfg.output_dir / "rows" /
                    ("e" + std::to_string(e) + "p" + std::to_string(p) + "l" + std::to_string(l));
                log_line(opts, "ablation row edge=" + std::to_string(e) +
                                   " perceptual=" + std::to_string(p) + " search=" +
                                   std::to_string(l));
                try {
                    row.report = run_pipeline(row_cfg, opts, &cache);
                } catch (const std::exception& ex) {
                    row.failed = true;
                    row.error = sanitize_one_line(ex.what());
                    log_line(opts, "ablation row failed: " + row.error);
                }
                rows.push_back(std::move(row));
            }
        }
    }
    if (opts.write_artifacts) {
        fs::create_directories(cfg.output_dir);
        write_ablation_tsv(cfg.output_dir / "ablation.tsv", rows);
    }
    return rows;
}

std::vector<CurvePoint> run_search_curve(const ExperimentConfig& cfg, int k_max,
                                         const std::vector<SearchMetric>& metrics,
                                         const PipelineOptions& opts, PipelineModels* cache) {
    cfg.validate();
    if (k_max < 10 || k_max % 10 != 0) {
        throw InvalidInputError("curve k_max must be a positive multiple of 10, got " +
                                std::to_string(k_max));
    }
    if (metrics.empty()) throw InvalidInputError("curve needs at least one metric");

    PipelineModels local_cache;
    PipelineModels& models = cache != nullptr ? *cache : local_cache;
    MetricsReport scratch;
    scratch.fingerprint = config_fingerprint(cfg);

    if (opts.write_artifacts) {
        fs::create_directories(cfg.output_dir);
        write_config_file(cfg.output_dir / "resolved.cfg", to_key_values(cfg));
    }

    const Benchmark& data = ensure_data(cfg, opts, models, scratch);
    const SegModel& seg = ensure_seg(cfg, opts, models, data, scratch);
    const VAEModel& vae = ensure_vae(cfg, opts, models, data, seg, scratch);

    std::vector<int> checkpoints;
    for (int k = 0; k <= k_max; k += 10) checkpoints.push_back(k);
    const int n_checkpoints = static_cast<int>(checkpoints.size());

    const DomainDataset& targets = data.target_test;
    const int n = static_cast<int>(targets.size());
    const int workers = effective_workers(opts);
    const ImageTensor zero_edge = zero_edge_map(cfg.synth.image_size);
    const double threshold = seg.cfg.threshold;

    std::vector<CurvePoint> points;
    for (const SearchMetric metric : metrics) {
        log_line(opts, "curve metric " + to_string(metric) + " (k_max " + std::to_string(k_max) +
                           ")");
        // losses/ious: image-major, checkpoint-minor.
        std::vector<double> losses(static_cast<std::size_t>(n) * n_checkpoints, 0.0);
        std::vector<double> ious(static_cast<std::size_t>(n) * n_checkpoints, 0.0);
        run_stage(opts, "curve_" + to_string(metric), [&] {
            parallel_for(n, workers, [&](int i) {
                const std::size_t ui = static_cast<std::size_t>(i);
                const ImageTensor& img = targets.image(ui);
                const ImageTensor edge =
                    cfg.flags.use_edge ? imgmath::sobel_edges(img) : zero_edge;

                SearchConfig sc = cfg.search;
                sc.metric = metric;
                sc.iterations = k_max;
                sc.restarts = 1;
                sc.seed = mix_seed(cfg.search.seed, static_cast<std::uint64_t>(i));

                // Start at the posterior mean so checkpoint 0 is exactly the
                // plain-reconstruction baseline.
                const GaussianLatent g = encode(vae, img);
                Rng rng(sc.seed);
                std::vector<LatentSnapshot> snapshots;
                latent_search_with_snapshots(vae, img, sc, rng, checkpoints, &snapshots, &edge,
                                             &g.mu);
                for (int c = 0; c < n_checkpoints; ++c) {
                    const LatentSnapshot& snap = snapshots[static_cast<std::size_t>(c)];
                    const ImageTensor clone = decode(vae, snap.z_best, edge);
                    const MaskTensor mask = predict_mask(seg, clone, threshold);
                    losses[ui * n_checkpoints + static_cast<std::size_t>(c)] = snap.best_loss;
                    ious[ui * n_checkpoints + static_cast<std::size_t>(c)] =
                        imgmath::iou(mask, targets.mask(ui));
                }
            });
        });
        for (int c = 0; c < n_checkpoints; ++c) {
            CurvePoint point;
            point.metric = metric;
            point.iteration = checkpoints[static_cast<std::size_t>(c)];
            double loss_sum = 0.0;
            double iou_sum = 0.0;
            for (int i = 0; i < n; ++i) {
                loss_sum += losses[static_cast<std::size_t>(i) * n_checkpoints +
                                   static_cast<std::size_t>(c)];
                iou_sum += ious[static_cast<std::size_t>(i) * n_checkpoints +
                                static_cast<std::size_t>(c)];
            }
            point.mean_loss = n > 0 ? loss_sum / n : 0.0;
            point.mean_iou = n > 0 ? iou_sum / n : 0.0;
            points.push_back(point);
        }
    }

    if (opts.write_artifacts) {
        write_curve_tsv(cfg.output_dir / "curve.tsv", points);
    }
    return points;
}

MetricsReport run_evaluation_only(const std::filesystem::path& output_dir,
                                  const PipelineOptions& opts) {
    const fs::path cfg_path = output_dir / "resolved.cfg";
    if (!fs::exists(cfg_path)) {
        throw Error("resolved config not found: " + cfg_path.string());
    }
    ExperimentConfig cfg = resolve_config(parse_config_file(cfg_path));
    cfg.output_dir = output_dir;
    PipelineOptions eval_opts = opts;
    eval_opts.require_checkpoints = true;
    return run_pipeline(cfg, eval_opts);
}

void write_metrics_report(const std::filesystem::path& output_dir, const MetricsReport& report) {
    fs::create_directories(output_dir);
    {
        std::ofstream out(output_dir / "report.tsv", std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + (output_dir / "report.tsv").string());
        out << "id\tiou\tdice\tfinal_loss\n";
        for (const ImageResult& row : report.rows) {
            out << row.id << '\t' << format_cell(row.iou) << '\t' << format_cell(row.dice) << '\t'
                << format_cell(row.final_loss) << '\n';
        }
    }
    {
        std::ofstream out(output_dir / "summary.tsv", std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + (output_dir / "summary.tsv").string());
        out << "key\tvalue\n";
        out << "fingerprint\t" << report.fingerprint << '\n';
        out << "mode\t" << report.mode << '\n';
        out << "n_images\t" << report.rows.size() << '\n';
        out << "mean_iou\t" << format_cell(report.mean_iou) << '\n';
        out << "median_iou\t" << format_cell(report.median_iou) << '\n';
        out << "mean_dice\t" << format_cell(report.mean_dice) << '\n';
        out << "source_only_mean_iou\t" << format_cell(report.source_only_mean_iou) << '\n';
        out << "target_image_reads_after_training\t" << report.target_image_reads_after_training
            << '\n';
        out << "target_mask_reads_before_metrics\t" << report.target_mask_reads_before_metrics
            << '\n';
    }
    {
        std::ofstream out(output_dir / "timing.tsv", std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + (output_dir / "timing.tsv").string());
        out << "stage\tseconds\n";
        out << "data\t" << format_cell(report.data_seconds) << '\n';
        out << "train_seg\t" << format_cell(report.train_seg_seconds) << '\n';
        out << "train_vae\t" << format_cell(report.train_vae_seconds) << '\n';
        out << "evaluate\t" << format_cell(report.eval_seconds) << '\n';
    }
}

void write_ablation_tsv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << "use_edge\tuse_perceptual\tuse_search\tmean_iou\tmedian_iou\tmean_dice"
           "\tsource_only_mean_iou\tstatus\tfingerprint\n";
    for (const AblationRow& row : rows) {
        out << (row.flags.use_edge ? 1 : 0) << '\t' << (row.flags.use_perceptual ? 1 : 0) << '\t'
            << (row.flags.use_search ? 1 : 0) << '\t';
        if (row.failed) {
            out << "nan\tnan\tnan\tnan\tfailed: " << sanitize_one_line(row.error) << "\t\n";
        } else {
            out << format_cell(row.report.mean_iou) << '\t' << format_cell(row.report.median_iou)
                << '\t' << format_cell(row.report.mean_dice) << '\t'
                << format_cell(row.report.source_only_mean_iou) << '\t' << "ok" << '\t'
                << row.report.fingerprint << '\n';
        }
    }
}

void write_curve_tsv(const std::filesystem::path& path, const std::vector<CurvePoint>& points) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << "metric\titeration\tmean_loss\tmean_iou\n";
    for (const CurvePoint& point : points) {
        out << to_string(point.metric) << '\t' << point.iteration << '\t'
            << format_cell(point.mean_loss) << '\t' << format_cell(point.mean_iou) << '\n';
    }
}

}  // namespace glss
