// glss: train a segmentation net and an edge-conditioned VAE on synthetic
// source scenes, then segment domain-shifted targets by optimizing the VAE
// latent until the decoder reproduces each target and segmenting the clone.
#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "glss/common.hpp"
#include "glss/config.hpp"
#include "glss/datagen.hpp"
#include "glss/generative.hpp"
#include "glss/harness.hpp"
#include "glss/latent_search.hpp"
#include "glss/lemma.hpp"
#include "glss/segmentation.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string output = "glss-out";
    int workers = 0;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_file, "Key=value configuration file")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", args.sets,
                    "Override a configuration key (key=value; repeatable, applied in order "
                    "after the file and after --seed)");
    cmd->add_option("--seed", args.seed, "Shorthand for --set global_seed=<n>");
    cmd->add_option("--output", args.output, "Output directory for artifacts and reports");
    cmd->add_option("--workers", args.workers,
                    "Evaluation worker count (0 = GLSS_WORKERS or hardware)");
    cmd->add_flag("--quiet", args.quiet, "Suppress progress logging on stderr");
}

glss::ExperimentConfig resolve_args(const CommonArgs& args) {
    glss::KeyValueConfig kv;
    if (!args.config_file.empty()) kv = glss::parse_config_file(args.config_file);
    if (args.seed.has_value()) kv.set("global_seed", std::to_string(*args.seed));
    for (const std::string& item : args.sets) glss::apply_override(kv, item);
    glss::ExperimentConfig cfg = glss::resolve_config(kv);
    cfg.output_dir = args.output;
    return cfg;
}

glss::PipelineOptions options_of(const CommonArgs& args) {
    glss::PipelineOptions opts;
    opts.workers = args.workers;
    opts.quiet = args.quiet;
    return opts;
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Append-only invocation log; wall times live here and in timing.tsv, never
// in the byte-compared report files.
void append_run_log(const fs::path& dir, const std::string& line) {
    fs::create_directories(dir);
    std::ofstream out(dir / "glss.log", std::ios::app);
    out << utc_now() << ' ' << line << '\n';
}

void print_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw glss::Error("cannot read " + path.string());
    std::cout << in.rdbuf();
}

int run_gen_data(const CommonArgs& args) {
    const glss::ExperimentConfig cfg = resolve_args(args);
    const fs::path out = cfg.output_dir;
    append_run_log(out, "gen-data start fingerprint=" + glss::config_fingerprint(cfg));
    const glss::Benchmark bench = glss::build_benchmark(cfg.synth);
    const std::pair<const glss::DomainDataset*, const char*> splits[] = {
        {&bench.source_train, "source-train"},
        {&bench.source_test, "source-test"},
        {&bench.target_test, "target-test"},
    };
    for (const auto& [ds, name] : splits) {
        const fs::path dir = out / name;
        fs::remove_all(dir);  // splits are fully derived; stale files would break byte-identity
        glss::save_dataset(*ds, dir);
        std::cout << "wrote " << dir.string() << " (" << ds->size() << " images)\n";
    }
    glss::write_config_file(out / "resolved.cfg", glss::to_key_values(cfg));
    std::cout << "wrote " << (out / "resolved.cfg").string() << "\n";
    append_run_log(out, "gen-data ok");
    return 0;
}

int run_train_seg(const CommonArgs& args) {
    const glss::ExperimentConfig cfg = resolve_args(args);
    const fs::path out = cfg.output_dir;
    append_run_log(out, "train-seg start fingerprint=" + glss::config_fingerprint(cfg));
    const glss::Benchmark bench = glss::build_benchmark(cfg.synth);
    glss::Rng rng(cfg.seg.seed);
    const glss::SegModel model = glss::train_seg(bench.source_train, cfg.seg, rng);
    glss::save_seg_model(model, out / "seg.ckpt");
    glss::write_config_file(out / "resolved.cfg", glss::to_key_values(cfg));
    std::cout << "wrote " << (out / "seg.ckpt").string() << "\n";
    append_run_log(out, "train-seg ok");
    return 0;
}

int run_train_vae(const CommonArgs& args) {
    const glss::ExperimentConfig cfg = resolve_args(args);
    const fs::path out = cfg.output_dir;
    const fs::path seg_path = out / "seg.ckpt";
    if (!fs::exists(seg_path)) {
        throw glss::Error("segmentation checkpoint not found: " + seg_path.string() +
                          " (run train-seg first; the generative loss probes its features)");
    }
    append_run_log(out, "train-vae start fingerprint=" + glss::config_fingerprint(cfg));
    const glss::SegModel seg = glss::load_seg_model(seg_path);
    const glss::Benchmark bench = glss::build_benchmark(cfg.synth);
    glss::VAEConfig vae_cfg = cfg.vae;
    if (!cfg.flags.use_perceptual) vae_cfg.perceptual_weight = 0.0;
    glss::Rng rng(cfg.vae.seed);
    const glss::VAEModel model =
        glss::train_vae(bench.source_train, seg, vae_cfg, rng, cfg.flags.use_edge);
    glss::save_vae_model(model, out / "vae.ckpt");
    glss::write_config_file(out / "resolved.cfg", glss::to_key_values(cfg));
    std::cout << "wrote " << (out / "vae.ckpt").string() << "\n";
    append_run_log(out, "train-vae ok");
    return 0;
}

int run_run(const CommonArgs& args, bool train_missing) {
    const glss::ExperimentConfig cfg = resolve_args(args);
    append_run_log(cfg.output_dir, "run start fingerprint=" + glss::config_fingerprint(cfg));
    glss::PipelineOptions opts = options_of(args);
    opts.require_checkpoints = !train_missing;
    opts.reuse_checkpoints = true;
    glss::run_pipeline(cfg, opts);
    print_file(cfg.output_dir / "summary.tsv");
    append_run_log(cfg.output_dir, "run ok");
    return 0;
}

int run_ablate(const CommonArgs& args) {
    const glss::ExperimentConfig cfg = resolve_args(args);
    append_run_log(cfg.output_dir, "ablate start fingerprint=" + glss::config_fingerprint(cfg));
    glss::run_ablation_matrix(cfg, options_of(args));
    print_file(cfg.output_dir / "ablation.tsv");
    append_run_log(cfg.output_dir, "ablate ok");
    return 0;
}

int run_curve(const CommonArgs& args, int k_max, const std::vector<std::string>& metric_names) {
    const glss::ExperimentConfig cfg = resolve_args(args);
    append_run_log(cfg.output_dir, "curve start fingerprint=" + glss::config_fingerprint(cfg));
    std::vector<glss::SearchMetric> metrics;
    metrics.reserve(metric_names.size());
    for (const std::string& name : metric_names) {
        metrics.push_back(glss::search_metric_from_string(name));
    }
    glss::PipelineOptions opts = options_of(args);
    opts.reuse_checkpoints = true;
    const std::vector<glss::CurvePoint> points = glss::run_search_curve(cfg, k_max, metrics, opts);
    print_file(cfg.output_dir / "curve.tsv");
    std::cout << "wrote " << (cfg.output_dir / "curve.tsv").string() << " (" << points.size()
              << " points)\n";
    append_run_log(cfg.output_dir, "curve ok");
    return 0;
}

int run_lemma_check(const glss::LemmaCheckConfig& cfg, const fs::path& out) {
    cfg.validate();
    const glss::LemmaCheckReport report = glss::lemma_check(cfg);
    glss::write_lemma_tsv(out / "lemma.tsv", report);
    print_file(out / "lemma.tsv");
    bool coverage_ok = true;
    for (std::size_t i = 0; i < report.n_list.size(); ++i) {
        const double gap = std::abs(report.empirical_coverage[i] - report.predicted_coverage[i]);
        coverage_ok = coverage_ok && gap <= 3.0 * report.coverage_se[i];
    }
    std::cout << "monotone=" << (report.monotone ? "true" : "false") << "\n"
              << "coverage_within_3se=" << (coverage_ok ? "true" : "false") << "\n";
    if (!report.note.empty()) std::cout << "note=" << report.note << "\n";
    append_run_log(out, "lemma-check ok");
    return 0;
}

int run_eval(const CommonArgs& args) {
    append_run_log(args.output, "eval start");
    glss::run_evaluation_only(args.output, options_of(args));
    print_file(fs::path(args.output) / "summary.tsv");
    append_run_log(args.output, "eval ok");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "glss: source-only training plus latent-search segmentation of shifted targets.\n"
        "Artifacts, reports, and a resolved-config snapshot land in --output."};
    app.require_subcommand(1);

    CommonArgs gen_args;
    CLI::App* gen = app.add_subcommand(
        "gen-data", "Render the synthetic benchmark to PNG dataset directories");
    add_common(gen, gen_args);

    CommonArgs seg_args;
    CLI::App* train_seg = app.add_subcommand(
        "train-seg", "Train the segmentation network on source-train; writes seg.ckpt");
    add_common(train_seg, seg_args);

    CommonArgs vae_args;
    CLI::App* train_vae = app.add_subcommand(
        "train-vae", "Train the edge-conditioned VAE on source-train; writes vae.ckpt "
                     "(needs seg.ckpt)");
    add_common(train_vae, vae_args);

    CommonArgs run_args;
    bool run_train_missing = false;
    CLI::App* run = app.add_subcommand(
        "run", "Evaluate the full pipeline on target-test from existing checkpoints");
    add_common(run, run_args);
    run->add_flag("--train", run_train_missing,
                  "Train any missing checkpoint instead of failing");

    CommonArgs ablate_args;
    CLI::App* ablate = app.add_subcommand(
        "ablate", "Run all 8 on/off combinations of edge conditioning, feature loss, "
                  "and latent search");
    add_common(ablate, ablate_args);

    CommonArgs curve_args;
    int curve_k_max = 200;
    std::vector<std::string> curve_metrics = {"ssim", "mse", "mae"};
    CLI::App* curve = app.add_subcommand(
        "curve", "Sweep the search iteration budget and record loss/IoU checkpoints");
    add_common(curve, curve_args);
    curve->add_option("--k-max", curve_k_max, "Largest iteration budget (positive multiple of 10)")
        ->capture_default_str();
    curve->add_option("--metric", curve_metrics, "Search objective(s) to sweep (repeatable)")
        ->capture_default_str();

    glss::LemmaCheckConfig lemma_cfg;
    std::string lemma_distribution = "uniform-square";
    std::string lemma_metric = "euclidean";
    std::string lemma_output = "glss-out";
    CLI::App* lemma = app.add_subcommand(
        "lemma-check", "Monte-Carlo nearest-neighbor contraction and coverage check");
    lemma->add_option("--distribution", lemma_distribution,
                      "uniform-square | gaussian-2d | synthetic-image-patches")
        ->capture_default_str();
    lemma->add_option("--metric", lemma_metric, "euclidean | ssim-distance")
        ->capture_default_str();
    lemma->add_option("--n", lemma_cfg.n_list, "Sample counts (strictly increasing)")
        ->delimiter(',')
        ->capture_default_str();
    lemma->add_option("--trials", lemma_cfg.trials, "Monte-Carlo trials per n (>= 30)")
        ->capture_default_str();
    lemma->add_option("--seed", lemma_cfg.seed, "Base seed for all trials");
    lemma->add_option("--output", lemma_output, "Output directory for lemma.tsv");

    CommonArgs eval_args;
    CLI::App* eval = app.add_subcommand(
        "eval", "Recompute reports from persisted resolved.cfg and checkpoints");
    eval->add_option("--output", eval_args.output, "Artifact directory of a previous run");
    eval->add_option("--workers", eval_args.workers,
                     "Evaluation worker count (0 = GLSS_WORKERS or hardware)");
    eval->add_flag("--quiet", eval_args.quiet, "Suppress progress logging on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the parse error
        if (code == 0) return 0;
        std::cerr << app.help() << std::flush;
        return 1;
    }

    try {
        if (gen->parsed()) return run_gen_data(gen_args);
        if (train_seg->parsed()) return run_train_seg(seg_args);
        if (train_vae->parsed()) return run_train_vae(vae_args);
        if (run->parsed()) return run_run(run_args, run_train_missing);
        if (ablate->parsed()) return run_ablate(ablate_args);
        if (curve->parsed()) return run_curve(curve_args, curve_k_max, curve_metrics);
        if (lemma->parsed()) {
            lemma_cfg.distribution = glss::lemma_distribution_from_string(lemma_distribution);
            lemma_cfg.metric = glss::lemma_metric_from_string(lemma_metric);
            return run_lemma_check(lemma_cfg, lemma_output);
        }
        if (eval->parsed()) return run_eval(eval_args);
        std::cerr << "usage error: no subcommand\n";
        return 1;
    } catch (const glss::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const glss::InvalidInputError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
