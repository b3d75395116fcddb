#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

#ifndef GLSS_CLI_PATH
#error "GLSS_CLI_PATH must point at the glss binary"
#endif

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path temp_dir(const std::string& tag) {
    static int counter = 0;
    fs::path dir = fs::temp_directory_path() /
                   ("glss-cli-" + tag + "-" + std::to_string(::getpid()) + "-" +
                    std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

CliResult run_cli(const std::string& args) {
    const fs::path dir = temp_dir("io");
    const fs::path out_path = dir / "out.txt";
    const fs::path err_path = dir / "err.txt";
    const std::string command = std::string(GLSS_CLI_PATH) + " " + args + " >" +
                                out_path.string() + " 2>" + err_path.string();
    const int status = std::system(command.c_str());
    CliResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = read_all(out_path);
    result.err = read_all(err_path);
    fs::remove_all(dir);
    return result;
}

// Shared tiny experiment: every stage runs in well under a second.
const char* kTinyOverrides =
    "--set global_seed=7 --set synth.image_size=16 --set synth.n_source_train=8 "
    "--set synth.n_source_test=3 --set synth.n_target_test=4 --set seg.epochs=3 "
    "--set seg.batch_size=4 --set vae.epochs=3 --set vae.batch_size=4 "
    "--set vae.latent_dim=8 --set search.iterations=10";

bool trees_equal(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (entry.is_regular_file()) rel.push_back(fs::relative(entry.path(), a));
    }
    std::size_t b_files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(b)) {
        b_files += entry.is_regular_file() ? 1 : 0;
    }
    if (b_files != rel.size()) return false;
    for (const fs::path& r : rel) {
        if (!fs::exists(b / r)) return false;
        if (read_all(a / r) != read_all(b / r)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("help exits 0; usage problems exit 1") {
    CHECK(run_cli("--help").exit_code == 0);
    CHECK(run_cli("run --help").exit_code == 0);

    const CliResult none = run_cli("");
    CHECK(none.exit_code == 1);

    const CliResult bogus = run_cli("frobnicate");
    CHECK(bogus.exit_code == 1);

    const CliResult bad_flag = run_cli("run --no-such-flag");
    CHECK(bad_flag.exit_code == 1);
    CHECK(bad_flag.err.find("--no-such-flag") != std::string::npos);
    CHECK(bad_flag.err.find("Usage") != std::string::npos);  // help text follows the error

    const CliResult bad_key = run_cli("run --set no.such.key=1");
    CHECK(bad_key.exit_code == 1);
    CHECK(bad_key.err.find("unknown configuration key") != std::string::npos);

    const CliResult bad_value = run_cli("gen-data --set synth.image_size=three");
    CHECK(bad_value.exit_code == 1);
}

TEST_CASE("missing checkpoints exit 2 naming the path") {
    const fs::path dir = temp_dir("missing");
    const CliResult run = run_cli("run --quiet --output " + dir.string());
    CHECK(run.exit_code == 2);
    CHECK(run.err.find("segmentation checkpoint not found") != std::string::npos);
    CHECK(run.err.find((dir / "seg.ckpt").string()) != std::string::npos);

    const CliResult vae = run_cli("train-vae --quiet --output " + dir.string());
    CHECK(vae.exit_code == 2);
    CHECK(vae.err.find("segmentation checkpoint not found") != std::string::npos);

    const fs::path empty = temp_dir("missing-cfg");
    const CliResult eval = run_cli("eval --quiet --output " + empty.string());
    CHECK(eval.exit_code == 2);
    CHECK(eval.err.find("resolved config not found") != std::string::npos);
    fs::remove_all(dir);
    fs::remove_all(empty);
}

TEST_CASE("gen-data writes three split directories, byte-identical across runs") {
    const fs::path dir_a = temp_dir("gen-a");
    const fs::path dir_b = temp_dir("gen-b");
    const std::string overrides = kTinyOverrides;

    const CliResult a = run_cli("gen-data --quiet --output " + dir_a.string() + " " + overrides);
    REQUIRE(a.exit_code == 0);
    CHECK(a.out.find("source-train (8 images)") != std::string::npos);
    for (const char* split : {"source-train", "source-test", "target-test"}) {
        CHECK(fs::exists(dir_a / split / "manifest.tsv"));
        CHECK(fs::exists(dir_a / split / "images"));
        CHECK(fs::exists(dir_a / split / "masks"));
    }
    CHECK(fs::exists(dir_a / "resolved.cfg"));

    const CliResult b = run_cli("gen-data --quiet --output " + dir_b.string() + " " + overrides);
    REQUIRE(b.exit_code == 0);
    for (const char* split : {"source-train", "source-test", "target-test"}) {
        CHECK(trees_equal(dir_a / split, dir_b / split));
    }
    CHECK(read_all(dir_a / "resolved.cfg") == read_all(dir_b / "resolved.cfg"));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("train, run, and eval chain with byte-identical re-evaluation") {
    const fs::path dir = temp_dir("chain");
    const std::string overrides = kTinyOverrides;
    const std::string base = " --quiet --output " + dir.string() + " " + overrides;

    REQUIRE(run_cli("train-seg" + base).exit_code == 0);
    CHECK(fs::exists(dir / "seg.ckpt"));
    REQUIRE(run_cli("train-vae" + base).exit_code == 0);
    CHECK(fs::exists(dir / "vae.ckpt"));

    const CliResult run = run_cli("run" + base);
    REQUIRE(run.exit_code == 0);
    CHECK(run.out.find("mode\tsearch") != std::string::npos);
    CHECK(run.out.find("mean_iou") != std::string::npos);
    CHECK(fs::exists(dir / "report.tsv"));
    CHECK(fs::exists(dir / "trace.jsonl"));
    const std::string report_bytes = read_all(dir / "report.tsv");
    const std::string summary_bytes = read_all(dir / "summary.tsv");

    const CliResult eval = run_cli("eval --quiet --output " + dir.string());
    REQUIRE(eval.exit_code == 0);
    CHECK(eval.out == run.out);
    CHECK(read_all(dir / "report.tsv") == report_bytes);
    CHECK(read_all(dir / "summary.tsv") == summary_bytes);

    // The invocation log accumulates entries but is not a report file.
    const std::string log = read_all(dir / "glss.log");
    CHECK(log.find("run ok") != std::string::npos);
    CHECK(log.find("eval ok") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("lemma-check emits the table and verdicts") {
    const fs::path dir = temp_dir("lemma");
    const CliResult r = run_cli("lemma-check --n 10,100 --trials 30 --seed 5 --output " +
                                dir.string());
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(dir / "lemma.tsv"));
    CHECK(r.out.find("monotone=") != std::string::npos);
    CHECK(r.out.find("coverage_within_3se=") != std::string::npos);

    const CliResult bad = run_cli("lemma-check --metric ssim-distance --output " + dir.string());
    CHECK(bad.exit_code == 1);  // ssim-distance needs the patch distribution
    fs::remove_all(dir);
}
