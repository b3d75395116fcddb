// Microbenchmarks for the hot paths: image metrics, network forward passes,
// and one latent-search gradient step. Models are trained for a single epoch
// on a few images — throughput does not depend on weight quality.
#include <benchmark/benchmark.h>

#include <utility>

#include "glss/common.hpp"
#include "glss/datagen.hpp"
#include "glss/generative.hpp"
#include "glss/imgmath.hpp"
#include "glss/latent_search.hpp"
#include "glss/segmentation.hpp"

namespace {

glss::SynthConfig tiny_synth(int size) {
    glss::SynthConfig cfg;
    cfg.image_size = size;
    cfg.n_source_train = 4;
    cfg.n_source_test = 1;
    cfg.n_target_test = 1;
    cfg.seed = 11;
    return cfg;
}

struct Fixture {
    glss::Benchmark bench;
    glss::SegModel seg;
    glss::VAEModel vae;
    glss::ImageTensor target;
    glss::ImageTensor edges;

    explicit Fixture(int size)
        : bench(glss::build_benchmark(tiny_synth(size))),
          seg(make_seg(bench)),
          vae(make_vae(bench, seg)),
          target(bench.target_test.image(0)),
          edges(glss::imgmath::sobel_edges(target)) {}

    static glss::SegModel make_seg(const glss::Benchmark& bench) {
        glss::SegConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = 4;
        glss::Rng rng(1);
        return glss::train_seg(bench.source_train, cfg, rng);
    }

    static glss::VAEModel make_vae(const glss::Benchmark& bench, const glss::SegModel& seg) {
        glss::VAEConfig cfg;
        cfg.image_size = bench.source_train.image(0).height();
        cfg.epochs = 1;
        cfg.batch_size = 4;
        glss::Rng rng(2);
        return glss::train_vae(bench.source_train, seg, cfg, rng, true);
    }
};

Fixture& fixture64() {
    static Fixture f(64);
    return f;
}

void BM_SceneRender(benchmark::State& state) {
    const glss::SynthConfig cfg = tiny_synth(static_cast<int>(state.range(0)));
    glss::Rng rng(3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(glss::generate_scene(cfg, rng));
    }
}
BENCHMARK(BM_SceneRender)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_SobelEdges(benchmark::State& state) {
    const Fixture& f = fixture64();
    for (auto _ : state) {
        benchmark::DoNotOptimize(glss::imgmath::sobel_edges(f.target));
    }
}
BENCHMARK(BM_SobelEdges)->Unit(benchmark::kMicrosecond);

void BM_Ssim(benchmark::State& state) {
    const Fixture& f = fixture64();
    const glss::ImageTensor other = f.bench.source_train.image(0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(glss::imgmath::ssim(f.target, other));
    }
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMicrosecond);

void BM_SegPredict(benchmark::State& state) {
    const Fixture& f = fixture64();
    for (auto _ : state) {
        benchmark::DoNotOptimize(glss::predict_mask(f.seg, f.target, 0.5));
    }
}
BENCHMARK(BM_SegPredict)->Unit(benchmark::kMicrosecond);

void BM_VaeEncodeDecode(benchmark::State& state) {
    const Fixture& f = fixture64();
    for (auto _ : state) {
        const glss::GaussianLatent g = glss::encode(f.vae, f.target);
        benchmark::DoNotOptimize(glss::decode(f.vae, g.mu, f.edges));
    }
}
BENCHMARK(BM_VaeEncodeDecode)->Unit(benchmark::kMicrosecond);

void BM_SearchIterations(benchmark::State& state) {
    const Fixture& f = fixture64();
    glss::SearchConfig cfg;
    cfg.iterations = static_cast<int>(state.range(0));
    cfg.restarts = 1;
    glss::Rng rng(4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(glss::latent_search(f.vae, f.target, cfg, rng));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SearchIterations)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
