#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "glss/common.hpp"
#include "glss/generative.hpp"
#include "glss/image.hpp"
#include "glss/segmentation.hpp"

namespace glss {

enum class SearchMetric { ssim, mse, mae };

SearchMetric search_metric_from_string(const std::string& s);
std::string to_string(SearchMetric metric);

struct SearchConfig {
    int iterations = 100;        // K
    double step_size = 0.1;      // alpha
    double momentum = 0.9;       // beta1
    double second_moment = 0.99; // beta2
    double epsilon = 1e-8;
    SearchMetric metric = SearchMetric::ssim;
    int restarts = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SearchResult {
    std::vector<double> z_opt;
    ImageTensor clone;
    std::vector<std::pair<int, double>> trajectory;  // (iteration, loss), K+1 entries
    double initial_loss = 0.0;
    double final_loss = 0.0;  // min over the trajectory; the loss at z_opt
    int restart_index = 0;
    int best_iteration = 0;
};

// Best-so-far latent captured while a search runs, for loss/IoU-vs-iteration
// curves.
struct LatentSnapshot {
    int iteration = 0;
    double best_loss = 0.0;
    std::vector<double> z_best;
};

// I.i.d. standard-normal latent initialization.
std::vector<double> init_latent(int dim, Rng& rng);

// One evaluation of metric(target, decode(z, edge)) and its exact gradient
// with respect to z (when `grad` is non-null). The decoder and everything else
// stay frozen. Throws NumericError if the forward pass produces a non-finite
// value.
template <typename S>
double search_objective(const VAEModelT<S>& model, const nn::VecX<S>& z, const ImageTensor& target,
                        const ImageTensor& edge, SearchMetric metric, nn::VecX<S>* grad);

// Gradient search over the latent space of the frozen decoder: ADAM with
// bias-corrected moments, best-iterate selection, optional independent
// restarts (best final loss wins). The decoder's edge input is the Sobel map
// of the target, held fixed; `edge_override` substitutes a different
// conditioning map (e.g. all zeros for the no-edge ablation). Throws
// SearchDivergedError (carrying the loss trajectory) when the loss exceeds
// 10x the initial loss for 10 consecutive iterations.
SearchResult latent_search(const VAEModel& model, const ImageTensor& target,
                           const SearchConfig& cfg, Rng& rng,
                           const ImageTensor* edge_override = nullptr);

// As latent_search, but also records the best-so-far latent after each
// iteration listed in `checkpoints` (values in [0, K], strictly increasing).
// Requires restarts == 1. When `z_init` is given it replaces the prior draw
// as the starting iterate (e.g. the encoder posterior mean, which makes
// checkpoint 0 the plain reconstruction).
SearchResult latent_search_with_snapshots(const VAEModel& model, const ImageTensor& target,
                                          const SearchConfig& cfg, Rng& rng,
                                          const std::vector<int>& checkpoints,
                                          std::vector<LatentSnapshot>* snapshots,
                                          const ImageTensor* edge_override = nullptr,
                                          const std::vector<double>* z_init = nullptr);

// Full inference for one target image: search for the nearest clone, then
// segment the clone. The target's pixels never reach the segmentation
// network; the predicted mask is assigned to the target unchanged. The rng
// is seeded from cfg.seed, so calls are independent and order-free.
// `edge_override`, when non-null, replaces the Sobel edge map of the target
// as the decoder conditioning input (e.g. an all-zero map).
std::pair<MaskTensor, SearchResult> glss_predict(const VAEModel& model, const SegModel& seg_model,
                                                 const ImageTensor& target, const SearchConfig& cfg,
                                                 const ImageTensor* edge_override = nullptr);

// One line-delimited trace record per target image.
struct TraceRecord {
    std::string image_id;
    int restart_index = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> per_iteration_losses;
    double z_norm = 0.0;
    double wall_time_ms = 0.0;
};

TraceRecord make_trace_record(const std::string& image_id, const SearchResult& result,
                              double wall_time_ms);

// Writes one JSON object per line with exactly the published field names.
void write_search_trace(const std::filesystem::path& path,
                        const std::vector<TraceRecord>& records);
std::vector<TraceRecord> read_search_trace(const std::filesystem::path& path);

extern template double search_objective<float>(const VAEModelT<float>&, const nn::VecX<float>&,
                                               const ImageTensor&, const ImageTensor&,
                                               SearchMetric, nn::VecX<float>*);
extern template double search_objective<double>(const VAEModelT<double>&, const nn::VecX<double>&,
                                                const ImageTensor&, const ImageTensor&,
                                                SearchMetric, nn::VecX<double>*);

}  // namespace glss
