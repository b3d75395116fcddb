#include "glss/latent_search.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "glss/imgmath.hpp"
#include "glss/nn/objectives.hpp"
#include "glss/nn/optim.hpp"
#include "glss/nn/pack.hpp"

namespace glss {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

SearchMetric search_metric_from_string(const std::string& s) {
    if (s == "ssim") return SearchMetric::ssim;
    if (s == "mse") return SearchMetric::mse;
    if (s == "mae") return SearchMetric::mae;
    throw InvalidInputError("unknown search metric: " + s);
}

std::string to_string(SearchMetric metric) {
    switch (metric) {
        case SearchMetric::ssim: return "ssim";
        case SearchMetric::mse: return "mse";
        case SearchMetric::mae: return "mae";
    }
    throw InvalidInputError("unknown search metric enum value");
}

void SearchConfig::validate() const {
    if (iterations < 1) throw InvalidInputError("search iterations must be >= 1");
    if (!(step_size > 0.0)) throw InvalidInputError("search step_size must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw InvalidInputError("search momentum must lie in [0, 1)");
    }
    if (!(second_moment >= 0.0 && second_moment < 1.0)) {
        throw InvalidInputError("search second_moment must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw InvalidInputError("search epsilon must be positive");
    if (restarts < 1) throw InvalidInputError("search restarts must be >= 1");
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

std::vector<double> init_latent(int dim, Rng& rng) {
    if (dim < 1) throw InvalidInputError("init_latent: dim must be >= 1");
    return rng.normal_vector(dim);
}

namespace {

// Persistent graph for metric(target, decode(z, edge)). The latent is the one
// optimizable leaf; decoder parameters and the edge/target pixels are frozen.
template <typename S>
class ObjectiveGraph {
public:
    ObjectiveGraph(const VAEModelT<S>& model, const ImageTensor& target, const ImageTensor& edge,
                   SearchMetric metric)
        : z_(nn::VecX<S>::Zero(model.cfg.latent_dim)) {
        model.validate_image(target);
        model.validate_image(edge);
        const int size = model.cfg.image_size;
        const int half = size / 2;

        auto* z_node = tape_.param(nn::Shape4{1, model.cfg.latent_dim, 1, 1}, &z_, 0);
        auto* edge_node =
            tape_.constant(nn::Shape4{1, 1, half, half}, edge_decoder_input<S>(edge));
        clone_ = build_vae_decoder<S>(tape_, model, z_node, edge_node);

        nn::MatX<S> target_row(1, static_cast<long>(size) * size);
        nn::pack_image<S>(target, target_row, 0);
        auto* target_node = tape_.constant(nn::Shape4{1, 1, size, size}, target_row);

        switch (metric) {
            case SearchMetric::ssim:
                loss_ = ssim_loss_node(tape_, clone_, target_node);
                break;
            case SearchMetric::mse:
                loss_ = mse_node(tape_, clone_, target_node);
                break;
            case SearchMetric::mae:
                loss_ = mae_node(tape_, clone_, target_node);
                break;
        }
    }

    ObjectiveGraph(const ObjectiveGraph&) = delete;
    ObjectiveGraph& operator=(const ObjectiveGraph&) = delete;

    // Loss at z; exact gradient with respect to z when grad is non-null.
    // `context` names the caller in numeric-failure diagnostics.
    double evaluate(const nn::VecX<S>& z, nn::VecX<S>* grad, const std::string& context) {
        z_ = z;
        tape_.forward_all();
        const double loss = static_cast<double>(loss_->val(0, 0));
        if (!std::isfinite(loss)) {
            throw NumericError(context + ": non-finite objective value");
        }
        if (grad != nullptr) {
            grad->resize(z_.size());
            grad->setZero();
            tape_.backward(loss_);
            tape_.store_grads(&z_, *grad);
            if (!grad->allFinite()) {
                throw NumericError(context + ": non-finite objective gradient");
            }
        }
        return loss;
    }

    const nn::MatX<S>& clone_pixels() const { return clone_->val; }

private:
    nn::VecX<S> z_;  // declared before the tape so param nodes never dangle
    nn::Tape<S> tape_;
    nn::Node<S>* clone_ = nullptr;
    nn::Node<S>* loss_ = nullptr;
};

std::vector<double> losses_of(const std::vector<std::pair<int, double>>& trajectory) {
    std::vector<double> out;
    out.reserve(trajectory.size());
    for (const auto& [iteration, loss] : trajectory) {
        (void)iteration;
        out.push_back(loss);
    }
    return out;
}

}  // namespace

template <typename S>
double search_objective(const VAEModelT<S>& model, const nn::VecX<S>& z, const ImageTensor& target,
                        const ImageTensor& edge, SearchMetric metric, nn::VecX<S>* grad) {
    if (z.size() != model.cfg.latent_dim) {
        throw InvalidInputError("search_objective: latent vector length " +
                                std::to_string(z.size()) + " does not match latent_dim " +
                                std::to_string(model.cfg.latent_dim));
    }
    ObjectiveGraph<S> graph(model, target, edge, metric);
    return graph.evaluate(z, grad, "search_objective");
}

template double search_objective<float>(const VAEModelT<float>&, const nn::VecX<float>&,
                                        const ImageTensor&, const ImageTensor&, SearchMetric,
                                        nn::VecX<float>*);
template double search_objective<double>(const VAEModelT<double>&, const nn::VecX<double>&,
                                         const ImageTensor&, const ImageTensor&, SearchMetric,
                                         nn::VecX<double>*);

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

namespace {

// One search: restarts, ADAM over the latent, best-iterate selection,
// divergence guard, optional best-so-far snapshots (single restart only).
SearchResult run_search(const VAEModel& model, const ImageTensor& target, const SearchConfig& cfg,
                        Rng& rng, const ImageTensor* edge_override,
                        const std::vector<int>* checkpoints,
                        std::vector<LatentSnapshot>* snapshots,
                        const std::vector<double>* z_init = nullptr) {
    cfg.validate();
    model.validate_image(target);
    if (z_init != nullptr &&
        z_init->size() != static_cast<std::size_t>(model.cfg.latent_dim)) {
        throw InvalidInputError("latent search init vector has length " +
                                std::to_string(z_init->size()) + ", expected " +
                                std::to_string(model.cfg.latent_dim));
    }
    if (checkpoints != nullptr) {
        if (cfg.restarts != 1) {
            throw InvalidInputError(
                "latent_search_with_snapshots: snapshots require restarts == 1");
        }
        for (std::size_t i = 0; i < checkpoints->size(); ++i) {
            const int c = (*checkpoints)[i];
            if (c < 0 || c > cfg.iterations) {
                throw InvalidInputError("snapshot checkpoint " + std::to_string(c) +
                                        " outside [0, " + std::to_string(cfg.iterations) + "]");
            }
            if (i > 0 && c <= (*checkpoints)[i - 1]) {
                throw InvalidInputError("snapshot checkpoints must be strictly increasing");
            }
        }
        snapshots->clear();
    }

    const ImageTensor edge =
        edge_override != nullptr ? *edge_override : imgmath::sobel_edges(target);
    ObjectiveGraph<float> graph(model, target, edge, cfg.metric);

    const int dim = model.cfg.latent_dim;
    const int k_max = cfg.iterations;
    nn::VecX<float> z(dim);
    nn::VecX<float> grad(dim);
    nn::VecX<float> best_z(dim);
    nn::VecX<float> winner_z(dim);

    SearchResult result;
    bool have_result = false;

    for (int restart = 0; restart < cfg.restarts; ++restart) {
        // An explicit init replaces the prior draw for the first restart only;
        // later restarts fall back to fresh prior samples.
        const std::vector<double> z0 = (z_init != nullptr && restart == 0)
                                           ? *z_init
                                           : init_latent(dim, rng);
        for (int d = 0; d < dim; ++d) z(d) = static_cast<float>(z0[static_cast<std::size_t>(d)]);

        nn::Adam<float> adam(static_cast<float>(cfg.step_size), dim,
                             static_cast<float>(cfg.momentum),
                             static_cast<float>(cfg.second_moment),
                             static_cast<float>(cfg.epsilon));

        std::vector<std::pair<int, double>> trajectory;
        trajectory.reserve(static_cast<std::size_t>(k_max) + 1);
        double initial_loss = 0.0;
        double best_loss = std::numeric_limits<double>::infinity();
        int best_iteration = 0;
        int high_streak = 0;
        std::size_t next_checkpoint = 0;

        for (int k = 0; k <= k_max; ++k) {
            const bool need_grad = k < k_max;
            const double loss = graph.evaluate(
                z, need_grad ? &grad : nullptr,
                "latent_search (restart " + std::to_string(restart) + ", iteration " +
                    std::to_string(k) + ")");
            trajectory.emplace_back(k, loss);
            if (k == 0) initial_loss = loss;
            if (loss < best_loss) {
                best_loss = loss;
                best_iteration = k;
                best_z = z;
            }
            if (k > 0) {
                if (loss > 10.0 * initial_loss) {
                    if (++high_streak >= 10) {
                        throw SearchDivergedError(
                            "latent search diverged: loss above 10x the initial loss for 10 "
                            "consecutive iterations (restart " +
                                std::to_string(restart) + ", iteration " + std::to_string(k) +
                                ")",
                            losses_of(trajectory));
                    }
                } else {
                    high_streak = 0;
                }
            }
            if (checkpoints != nullptr && next_checkpoint < checkpoints->size() &&
                (*checkpoints)[next_checkpoint] == k) {
                LatentSnapshot snap;
                snap.iteration = k;
                snap.best_loss = best_loss;
                snap.z_best.resize(static_cast<std::size_t>(dim));
                for (int d = 0; d < dim; ++d) {
                    snap.z_best[static_cast<std::size_t>(d)] = static_cast<double>(best_z(d));
                }
                snapshots->push_back(std::move(snap));
                ++next_checkpoint;
            }
            if (need_grad) adam.step(z, grad);
        }

        if (!have_result || best_loss < result.final_loss) {
            have_result = true;
            result.trajectory = std::move(trajectory);
            result.initial_loss = initial_loss;
            result.final_loss = best_loss;
            result.restart_index = restart;
            result.best_iteration = best_iteration;
            winner_z = best_z;
        }
    }

    result.z_opt.resize(static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) {
        result.z_opt[static_cast<std::size_t>(d)] = static_cast<double>(winner_z(d));
    }
    graph.evaluate(winner_z, nullptr, "latent_search (clone synthesis)");
    result.clone =
        nn::unpack_image(graph.clone_pixels(), 0, model.cfg.image_size, model.cfg.image_size);
    return result;
}

}  // namespace

SearchResult latent_search(const VAEModel& model, const ImageTensor& target,
                           const SearchConfig& cfg, Rng& rng, const ImageTensor* edge_override) {
    return run_search(model, target, cfg, rng, edge_override, nullptr, nullptr);
}

SearchResult latent_search_with_snapshots(const VAEModel& model, const ImageTensor& target,
                                          const SearchConfig& cfg, Rng& rng,
                                          const std::vector<int>& checkpoints,
                                          std::vector<LatentSnapshot>* snapshots,
                                          const ImageTensor* edge_override,
                                          const std::vector<double>* z_init) {
    if (snapshots == nullptr) {
        throw InvalidInputError("latent_search_with_snapshots: snapshots output must be non-null");
    }
    return run_search(model, target, cfg, rng, edge_override, &checkpoints, snapshots, z_init);
}

std::pair<MaskTensor, SearchResult> glss_predict(const VAEModel& model, const SegModel& seg_model,
                                                 const ImageTensor& target, const SearchConfig& cfg,
                                                 const ImageTensor* edge_override) {
    if (seg_model.image_size != model.cfg.image_size) {
        throw InvalidInputError("glss_predict: segmentation input size " +
                                std::to_string(seg_model.image_size) +
                                " does not match decoder output size " +
                                std::to_string(model.cfg.image_size));
    }
    Rng rng(cfg.seed);
    SearchResult result = latent_search(model, target, cfg, rng, edge_override);
    MaskTensor mask = predict_mask(seg_model, result.clone, seg_model.cfg.threshold);
    return {std::move(mask), std::move(result)};
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

TraceRecord make_trace_record(const std::string& image_id, const SearchResult& result,
                              double wall_time_ms) {
    TraceRecord record;
    record.image_id = image_id;
    record.restart_index = result.restart_index;
    record.initial_loss = result.initial_loss;
    record.final_loss = result.final_loss;
    record.per_iteration_losses = losses_of(result.trajectory);
    double sum_sq = 0.0;
    for (const double v : result.z_opt) sum_sq += v * v;
    record.z_norm = std::sqrt(sum_sq);
    record.wall_time_ms = wall_time_ms;
    return record;
}

void write_search_trace(const std::filesystem::path& path,
                        const std::vector<TraceRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInputError("cannot open trace file for writing: " + path.string());
    for (const TraceRecord& record : records) {
        json j;
        j["image_id"] = record.image_id;
        j["restart_index"] = record.restart_index;
        j["initial_loss"] = record.initial_loss;
        j["final_loss"] = record.final_loss;
        j["per-iteration losses"] = record.per_iteration_losses;
        j["‖z_opt‖"] = record.z_norm;
        j["wall_time_ms"] = record.wall_time_ms;
        out << j.dump() << '\n';
    }
    if (!out) throw InvalidInputError("failed while writing trace file: " + path.string());
}

std::vector<TraceRecord> read_search_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInputError("cannot open trace file: " + path.string());
    std::vector<TraceRecord> records;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InvalidInputError("trace file " + path.string() + " line " +
                                    std::to_string(line_number) + ": " + e.what());
        }
        try {
            TraceRecord record;
            record.image_id = j.at("image_id").get<std::string>();
            record.restart_index = j.at("restart_index").get<int>();
            record.initial_loss = j.at("initial_loss").get<double>();
            record.final_loss = j.at("final_loss").get<double>();
            record.per_iteration_losses =
                j.at("per-iteration losses").get<std::vector<double>>();
            record.z_norm = j.at("‖z_opt‖").get<double>();
            record.wall_time_ms = j.at("wall_time_ms").get<double>();
            records.push_back(std::move(record));
        } catch (const json::exception& e) {
            throw InvalidInputError("trace file " + path.string() + " line " +
                                    std::to_string(line_number) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace glss
