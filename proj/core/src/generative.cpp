#include "glss/generative.hpp"

#include <cmath>
#include <map>
#include <memory>

#include <nlohmann/json.hpp>

#include "glss/checkpoint.hpp"
#include "glss/imgmath.hpp"
#include "glss/nn/objectives.hpp"
#include "glss/nn/optim.hpp"
#include "glss/nn/pack.hpp"

namespace glss {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kVaeFormatTag = "glss-vae-v1";
constexpr double kGradClipNorm = 5.0;
constexpr int kDecoderPenultimateChannels = 16;
const int kEncoderChannelTable[4] = {32, 64, 128, 256};

std::vector<int> encoder_channels_for(int num_stages) {
    std::vector<int> channels;
    for (int i = 0; i < num_stages; ++i) channels.push_back(kEncoderChannelTable[i]);
    return channels;
}

// Layout order is encoder first (convolution stages, then the two posterior
// heads), decoder second; the boundary offset separates the two optimizer
// groups.
nn::ParamLayout vae_layout(const VAEConfig& cfg, const std::vector<int>& enc, long* encoder_size) {
    nn::ParamLayout layout;
    const int n = static_cast<int>(enc.size());
    const long feat = static_cast<long>(enc[static_cast<std::size_t>(n - 1)]) * 16;

    const auto conv = [&layout](const std::string& name, int cin, int cout, int k) {
        layout.add(name + ".w", nn::Shape4{1, cout, 1, cin * k * k}, cin * k * k);
        layout.add(name + ".b", nn::Shape4{1, cout, 1, 1}, 0);
    };
    const auto linear = [&layout](const std::string& name, long fin, long fout) {
        layout.add(name + ".w",
                   nn::Shape4{1, static_cast<int>(fout), 1, static_cast<int>(fin)}, fin);
        layout.add(name + ".b", nn::Shape4{1, static_cast<int>(fout), 1, 1}, 0);
    };

    int cin = 1;
    for (int i = 0; i < n; ++i) {
        conv("enc" + std::to_string(i), cin, enc[static_cast<std::size_t>(i)], 3);
        cin = enc[static_cast<std::size_t>(i)];
    }
    linear("mu", feat, cfg.latent_dim);
    linear("logvar", feat, cfg.latent_dim);
    *encoder_size = layout.total();

    linear("dec_lin", cfg.latent_dim, feat);
    int ch = enc[static_cast<std::size_t>(n - 1)];
    for (int i = 0; i < n; ++i) {
        const bool last = (i == n - 1);
        const int in_ch = ch + (last ? 1 : 0);  // edge channel joins the last stage
        const int out_ch = last ? kDecoderPenultimateChannels : enc[static_cast<std::size_t>(n - 2 - i)];
        conv("dec" + std::to_string(i), in_ch, out_ch, 3);
        ch = out_ch;
    }
    conv("out", kDecoderPenultimateChannels, 1, 3);
    return layout;
}

}  // namespace

void VAEConfig::validate() const {
    if (latent_dim < 1) throw InvalidInputError("VAEConfig: latent_dim must be positive");
    if (epochs < 0) throw InvalidInputError("VAEConfig: epochs must be non-negative");
    if (batch_size < 1) throw InvalidInputError("VAEConfig: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidInputError("VAEConfig: learning_rate must be positive");
    if (!(perceptual_weight >= 0.0)) {
        throw InvalidInputError("VAEConfig: perceptual_weight must be non-negative");
    }
    if (perceptual_layer < 0 || perceptual_layer >= SegModel::kNumTaps) {
        throw InvalidInputError("VAEConfig: perceptual_layer out of range");
    }
    num_stages();  // validates image_size
}

int VAEConfig::num_stages() const {
    int size = 4, stages = 0;
    while (size < image_size && stages < 4) {
        size *= 2;
        ++stages;
    }
    if (size != image_size || stages < 1) {
        throw InvalidInputError("VAEConfig: image_size must be one of 8, 16, 32, 64");
    }
    return stages;
}

template <typename S>
void VAEModelT<S>::validate_image(const ImageTensor& x) const {
    if (x.height() != cfg.image_size || x.width() != cfg.image_size || x.channels() != 1) {
        throw InvalidInputError("expected " + std::to_string(cfg.image_size) + "x" +
                                std::to_string(cfg.image_size) + "x1 input, got " +
                                std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                "x" + std::to_string(x.channels()));
    }
}

template <typename S>
VAEModelT<S> make_vae_model(const VAEConfig& cfg, Rng& rng) {
    cfg.validate();
    VAEModelT<S> model;
    model.cfg = cfg;
    model.encoder_channels = encoder_channels_for(cfg.num_stages());
    model.layout = vae_layout(cfg, model.encoder_channels, &model.encoder_param_count);
    model.params = nn::init_params<S>(model.layout, rng);
    return model;
}

template <typename S>
void build_vae_encoder(nn::Tape<S>& tape, const VAEModelT<S>& model, nn::Node<S>* x,
                       nn::Node<S>** mu, nn::Node<S>** log_var) {
    const nn::ParamLayout& layout = model.layout;
    const nn::VecX<S>* flat = &model.params;
    nn::Node<S>* cur = x;
    for (std::size_t i = 0; i < model.encoder_channels.size(); ++i) {
        const std::string name = "enc" + std::to_string(i);
        auto* w = nn::bind_param(tape, layout, name + ".w", flat);
        auto* b = nn::bind_param(tape, layout, name + ".b", flat);
        cur = tape.leaky_relu(tape.conv2d(cur, w, b, 3, 2, 1), S(0.2));
    }
    auto* features = tape.flatten(cur);
    *mu = tape.linear(features, nn::bind_param(tape, layout, "mu.w", flat),
                      nn::bind_param(tape, layout, "mu.b", flat));
    *log_var = tape.linear(features, nn::bind_param(tape, layout, "logvar.w", flat),
                           nn::bind_param(tape, layout, "logvar.b", flat));
}

template <typename S>
nn::Node<S>* build_vae_decoder(nn::Tape<S>& tape, const VAEModelT<S>& model, nn::Node<S>* z,
                               nn::Node<S>* edge_half) {
    const nn::ParamLayout& layout = model.layout;
    const nn::VecX<S>* flat = &model.params;
    const int n = static_cast<int>(model.encoder_channels.size());
    const int deep = model.encoder_channels[static_cast<std::size_t>(n - 1)];

    auto* lin = tape.linear(z, nn::bind_param(tape, layout, "dec_lin.w", flat),
                            nn::bind_param(tape, layout, "dec_lin.b", flat));
    nn::Node<S>* cur = tape.reshape(tape.leaky_relu(lin, S(0.2)), deep, 4, 4);
    for (int i = 0; i < n; ++i) {
        if (i == n - 1) cur = tape.concat(cur, edge_half);
        const std::string name = "dec" + std::to_string(i);
        auto* w = nn::bind_param(tape, layout, name + ".w", flat);
        auto* b = nn::bind_param(tape, layout, name + ".b", flat);
        cur = tape.leaky_relu(tape.conv2d(tape.upsample2(cur), w, b, 3, 1, 1), S(0.2));
    }
    auto* out = tape.conv2d(cur, nn::bind_param(tape, layout, "out.w", flat),
                            nn::bind_param(tape, layout, "out.b", flat), 3, 1, 1);
    return tape.sigmoid(out);
}

template <typename S>
nn::MatX<S> edge_decoder_input(const ImageTensor& edge) {
    if (edge.channels() != 1) throw InvalidInputError("edge map must be single-channel");
    if (edge.height() % 2 != 0 || edge.width() % 2 != 0) {
        throw InvalidInputError("edge map dimensions must be even");
    }
    const int half_h = edge.height() / 2;
    const int half_w = edge.width() / 2;
    nn::MatX<S> out(1, static_cast<long>(half_h) * half_w);
    for (int y = 0; y < half_h; ++y) {
        for (int x = 0; x < half_w; ++x) {
            const double sum = std::tanh(edge.at(2 * y, 2 * x)) +
                               std::tanh(edge.at(2 * y, 2 * x + 1)) +
                               std::tanh(edge.at(2 * y + 1, 2 * x)) +
                               std::tanh(edge.at(2 * y + 1, 2 * x + 1));
            out(0, static_cast<long>(y) * half_w + x) = static_cast<S>(0.25 * sum);
        }
    }
    return out;
}

GaussianLatent encode(const VAEModel& model, const ImageTensor& x) {
    model.validate_image(x);
    nn::Tape<float> tape;
    auto* input = tape.input(nn::Shape4{1, 1, model.cfg.image_size, model.cfg.image_size});
    nn::Node<float>* mu = nullptr;
    nn::Node<float>* log_var = nullptr;
    build_vae_encoder<float>(tape, model, input, &mu, &log_var);
    nn::MatX<float> buf(1, static_cast<long>(model.cfg.image_size) * model.cfg.image_size);
    nn::pack_image(x, buf, 0);
    input->set(buf);
    tape.forward_all();

    GaussianLatent g;
    g.mu.resize(static_cast<std::size_t>(model.cfg.latent_dim));
    g.log_var.resize(static_cast<std::size_t>(model.cfg.latent_dim));
    for (int d = 0; d < model.cfg.latent_dim; ++d) {
        g.mu[static_cast<std::size_t>(d)] = static_cast<double>(mu->val(d, 0));
        g.log_var[static_cast<std::size_t>(d)] = static_cast<double>(log_var->val(d, 0));
    }
    return g;
}

std::vector<double> reparameterize(const GaussianLatent& g, const std::vector<double>& noise) {
    if (g.mu.size() != g.log_var.size() || g.mu.size() != noise.size()) {
        throw InvalidInputError("reparameterize: mu, log_var and noise lengths must match");
    }
    std::vector<double> z(g.mu.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = g.mu[i] + std::exp(0.5 * g.log_var[i]) * noise[i];
    }
    return z;
}

ImageTensor decode(const VAEModel& model, const std::vector<double>& z, const ImageTensor& edge) {
    if (static_cast<int>(z.size()) != model.cfg.latent_dim) {
        throw InvalidInputError("decode: latent vector length " + std::to_string(z.size()) +
                                " does not match latent_dim " +
                                std::to_string(model.cfg.latent_dim));
    }
    model.validate_image(edge);

    nn::Tape<float> tape;
    nn::MatX<float> z_mat(model.cfg.latent_dim, 1);
    for (int d = 0; d < model.cfg.latent_dim; ++d) {
        z_mat(d, 0) = static_cast<float>(z[static_cast<std::size_t>(d)]);
    }
    auto* z_node = tape.constant(nn::Shape4{1, model.cfg.latent_dim, 1, 1}, z_mat);
    const int half = model.cfg.image_size / 2;
    auto* edge_node =
        tape.constant(nn::Shape4{1, 1, half, half}, edge_decoder_input<float>(edge));
    auto* xhat = build_vae_decoder<float>(tape, model, z_node, edge_node);
    tape.forward_all();
    return nn::unpack_image(xhat->val, 0, model.cfg.image_size, model.cfg.image_size);
}

template <typename S>
nn::MatX<S> perceptual_features(const SegModelT<S>& seg_model, const ImageTensor& x, int layer) {
    if (layer < 0 || layer >= SegModelT<S>::kNumTaps) {
        throw InvalidInputError("perceptual layer index out of range: " + std::to_string(layer));
    }
    seg_model.validate_input(x);
    nn::Tape<S> tape;
    auto* input = tape.input(nn::Shape4{1, 1, seg_model.image_size, seg_model.image_size});
    std::vector<nn::Node<S>*> taps;
    build_seg_graph<S>(tape, seg_model, input, &taps);
    nn::MatX<S> buf(1, static_cast<long>(seg_model.image_size) * seg_model.image_size);
    nn::pack_image(x, buf, 0);
    input->set(buf);
    tape.forward_all();
    return taps[static_cast<std::size_t>(layer)]->val;
}

VaeLossBreakdown vae_losses(const VAEModel& model, const ImageTensor& x, const ImageTensor& xhat,
                            const GaussianLatent& g, const SegModel& seg_model,
                            const VAEConfig& cfg) {
    model.validate_image(x);
    model.validate_image(xhat);
    if (static_cast<int>(g.mu.size()) != cfg.latent_dim ||
        static_cast<int>(g.log_var.size()) != cfg.latent_dim) {
        throw InvalidInputError("vae_losses: posterior dimension mismatch");
    }

    VaeLossBreakdown out;
    out.reconstruction = imgmath::mse(x, xhat);
    const nn::MatX<float> fx = perceptual_features<float>(seg_model, x, cfg.perceptual_layer);
    const nn::MatX<float> fy = perceptual_features<float>(seg_model, xhat, cfg.perceptual_layer);
    out.perceptual = (fx.cast<double>() - fy.cast<double>()).array().square().mean();
    out.kl = imgmath::kl_diag_gaussian(
        Eigen::Map<const Eigen::VectorXd>(g.mu.data(), static_cast<long>(g.mu.size())),
        Eigen::Map<const Eigen::VectorXd>(g.log_var.data(), static_cast<long>(g.log_var.size())));
    out.decoder_total = out.reconstruction + cfg.perceptual_weight * out.perceptual;
    out.encoder_total = out.decoder_total + out.kl;
    return out;
}

VAEModel train_vae(const DomainDataset& source, const SegModel& seg_model, const VAEConfig& cfg,
                   Rng& rng, bool use_edge) {
    cfg.validate();
    if (source.empty()) throw InvalidInputError("train_vae: source dataset is empty");
    const bool use_perceptual = cfg.perceptual_weight > 0.0;
    if (use_perceptual && seg_model.image_size != cfg.image_size) {
        throw InvalidInputError("train_vae: segmentation model resolution does not match");
    }

    const int n = static_cast<int>(source.size());
    const long plane = static_cast<long>(cfg.image_size) * cfg.image_size;
    const int half = cfg.image_size / 2;
    const long half_plane = static_cast<long>(half) * half;

    // Cache packed pixels and decoder edge inputs once; training touches each
    // image every epoch.
    std::vector<nn::VecX<float>> pixel_cache(static_cast<std::size_t>(n));
    std::vector<nn::VecX<float>> edge_cache(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const ImageTensor& img = source.image(static_cast<std::size_t>(i));
        if (img.height() != cfg.image_size || img.width() != cfg.image_size ||
            img.channels() != 1) {
            throw InvalidInputError("train_vae: image shape mismatch for id " +
                                    source.id(static_cast<std::size_t>(i)));
        }
        nn::MatX<float> row(1, plane);
        nn::pack_image(img, row, 0);
        pixel_cache[static_cast<std::size_t>(i)] = row.row(0).transpose();
        if (use_edge) {
            edge_cache[static_cast<std::size_t>(i)] =
                edge_decoder_input<float>(imgmath::sobel_edges(img)).row(0).transpose();
        } else {
            edge_cache[static_cast<std::size_t>(i)] = nn::VecX<float>::Zero(half_plane);
        }
    }

    VAEModel model = make_vae_model<float>(cfg, rng);

    struct Graph {
        nn::Tape<float> tape;
        nn::InputNode<float>* x = nullptr;
        nn::InputNode<float>* edge = nullptr;
        nn::InputNode<float>* noise = nullptr;
        nn::InputNode<float>* feat_ref = nullptr;  // frozen features of x
        nn::Node<float>* l_r = nullptr;
        nn::Node<float>* l_p = nullptr;
        nn::Node<float>* kl = nullptr;
        nn::Node<float>* loss = nullptr;
        nn::MatX<float> x_buf, edge_buf, noise_buf;
    };
    struct FeatGraph {
        nn::Tape<float> tape;
        nn::InputNode<float>* x = nullptr;
        nn::Node<float>* tap = nullptr;
    };
    std::map<int, std::unique_ptr<Graph>> graphs;
    std::map<int, std::unique_ptr<FeatGraph>> feat_graphs;

    const auto graph_for = [&](int batch_n) -> Graph& {
        auto it = graphs.find(batch_n);
        if (it != graphs.end()) return *it->second;
        auto g = std::make_unique<Graph>();
        g->x = g->tape.input(nn::Shape4{batch_n, 1, cfg.image_size, cfg.image_size});
        g->edge = g->tape.input(nn::Shape4{batch_n, 1, half, half});
        g->noise = g->tape.input(nn::Shape4{batch_n, cfg.latent_dim, 1, 1});
        nn::Node<float>* mu = nullptr;
        nn::Node<float>* log_var = nullptr;
        build_vae_encoder<float>(g->tape, model, g->x, &mu, &log_var);
        auto* z = g->tape.reparameterize(mu, log_var, g->noise);
        auto* xhat = build_vae_decoder<float>(g->tape, model, z, g->edge);
        g->l_r = nn::mse_node(g->tape, xhat, g->x);
        g->kl = g->tape.kl_mean(mu, log_var);
        if (use_perceptual) {
            std::vector<nn::Node<float>*> taps;
            build_seg_graph<float>(g->tape, seg_model, xhat, &taps);
            auto* tap = taps[static_cast<std::size_t>(cfg.perceptual_layer)];
            g->feat_ref = g->tape.input(tap->shape());
            g->l_p = nn::mse_node(g->tape, tap, g->feat_ref);
            g->loss = g->tape.add(
                g->tape.add(g->l_r, g->tape.affine(g->l_p,
                                                   static_cast<float>(cfg.perceptual_weight), 0.0f)),
                g->kl);
        } else {
            g->loss = g->tape.add(g->l_r, g->kl);
        }
        g->x_buf.resize(1, batch_n * plane);
        g->edge_buf.resize(1, batch_n * half_plane);
        g->noise_buf.resize(cfg.latent_dim, batch_n);
        auto [pos, inserted] = graphs.emplace(batch_n, std::move(g));
        (void)inserted;
        return *pos->second;
    };
    const auto feat_graph_for = [&](int batch_n) -> FeatGraph& {
        auto it = feat_graphs.find(batch_n);
        if (it != feat_graphs.end()) return *it->second;
        auto g = std::make_unique<FeatGraph>();
        g->x = g->tape.input(nn::Shape4{batch_n, 1, cfg.image_size, cfg.image_size});
        std::vector<nn::Node<float>*> taps;
        build_seg_graph<float>(g->tape, seg_model, g->x, &taps);
        g->tap = taps[static_cast<std::size_t>(cfg.perceptual_layer)];
        auto [pos, inserted] = feat_graphs.emplace(batch_n, std::move(g));
        (void)inserted;
        return *pos->second;
    };

    nn::RMSprop<float> optimizer(static_cast<float>(cfg.learning_rate), model.params.size());
    nn::VecX<float> grads(model.params.size());
    const long enc_count = model.encoder_param_count;
    const long dec_count = model.params.size() - enc_count;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<int> order = rng.permutation(n);
        double sum_lr = 0.0, sum_lp = 0.0, sum_kl = 0.0;
        int batch_index = 0;
        for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const int batch_n = std::min(cfg.batch_size, n - start);
            Graph& g = graph_for(batch_n);
            for (int i = 0; i < batch_n; ++i) {
                const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)]);
                g.x_buf.block(0, i * plane, 1, plane) =
                    pixel_cache[idx].transpose();
                g.edge_buf.block(0, i * half_plane, 1, half_plane) =
                    edge_cache[idx].transpose();
            }
            for (int i = 0; i < batch_n; ++i) {
                for (int d = 0; d < cfg.latent_dim; ++d) {
                    g.noise_buf(d, i) = static_cast<float>(rng.normal());
                }
            }
            g.x->set(g.x_buf);
            g.edge->set(g.edge_buf);
            g.noise->set(g.noise_buf);
            if (use_perceptual) {
                FeatGraph& fg = feat_graph_for(batch_n);
                fg.x->set(g.x_buf);
                fg.tape.forward_all();
                g.feat_ref->set(fg.tap->val);
            }
            g.tape.forward_all();
            const double loss_value = static_cast<double>(g.loss->val(0, 0));
            if (!std::isfinite(loss_value)) {
                throw TrainingDivergedError("train_vae: non-finite loss", epoch, batch_index);
            }
            g.tape.backward(g.loss);
            grads.setZero();
            g.tape.store_grads(&model.params, grads);
            nn::clip_global_norm<float>(grads.segment(0, enc_count),
                                        static_cast<float>(kGradClipNorm));
            nn::clip_global_norm<float>(grads.segment(enc_count, dec_count),
                                        static_cast<float>(kGradClipNorm));
            optimizer.step(model.params, grads);

            sum_lr += static_cast<double>(g.l_r->val(0, 0)) * batch_n;
            sum_lp += (use_perceptual ? static_cast<double>(g.l_p->val(0, 0)) : 0.0) * batch_n;
            sum_kl += static_cast<double>(g.kl->val(0, 0)) * batch_n;
        }
        const double mean_lr = sum_lr / n;
        const double mean_lp = sum_lp / n;
        const double mean_kl = sum_kl / n;
        model.history.reconstruction.push_back(mean_lr);
        model.history.perceptual.push_back(mean_lp);
        model.history.kl.push_back(mean_kl);
        model.history.decoder_total.push_back(mean_lr + cfg.perceptual_weight * mean_lp);
        model.history.encoder_total.push_back(mean_lr + cfg.perceptual_weight * mean_lp + mean_kl);
    }
    return model;
}

void save_vae_model(const VAEModel& model, const std::filesystem::path& path) {
    json meta;
    meta["config"] = {
        {"latent_dim", model.cfg.latent_dim},
        {"epochs", model.cfg.epochs},
        {"batch_size", model.cfg.batch_size},
        {"learning_rate", model.cfg.learning_rate},
        {"perceptual_weight", model.cfg.perceptual_weight},
        {"perceptual_layer", model.cfg.perceptual_layer},
        {"image_size", model.cfg.image_size},
        {"seed", model.cfg.seed},
    };
    meta["encoder_param_count"] = model.encoder_param_count;
    meta["encoder_channels"] = model.encoder_channels;
    json arch = json::array();
    for (const auto& spec : model.layout.specs()) {
        arch.push_back({{"name", spec.name},
                        {"shape", {spec.shape.n, spec.shape.c, spec.shape.h, spec.shape.w}}});
    }
    meta["architecture"] = arch;

    checkpoint::Archive archive;
    archive.format = kVaeFormatTag;
    archive.meta_json = meta.dump();
    std::vector<float> params(static_cast<std::size_t>(model.params.size()));
    Eigen::Map<nn::VecX<float>>(params.data(), model.params.size()) = model.params;
    archive.f32_arrays.emplace_back("params", std::move(params));
    archive.f64_arrays.emplace_back("history.reconstruction", model.history.reconstruction);
    archive.f64_arrays.emplace_back("history.perceptual", model.history.perceptual);
    archive.f64_arrays.emplace_back("history.kl", model.history.kl);
    archive.f64_arrays.emplace_back("history.encoder_total", model.history.encoder_total);
    archive.f64_arrays.emplace_back("history.decoder_total", model.history.decoder_total);
    checkpoint::save(path, archive);
}

VAEModel load_vae_model(const std::filesystem::path& path) {
    const checkpoint::Archive archive = checkpoint::load(path, kVaeFormatTag);
    json meta;
    try {
        meta = json::parse(archive.meta_json);
    } catch (const json::exception& e) {
        throw InvalidInputError("corrupt checkpoint metadata in " + path.string() + ": " +
                                e.what());
    }

    VAEConfig cfg;
    const json& jc = meta.at("config");
    cfg.latent_dim = jc.at("latent_dim").get<int>();
    cfg.epochs = jc.at("epochs").get<int>();
    cfg.batch_size = jc.at("batch_size").get<int>();
    cfg.learning_rate = jc.at("learning_rate").get<double>();
    cfg.perceptual_weight = jc.at("perceptual_weight").get<double>();
    cfg.perceptual_layer = jc.at("perceptual_layer").get<int>();
    cfg.image_size = jc.at("image_size").get<int>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();

    VAEModel model;
    model.cfg = cfg;
    model.encoder_channels = encoder_channels_for(cfg.num_stages());
    model.layout = vae_layout(cfg, model.encoder_channels, &model.encoder_param_count);
    if (meta.at("encoder_param_count").get<long>() != model.encoder_param_count) {
        throw InvalidInputError("checkpoint layout mismatch in " + path.string());
    }
    const std::vector<float>& params = archive.f32("params");
    if (static_cast<long>(params.size()) != model.layout.total()) {
        throw InvalidInputError("checkpoint parameter count mismatch in " + path.string());
    }
    model.params = Eigen::Map<const nn::VecX<float>>(params.data(),
                                                     static_cast<long>(params.size()));
    model.history.reconstruction = archive.f64("history.reconstruction");
    model.history.perceptual = archive.f64("history.perceptual");
    model.history.kl = archive.f64("history.kl");
    model.history.encoder_total = archive.f64("history.encoder_total");
    model.history.decoder_total = archive.f64("history.decoder_total");
    return model;
}

template struct VAEModelT<float>;
template struct VAEModelT<double>;
template VAEModelT<float> make_vae_model<float>(const VAEConfig&, Rng&);
template VAEModelT<double> make_vae_model<double>(const VAEConfig&, Rng&);
template void build_vae_encoder<float>(nn::Tape<float>&, const VAEModelT<float>&,
                                       nn::Node<float>*, nn::Node<float>**, nn::Node<float>**);
template void build_vae_encoder<double>(nn::Tape<double>&, const VAEModelT<double>&,
                                        nn::Node<double>*, nn::Node<double>**, nn::Node<double>**);
template nn::Node<float>* build_vae_decoder<float>(nn::Tape<float>&, const VAEModelT<float>&,
                                                   nn::Node<float>*, nn::Node<float>*);
template nn::Node<double>* build_vae_decoder<double>(nn::Tape<double>&, const VAEModelT<double>&,
                                                     nn::Node<double>*, nn::Node<double>*);
template nn::MatX<float> edge_decoder_input<float>(const ImageTensor&);
template nn::MatX<double> edge_decoder_input<double>(const ImageTensor&);
template nn::MatX<float> perceptual_features<float>(const SegModelT<float>&, const ImageTensor&,
                                                    int);
template nn::MatX<double> perceptual_features<double>(const SegModelT<double>&, const ImageTensor&,
                                                      int);

}  // namespace glss
