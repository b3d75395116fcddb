#include "glss/segmentation.hpp"

#include <cmath>
#include <map>
#include <memory>

#include <nlohmann/json.hpp>

#include "glss/checkpoint.hpp"
#include "glss/nn/optim.hpp"
#include "glss/nn/pack.hpp"

namespace glss {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kSegFormatTag = "glss-seg-v1";

nn::ParamLayout seg_layout() {
    nn::ParamLayout layout;
    const auto conv = [&layout](const std::string& name, int cin, int cout, int k) {
        layout.add(name + ".w", nn::Shape4{1, cout, 1, cin * k * k}, cin * k * k);
        layout.add(name + ".b", nn::Shape4{1, cout, 1, 1}, 0);
    };
    conv("enc1a", 1, 16, 3);
    conv("enc1b", 16, 16, 3);
    conv("enc2a", 16, 32, 3);
    conv("enc2b", 32, 32, 3);
    conv("bot_a", 32, 64, 3);
    conv("bot_b", 64, 64, 3);
    conv("dec2a", 96, 32, 3);
    conv("dec2b", 32, 32, 3);
    conv("dec1a", 48, 16, 3);
    conv("dec1b", 16, 16, 3);
    conv("head", 16, 1, 1);
    return layout;
}

}  // namespace

void SegConfig::validate() const {
    if (epochs < 0) throw InvalidInputError("SegConfig: epochs must be non-negative");
    if (batch_size < 1) throw InvalidInputError("SegConfig: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidInputError("SegConfig: learning_rate must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw InvalidInputError("SegConfig: threshold must lie in (0,1)");
    }
    focal.validate();
}

SegConfig::LossMode seg_loss_mode_from_string(const std::string& s) {
    if (s == "dice_bce") return SegConfig::LossMode::dice_bce;
    if (s == "focal") return SegConfig::LossMode::focal;
    throw InvalidInputError("unknown segmentation loss mode: " + s);
}

std::string to_string(SegConfig::LossMode mode) {
    return mode == SegConfig::LossMode::dice_bce ? "dice_bce" : "focal";
}

template <typename S>
void SegModelT<S>::validate_input(const ImageTensor& x) const {
    if (x.height() != image_size || x.width() != image_size || x.channels() != 1) {
        throw InvalidInputError("segmentation input must be " + std::to_string(image_size) + "x" +
                                std::to_string(image_size) + "x1, got " +
                                std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                "x" + std::to_string(x.channels()));
    }
}

template <typename S>
SegModelT<S> make_seg_model(int image_size, Rng& rng, const SegConfig& cfg) {
    cfg.validate();
    if (image_size < 4 || image_size % 4 != 0) {
        throw InvalidInputError("segmentation image_size must be a positive multiple of 4");
    }
    SegModelT<S> model;
    model.cfg = cfg;
    model.image_size = image_size;
    model.layout = seg_layout();
    model.params = nn::init_params<S>(model.layout, rng);
    return model;
}

template <typename S>
nn::Node<S>* build_seg_graph(nn::Tape<S>& tape, const SegModelT<S>& model, nn::Node<S>* x,
                             std::vector<nn::Node<S>*>* taps) {
    const nn::ParamLayout& layout = model.layout;
    const nn::VecX<S>* flat = &model.params;
    const auto conv = [&](nn::Node<S>* in, const std::string& name, int k, int pad) {
        auto* w = nn::bind_param(tape, layout, name + ".w", flat);
        auto* b = nn::bind_param(tape, layout, name + ".b", flat);
        return tape.conv2d(in, w, b, k, 1, pad);
    };
    const auto block = [&](nn::Node<S>* in, const std::string& name) {
        return tape.leaky_relu(conv(in, name, 3, 1), S(0.2));
    };

    auto* e1 = block(block(x, "enc1a"), "enc1b");
    auto* e2 = block(block(tape.maxpool2(e1), "enc2a"), "enc2b");
    auto* bottleneck = block(block(tape.maxpool2(e2), "bot_a"), "bot_b");
    auto* d2 = block(block(tape.concat(tape.upsample2(bottleneck), e2), "dec2a"), "dec2b");
    auto* d1 = block(block(tape.concat(tape.upsample2(d2), e1), "dec1a"), "dec1b");
    auto* logits = conv(d1, "head", 1, 0);
    if (taps != nullptr) *taps = {e1, e2, bottleneck};
    return tape.sigmoid(logits);
}

SegModel train_seg(const DomainDataset& source, const SegConfig& cfg, Rng& rng) {
    cfg.validate();
    if (source.empty()) throw InvalidInputError("train_seg: source dataset is empty");

    const int n = static_cast<int>(source.size());
    const int image_size = source.image(0).height();
    for (int i = 0; i < n; ++i) {
        const ImageTensor& img = source.image(static_cast<std::size_t>(i));
        if (img.height() != image_size || img.width() != image_size || img.channels() != 1) {
            throw InvalidInputError("train_seg: inconsistent image shape for id " +
                                    source.id(static_cast<std::size_t>(i)));
        }
    }

    SegModel model = make_seg_model<float>(image_size, rng, cfg);
    const long plane = static_cast<long>(image_size) * image_size;

    struct Graph {
        nn::Tape<float> tape;
        nn::InputNode<float>* x = nullptr;
        nn::InputNode<float>* target = nullptr;
        nn::Node<float>* loss = nullptr;
        nn::MatX<float> x_buf;
        nn::MatX<float> t_buf;
    };
    std::map<int, std::unique_ptr<Graph>> graphs;
    const auto graph_for = [&](int batch_n) -> Graph& {
        auto it = graphs.find(batch_n);
        if (it != graphs.end()) return *it->second;
        auto g = std::make_unique<Graph>();
        g->x = g->tape.input(nn::Shape4{batch_n, 1, image_size, image_size});
        g->target = g->tape.input(nn::Shape4{batch_n, 1, image_size, image_size});
        auto* prob = build_seg_graph<float>(g->tape, model, g->x, nullptr);
        if (cfg.loss_mode == SegConfig::LossMode::dice_bce) {
            g->loss = g->tape.add(g->tape.dice_loss(prob, g->target), g->tape.bce(prob, g->target));
        } else {
            g->loss = g->tape.focal(prob, g->target, static_cast<float>(cfg.focal.gamma),
                                    static_cast<float>(cfg.focal.alpha));
        }
        g->x_buf.resize(1, batch_n * plane);
        g->t_buf.resize(1, batch_n * plane);
        auto [pos, inserted] = graphs.emplace(batch_n, std::move(g));
        (void)inserted;
        return *pos->second;
    };

    nn::RMSprop<float> optimizer(static_cast<float>(cfg.learning_rate), model.params.size());
    nn::VecX<float> grads(model.params.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<int> order = rng.permutation(n);
        double epoch_loss = 0.0;
        int batch_index = 0;
        for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const int batch_n = std::min(cfg.batch_size, n - start);
            Graph& g = graph_for(batch_n);
            for (int i = 0; i < batch_n; ++i) {
                const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)]);
                nn::pack_image(source.image(idx), g.x_buf, i);
                nn::pack_mask(source.mask(idx), g.t_buf, i);
            }
            g.x->set(g.x_buf);
            g.target->set(g.t_buf);
            g.tape.forward_all();
            const double loss_value = static_cast<double>(g.loss->val(0, 0));
            if (!std::isfinite(loss_value)) {
                throw TrainingDivergedError("train_seg: non-finite loss", epoch, batch_index);
            }
            g.tape.backward(g.loss);
            grads.setZero();
            g.tape.store_grads(grads);
            optimizer.step(model.params, grads);
            epoch_loss += loss_value * batch_n;
        }
        model.history.push_back(epoch_loss / n);
    }
    return model;
}

ImageTensor seg_forward(const SegModel& model, const ImageTensor& x) {
    model.validate_input(x);
    nn::Tape<float> tape;
    auto* input = tape.input(nn::Shape4{1, 1, model.image_size, model.image_size});
    auto* prob = build_seg_graph<float>(tape, model, input, nullptr);
    nn::MatX<float> buf(1, static_cast<long>(model.image_size) * model.image_size);
    nn::pack_image(x, buf, 0);
    input->set(buf);
    tape.forward_all();
    return nn::unpack_image(prob->val, 0, model.image_size, model.image_size);
}

MaskTensor predict_mask(const SegModel& model, const ImageTensor& x, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw InvalidInputError("predict_mask: threshold must lie in (0,1)");
    }
    const ImageTensor prob = seg_forward(model, x);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(prob.height()) * prob.width());
    for (int y = 0; y < prob.height(); ++y) {
        for (int xx = 0; xx < prob.width(); ++xx) {
            bits[static_cast<std::size_t>(y) * prob.width() + xx] =
                prob.at(y, xx, 0) >= threshold ? 1 : 0;
        }
    }
    return MaskTensor(prob.height(), prob.width(), bits);
}

void save_seg_model(const SegModel& model, const std::filesystem::path& path) {
    json meta;
    meta["image_size"] = model.image_size;
    meta["config"] = {
        {"epochs", model.cfg.epochs},
        {"batch_size", model.cfg.batch_size},
        {"learning_rate", model.cfg.learning_rate},
        {"loss_mode", to_string(model.cfg.loss_mode)},
        {"focal_gamma", model.cfg.focal.gamma},
        {"focal_alpha", model.cfg.focal.alpha},
        {"threshold", model.cfg.threshold},
        {"seed", model.cfg.seed},
    };
    json arch = json::array();
    for (const auto& spec : model.layout.specs()) {
        arch.push_back({{"name", spec.name},
                        {"shape", {spec.shape.n, spec.shape.c, spec.shape.h, spec.shape.w}}});
    }
    meta["architecture"] = arch;

    checkpoint::Archive archive;
    archive.format = kSegFormatTag;
    archive.meta_json = meta.dump();
    std::vector<float> params(static_cast<std::size_t>(model.params.size()));
    Eigen::Map<nn::VecX<float>>(params.data(), model.params.size()) = model.params;
    archive.f32_arrays.emplace_back("params", std::move(params));
    archive.f64_arrays.emplace_back("history", model.history);
    checkpoint::save(path, archive);
}

SegModel load_seg_model(const std::filesystem::path& path) {
    const checkpoint::Archive archive = checkpoint::load(path, kSegFormatTag);
    json meta;
    try {
        meta = json::parse(archive.meta_json);
    } catch (const json::exception& e) {
        throw InvalidInputError("corrupt checkpoint metadata in " + path.string() + ": " +
                                e.what());
    }

    SegModel model;
    model.image_size = meta.at("image_size").get<int>();
    const json& cfg = meta.at("config");
    model.cfg.epochs = cfg.at("epochs").get<int>();
    model.cfg.batch_size = cfg.at("batch_size").get<int>();
    model.cfg.learning_rate = cfg.at("learning_rate").get<double>();
    model.cfg.loss_mode = seg_loss_mode_from_string(cfg.at("loss_mode").get<std::string>());
    model.cfg.focal.gamma = cfg.at("focal_gamma").get<double>();
    model.cfg.focal.alpha = cfg.at("focal_alpha").get<double>();
    model.cfg.threshold = cfg.at("threshold").get<double>();
    model.cfg.seed = cfg.at("seed").get<std::uint64_t>();

    model.layout = seg_layout();
    const std::vector<float>& params = archive.f32("params");
    if (static_cast<long>(params.size()) != model.layout.total()) {
        throw InvalidInputError("checkpoint parameter count mismatch in " + path.string());
    }
    model.params = Eigen::Map<const nn::VecX<float>>(params.data(),
                                                     static_cast<long>(params.size()));
    model.history = archive.f64("history");
    return model;
}

template struct SegModelT<float>;
template struct SegModelT<double>;
template SegModelT<float> make_seg_model<float>(int, Rng&, const SegConfig&);
template SegModelT<double> make_seg_model<double>(int, Rng&, const SegConfig&);
template nn::Node<float>* build_seg_graph<float>(nn::Tape<float>&, const SegModelT<float>&,
                                                 nn::Node<float>*, std::vector<nn::Node<float>*>*);
template nn::Node<double>* build_seg_graph<double>(nn::Tape<double>&, const SegModelT<double>&,
                                                   nn::Node<double>*,
                                                   std::vector<nn::Node<double>*>*);

}  // namespace glss
