#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glss/common.hpp"
#include "glss/dataset.hpp"
#include "glss/image.hpp"
#include "glss/imgmath.hpp"
#include "glss/nn/engine.hpp"
#include "glss/nn/layout.hpp"

namespace glss {

// Training configuration for the segmentation network.
struct SegConfig {
    enum class LossMode { dice_bce, focal };

    int epochs = 120;
    int batch_size = 32;
    double learning_rate = 1e-3;
    LossMode loss_mode = LossMode::dice_bce;
    imgmath::FocalParams focal{};  // gamma 2.0, alpha 0.75
    double threshold = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

SegConfig::LossMode seg_loss_mode_from_string(const std::string& s);
std::string to_string(SegConfig::LossMode mode);

// A 3-level encoder-decoder segmentation network with skip connections
// (channels 16/32/64) and a sigmoid head. The same network doubles as the
// perceptual feature extractor: `kNumTaps` intermediate activations are
// exposed, indexed 0 (shallow, full resolution) to 2 (bottleneck).
template <typename S>
struct SegModelT {
    static constexpr int kNumTaps = 3;

    SegConfig cfg;
    int image_size = 64;
    nn::ParamLayout layout;
    nn::VecX<S> params;
    std::vector<double> history;  // per-epoch mean training loss

    void validate_input(const ImageTensor& x) const;
};

using SegModel = SegModelT<float>;

// Fresh Kaiming-initialized model (no training). The architecture is fully
// convolutional; `image_size` records the resolution the model expects and
// must be divisible by 4.
template <typename S>
SegModelT<S> make_seg_model(int image_size, Rng& rng, const SegConfig& cfg = SegConfig{});

// Builds the network on `tape`, reading weights from `model.params` (which
// must outlive the tape). Returns the per-pixel probability node; when `taps`
// is non-null it receives the kNumTaps feature nodes.
template <typename S>
nn::Node<S>* build_seg_graph(nn::Tape<S>& tape, const SegModelT<S>& model, nn::Node<S>* x,
                             std::vector<nn::Node<S>*>* taps = nullptr);

// Trains on source images and masks with RMSprop (decay 0.9, epsilon 1e-8)
// under the configured loss. Deterministic given the rng state. Throws
// InvalidInputError on an empty dataset and TrainingDivergedError when the
// loss turns non-finite.
SegModel train_seg(const DomainDataset& source, const SegConfig& cfg, Rng& rng);

// Per-pixel foreground probability map, same spatial shape as the input.
ImageTensor seg_forward(const SegModel& model, const ImageTensor& x);

// Thresholded forward pass: probability >= threshold -> 1.
MaskTensor predict_mask(const SegModel& model, const ImageTensor& x, double threshold);

// Checkpoint IO (format tag "glss-seg-v1"); round-trips bit-exactly.
void save_seg_model(const SegModel& model, const std::filesystem::path& path);
SegModel load_seg_model(const std::filesystem::path& path);

extern template struct SegModelT<float>;
extern template struct SegModelT<double>;
extern template SegModelT<float> make_seg_model<float>(int, Rng&, const SegConfig&);
extern template SegModelT<double> make_seg_model<double>(int, Rng&, const SegConfig&);
extern template nn::Node<float>* build_seg_graph<float>(nn::Tape<float>&, const SegModelT<float>&,
                                                        nn::Node<float>*,
                                                        std::vector<nn::Node<float>*>*);
extern template nn::Node<double>* build_seg_graph<double>(nn::Tape<double>&,
                                                          const SegModelT<double>&,
                                                          nn::Node<double>*,
                                                          std::vector<nn::Node<double>*>*);

}  // namespace glss
