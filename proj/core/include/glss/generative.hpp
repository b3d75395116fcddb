#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glss/common.hpp"
#include "glss/dataset.hpp"
#include "glss/image.hpp"
#include "glss/nn/engine.hpp"
#include "glss/nn/layout.hpp"
#include "glss/segmentation.hpp"

namespace glss {

// Posterior parameters produced by the encoder.
struct GaussianLatent {
    std::vector<double> mu;
    std::vector<double> log_var;
};

struct VAEConfig {
    int latent_dim = 64;
    int epochs = 120;
    int batch_size = 64;
    double learning_rate = 1e-4;
    double perceptual_weight = 2.0;  // weight of the feature-space term
    int perceptual_layer = 2;        // tap index into the segmentation network
    int image_size = 64;
    std::uint64_t seed = 0;

    void validate() const;
    // Number of stride-2 encoder stages: image_size = 4 * 2^n.
    int num_stages() const;
};

// Per-epoch loss component means recorded during training.
struct VaeHistory {
    std::vector<double> reconstruction;   // pixel mse
    std::vector<double> perceptual;       // feature mse (unweighted)
    std::vector<double> kl;               // per-image KL, batch-averaged
    std::vector<double> encoder_total;    // reconstruction + weight*perceptual + kl
    std::vector<double> decoder_total;    // reconstruction + weight*perceptual

    std::size_t epochs() const { return encoder_total.size(); }
};

// Edge-conditioned variational autoencoder. The encoder downsamples to a 4x4
// grid through stride-2 convolutions and emits mu/log-variance heads; the
// decoder mirrors it with nearest-neighbor upsampling stages and receives the
// (tanh-squashed, 2x area-averaged) edge map concatenated onto the feature
// map at half the output resolution, directly before the final upsampling
// stage. Parameters live in one flat vector: encoder first, decoder after
// `encoder_param_count`.
template <typename S>
struct VAEModelT {
    VAEConfig cfg;
    std::vector<int> encoder_channels;
    nn::ParamLayout layout;
    long encoder_param_count = 0;
    nn::VecX<S> params;
    VaeHistory history;

    void validate_image(const ImageTensor& x) const;
};

using VAEModel = VAEModelT<float>;

// Fresh Kaiming-initialized model.
template <typename S>
VAEModelT<S> make_vae_model(const VAEConfig& cfg, Rng& rng);

// Graph builders; `model.params` must outlive the tape.
template <typename S>
void build_vae_encoder(nn::Tape<S>& tape, const VAEModelT<S>& model, nn::Node<S>* x,
                       nn::Node<S>** mu, nn::Node<S>** log_var);
template <typename S>
nn::Node<S>* build_vae_decoder(nn::Tape<S>& tape, const VAEModelT<S>& model, nn::Node<S>* z,
                               nn::Node<S>* edge_half);

// Decoder edge conditioning input: tanh of the edge map, then one 2x area
// average, packed as a 1 x (H/2 * W/2) feature row.
template <typename S>
nn::MatX<S> edge_decoder_input(const ImageTensor& edge);

// Posterior parameters for one image; deterministic.
GaussianLatent encode(const VAEModel& model, const ImageTensor& x);

// z = mu + exp(0.5 * log_var) * noise.
std::vector<double> reparameterize(const GaussianLatent& g, const std::vector<double>& noise);

// Decodes a latent vector conditioned on an edge map at full resolution.
ImageTensor decode(const VAEModel& model, const std::vector<double>& z, const ImageTensor& edge);

// Activations of segmentation-network tap `layer` on input x. Gradients never
// reach the segmentation parameters through this path (they are gathered only
// for the vector that owns them).
template <typename S>
nn::MatX<S> perceptual_features(const SegModelT<S>& seg_model, const ImageTensor& x, int layer);

struct VaeLossBreakdown {
    double reconstruction = 0.0;
    double perceptual = 0.0;  // unweighted feature mse
    double kl = 0.0;
    double encoder_total = 0.0;
    double decoder_total = 0.0;
};

// Loss components for one (input, reconstruction, posterior) triple:
//   decoder_total = reconstruction + weight * perceptual
//   encoder_total = decoder_total + kl
VaeLossBreakdown vae_losses(const VAEModel& model, const ImageTensor& x, const ImageTensor& xhat,
                            const GaussianLatent& g, const SegModel& seg_model,
                            const VAEConfig& cfg);

// Trains the VAE on source images (masks ignored) with RMSprop (decay 0.9,
// epsilon 1e-8). The encoder is driven by the full objective including KL;
// the decoder by the objective without KL. Gradients are clipped to global
// norm 5.0 per parameter group. The segmentation model is used only as a
// frozen feature extractor and is not modified. With `use_edge` false the
// decoder's edge conditioning input is an all-zero map for every image.
VAEModel train_vae(const DomainDataset& source, const SegModel& seg_model, const VAEConfig& cfg,
                   Rng& rng, bool use_edge = true);

// Checkpoint IO (format tag "glss-vae-v1"); round-trips bit-exactly.
void save_vae_model(const VAEModel& model, const std::filesystem::path& path);
VAEModel load_vae_model(const std::filesystem::path& path);

extern template struct VAEModelT<float>;
extern template struct VAEModelT<double>;
extern template VAEModelT<float> make_vae_model<float>(const VAEConfig&, Rng&);
extern template VAEModelT<double> make_vae_model<double>(const VAEConfig&, Rng&);
extern template void build_vae_encoder<float>(nn::Tape<float>&, const VAEModelT<float>&,
                                              nn::Node<float>*, nn::Node<float>**,
                                              nn::Node<float>**);
extern template void build_vae_encoder<double>(nn::Tape<double>&, const VAEModelT<double>&,
                                               nn::Node<double>*, nn::Node<double>**,
                                               nn::Node<double>**);
extern template nn::Node<float>* build_vae_decoder<float>(nn::Tape<float>&,
                                                          const VAEModelT<float>&,
                                                          nn::Node<float>*, nn::Node<float>*);
extern template nn::Node<double>* build_vae_decoder<double>(nn::Tape<double>&,
                                                            const VAEModelT<double>&,
                                                            nn::Node<double>*, nn::Node<double>*);
extern template nn::MatX<float> edge_decoder_input<float>(const ImageTensor&);
extern template nn::MatX<double> edge_decoder_input<double>(const ImageTensor&);
extern template nn::MatX<float> perceptual_features<float>(const SegModelT<float>&,
                                                           const ImageTensor&, int);
extern template nn::MatX<double> perceptual_features<double>(const SegModelT<double>&,
                                                             const ImageTensor&, int);

}  // namespace glss
