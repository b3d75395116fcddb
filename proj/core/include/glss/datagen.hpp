#pragma once

// Synthetic paired-domain benchmark: bright smooth blobs ("skin") over a
// textured darker background form the source domain; a fixed photometric
// shift (gamma, offset, blur, noise) produces the target domain while the
// geometry — and therefore every mask — stays put.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glss/common.hpp"
#include "glss/dataset.hpp"
#include "glss/image.hpp"

namespace glss {

enum class ShapeKind { ellipse, capsule, polygon };

ShapeKind shape_kind_from_string(const std::string& s);
std::string to_string(ShapeKind kind);

// Photometric remap applied to target-domain images:
// clamp01(blur(img^gamma + offset, blur_sigma) + noise(noise_std)).
struct DomainShift {
    double gamma = 3.0;
    double brightness_offset = 0.08;
    double blur_sigma = 1.0;
    double noise_std = 0.05;

    bool is_identity() const;
    void validate() const;
};

struct SynthConfig {
    int n_source_train = 400;
    int n_source_test = 100;
    int n_target_test = 100;
    int image_size = 64;
    std::vector<ShapeKind> shape_palette = {ShapeKind::ellipse, ShapeKind::capsule,
                                            ShapeKind::polygon};
    double skin_intensity_lo = 0.45;
    double skin_intensity_hi = 0.80;
    double background_base = 0.15;
    double background_amplitude = 0.35;  // texture range on top of the base
    DomainShift target_shift;
    std::uint64_t seed = 0;

    void validate() const;
};

// Renders one scene: 1-3 anti-aliased blobs with mild intensity gradients
// over value-noise background, quantized to the 8-bit grid. The mask is the
// exact pixel-center rasterization of the blob interiors and is never empty
// nor full.
std::pair<ImageTensor, MaskTensor> generate_scene(const SynthConfig& cfg, Rng& rng);

// img^gamma + offset, Gaussian blur, additive Gaussian noise, clamp to [0,1],
// in that order. The identity shift returns the input bit-exactly and draws
// nothing from the rng. No quantization: callers storing 8-bit data apply
// quantize8 themselves.
ImageTensor apply_domain_shift(const ImageTensor& img, const DomainShift& shift, Rng& rng);

// Rounds every pixel to the nearest 1/255 step (the stored-file grid).
ImageTensor quantize8(const ImageTensor& img);

struct Benchmark {
    DomainDataset source_train{DomainTag::source, SplitTag::train};
    DomainDataset source_test{DomainTag::source, SplitTag::test};
    DomainDataset target_test{DomainTag::target, SplitTag::test};
};

// Renders all three splits from disjoint per-scene seed streams. Target-test
// scenes are fresh (never reuse a source scene) and receive the domain shift;
// no target training split exists at all.
Benchmark build_benchmark(const SynthConfig& cfg);

// Directory layout: <root>/{images,masks}/<id>.png (8-bit grayscale; mask
// values exactly {0,255}) plus manifest.tsv with columns (id, domain, split).
void save_dataset(const DomainDataset& ds, const std::filesystem::path& root);

// Loads the layout above. Images are normalized to [0,1] by /255. A missing
// mask or a mask value other than {0,255} raises MalformedDatasetError naming
// the file; a present-but-empty directory yields an empty dataset and a
// warning on stderr. Without a manifest the tags default to source/train.
DomainDataset load_dataset(const std::filesystem::path& root);

}  // namespace glss
