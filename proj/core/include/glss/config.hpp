#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "glss/datagen.hpp"
#include "glss/generative.hpp"
#include "glss/latent_search.hpp"
#include "glss/segmentation.hpp"

namespace glss {

// Component toggles for the pipeline: edge conditioning of the decoder, the
// perceptual (feature-space) training term, and latent search at inference.
// Each is independently toggleable; with all three off the pipeline reduces
// to the plain source-only segmentation baseline.
struct AblationFlags {
    bool use_edge = true;
    bool use_perceptual = true;
    bool use_search = true;
};

// Full experiment description. `output_dir` is runtime plumbing (where
// artifacts land) and deliberately not part of the serialized configuration
// or its fingerprint; everything else round-trips through the flat key=value
// form below. The VAE resolution is tied to the benchmark resolution, so
// `vae.image_size` is not an independent key.
struct ExperimentConfig {
    SynthConfig synth;
    VAEConfig vae;
    SegConfig seg;
    SearchConfig search;
    AblationFlags flags;
    std::filesystem::path output_dir = "glss-out";
    std::uint64_t global_seed = 0;

    void validate() const;
};

// Flat key -> value text store with dotted section keys (e.g.
// "search.iterations"). Keys are kept sorted, which defines the canonical
// serialization order.
struct KeyValueConfig {
    std::map<std::string, std::string> values;

    bool contains(const std::string& key) const { return values.count(key) != 0; }
    // Validates the key charset ([a-z0-9_.]); overwriting is allowed.
    void set(const std::string& key, const std::string& value);
};

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
// A key repeated within the same text is an error (typo safety); `origin` is
// used in error messages. Values are trimmed but may contain interior spaces.
KeyValueConfig parse_config_text(const std::string& text, const std::string& origin);
KeyValueConfig parse_config_file(const std::filesystem::path& path);

// Applies one "key=value" command-line override onto an existing store
// (overwrites are the point here).
void apply_override(KeyValueConfig& kv, const std::string& assignment);

// Applies `kv` onto defaults and returns the fully resolved configuration.
// Unknown keys and malformed values raise InvalidInputError naming the key.
// Per-stage seeds (synth.seed, seg.seed, vae.seed, search.seed) that are not
// given explicitly are derived from global_seed via the seed-mixing function,
// so distinct stages never share raw streams. The result is validated.
ExperimentConfig resolve_config(const KeyValueConfig& kv);

// Materializes every configuration key (defaults and derived seeds included)
// in canonical form. resolve_config(to_key_values(cfg)) reproduces `cfg`
// exactly; doubles are rendered shortest-round-trip.
KeyValueConfig to_key_values(const ExperimentConfig& cfg);

// Canonical text: one "key = value" line per entry, sorted by key.
std::string render_config(const KeyValueConfig& kv);
void write_config_file(const std::filesystem::path& path, const KeyValueConfig& kv);

// FNV-1a 64-bit hash.
std::uint64_t fnv1a64(std::string_view bytes);

// 16-hex-digit fingerprint of the canonical serialization of `cfg`; embedded
// in every report so any number is traceable to exact settings.
std::string config_fingerprint(const ExperimentConfig& cfg);

}  // namespace glss
