#include "glss/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include "glss/common.hpp"

namespace glss {
namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool valid_key(const std::string& key) {
    if (key.empty()) return false;
    for (char c : key) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
        if (!ok) return false;
    }
    return true;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& why) {
    throw InvalidInputError("invalid value for " + key + ": '" + value + "' (" + why + ")");
}

int parse_int(const std::string& key, const std::string& value) {
    int out = 0;
    const char* first = value.data();
    const char* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last) bad_value(key, value, "expected an integer");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const char* first = value.data();
    const char* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last) bad_value(key, value, "expected an unsigned integer");
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    const char* first = value.data();
    const char* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last) bad_value(key, value, "expected a number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    bad_value(key, value, "expected true or false");
}

std::vector<ShapeKind> parse_shapes(const std::string& key, const std::string& value) {
    std::vector<ShapeKind> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string name = trim(item);
        if (name.empty()) bad_value(key, value, "empty list element");
        out.push_back(shape_kind_from_string(name));
    }
    if (out.empty()) bad_value(key, value, "expected a comma-separated shape list");
    return out;
}

std::string format_int(long long v) { return std::to_string(v); }
std::string format_u64(std::uint64_t v) { return std::to_string(v); }
std::string format_bool(bool v) { return v ? "true" : "false"; }

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw Error("format_double: to_chars failed");
    return std::string(buf, ptr);
}

std::string format_shapes(const std::vector<ShapeKind>& shapes) {
    std::string out;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (i) out += ',';
        out += to_string(shapes[i]);
    }
    return out;
}

// One table drives resolution and serialization, so the two can never drift.
struct KeySpec {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> apply;
    std::function<std::string(const ExperimentConfig&)> render;
};

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs = [] {
        std::vector<KeySpec> v;
        auto add = [&v](std::string key, auto getter) {
            using Field = std::remove_reference_t<decltype(getter(std::declval<ExperimentConfig&>()))>;
            KeySpec spec;
            spec.key = key;
            if constexpr (std::is_same_v<Field, int>) {
                spec.apply = [key, getter](ExperimentConfig& c, const std::string& s) {
                    getter(c) = parse_int(key, s);
                };
                spec.render = [getter](const ExperimentConfig& c) {
                    return format_int(getter(const_cast<ExperimentConfig&>(c)));
                };
            } else if constexpr (std::is_same_v<Field, std::uint64_t>) {
                spec.apply = [key, getter](ExperimentConfig& c, const std::string& s) {
                    getter(c) = parse_u64(key, s);
                };
                spec.render = [getter](const ExperimentConfig& c) {
                    return format_u64(getter(const_cast<ExperimentConfig&>(c)));
                };
            } else if constexpr (std::is_same_v<Field, double>) {
                spec.apply = [key, getter](ExperimentConfig& c, const std::string& s) {
                    getter(c) = parse_double(key, s);
                };
                spec.render = [getter](const ExperimentConfig& c) {
                    return format_double(getter(const_cast<ExperimentConfig&>(c)));
                };
            } else if constexpr (std::is_same_v<Field, bool>) {
                spec.apply = [key, getter](ExperimentConfig& c, const std::string& s) {
                    getter(c) = parse_bool(key, s);
                };
                spec.render = [getter](const ExperimentConfig& c) {
                    return format_bool(getter(const_cast<ExperimentConfig&>(c)));
                };
            } else {
                static_assert(std::is_same_v<Field, void>, "unsupported field type");
            }
            v.push_back(std::move(spec));
        };

        add("global_seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.global_seed; });

        add("ablation.use_edge", [](ExperimentConfig& c) -> bool& { return c.flags.use_edge; });
        add("ablation.use_perceptual",
            [](ExperimentConfig& c) -> bool& { return c.flags.use_perceptual; });
        add("ablation.use_search", [](ExperimentConfig& c) -> bool& { return c.flags.use_search; });

        add("synth.n_source_train",
            [](ExperimentConfig& c) -> int& { return c.synth.n_source_train; });
        add("synth.n_source_test",
            [](ExperimentConfig& c) -> int& { return c.synth.n_source_test; });
        add("synth.n_target_test",
            [](ExperimentConfig& c) -> int& { return c.synth.n_target_test; });
        add("synth.image_size", [](ExperimentConfig& c) -> int& { return c.synth.image_size; });
        add("synth.skin_intensity_lo",
            [](ExperimentConfig& c) -> double& { return c.synth.skin_intensity_lo; });
        add("synth.skin_intensity_hi",
            [](ExperimentConfig& c) -> double& { return c.synth.skin_intensity_hi; });
        add("synth.background_base",
            [](ExperimentConfig& c) -> double& { return c.synth.background_base; });
        add("synth.background_amplitude",
            [](ExperimentConfig& c) -> double& { return c.synth.background_amplitude; });
        add("synth.shift.gamma",
            [](ExperimentConfig& c) -> double& { return c.synth.target_shift.gamma; });
        add("synth.shift.brightness_offset",
            [](ExperimentConfig& c) -> double& { return c.synth.target_shift.brightness_offset; });
        add("synth.shift.blur_sigma",
            [](ExperimentConfig& c) -> double& { return c.synth.target_shift.blur_sigma; });
        add("synth.shift.noise_std",
            [](ExperimentConfig& c) -> double& { return c.synth.target_shift.noise_std; });
        add("synth.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.synth.seed; });

        // The shape list and the two enum-valued keys need custom converters.
        {
            KeySpec spec;
            spec.key = "synth.shapes";
            spec.apply = [](ExperimentConfig& c, const std::string& s) {
                c.synth.shape_palette = parse_shapes("synth.shapes", s);
            };
            spec.render = [](const ExperimentConfig& c) {
                return format_shapes(c.synth.shape_palette);
            };
            v.push_back(std::move(spec));
        }

        add("seg.epochs", [](ExperimentConfig& c) -> int& { return c.seg.epochs; });
        add("seg.batch_size", [](ExperimentConfig& c) -> int& { return c.seg.batch_size; });
        add("seg.learning_rate",
            [](ExperimentConfig& c) -> double& { return c.seg.learning_rate; });
        {
            KeySpec spec;
            spec.key = "seg.loss_mode";
            spec.apply = [](ExperimentConfig& c, const std::string& s) {
                c.seg.loss_mode = seg_loss_mode_from_string(s);
            };
            spec.render = [](const ExperimentConfig& c) { return to_string(c.seg.loss_mode); };
            v.push_back(std::move(spec));
        }
        add("seg.focal_gamma", [](ExperimentConfig& c) -> double& { return c.seg.focal.gamma; });
        add("seg.focal_alpha", [](ExperimentConfig& c) -> double& { return c.seg.focal.alpha; });
        add("seg.threshold", [](ExperimentConfig& c) -> double& { return c.seg.threshold; });
        add("seg.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.seg.seed; });

        add("vae.latent_dim", [](ExperimentConfig& c) -> int& { return c.vae.latent_dim; });
        add("vae.epochs", [](ExperimentConfig& c) -> int& { return c.vae.epochs; });
        add("vae.batch_size", [](ExperimentConfig& c) -> int& { return c.vae.batch_size; });
        add("vae.learning_rate",
            [](ExperimentConfig& c) -> double& { return c.vae.learning_rate; });
        add("vae.perceptual_weight",
            [](ExperimentConfig& c) -> double& { return c.vae.perceptual_weight; });
        add("vae.perceptual_layer",
            [](ExperimentConfig& c) -> int& { return c.vae.perceptual_layer; });
        add("vae.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.vae.seed; });

        add("search.iterations", [](ExperimentConfig& c) -> int& { return c.search.iterations; });
        add("search.step_size", [](ExperimentConfig& c) -> double& { return c.search.step_size; });
        add("search.momentum", [](ExperimentConfig& c) -> double& { return c.search.momentum; });
        add("search.second_moment",
            [](ExperimentConfig& c) -> double& { return c.search.second_moment; });
        add("search.epsilon", [](ExperimentConfig& c) -> double& { return c.search.epsilon; });
        {
            KeySpec spec;
            spec.key = "search.metric";
            spec.apply = [](ExperimentConfig& c, const std::string& s) {
                c.search.metric = search_metric_from_string(s);
            };
            spec.render = [](const ExperimentConfig& c) { return to_string(c.search.metric); };
            v.push_back(std::move(spec));
        }
        add("search.restarts", [](ExperimentConfig& c) -> int& { return c.search.restarts; });
        add("search.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.search.seed; });

        return v;
    }();
    return specs;
}

const KeySpec* find_spec(const std::string& key) {
    for (const KeySpec& spec : key_specs()) {
        if (spec.key == key) return &spec;
    }
    return nullptr;
}

}  // namespace

void ExperimentConfig::validate() const {
    synth.validate();
    vae.validate();
    seg.validate();
    search.validate();
    if (vae.image_size != synth.image_size) {
        throw InvalidInputError("vae.image_size must match synth.image_size");
    }
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    if (!valid_key(key)) {
        throw InvalidInputError("invalid configuration key: '" + key + "'");
    }
    values[key] = value;
}

KeyValueConfig parse_config_text(const std::string& text, const std::string& origin) {
    KeyValueConfig kv;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(line_no);
        if (eq == std::string::npos) {
            throw InvalidInputError("expected 'key = value' at " + where);
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!valid_key(key)) {
            throw InvalidInputError("invalid configuration key '" + key + "' at " + where);
        }
        if (kv.contains(key)) {
            throw InvalidInputError("duplicate configuration key '" + key + "' at " + where);
        }
        kv.values[key] = value;
    }
    return kv;
}

KeyValueConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInputError("cannot open config file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path.string());
}

void apply_override(KeyValueConfig& kv, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw InvalidInputError("override must look like key=value, got '" + assignment + "'");
    }
    kv.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig resolve_config(const KeyValueConfig& kv) {
    ExperimentConfig cfg;
    for (const auto& [key, value] : kv.values) {
        const KeySpec* spec = find_spec(key);
        if (!spec) throw InvalidInputError("unknown configuration key: " + key);
        spec->apply(cfg, value);
    }
    // Stage seeds not pinned explicitly are derived from the global seed, so
    // one knob reseeds the whole experiment without aliasing streams.
    if (!kv.contains("synth.seed")) cfg.synth.seed = mix_seed(cfg.global_seed, 101);
    if (!kv.contains("seg.seed")) cfg.seg.seed = mix_seed(cfg.global_seed, 102);
    if (!kv.contains("vae.seed")) cfg.vae.seed = mix_seed(cfg.global_seed, 103);
    if (!kv.contains("search.seed")) cfg.search.seed = mix_seed(cfg.global_seed, 104);
    cfg.vae.image_size = cfg.synth.image_size;
    cfg.validate();
    return cfg;
}

KeyValueConfig to_key_values(const ExperimentConfig& cfg) {
    KeyValueConfig kv;
    for (const KeySpec& spec : key_specs()) {
        kv.values[spec.key] = spec.render(cfg);
    }
    return kv;
}

std::string render_config(const KeyValueConfig& kv) {
    std::string out;
    for (const auto& [key, value] : kv.values) {
        out += key;
        out += " = ";
        out += value;
        out += '\n';
    }
    return out;
}

void write_config_file(const std::filesystem::path& path, const KeyValueConfig& kv) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write config file: " + path.string());
    out << render_config(kv);
    if (!out) throw Error("failed writing config file: " + path.string());
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::string config_fingerprint(const ExperimentConfig& cfg) {
    const std::string text = render_config(to_key_values(cfg));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return std::string(buf);
}

}  // namespace glss
