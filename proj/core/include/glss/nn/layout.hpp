#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "glss/common.hpp"
#include "glss/nn/engine.hpp"

namespace glss::nn {

// Named slices of a flat parameter vector. A layout is built once per
// architecture (in a fixed order, so offsets are a pure function of the
// hyper-parameters) and used both to bind ParamNodes and to initialize
// weights.
struct ParamSpec {
    std::string name;
    Shape4 shape;
    long offset = 0;
    // Fan-in recorded for initialization; 0 means "initialize to zero"
    // (biases).
    long fan_in = 0;
};

class ParamLayout {
public:
    long add(const std::string& name, Shape4 shape, long fan_in) {
        ParamSpec spec{name, shape, total_, fan_in};
        specs_.push_back(spec);
        total_ += shape.size();
        return spec.offset;
    }

    const ParamSpec& at(const std::string& name) const {
        for (const auto& s : specs_) {
            if (s.name == name) return s;
        }
        throw InvalidInputError("parameter layout has no entry '" + name + "'");
    }

    const std::vector<ParamSpec>& specs() const { return specs_; }
    long total() const { return total_; }

private:
    std::vector<ParamSpec> specs_;
    long total_ = 0;
};

// He-style normal initialization for layers followed by LeakyReLU(slope);
// zero for entries with fan_in == 0. Draws in spec order so the result is a
// pure function of the rng state.
template <typename S>
VecX<S> init_params(const ParamLayout& layout, Rng& rng, double slope = 0.2) {
    VecX<S> params = VecX<S>::Zero(layout.total());
    for (const auto& spec : layout.specs()) {
        if (spec.fan_in <= 0) continue;
        const double stddev =
            std::sqrt(2.0 / (static_cast<double>(spec.fan_in) * (1.0 + slope * slope)));
        for (long i = 0; i < spec.shape.size(); ++i) {
            params(spec.offset + i) = static_cast<S>(rng.normal() * stddev);
        }
    }
    return params;
}

// Binds a named slice as a ParamNode on the tape.
template <typename S>
ParamNode<S>* bind_param(Tape<S>& tape, const ParamLayout& layout, const std::string& name,
                         const VecX<S>* flat) {
    const ParamSpec& spec = layout.at(name);
    return tape.param(spec.shape, flat, spec.offset);
}

}  // namespace glss::nn
