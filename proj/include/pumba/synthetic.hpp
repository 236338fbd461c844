#pragma once

// Synthetic interface-pair generator: the stand-in for the upstream surface
// pipeline. Natives carry a matched smooth blob in the paired hydropathy
// channels plus a desolvation-energy shift of magnitude s; decoys get
// independent blobs of the same strength, so only the cross-patch
// correspondence (and the energy shift) separates the classes.

#include <filesystem>

#include "pumba/model.hpp"

namespace pumba {

struct SyntheticSpec {
    size_t complexes = 30;
    size_t decoys_per_complex = 20;
    size_t image_size = 32;  // a
    size_t channels = 13;    // N; the default channel semantics require 13
    double signal = 0.8;     // s in [0, 1]
    double noise = 0.3;
    uint64_t seed = 1;

    void validate() const {
        if (channels != 13)
            throw ConfigError("synthetic: channel layout is fixed at 13 (got " +
                              std::to_string(channels) + ")");
        if (signal < 0.0 || signal > 1.0)
            throw ConfigError("synthetic: signal strength must lie in [0, 1]");
        if (noise <= 0.0) throw ConfigError("synthetic: noise level must be positive");
        if (complexes == 0) throw ConfigError("synthetic: need at least one complex");
        if (image_size < 4) throw ConfigError("synthetic: image size too small");
    }
};

// Pure function of (spec, complex_index, model_index); model_index 0 is the
// native, 1..decoys_per_complex are decoys.
InterfacePairSample synthetic_sample(const SyntheticSpec& spec, size_t complex_index,
                                     size_t model_index);

// Generates the full container at out_dir. Content is a pure function of
// the spec; image synthesis may run on multiple workers.
void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace pumba
