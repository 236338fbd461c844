#pragma once

// Binary checkpoint: model parameters by name, full AdamW state, the batch
// sampler's RNG state, and an opaque config blob. CRC-checked; written
// atomically via temp-file rename so readers never observe a partial file.

#include <filesystem>
#include <map>
#include <string>

#include "pumba/optim.hpp"
#include "pumba/tensor.hpp"

namespace pumba {

struct CheckpointData {
    std::string config_json;  // run configuration, restored verbatim
    ParamMap params;
    AdamW::Config opt_config;
    size_t opt_step = 0;
    std::map<std::string, AdamW::Slot> opt_slots;
    std::string sampler_rng_state;
    uint64_t steps_done = 0;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

// Copies saved values into an already-registered parameter map. Every
// target parameter must be present with an identical shape.
inline void restore_params(ParamMap& target, const ParamMap& saved) {
    for (auto& [name, p] : target) {
        auto it = saved.find(name);
        if (it == saved.end())
            throw DataError("checkpoint missing parameter '" + name + "'");
        if (it->second.shape() != p.shape())
            throw DataError("checkpoint parameter '" + name + "' has shape " +
                            shape_str(it->second.shape()) + ", model wants " +
                            shape_str(p.shape()));
        std::copy_n(it->second.data(), p.size(), p.data());
    }
    for (const auto& [name, p] : saved)
        if (!target.count(name))
            throw DataError("checkpoint holds unknown parameter '" + name + "'");
}

}  // namespace pumba
