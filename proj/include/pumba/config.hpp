#pragma once

// Run configuration: defaults, JSON round trip, and partial overrides.
// Precedence is flag > config file > default; the CLI applies flags after
// loading the file.

#include <filesystem>
#include <string>
#include <vector>

#include "pumba/model.hpp"
#include "pumba/synthetic.hpp"
#include "pumba/trainer.hpp"

namespace pumba {

struct EvalConfig {
    double threshold = 0.5;
    std::vector<size_t> success_ks = {1, 10, 25, 100, 200};
    std::vector<size_t> capri_ks = {1, 10, 100};
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SyntheticSpec synth;
    EvalConfig eval;
};

// Parses JSON over the defaults; unknown keys are configuration errors.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const RunConfig& cfg);

// "1,10,25" -> {1, 10, 25}
std::vector<size_t> parse_k_list(const std::string& text);

}  // namespace pumba
