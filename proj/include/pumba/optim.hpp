#pragma once

// AdamW with decoupled weight decay: the decay multiplies parameters
// directly and never touches the moment estimates, so zero-gradient steps
// shrink parameters by exactly (1 - lr*wd).

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pumba/tensor.hpp"

namespace pumba {

class AdamW {
public:
    struct Config {
        double lr = 1e-4;
        double weight_decay = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    struct Slot {
        std::vector<float> m, v;
    };

    AdamW() = default;
    explicit AdamW(Config cfg) : cfg_(cfg) {}

    void step(ParamMap& params) {
        ++t_;
        const float decay = float(1.0 - cfg_.lr * cfg_.weight_decay);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (auto& [name, p] : params) {
            auto& slot = slots_[name];
            if (slot.m.size() != p.size()) {
                slot.m.assign(p.size(), 0.0f);
                slot.v.assign(p.size(), 0.0f);
            }
            const auto& g = p.grad();
            float* w = p.data();
            for (size_t i = 0; i < p.size(); ++i) {
                w[i] *= decay;
                slot.m[i] = float(cfg_.beta1) * slot.m[i] + float(1.0 - cfg_.beta1) * g[i];
                slot.v[i] = float(cfg_.beta2) * slot.v[i] + float(1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = double(slot.m[i]) / bc1;
                const double vhat = double(slot.v[i]) / bc2;
                w[i] -= float(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    size_t step_count() const { return t_; }
    const Config& config() const { return cfg_; }

    // checkpoint access
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }
    void set_step_count(size_t t) { t_ = t; }

private:
    Config cfg_;
    std::map<std::string, Slot> slots_;
    size_t t_ = 0;
};

}  // namespace pumba
