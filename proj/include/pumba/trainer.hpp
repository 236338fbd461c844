#pragma once

// Optimization loop: complex-grouped batching, combined loss, one AdamW
// step per batch. Single optimizer thread; forward/backward share one tape.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pumba/losses.hpp"
#include "pumba/model.hpp"
#include "pumba/optim.hpp"

namespace pumba {

struct TrainConfig {
    size_t steps = 400;
    size_t batch_complexes = 4;
    size_t decoys_per_complex = 3;
    AdamW::Config opt;
    LossWeights weights;
    uint64_t seed = 42;
    size_t log_every = 10;
};

struct LossBreakdown {
    double total = 0, bce = 0, supcon = 0, rank = 0;
};

// One optimization step over an assembled batch: weighted BCE + SupCon on
// the final class-token embeddings + within-complex margin ranking, one
// AdamW update. Returns the per-term values for logging.
inline LossBreakdown train_step(const std::vector<const InterfacePairSample*>& batch,
                                PumbaParams& model, ParamMap& params, AdamW& opt,
                                const LossWeights& weights) {
    weights.validate();
    if (batch.empty()) throw ContractError("train_step: empty batch");

    GradTape tape;
    LossBreakdown out;
    {
        TapeScope<float> scope(tape);
        std::vector<Tensor> scores, embeddings;
        std::vector<int> labels;
        std::vector<float> label_vals;
        for (const auto* s : batch) {
            auto fwd = model_forward(s->image, energies_tensor(s->energies), model);
            scores.push_back(fwd.score);
            embeddings.push_back(fwd.final_cls);
            labels.push_back(s->label);
            label_vals.push_back(float(s->label));
        }
        auto score_vec = concat(scores, 0);  // [B]
        auto label_vec = Tensor::from_data({batch.size()}, std::move(label_vals));

        auto bce = bce_loss(score_vec, label_vec);

        Tensor supcon = Tensor::zeros({1});
        if (weights.w_supcon > 0 && batch.size() >= 2)
            supcon = supcon_loss(stack_rows(embeddings), labels, float(weights.temperature));

        // within-complex native/decoy pairings
        std::vector<size_t> pos_idx, neg_idx;
        if (weights.w_rank > 0) {
            std::map<std::string, std::pair<std::vector<size_t>, std::vector<size_t>>> by_complex;
            for (size_t i = 0; i < batch.size(); ++i) {
                auto& bucket = by_complex[batch[i]->complex_id];
                (batch[i]->label ? bucket.first : bucket.second).push_back(i);
            }
            for (const auto& [cid, bucket] : by_complex)
                for (size_t pi : bucket.first)
                    for (size_t ni : bucket.second) {
                        pos_idx.push_back(pi);
                        neg_idx.push_back(ni);
                    }
        }
        Tensor rank = Tensor::zeros({1});
        if (!pos_idx.empty())
            rank = margin_rank_loss(select_rows(score_vec, pos_idx),
                                    select_rows(score_vec, neg_idx), float(weights.margin));

        out.bce = bce.item();
        out.supcon = supcon.item();
        out.rank = rank.item();
        auto check = [](double v, const char* term) {
            if (!std::isfinite(v))
                throw TrainingError(std::string("train_step: non-finite ") + term +
                                    " loss (value=" + std::to_string(v) + ")");
        };
        check(out.bce, "bce");
        check(out.supcon, "supcon");
        check(out.rank, "rank");

        auto total = add(add(mul_scalar(bce, float(weights.w_bce)),
                             mul_scalar(supcon, float(weights.w_supcon))),
                         mul_scalar(rank, float(weights.w_rank)));
        out.total = total.item();
        check(out.total, "total");
        tape.backward(total);
    }
    opt.step(params);
    zero_grads(params);
    return out;
}

// Complex-grouped batch sampler. The batch for step k is a pure function of
// (seed, k): `batch_complexes` complexes drawn without replacement, each
// contributing its native(s) plus `decoys_per_complex` decoys. Statelessness
// makes checkpoint resume exact — replaying from steps_done reproduces the
// original batch sequence bit for bit.
class BatchSampler {
public:
    BatchSampler(const std::vector<InterfacePairSample>& samples, size_t batch_complexes,
                 size_t decoys_per_complex, uint64_t seed)
        : batch_complexes_(batch_complexes),
          decoys_per_complex_(decoys_per_complex),
          seed_(seed) {
        std::map<std::string, size_t> index;
        for (const auto& s : samples) {
            auto [it, inserted] = index.emplace(s.complex_id, complexes_.size());
            if (inserted) complexes_.push_back({});
            auto& grp = complexes_[it->second];
            (s.label ? grp.natives : grp.decoys).push_back(&s);
        }
        if (complexes_.empty()) throw ContractError("batch sampler: no samples");
    }

    std::vector<const InterfacePairSample*> batch_for_step(size_t step) const {
        Rng rng = Rng(seed_).fork(step + 1);
        std::vector<size_t> order(complexes_.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        const size_t take = std::min(batch_complexes_, complexes_.size());
        for (size_t i = 0; i < take; ++i)
            std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
        std::vector<const InterfacePairSample*> batch;
        for (size_t i = 0; i < take; ++i) {
            const auto& grp = complexes_[order[i]];
            for (const auto* nat : grp.natives) batch.push_back(nat);
            std::vector<size_t> idx(grp.decoys.size());
            for (size_t j = 0; j < idx.size(); ++j) idx[j] = j;
            for (size_t j = 0; j < std::min(decoys_per_complex_, idx.size()); ++j) {
                std::swap(idx[j], idx[j + rng.uniform_index(idx.size() - j)]);
                batch.push_back(grp.decoys[idx[j]]);
            }
        }
        return batch;
    }

    uint64_t seed() const { return seed_; }

private:
    struct Group {
        std::vector<const InterfacePairSample*> natives, decoys;
    };

    std::vector<Group> complexes_;
    size_t batch_complexes_;
    size_t decoys_per_complex_;
    uint64_t seed_;
};

struct TrainLogEntry {
    size_t step;
    LossBreakdown loss;
};

class Trainer {
public:
    Trainer(PumbaParams& model, const std::vector<InterfacePairSample>& samples,
            TrainConfig cfg)
        : model_(model),
          cfg_(cfg),
          opt_(cfg.opt),
          sampler_(samples, cfg.batch_complexes, cfg.decoys_per_complex, cfg.seed) {
        cfg_.weights.validate();
        register_pumba_params(model_, params_);
        zero_grads(params_);
    }

    LossBreakdown step() {
        auto batch = sampler_.batch_for_step(steps_done_);
        auto loss = train_step(batch, model_, params_, opt_, cfg_.weights);
        ++steps_done_;
        return loss;
    }

    std::vector<TrainLogEntry> run(size_t steps) {
        std::vector<TrainLogEntry> log;
        for (size_t i = 0; i < steps; ++i) log.push_back({steps_done_, step()});
        return log;
    }

    ParamMap& params() { return params_; }
    AdamW& optimizer() { return opt_; }
    BatchSampler& sampler() { return sampler_; }
    size_t steps_done() const { return steps_done_; }
    void set_steps_done(size_t n) { steps_done_ = n; }

private:
    PumbaParams& model_;
    TrainConfig cfg_;
    AdamW opt_;
    BatchSampler sampler_;
    ParamMap params_;
    size_t steps_done_ = 0;
};

}  // namespace pumba
