#pragma once

// The combined objective: binary cross-entropy on scores, supervised
// contrastive loss on class-token embeddings, margin ranking on
// native/decoy pairs drawn within a complex.

#include <vector>

#include "pumba/ops.hpp"

namespace pumba {

struct LossWeights {
    double w_bce = 1.0;
    double w_supcon = 0.5;
    double w_rank = 0.5;
    double temperature = 0.1;  // tau for the contrastive term
    double margin = 0.2;       // m for the ranking term

    void validate() const {
        if (w_bce < 0 || w_supcon < 0 || w_rank < 0)
            throw ConfigError("loss weights must be nonnegative");
        if (temperature <= 0) throw ConfigError("contrastive temperature must be positive");
        if (margin <= 0) throw ConfigError("ranking margin must be positive");
    }
};

// Mean of -[y log s + (1-y) log(1-s)], scores clamped 1e-7 from both
// boundaries.
template <typename T>
TensorT<T> bce_loss(const TensorT<T>& scores, const TensorT<T>& labels) {
    if (scores.shape() != labels.shape())
        throw ShapeError("bce_loss: scores " + shape_str(scores.shape()) + " vs labels " +
                         shape_str(labels.shape()));
    auto s = clamp(scores, T(1e-7), T(1.0 - 1e-7));
    auto one = TensorT<T>::ones(s.shape());
    auto term = add(mul(labels, log(s)), mul(sub(one, labels), log(sub(one, s))));
    return neg(mean_all(term));
}

// Supervised contrastive loss over L2-normalized embeddings: for anchor i
// with positives P(i) = { p != i : label_p = label_i },
//   loss_i = -(1/|P(i)|) sum_{p in P(i)} log( exp(z_i.z_p / tau)
//                                             / sum_{a != i} exp(z_i.z_a / tau) )
// Anchors without positives are skipped; no positives at all gives 0.
template <typename T>
TensorT<T> supcon_loss(const TensorT<T>& embeddings, const std::vector<int>& labels, T tau) {
    if (embeddings.rank() != 2)
        throw ShapeError("supcon_loss: embeddings must be [B x M]");
    const size_t B = embeddings.extent(0);
    if (B < 2) throw ContractError("supcon_loss: batch must hold at least 2 embeddings");
    if (labels.size() != B)
        throw ShapeError("supcon_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(B) + " embeddings");

    // positive-pair coefficients and the anchor count, all constants
    TensorT<T> coeff(Shape{B, B});
    size_t contributing = 0;
    for (size_t i = 0; i < B; ++i) {
        size_t npos = 0;
        for (size_t p = 0; p < B; ++p)
            if (p != i && labels[p] == labels[i]) ++npos;
        if (npos == 0) continue;
        ++contributing;
        for (size_t p = 0; p < B; ++p)
            if (p != i && labels[p] == labels[i])
                coeff.data()[i * B + p] = T(1) / T(npos);
    }
    if (contributing == 0) return TensorT<T>::zeros({1});

    auto sq = sum_axis(mul(embeddings, embeddings), 1, true);    // [B x 1]
    auto norm = sqrt(clamp(sq, T(1e-12), std::numeric_limits<T>::max()));
    auto z = div(embeddings, norm);
    auto sim = mul_scalar(matmul(z, transpose(z)), T(1) / tau);  // [B x B]

    // self-similarity excluded from the denominator via a -inf-like offset
    TensorT<T> diag_off(Shape{B, B});
    for (size_t i = 0; i < B; ++i) diag_off.data()[i * B + i] = T(-1e30);
    auto sim_off = add(sim, diag_off);
    auto m = max_axis_detached(sim_off, 1, true);                // [B x 1]
    auto lse = add(m, log(sum_axis(exp(sub(sim_off, m)), 1, true)));
    auto log_prob = sub(sim, lse);                               // broadcast [B x 1]
    auto weighted = mul(coeff, log_prob);
    return mul_scalar(neg(sum_all(weighted)), T(1) / T(contributing));
}

// Mean of max(0, m - (s_pos - s_neg)) over paired scores. Zero iff every
// positive outranks its paired negative by at least m.
template <typename T>
TensorT<T> margin_rank_loss(const TensorT<T>& scores_pos, const TensorT<T>& scores_neg, T m) {
    if (scores_pos.shape() != scores_neg.shape())
        throw ShapeError("margin_rank_loss: " + shape_str(scores_pos.shape()) + " vs " +
                         shape_str(scores_neg.shape()));
    if (scores_pos.size() == 0) return TensorT<T>::zeros({1});
    auto gap = sub(scores_pos, scores_neg);
    return mean_all(relu(add_scalar(neg(gap), m)));
}

}  // namespace pumba
