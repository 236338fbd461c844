#pragma once

// Hidden-attention explainability: aggregate the implicit attention stacks
// into per-token relevances and per-group importances, z-score, threshold
// at |z| >= 1.96, and export overlays onto the feature images.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "pumba/ssm.hpp"

namespace pumba {

constexpr double kZCutoff = 1.96;

// Mean absolute influence of every token on the class token: averages
// |alpha[l, dir, d, class_index, j]| over layers, both directions, and all
// channels; the class-token column is dropped. Result has length T-1 in
// patch order.
std::vector<float> token_relevance(const HiddenAttentionStack& stack, size_t class_index);

struct ZScoreResult {
    std::vector<float> z;
    std::vector<bool> mask;  // |z| >= cutoff; all false when variance is zero
};

// Population z-scores with a two-sided threshold. Zero variance is the
// defined degenerate case: zero z, empty mask.
ZScoreResult zscore_threshold(const std::vector<float>& values, double cutoff = kZCutoff);

struct PixelAttentionMap {
    std::string group;
    size_t grid_size = 0;       // a / l
    std::vector<float> zscores;    // grid_size^2 in patch order
    std::vector<bool> significant;
};

PixelAttentionMap build_pixel_map(const std::string& group,
                                  const std::vector<float>& relevance, size_t grid_size,
                                  double cutoff = kZCutoff);

struct FeatureImportance {
    std::array<float, 5> raw = {};      // mean absolute influence per group
    std::array<float, 5> zscores = {};  // standardized across the five groups
};

// Same aggregation as token_relevance over the five branch positions of the
// final encoder's stack, then z-scored across groups.
FeatureImportance feature_importance(const HiddenAttentionStack& final_stack,
                                     size_t class_index);

// Binary portable pixmap ("P6"): the feature channel rendered as gray with
// significant pixels tinted red. The map's grid is replicated up to the
// channel resolution.
void export_overlay(const PixelAttentionMap& map, const Tensor& channel,
                    const std::filesystem::path& path);

// Binary portable graymap ("P5") of the raw feature channel.
void export_graymap(const Tensor& channel, const std::filesystem::path& path);

// CSV sidecar: token_index,row,col,relevance,zscore,significant
std::string relevance_csv(const PixelAttentionMap& map, const std::vector<float>& relevance);

// CSV: group,importance,zscore (fixed group order)
std::string importance_csv(const FeatureImportance& imp,
                           const std::array<std::string, 5>& group_names);

}  // namespace pumba
