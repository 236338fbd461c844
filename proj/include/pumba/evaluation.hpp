#pragma once

// Docking-specific evaluation: classification metrics over scores,
// per-complex top-k success rates, and CAPRI quality-category tallies.

#include <string>
#include <utility>
#include <vector>

#include "pumba/capri.hpp"

namespace pumba {

struct RankedModel {
    std::string model_id;
    double score = 0.0;
    int label = 0;
    CapriCategory category = CapriCategory::incorrect;
};

struct RankedModelSet {
    std::string complex_id;
    std::vector<RankedModel> models;
};

// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), as a percentage.
// Throws MetricError unless both classes are present.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

// Step-integral average precision over the score-descending ranking, equal
// scores grouped into one threshold step, as a percentage. Throws
// MetricError without positives.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

struct ThresholdedMetrics {
    double balanced_accuracy = 0, f1 = 0, precision = 0, recall = 0;  // percentages
    // zero-denominator cases report 0 with the matching flag cleared
    bool precision_defined = true, recall_defined = true, f1_defined = true;
};

// Confusion-matrix metrics at `threshold` (prediction = score >= threshold).
// Balanced accuracy needs both classes present.
ThresholdedMetrics thresholded_metrics(const std::vector<double>& scores,
                                       const std::vector<int>& labels,
                                       double threshold = 0.5);

// Per-k fraction of complexes whose top-k (score descending, ties broken by
// ascending model_id) holds at least one acceptable-or-better model, x100.
std::vector<std::pair<size_t, double>> success_rate(
    const std::vector<RankedModelSet>& sets,
    const std::vector<size_t>& ks = {1, 10, 25, 100, 200});

struct CapriCounts {
    size_t k = 0;
    // cumulative reading: a high-quality hit counts toward medium and
    // acceptable as well
    size_t acceptable = 0, medium = 0, high = 0;
};

std::vector<CapriCounts> capri_quality_counts(const std::vector<RankedModelSet>& sets,
                                              const std::vector<size_t>& ks = {1, 10, 100});

struct MetricsReport {
    double auc_roc = 0, ap = 0;
    ThresholdedMetrics thresholded;
    std::vector<std::pair<size_t, double>> success;
    std::vector<CapriCounts> capri;
    size_t complexes = 0, models = 0;
};

MetricsReport compute_report(const std::vector<RankedModelSet>& sets, double threshold = 0.5,
                             const std::vector<size_t>& success_ks = {1, 10, 25, 100, 200},
                             const std::vector<size_t>& capri_ks = {1, 10, 100});

// Aligned-text and CSV renderings; success rates print at integer precision.
std::string format_report_text(const MetricsReport& report);
std::string format_report_csv(const MetricsReport& report);

}  // namespace pumba
