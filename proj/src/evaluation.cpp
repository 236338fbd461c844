#include "pumba/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pumba/errors.hpp"

namespace pumba {

namespace {

void check_sizes(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ContractError("metrics: " + std::to_string(scores.size()) + " scores vs " +
                            std::to_string(labels.size()) + " labels");
    for (double s : scores)
        if (!std::isfinite(s)) throw ContractError("metrics: non-finite score");
}

// top-k ordering: score descending, ties broken by ascending model_id
std::vector<size_t> ranked_order(const RankedModelSet& set) {
    std::vector<size_t> order(set.models.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (set.models[a].score != set.models[b].score)
            return set.models[a].score > set.models[b].score;
        return set.models[a].model_id < set.models[b].model_id;
    });
    return order;
}

CapriCategory best_in_top_k(const RankedModelSet& set, const std::vector<size_t>& order,
                            size_t k) {
    CapriCategory best = CapriCategory::incorrect;
    const size_t lim = std::min(k, order.size());
    for (size_t i = 0; i < lim; ++i)
        best = std::max(best, set.models[order[i]].category);
    return best;
}

}  // namespace

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_sizes(scores, labels);
    size_t np = 0, nn = 0;
    for (int l : labels) (l ? np : nn) += 1;
    if (np == 0 || nn == 0)
        throw MetricError("auc_roc: undefined for a single-class input (" +
                          std::to_string(np) + " positives, " + std::to_string(nn) +
                          " negatives)");
    // average ranks with tie groups; U statistic over positive ranks
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * (double(i + 1) + double(j + 1));
        for (size_t t = i; t <= j; ++t) rank[order[t]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0;
    for (size_t t = 0; t < scores.size(); ++t)
        if (labels[t]) rank_sum_pos += rank[t];
    const double u = rank_sum_pos - double(np) * double(np + 1) / 2.0;
    return 100.0 * u / (double(np) * double(nn));
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_sizes(scores, labels);
    size_t np = 0;
    for (int l : labels) np += (l != 0);
    if (np == 0) throw MetricError("average_precision: undefined without positives");
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0, prev_recall = 0.0;
    size_t tp = 0, seen = 0;
    size_t i = 0;
    while (i < order.size()) {
        // one threshold step per distinct score value
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (size_t t = i; t <= j; ++t) {
            tp += (labels[order[t]] != 0);
            ++seen;
        }
        const double recall = double(tp) / double(np);
        const double precision = double(tp) / double(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    return 100.0 * ap;
}

ThresholdedMetrics thresholded_metrics(const std::vector<double>& scores,
                                       const std::vector<int>& labels, double threshold) {
    check_sizes(scores, labels);
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] && pred) ++tp;
        else if (labels[i]) ++fn;
        else if (pred) ++fp;
        else ++tn;
    }
    if (tp + fn == 0 || fp + tn == 0)
        throw MetricError("thresholded_metrics: balanced accuracy needs both classes");
    ThresholdedMetrics m;
    const double tpr = double(tp) / double(tp + fn);
    const double tnr = double(tn) / double(fp + tn);
    m.balanced_accuracy = 100.0 * 0.5 * (tpr + tnr);
    m.recall = 100.0 * tpr;
    if (tp + fp == 0) {
        m.precision = 0.0;
        m.precision_defined = false;
    } else {
        m.precision = 100.0 * double(tp) / double(tp + fp);
    }
    if (!m.precision_defined || m.precision + m.recall == 0.0) {
        m.f1 = 0.0;
        m.f1_defined = false;
    } else {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

std::vector<std::pair<size_t, double>> success_rate(const std::vector<RankedModelSet>& sets,
                                                    const std::vector<size_t>& ks) {
    if (sets.empty()) throw MetricError("success_rate: no complexes given");
    for (const auto& s : sets)
        if (s.models.empty())
            throw ContractError("success_rate: complex " + s.complex_id + " has no models");
    std::vector<std::pair<size_t, double>> out;
    for (size_t k : ks) {
        size_t hits = 0;
        for (const auto& set : sets) {
            const auto order = ranked_order(set);
            if (best_in_top_k(set, order, k) >= CapriCategory::acceptable) ++hits;
        }
        out.emplace_back(k, 100.0 * double(hits) / double(sets.size()));
    }
    return out;
}

std::vector<CapriCounts> capri_quality_counts(const std::vector<RankedModelSet>& sets,
                                              const std::vector<size_t>& ks) {
    std::vector<CapriCounts> out;
    for (size_t k : ks) {
        CapriCounts c;
        c.k = k;
        for (const auto& set : sets) {
            const auto order = ranked_order(set);
            const CapriCategory best = best_in_top_k(set, order, k);
            if (best >= CapriCategory::acceptable) ++c.acceptable;
            if (best >= CapriCategory::medium) ++c.medium;
            if (best >= CapriCategory::high) ++c.high;
        }
        out.push_back(c);
    }
    return out;
}

MetricsReport compute_report(const std::vector<RankedModelSet>& sets, double threshold,
                             const std::vector<size_t>& success_ks,
                             const std::vector<size_t>& capri_ks) {
    if (sets.empty()) throw MetricError("compute_report: no complexes");
    MetricsReport r;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& set : sets)
        for (const auto& m : set.models) {
            scores.push_back(m.score);
            labels.push_back(m.label);
        }
    r.auc_roc = auc_roc(scores, labels);
    r.ap = average_precision(scores, labels);
    r.thresholded = thresholded_metrics(scores, labels, threshold);
    r.success = success_rate(sets, success_ks);
    r.capri = capri_quality_counts(sets, capri_ks);
    r.complexes = sets.size();
    r.models = scores.size();
    return r;
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

long round_pct(double v) { return std::lround(v); }

}  // namespace

std::string format_report_text(const MetricsReport& r) {
    std::ostringstream os;
    os << "classification metrics (" << r.models << " models, " << r.complexes
       << " complexes)\n";
    os << "  AUC ROC    " << fmt2(r.auc_roc) << "\n";
    os << "  AP         " << fmt2(r.ap) << "\n";
    os << "  BA         " << fmt2(r.thresholded.balanced_accuracy) << "\n";
    os << "  F1         " << fmt2(r.thresholded.f1)
       << (r.thresholded.f1_defined ? "" : "  (zero denominator)") << "\n";
    os << "  Precision  " << fmt2(r.thresholded.precision)
       << (r.thresholded.precision_defined ? "" : "  (zero denominator)") << "\n";
    os << "  Recall     " << fmt2(r.thresholded.recall) << "\n";
    os << "success rates (%)\n ";
    for (const auto& [k, v] : r.success) os << " Top" << k << "=" << round_pct(v);
    os << "\ncapri quality counts (complexes with a hit of at least the tier)\n";
    os << "  tier        ";
    for (const auto& c : r.capri) os << " top" << c.k;
    os << "\n  acceptable  ";
    for (const auto& c : r.capri) os << " " << c.acceptable;
    os << "\n  medium      ";
    for (const auto& c : r.capri) os << " " << c.medium;
    os << "\n  high        ";
    for (const auto& c : r.capri) os << " " << c.high;
    os << "\n";
    return os.str();
}

std::string format_report_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "metric,value\n";
    os << "auc_roc," << fmt2(r.auc_roc) << "\n";
    os << "ap," << fmt2(r.ap) << "\n";
    os << "balanced_accuracy," << fmt2(r.thresholded.balanced_accuracy) << "\n";
    os << "f1," << fmt2(r.thresholded.f1) << "\n";
    os << "precision," << fmt2(r.thresholded.precision) << "\n";
    os << "recall," << fmt2(r.thresholded.recall) << "\n";
    for (const auto& [k, v] : r.success)
        os << "success_top" << k << "," << round_pct(v) << "\n";
    for (const auto& c : r.capri) {
        os << "capri_acceptable_top" << c.k << "," << c.acceptable << "\n";
        os << "capri_medium_top" << c.k << "," << c.medium << "\n";
        os << "capri_high_top" << c.k << "," << c.high << "\n";
    }
    return os.str();
}

}  // namespace pumba
