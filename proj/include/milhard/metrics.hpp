// Bag-level evaluation metrics: confusion counts, ROC AUC, FPR and
// mean +/- standard-error aggregation across repeated runs.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "milhard/common.hpp"

namespace milhard {

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    long total() const { return tp + fp + tn + fn; }
};

// Metrics with an undefined denominator are left empty and excluded from
// aggregation; they are never coerced to 0 or NaN.
struct RunMetrics {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f_score;
    std::optional<double> auc;
    std::optional<double> fpr;
};

struct MetricAggregate {
    std::optional<double> mean;
    std::optional<double> stderr_;  // sample std / sqrt(n); 0 when n == 1
    int n = 0;                      // runs where the metric was defined
};

struct AggregateReport {
    MetricAggregate accuracy, precision, recall, f_score, auc, fpr;
    int run_count = 0;
};

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};

// Predicts positive iff p >= threshold (ties count as positive).
Confusion confusion(const Vec& probs, const std::vector<int>& labels, double threshold = 0.5);

RunMetrics run_metrics(const Confusion& conf, const Vec& probs, const std::vector<int>& labels);

// Mann-Whitney AUC via tied ranks; empty when labels are single-class.
std::optional<double> roc_auc(const Vec& probs, const std::vector<int>& labels);

// ROC staircase, one point per distinct threshold plus the (0,0) endpoint.
std::vector<RocPoint> roc_points(const Vec& probs, const std::vector<int>& labels);

AggregateReport aggregate(const std::vector<RunMetrics>& runs);

// Aligned table, one row per method, columns Accuracy..FPR as "mean+/-se"
// with three decimals; undefined metrics print NA.
std::string format_table(const std::vector<std::string>& method_names,
                         const std::vector<AggregateReport>& reports);

std::string roc_csv(const std::vector<RocPoint>& points);

}  // namespace milhard
