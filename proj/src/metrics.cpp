#include "milhard/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace milhard {

Confusion confusion(const Vec& probs, const std::vector<int>& labels, double threshold) {
    if (probs.size() != labels.size())
        throw ConfigError("confusion: probs/labels length mismatch");
    if (probs.empty()) throw ConfigError("confusion: empty inputs");
    Confusion c;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i] >= threshold;  // tie counts as positive
        if (labels[i] == 1)
            (pred ? c.tp : c.fn)++;
        else
            (pred ? c.fp : c.tn)++;
    }
    return c;
}

std::optional<double> roc_auc(const Vec& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size())
        throw ConfigError("roc_auc: probs/labels length mismatch");
    long pos = 0, neg = 0;
    for (int l : labels) (l == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) return std::nullopt;

    // Tied-rank form of the Mann-Whitney statistic. Rank sums stay exact in
    // doubles (integers and halves), so this matches pair enumeration bit
    // for bit at these sizes.
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && probs[order[j + 1]] == probs[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double p = static_cast<double>(pos);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

std::vector<RocPoint> roc_points(const Vec& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size())
        throw ConfigError("roc_points: probs/labels length mismatch");
    long pos = 0, neg = 0;
    for (int l : labels) (l == 1 ? pos : neg)++;

    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

    std::vector<RocPoint> points;
    points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double thr = probs[order[i]];
        while (i < order.size() && probs[order[i]] == thr) {
            (labels[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        points.push_back({thr, neg > 0 ? static_cast<double>(fp) / neg : 0.0,
                          pos > 0 ? static_cast<double>(tp) / pos : 0.0});
    }
    return points;
}

RunMetrics run_metrics(const Confusion& c, const Vec& probs, const std::vector<int>& labels) {
    if (c.total() != static_cast<long>(probs.size()))
        throw ConfigError("run_metrics: confusion inconsistent with probs/labels");
    RunMetrics m;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (c.tp + c.fp > 0) m.precision = static_cast<double>(c.tp) / (c.tp + c.fp);
    if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / (c.tp + c.fn);
    if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0)
        m.f_score = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    if (c.fp + c.tn > 0) m.fpr = static_cast<double>(c.fp) / (c.fp + c.tn);
    m.auc = roc_auc(probs, labels);
    return m;
}

namespace {

MetricAggregate aggregate_one(const std::vector<std::optional<double>>& values) {
    MetricAggregate agg;
    Vec defined;
    for (const auto& v : values)
        if (v) defined.push_back(*v);
    agg.n = static_cast<int>(defined.size());
    if (defined.empty()) return agg;
    const double mean = std::accumulate(defined.begin(), defined.end(), 0.0) /
                        static_cast<double>(defined.size());
    agg.mean = mean;
    if (defined.size() == 1) {
        agg.stderr_ = 0.0;
    } else {
        double ss = 0.0;
        for (double v : defined) ss += (v - mean) * (v - mean);
        const double sample_std = std::sqrt(ss / static_cast<double>(defined.size() - 1));
        agg.stderr_ = sample_std / std::sqrt(static_cast<double>(defined.size()));
    }
    return agg;
}

}  // namespace

AggregateReport aggregate(const std::vector<RunMetrics>& runs) {
    if (runs.empty()) throw ConfigError("aggregate: no runs");
    AggregateReport rep;
    rep.run_count = static_cast<int>(runs.size());
    auto collect = [&](auto member) {
        std::vector<std::optional<double>> vals;
        for (const RunMetrics& r : runs) vals.push_back(r.*member);
        return aggregate_one(vals);
    };
    rep.accuracy = collect(&RunMetrics::accuracy);
    rep.precision = collect(&RunMetrics::precision);
    rep.recall = collect(&RunMetrics::recall);
    rep.f_score = collect(&RunMetrics::f_score);
    rep.auc = collect(&RunMetrics::auc);
    rep.fpr = collect(&RunMetrics::fpr);
    return rep;
}

namespace {

std::string cell(const MetricAggregate& agg) {
    if (!agg.mean) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f±%.3f", *agg.mean, agg.stderr_.value_or(0.0));
    return buf;
}

// Pads by display width; the +/- sign is two bytes of UTF-8 but one column.
void append_padded(std::string& out, const std::string& cell_text, std::size_t width) {
    std::size_t display = cell_text.size();
    if (cell_text.find("±") != std::string::npos) display -= 1;
    out += cell_text;
    for (std::size_t i = display; i < width; ++i) out += ' ';
}

}  // namespace

std::string format_table(const std::vector<std::string>& method_names,
                         const std::vector<AggregateReport>& reports) {
    if (method_names.size() != reports.size())
        throw ConfigError("format_table: names/reports length mismatch");
    static const char* headers[] = {"Accuracy", "Precision", "Recall", "F-score", "AUC", "FPR"};
    std::size_t name_width = 6;  // "Method"
    for (const auto& n : method_names) name_width = std::max(name_width, n.size());
    const std::size_t col_width = 13;

    std::string out;
    append_padded(out, "Method", name_width + 2);
    for (const char* h : headers) append_padded(out, h, col_width);
    out += '\n';
    for (std::size_t i = 0; i < reports.size(); ++i) {
        append_padded(out, method_names[i], name_width + 2);
        const AggregateReport& r = reports[i];
        for (const MetricAggregate* agg :
             {&r.accuracy, &r.precision, &r.recall, &r.f_score, &r.auc, &r.fpr})
            append_padded(out, cell(*agg), col_width);
        out += '\n';
    }
    return out;
}

std::string roc_csv(const std::vector<RocPoint>& points) {
    std::string out = "threshold,fpr,tpr\n";
    for (const RocPoint& p : points) {
        out += std::isinf(p.threshold) ? "inf" : format_g17(p.threshold);
        out += ',';
        out += format_g17(p.fpr);
        out += ',';
        out += format_g17(p.tpr);
        out += '\n';
    }
    return out;
}

}  // namespace milhard
