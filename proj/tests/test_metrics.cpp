#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "milhard/metrics.hpp"

using namespace milhard;

namespace {

// Independent reference: count concordant pairs plus half the ties.
double pair_enumeration_auc(const Vec& probs, const std::vector<int>& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < probs.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (probs[i] > probs[j]) wins += 1.0;
            else if (probs[i] == probs[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("confusion counts quadrants with ties predicted positive") {
    SUBCASE("clean split") {
        const Confusion c = confusion({0.9, 0.1}, {1, 0});
        CHECK(c.tp == 1);
        CHECK(c.tn == 1);
        CHECK(c.fp == 0);
        CHECK(c.fn == 0);
    }
    SUBCASE("probability equal to the threshold counts as positive") {
        const Confusion c = confusion({0.5}, {0});
        CHECK(c.fp == 1);
        CHECK(c.tn == 0);
    }
    SUBCASE("mixed block") {
        const Confusion c = confusion({0.6, 0.6, 0.4}, {1, 0, 1});
        CHECK(c.tp == 1);
        CHECK(c.fp == 1);
        CHECK(c.fn == 1);
        CHECK(c.tn == 0);
    }
    SUBCASE("length mismatch is an error") {
        CHECK_THROWS_AS(confusion({0.5, 0.5}, {1}), ConfigError);
    }
}

TEST_CASE("run metrics follow the standard formulas") {
    SUBCASE("perfect predictions") {
        const Vec probs = {0.9, 0.8, 0.2, 0.1};
        const std::vector<int> labels = {1, 1, 0, 0};
        const RunMetrics m = run_metrics(confusion(probs, labels), probs, labels);
        CHECK(*m.accuracy == 1.0);
        CHECK(*m.precision == 1.0);
        CHECK(*m.recall == 1.0);
        CHECK(*m.f_score == 1.0);
        CHECK(*m.auc == 1.0);
        CHECK(*m.fpr == 0.0);
    }
    SUBCASE("everything predicted positive on a balanced set") {
        const Vec probs = {0.9, 0.8, 0.7, 0.6};
        const std::vector<int> labels = {1, 0, 1, 0};
        const RunMetrics m = run_metrics(confusion(probs, labels), probs, labels);
        CHECK(*m.recall == 1.0);
        CHECK(*m.fpr == 1.0);
        CHECK(*m.accuracy == 0.5);
        CHECK(*m.precision == 0.5);
    }
    SUBCASE("hand-counted block") {
        // tp=3, fp=1, fn=2, tn=4
        const Vec probs = {0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.2, 0.1, 0.1};
        const std::vector<int> labels = {1, 1, 1, 0, 1, 1, 0, 0, 0, 0};
        const Confusion c = confusion(probs, labels);
        REQUIRE(c.tp == 3);
        REQUIRE(c.fp == 1);
        REQUIRE(c.fn == 2);
        REQUIRE(c.tn == 4);
        const RunMetrics m = run_metrics(c, probs, labels);
        CHECK(*m.precision == doctest::Approx(0.75));
        CHECK(*m.recall == doctest::Approx(0.6));
        CHECK(*m.f_score == doctest::Approx(0.66667).epsilon(1e-4));
        CHECK(*m.fpr == doctest::Approx(0.2));
    }
    SUBCASE("zero denominators flag metrics undefined instead of NaN") {
        const Vec probs = {0.1, 0.2};
        const std::vector<int> labels = {1, 1};  // single class
        const RunMetrics m = run_metrics(confusion(probs, labels), probs, labels);
        CHECK_FALSE(m.precision.has_value());  // no predicted positives
        CHECK_FALSE(m.fpr.has_value());        // no negatives
        CHECK_FALSE(m.auc.has_value());        // single class
        CHECK(m.recall.has_value());
        CHECK(*m.recall == 0.0);
    }
}

TEST_CASE("auc matches the closed-form examples") {
    CHECK(*roc_auc({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}) == 1.0);
    CHECK(*roc_auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
    CHECK(*roc_auc({0.9, 0.3, 0.8, 0.1}, {1, 1, 0, 0}) == doctest::Approx(0.75));
    CHECK_FALSE(roc_auc({0.2, 0.3}, {1, 1}).has_value());
    CHECK_FALSE(roc_auc({0.2, 0.3}, {0, 0}).has_value());
}

TEST_CASE("auc equals pair enumeration on 1000 random score sets") {
    std::mt19937_64 rng(404);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 49);
        Vec probs(n);
        std::vector<int> labels(n);
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            // Coarse grid so ties actually happen.
            probs[i] = static_cast<double>(rng() % 8) / 8.0;
            labels[i] = static_cast<int>(rng() % 2);
            (labels[i] == 1 ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) {
            CHECK_FALSE(roc_auc(probs, labels).has_value());
            continue;
        }
        const double expected = pair_enumeration_auc(probs, labels);
        CHECK(*roc_auc(probs, labels) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("auc of mirrored scores is the complement for tie-free inputs") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 4 + static_cast<int>(rng() % 20);
        Vec probs(n);
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) {
            probs[i] = (static_cast<double>(i) + 0.5) / n;  // strictly increasing: no ties
            labels[i] = static_cast<int>(rng() % 2);
        }
        std::shuffle(probs.begin(), probs.end(), rng);
        bool has_pos = false, has_neg = false;
        for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
        if (!has_pos || !has_neg) continue;

        Vec mirrored(n);
        for (int i = 0; i < n; ++i) mirrored[i] = 1.0 - probs[i];
        CHECK(*roc_auc(probs, labels) + *roc_auc(mirrored, labels) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    const Vec probs = {0.9, 0.3, 0.8, 0.1, 0.5};
    const std::vector<int> labels = {1, 1, 0, 0, 1};
    Vec squashed(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
        squashed[i] = 1.0 / (1.0 + std::exp(-3.0 * probs[i]));
    CHECK(*roc_auc(probs, labels) == doctest::Approx(*roc_auc(squashed, labels)).epsilon(1e-12));
}

TEST_CASE("fpr is one minus specificity") {
    const Vec probs = {0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.2, 0.1, 0.1};
    const std::vector<int> labels = {1, 1, 1, 0, 1, 1, 0, 0, 0, 0};
    const Confusion c = confusion(probs, labels);
    const RunMetrics m = run_metrics(c, probs, labels);
    const double specificity =
        static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    CHECK(*m.fpr == doctest::Approx(1.0 - specificity).epsilon(1e-12));
}

TEST_CASE("aggregation reports mean and standard error over defined runs") {
    auto run_with_accuracy = [](double acc) {
        RunMetrics m;
        m.accuracy = acc;
        return m;
    };

    SUBCASE("constant runs have zero spread") {
        const AggregateReport r =
            aggregate({run_with_accuracy(0.9), run_with_accuracy(0.9), run_with_accuracy(0.9)});
        CHECK(*r.accuracy.mean == doctest::Approx(0.9));
        CHECK(*r.accuracy.stderr_ == doctest::Approx(0.0));
        CHECK(r.accuracy.n == 3);
        CHECK(r.run_count == 3);
    }
    SUBCASE("two runs follow the sample-std formula") {
        const AggregateReport r = aggregate({run_with_accuracy(0.8), run_with_accuracy(1.0)});
        CHECK(*r.accuracy.mean == doctest::Approx(0.9));
        CHECK(*r.accuracy.stderr_ == doctest::Approx(0.1));  // 0.141421/sqrt(2)
    }
    SUBCASE("single run has zero standard error") {
        const AggregateReport r = aggregate({run_with_accuracy(0.77)});
        CHECK(*r.accuracy.mean == doctest::Approx(0.77));
        CHECK(*r.accuracy.stderr_ == 0.0);
    }
    SUBCASE("metrics undefined everywhere stay undefined") {
        RunMetrics a, b;
        a.accuracy = 0.5;
        b.accuracy = 0.7;  // precision left empty in both
        const AggregateReport r = aggregate({a, b});
        CHECK_FALSE(r.precision.mean.has_value());
        CHECK(r.precision.n == 0);
    }
    SUBCASE("partially undefined metrics average the defined subset") {
        RunMetrics a, b, c;
        a.fpr = 0.2;
        b.fpr = {};
        c.fpr = 0.4;
        const AggregateReport r = aggregate({a, b, c});
        CHECK(*r.fpr.mean == doctest::Approx(0.3));
        CHECK(r.fpr.n == 2);
    }
}

TEST_CASE("the report table prints one row per method with NA for undefined") {
    RunMetrics defined;
    defined.accuracy = 0.9;
    defined.precision = 0.8;
    defined.recall = 0.7;
    defined.f_score = 0.746;
    defined.auc = 0.95;
    defined.fpr = 0.1;
    RunMetrics sparse;
    sparse.accuracy = 0.5;

    const std::string table = format_table({"ours", "baseline"},
                                           {aggregate({defined}), aggregate({sparse})});
    CHECK(table.find("ours") != std::string::npos);
    CHECK(table.find("baseline") != std::string::npos);
    CHECK(table.find("Accuracy") != std::string::npos);
    CHECK(table.find("FPR") != std::string::npos);
    CHECK(table.find("NA") != std::string::npos);
    CHECK(table.find("0.900") != std::string::npos);
}

TEST_CASE("roc points trace the staircase from the origin") {
    const Vec probs = {0.9, 0.7, 0.4, 0.2};
    const std::vector<int> labels = {1, 0, 1, 0};
    const auto points = roc_points(probs, labels);
    REQUIRE(points.size() >= 2);
    CHECK(points.front().fpr == doctest::Approx(0.0));
    CHECK(points.front().tpr == doctest::Approx(0.0));
    CHECK(points.back().fpr == doctest::Approx(1.0));
    CHECK(points.back().tpr == doctest::Approx(1.0));
    for (std::size_t i = 1; i < points.size(); ++i) {
        CHECK(points[i].fpr >= points[i - 1].fpr - 1e-12);
        CHECK(points[i].tpr >= points[i - 1].tpr - 1e-12);
    }
    const std::string csv = roc_csv(points);
    CHECK(csv.find("fpr") != std::string::npos);
}
