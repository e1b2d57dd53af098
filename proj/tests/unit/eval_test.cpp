#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "poseidon/eval.hpp"
#include "test_support.hpp"

using namespace poseidon;
using namespace poseidon::eval;

namespace {

// P(s+ > s−) + ½ P(s+ = s−) over every positive/negative pair.
double pairwise_auc(const std::vector<double>& s, const std::vector<double>& y) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1.0 || y[j] != 0.0) continue;
            pairs += 1;
            wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    return wins / pairs;
}

}  // namespace

TEST(Confusion, WorkedExample) {
    const std::vector<double> s{0.9, 0.8, 0.3}, y{1, 0, 1};
    const auto m = confusion_metrics(s, y, 0.5);
    EXPECT_EQ(m.tp, 1u);
    EXPECT_EQ(m.fp, 1u);
    EXPECT_EQ(m.fn, 1u);
    EXPECT_EQ(m.tn, 0u);
    EXPECT_DOUBLE_EQ(m.precision, 0.5);
    EXPECT_DOUBLE_EQ(m.recall, 0.5);
    EXPECT_DOUBLE_EQ(m.f1, 0.5);
}

TEST(Confusion, ThresholdIsInclusive) {
    const std::vector<double> s{0.5}, y{1};
    EXPECT_EQ(confusion_metrics(s, y, 0.5).tp, 1u);
}

TEST(Confusion, DegenerateConventions) {
    const std::vector<double> s{0.1, 0.2}, y{1, 0};
    const auto none = confusion_metrics(s, y, 0.5);
    EXPECT_EQ(none.precision, 0.0);
    EXPECT_EQ(none.recall, 0.0);
    EXPECT_EQ(none.f1, 0.0);
    const std::vector<double> neg{0, 0};
    const auto m = confusion_metrics(std::vector<double>{0.9, 0.1}, neg, 0.5);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.precision, 0.0);
}

TEST(Confusion, InputErrors) {
    const std::vector<double> empty;
    EXPECT_EQ(test::error_kind_of([&] { confusion_metrics(empty, empty); }), ErrorKind::InvalidInput);
    EXPECT_EQ(test::error_kind_of([] { confusion_metrics(std::vector<double>{0.1, 0.2}, std::vector<double>{1}); }),
              ErrorKind::InvalidInput);
    EXPECT_EQ(test::error_kind_of([] { confusion_metrics(std::vector<double>{0.1}, std::vector<double>{0.5}); }),
              ErrorKind::InvalidInput);
    EXPECT_EQ(test::error_kind_of([] { confusion_metrics(std::vector<double>{NAN}, std::vector<double>{1}); }),
              ErrorKind::InvalidInput);
}

TEST(Auc, PerfectAndReversedRankings) {
    const std::vector<double> s{0.1, 0.2, 0.7, 0.9}, y{0, 0, 1, 1};
    EXPECT_EQ(roc_auc(s, y).auc, 1.0);
    const std::vector<double> r{0.9, 0.7, 0.2, 0.1};
    EXPECT_EQ(roc_auc(r, y).auc, 0.0);
    const std::vector<double> tied(4, 0.5);
    EXPECT_EQ(roc_auc(tied, y).auc, 0.5);
}

TEST(Auc, SingleClassIsAnEstimationError) {
    EXPECT_EQ(test::error_kind_of([] { roc_auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}); }),
              ErrorKind::Estimation);
    const auto m = task_metrics(std::vector<double>{0.1, 0.9}, std::vector<double>{0, 0});
    EXPECT_TRUE(std::isnan(m.auc));
}

TEST(Auc, PropertyMatchesExhaustivePairwiseOracle) {
    std::mt19937_64 g(51);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(200), y(200);
        for (std::size_t i = 0; i < 200; ++i) {
            y[i] = u(g) < 0.3 ? 1.0 : 0.0;
            // Coarse rounding on half the trials forces many ties.
            s[i] = trial % 2 ? std::round(u(g) * 10) / 10 : u(g) + 0.3 * y[i];
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_NEAR(roc_auc(s, y).auc, pairwise_auc(s, y), 1e-12);
    }
}

TEST(Auc, PropertyInvariantUnderMonotoneTransforms) {
    std::mt19937_64 g(52);
    std::normal_distribution<double> n(0, 1);
    std::bernoulli_distribution b(0.4);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s(150), y(150), t(150);
        for (std::size_t i = 0; i < 150; ++i) {
            y[i] = b(g);
            s[i] = n(g) + y[i];
            t[i] = 1.0 / (1.0 + std::exp(-3 * s[i])) + 5;
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_EQ(roc_auc(s, y).auc, roc_auc(t, y).auc);
    }
}

TEST(Auc, NullScoresNearHalf) {
    std::mt19937_64 g(53);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s(20000), y(20000);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = u(g);
        y[i] = u(g) < 0.5;
    }
    EXPECT_NEAR(roc_auc(s, y).auc, 0.5, 0.02);
}

TEST(Roc, PointsAreMonotoneFromOriginToOne) {
    std::mt19937_64 g(54);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s(300), y(300);
    for (std::size_t i = 0; i < s.size(); ++i) {
        y[i] = u(g) < 0.2;
        s[i] = std::round((u(g) + 0.2 * y[i]) * 50) / 50;
    }
    const auto r = roc_auc(s, y);
    ASSERT_GE(r.points.size(), 2u);
    EXPECT_EQ(r.points.front().fpr, 0.0);
    EXPECT_EQ(r.points.front().tpr, 0.0);
    EXPECT_EQ(r.points.back().fpr, 1.0);
    EXPECT_EQ(r.points.back().tpr, 1.0);
    double area = 0;
    for (std::size_t k = 1; k < r.points.size(); ++k) {
        EXPECT_GE(r.points[k].fpr, r.points[k - 1].fpr);
        EXPECT_GE(r.points[k].tpr, r.points[k - 1].tpr);
        EXPECT_LT(r.points[k].threshold, r.points[k - 1].threshold);
        area += (r.points[k].fpr - r.points[k - 1].fpr) * (r.points[k].tpr + r.points[k - 1].tpr) / 2;
    }
    // Trapezoids through the tied-score points reproduce the midrank statistic.
    EXPECT_NEAR(area, r.auc, 1e-12);
    std::ostringstream out;
    write_roc(out, r.points);
    EXPECT_EQ(out.str().substr(0, 19), "fpr,tpr,threshold\n0");
}

TEST(BestF1, ScansObservedScores) {
    const std::vector<double> s{0.9, 0.8, 0.3, 0.2}, y{1, 0, 1, 0};
    const auto m = best_f1(s, y);
    // Threshold 0.3 gives tp 2, fp 1: F1 = 0.8.
    EXPECT_DOUBLE_EQ(m.f1, 0.8);
    EXPECT_EQ(m.threshold, 0.3);
}

TEST(Energy, SeparatedPopulations) {
    std::mt19937_64 g(55);
    std::normal_distribution<double> normal(-0.025, 0.037), anomalous(0.08, 0.02);
    std::vector<double> e, a;
    for (int i = 0; i < 5000; ++i) e.push_back(normal(g)), a.push_back(0);
    for (int i = 0; i < 500; ++i) e.push_back(anomalous(g)), a.push_back(1);
    const auto r = energy_separation(e, a);
    EXPECT_EQ(r.threshold, 0.05);
    EXPECT_EQ(r.n_normal, 5000u);
    EXPECT_EQ(r.n_anomalous, 500u);
    EXPECT_NEAR(r.mean_normal, -0.025, 0.003);
    EXPECT_NEAR(r.std_normal, 0.037, 0.003);
    EXPECT_NEAR(r.mean_anomalous, 0.08, 0.003);
    EXPECT_GT(static_cast<double>(r.flagged_anomalous) / 500, 0.75);
    EXPECT_LT(static_cast<double>(r.flagged_normal) / 5000, 0.05);
    EXPECT_EQ(r.flagged, r.flagged_normal + r.flagged_anomalous);
    EXPECT_GT(r.separation, 2.0);
}

TEST(Energy, SmallExactStatistics) {
    const std::vector<double> e{0.0, 0.1, 0.2, 0.06}, a{0, 0, 1, 1};
    const auto r = energy_separation(e, a);
    EXPECT_DOUBLE_EQ(r.mean_normal, 0.05);
    EXPECT_DOUBLE_EQ(r.mean_anomalous, 0.13);
    EXPECT_NEAR(r.std_normal, std::sqrt(0.005), 1e-15);
    EXPECT_EQ(r.flagged, 3u);  // strict: 0.05 itself would not count
    EXPECT_NEAR(r.separation, 0.08 / std::sqrt((0.005 + 0.0098) / 2), 1e-12);
    EXPECT_EQ(test::error_kind_of([] { energy_separation(std::vector<double>{}, std::vector<double>{}); }),
              ErrorKind::InvalidInput);
    const auto one = energy_separation(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 0});
    EXPECT_TRUE(std::isnan(one.mean_anomalous));
    EXPECT_TRUE(std::isnan(one.separation));
}

TEST(Reports, MetricsBlockFormat) {
    const auto m = task_metrics(std::vector<double>{0.9, 0.8, 0.3}, std::vector<double>{1, 0, 1});
    std::ostringstream out;
    write_metrics(out, "tsunami", m);
    EXPECT_NE(out.str().find("[tsunami]\nprecision = 0.500000\nrecall = 0.500000\nf1 = 0.500000\nauc = 0.500000"),
              std::string::npos);
}
