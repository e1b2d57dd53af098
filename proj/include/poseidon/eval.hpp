#pragma once

// Classification metrics, ROC/AUC and energy-distribution anomaly statistics.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "poseidon/common.hpp"

namespace poseidon::eval {

struct TaskMetrics {
    double precision = 0, recall = 0, f1 = 0;
    double auc = std::numeric_limits<double>::quiet_NaN();
    double threshold = 0.5;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

namespace detail {
inline void check_inputs(std::span<const double> scores, std::span<const double> labels, const char* op) {
    if (scores.empty()) throw invalid_input(std::string(op) + ": empty input");
    if (scores.size() != labels.size()) throw invalid_input(std::string(op) + ": scores and labels differ in length");
    for (double y : labels)
        if (y != 0.0 && y != 1.0) throw invalid_input(std::string(op) + ": labels must be 0 or 1");
    for (double s : scores)
        if (std::isnan(s)) throw invalid_input(std::string(op) + ": NaN score");
}
}  // namespace detail

/// Positive iff score >= threshold. Precision is 0 with no predicted positives, recall 0 with no positive labels.
inline TaskMetrics confusion_metrics(std::span<const double> scores, std::span<const double> labels,
                                     double threshold = 0.5) {
    detail::check_inputs(scores, labels, "confusion_metrics");
    TaskMetrics m;
    m.threshold = threshold;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold, pos = labels[i] == 1.0;
        if (pred && pos) ++m.tp;
        else if (pred) ++m.fp;
        else if (pos) ++m.fn;
        else ++m.tn;
    }
    m.precision = m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

struct RocPoint {
    double fpr, tpr, threshold;
};

struct RocResult {
    double auc;
    std::vector<RocPoint> points;  // from (0, 0) at threshold +inf to (1, 1)
};

/// Mann-Whitney AUC with midranks for ties, plus one ROC point per distinct score.
inline RocResult roc_auc(std::span<const double> scores, std::span<const double> labels) {
    detail::check_inputs(scores, labels, "roc_auc");
    const std::size_t n = scores.size();
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1.0));
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw estimation_error("roc_auc: AUC is undefined for single-class labels");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    // Rank sums are integers or half-integers, so accumulate doubled ranks exactly.
    long double pos_rank2 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const auto twice_mid = static_cast<long double>(i + 1 + j);  // 2 × midrank of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1.0) pos_rank2 += twice_mid;
        i = j;
    }
    const long double np = n_pos, nn = n_neg;
    RocResult r;
    r.auc = static_cast<double>((pos_rank2 / 2 - np * (np + 1) / 2) / (np * nn));

    r.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = n; i > 0;) {
        std::size_t j = i;
        const double s = scores[order[i - 1]];
        while (j > 0 && scores[order[j - 1]] == s) {
            (labels[order[j - 1]] == 1.0 ? tp : fp) += 1;
            --j;
        }
        r.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                            static_cast<double>(tp) / static_cast<double>(n_pos), s});
        i = j;
    }
    return r;
}

/// Threshold among the observed scores that maximizes F1 (ties resolved toward the higher threshold).
inline TaskMetrics best_f1(std::span<const double> scores, std::span<const double> labels) {
    detail::check_inputs(scores, labels, "best_f1");
    std::vector<double> cand(scores.begin(), scores.end());
    std::sort(cand.begin(), cand.end(), std::greater<>());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    TaskMetrics best = confusion_metrics(scores, labels, 0.5);
    for (double t : cand) {
        const auto m = confusion_metrics(scores, labels, t);
        if (m.f1 > best.f1) best = m;
    }
    return best;
}

/// Confusion metrics at `threshold` plus AUC when both classes are present.
inline TaskMetrics task_metrics(std::span<const double> scores, std::span<const double> labels,
                                double threshold = 0.5) {
    auto m = confusion_metrics(scores, labels, threshold);
    if (m.tp + m.fn > 0 && m.fp + m.tn > 0) m.auc = roc_auc(scores, labels).auc;
    return m;
}

// ---------------------------------------------------------------------------
// Energy anomaly analysis

inline constexpr double kDefaultEnergyThreshold = 0.05;

struct EnergyReport {
    double mean_normal = 0, std_normal = 0, mean_anomalous = 0, std_anomalous = 0;
    std::size_t n_normal = 0, n_anomalous = 0;
    std::size_t flagged = 0, flagged_normal = 0, flagged_anomalous = 0;
    double separation = std::numeric_limits<double>::quiet_NaN();
    double threshold = kDefaultEnergyThreshold;
};

/// Per-class mean and sample standard deviation, flags E > threshold, and
/// separation = (mean_anomalous − mean_normal) / pooled standard deviation.
inline EnergyReport energy_separation(std::span<const double> energies, std::span<const double> anomalous,
                                      double threshold = kDefaultEnergyThreshold) {
    if (energies.empty()) throw invalid_input("energy_separation: empty input");
    if (energies.size() != anomalous.size()) throw invalid_input("energy_separation: length mismatch");
    EnergyReport r;
    r.threshold = threshold;
    double s[2] = {0, 0}, ss[2] = {0, 0};
    std::size_t n[2] = {0, 0};
    for (std::size_t i = 0; i < energies.size(); ++i) {
        const int k = anomalous[i] != 0.0;
        ++n[k];
        s[k] += energies[i];
        if (energies[i] > threshold) {
            ++r.flagged;
            ++(k ? r.flagged_anomalous : r.flagged_normal);
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    double mean[2], var[2];
    for (int k = 0; k < 2; ++k) mean[k] = n[k] ? s[k] / static_cast<double>(n[k]) : nan;
    for (std::size_t i = 0; i < energies.size(); ++i) {
        const int k = anomalous[i] != 0.0;
        ss[k] += (energies[i] - mean[k]) * (energies[i] - mean[k]);
    }
    for (int k = 0; k < 2; ++k) var[k] = n[k] > 1 ? ss[k] / static_cast<double>(n[k] - 1) : (n[k] ? 0.0 : nan);
    r.n_normal = n[0];
    r.n_anomalous = n[1];
    r.mean_normal = mean[0];
    r.mean_anomalous = mean[1];
    r.std_normal = std::sqrt(var[0]);
    r.std_anomalous = std::sqrt(var[1]);
    if (n[0] > 0 && n[1] > 0 && n[0] + n[1] > 2) {
        const double pooled = std::sqrt((ss[0] + ss[1]) / static_cast<double>(n[0] + n[1] - 2));
        if (pooled > 0) r.separation = (mean[1] - mean[0]) / pooled;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Output

inline void write_roc(std::ostream& out, const std::vector<RocPoint>& pts) {
    out << "fpr,tpr,threshold\n";
    char buf[96];
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", p.fpr, p.tpr, p.threshold);
        out << buf;
    }
}

inline void write_metrics(std::ostream& out, const std::string& task, const TaskMetrics& m) {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "[%s]\nprecision = %.6f\nrecall = %.6f\nf1 = %.6f\nauc = %.6f\nthreshold = %.6f\n"
                  "tp = %zu\nfp = %zu\ntn = %zu\nfn = %zu\n\n",
                  task.c_str(), m.precision, m.recall, m.f1, m.auc, m.threshold, m.tp, m.fp, m.tn, m.fn);
    out << buf;
}

inline void write_energy_report(std::ostream& out, const EnergyReport& r) {
    char buf[400];
    std::snprintf(buf, sizeof buf,
                  "[energy]\nthreshold = %.6f\nn_normal = %zu\nn_anomalous = %zu\nmean_normal = %.6f\n"
                  "std_normal = %.6f\nmean_anomalous = %.6f\nstd_anomalous = %.6f\nflagged = %zu\n"
                  "flagged_normal = %zu\nflagged_anomalous = %zu\nseparation = %.6f\n\n",
                  r.threshold, r.n_normal, r.n_anomalous, r.mean_normal, r.std_normal, r.mean_anomalous,
                  r.std_anomalous, r.flagged, r.flagged_normal, r.flagged_anomalous, r.separation);
    out << buf;
}

}  // namespace poseidon::eval
