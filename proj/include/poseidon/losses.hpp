#pragma once

// Training objectives. Every loss is built from diff primitives so gradients
// reach both network weights and the raw physics scalars.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "poseidon/common.hpp"
#include "poseidon/diff.hpp"

namespace poseidon::losses {

using diff::Tape;
using diff::Var;

struct LossConfig {
    double margin = 1.0;
    double noise_sigma = 0.1;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double label_smoothing = 0.05;
    double foreshock_pos_weight = 3.0;
    double lambda_physics_stage1 = 0.0;
    double lambda_physics_stage2 = 0.1;
    double lambda_contrastive = 0.1;
    double lambda_energy = 0.01;
    double gr_bin_width = 0.1;
    double gr_top = 9.0;
    std::size_t omori_bins = 20;
    double omori_t_min = 0.01;  // days
    double omori_t_max = 90.0;  // days
    double prob_clamp = 1e-7;

    double lambda_physics(int stage) const { return stage == 1 ? lambda_physics_stage1 : lambda_physics_stage2; }
};

inline void validate(const LossConfig& c) {
    if (c.lambda_physics_stage1 < 0 || c.lambda_physics_stage2 < 0 || c.lambda_contrastive < 0 || c.lambda_energy < 0)
        throw invalid_input("LossConfig: weights must be non-negative");
    if (c.focal_gamma < 0) throw invalid_input("LossConfig: gamma must be non-negative");
    if (!(c.label_smoothing >= 0 && c.label_smoothing < 0.5)) throw invalid_input("LossConfig: smoothing in [0, 0.5)");
    if (!(c.omori_t_min > 0 && c.omori_t_max > c.omori_t_min && c.omori_bins >= 2))
        throw invalid_input("LossConfig: invalid Omori bins");
    if (!(c.gr_bin_width > 0)) throw invalid_input("LossConfig: GR bin width must be positive");
}

/// A loss value plus a flag raised when the inputs carried too little signal
/// (the value is then a constant 0).
struct FlaggedLoss {
    Var value;
    bool insufficient = false;
};

// ---------------------------------------------------------------------------
// Task losses (elementwise; callers reduce)

inline Var clamp_probability(const Var& p, double eps) { return diff::clamp(p, eps, 1.0 - eps); }

/// −α(1 − p)^γ y log p − (1 − y) log(1 − p); the focal factor applies to the positive term only.
inline Var focal_loss(const Var& p, const Var& y, double alpha, double gamma, double eps = 1e-7) {
    using namespace diff;
    const Var pc = clamp_probability(p, eps);
    const Var q = shift(neg(pc), 1.0);
    const Var pos = scale(pow(q, gamma) * y * log(pc), alpha);
    const Var negt = shift(neg(y), 1.0) * log(q);
    return neg(pos + negt);
}

/// BCE against the smoothed target y(1 − ε) + (1 − y)ε.
inline Var smoothed_bce(const Var& p, const Var& y, double smoothing, double eps = 1e-7) {
    using namespace diff;
    const Var pc = clamp_probability(p, eps);
    const Var target = shift(scale(y, 1.0 - 2.0 * smoothing), smoothing);
    return neg(target * log(pc) + shift(neg(target), 1.0) * log(shift(neg(pc), 1.0)));
}

/// BCE with the positive term scaled by w_pos.
inline Var weighted_bce(const Var& p, const Var& y, double w_pos, double eps = 1e-7) {
    using namespace diff;
    const Var pc = clamp_probability(p, eps);
    return neg(scale(y * log(pc), w_pos) + shift(neg(y), 1.0) * log(shift(neg(pc), 1.0)));
}

// ---------------------------------------------------------------------------
// Energy-based terms

using EnergyFn = std::function<Var(const Var&)>;

/// mean softplus(E(z) − E(z + ε) + m), ε ~ N(0, σ² I) drawn from `rng`.
inline Var contrastive_loss(const Var& z, const EnergyFn& energy, double margin, double sigma, Rng& rng) {
    using namespace diff;
    if (z.size() == 0) throw invalid_input("contrastive_loss: empty batch");
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<double> eps(z.size());
    for (auto& e : eps) e = noise(rng);
    const Var zp = z + z.tape().constant(z.shape(), std::move(eps));
    return mean(softplus(shift(energy(z) - energy(zp), margin)));
}

/// mean E(z)^2
inline Var energy_regularizer(const Var& energies) { return diff::mean(diff::square(energies)); }

// ---------------------------------------------------------------------------
// Gutenberg-Richter

/// Cumulative counts N(≥ M) at thresholds m_c, m_c + w, ..., up to `top`.
struct GrCounts {
    std::vector<double> thresholds;
    std::vector<double> counts;

    std::size_t occupied() const {
        return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }));
    }
};

inline GrCounts gr_counts(std::span<const double> magnitudes, double m_c, double bin_width = 0.1, double top = 9.0) {
    std::vector<double> sorted(magnitudes.begin(), magnitudes.end());
    std::sort(sorted.begin(), sorted.end());
    GrCounts g;
    for (std::size_t k = 0;; ++k) {
        const double m = m_c + bin_width * static_cast<double>(k);
        if (m > top + 1e-9) break;
        const auto it = std::lower_bound(sorted.begin(), sorted.end(), m - 1e-9);
        g.thresholds.push_back(m);
        g.counts.push_back(static_cast<double>(sorted.end() - it));
    }
    return g;
}

/// Σ w_M (log10(N(M) + 1) − (a − b M))², w_M ∝ √N(M) normalized to 1, with the
/// intercept a set to its weighted least-squares value given b.
inline FlaggedLoss gr_loss(Tape& tape, const GrCounts& g, const Var& b) {
    if (g.occupied() < 2) return {tape.scalar(0.0), true};
    const std::size_t K = g.counts.size();
    std::vector<double> w(K), y(K);
    double wsum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        w[k] = std::sqrt(g.counts[k]);
        y[k] = std::log10(g.counts[k] + 1.0);
        wsum += w[k];
    }
    double ybar = 0.0, mbar = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        w[k] /= wsum;
        ybar += w[k] * y[k];
        mbar += w[k] * g.thresholds[k];
    }
    // Residual after profiling a: (y − ȳ_w) + b (M − M̄_w).
    std::vector<double> yc(K), mc(K);
    for (std::size_t k = 0; k < K; ++k) {
        yc[k] = y[k] - ybar;
        mc[k] = g.thresholds[k] - mbar;
    }
    using namespace diff;
    const Var r = tape.constant({K}, std::move(yc)) + tape.constant({K}, std::move(mc)) * b;
    return {sum(tape.constant({K}, std::move(w)) * square(r)), false};
}

inline FlaggedLoss gr_loss(Tape& tape, std::span<const double> magnitudes, const Var& b, double m_c,
                           double bin_width = 0.1, double top = 9.0) {
    return gr_loss(tape, gr_counts(magnitudes, m_c, bin_width, top), b);
}

/// Weighted least-squares intercept a for a given b (reporting helper).
inline double gr_intercept(const GrCounts& g, double b) {
    double wsum = 0.0, acc = 0.0;
    for (std::size_t k = 0; k < g.counts.size(); ++k) {
        const double w = std::sqrt(g.counts[k]);
        wsum += w;
        acc += w * (std::log10(g.counts[k] + 1.0) + b * g.thresholds[k]);
    }
    return wsum > 0 ? acc / wsum : 0.0;
}

// ---------------------------------------------------------------------------
// Omori-Utsu

/// Log-spaced delay bins over [t_min, t_max]; the first bin also absorbs (0, t_min).
struct OmoriBins {
    std::vector<double> edges;  // size bins + 1, edges.front() == 0

    static OmoriBins log_spaced(std::size_t bins, double t_min, double t_max) {
        OmoriBins b;
        b.edges.resize(bins + 1);
        for (std::size_t k = 0; k <= bins; ++k)
            b.edges[k] = t_min * std::pow(t_max / t_min, static_cast<double>(k) / static_cast<double>(bins));
        b.edges.front() = 0.0;
        b.edges.back() = t_max;
        return b;
    }
    std::size_t size() const { return edges.size() - 1; }
};

struct OmoriHistogram {
    std::vector<double> counts;
    std::size_t n = 0;  // delays that fell inside the binned range
};

inline OmoriHistogram omori_histogram(std::span<const double> delays, const OmoriBins& bins) {
    OmoriHistogram h;
    h.counts.assign(bins.size(), 0.0);
    for (double d : delays) {
        if (!(d > 0.0) || d > bins.edges.back()) continue;
        auto it = std::lower_bound(bins.edges.begin() + 1, bins.edges.end(), d);
        h.counts[static_cast<std::size_t>(it - (bins.edges.begin() + 1))] += 1.0;
        ++h.n;
    }
    return h;
}

/// Per-bin probabilities π_k ∝ ∫_bin (t + c)^(−p) dt on a tape.
inline Var omori_bin_probabilities(Tape& tape, const OmoriBins& bins, const Var& p, const Var& c) {
    using namespace diff;
    const std::size_t K = bins.size();
    std::vector<double> lo(bins.edges.begin(), bins.edges.end() - 1), hi(bins.edges.begin() + 1, bins.edges.end());
    const Var lower = tape.constant({K}, std::move(lo)) + c;
    const Var upper = tape.constant({K}, std::move(hi)) + c;
    const Var L = log(upper) - log(lower);
    const Var q = shift(neg(p), 1.0);
    const Var integral = exp(q * log(lower)) * L * exprel(q * L);
    return integral / sum(integral);
}

/// KL(q ‖ π) between the smoothed observed histogram and the (p, c) bin probabilities.
inline FlaggedLoss omori_loss(Tape& tape, const OmoriHistogram& h, const OmoriBins& bins, const Var& p, const Var& c,
                              std::size_t min_delays = 50) {
    if (h.n < min_delays) return {tape.scalar(0.0), true};
    const std::size_t K = bins.size();
    std::vector<double> q(K), logq(K);
    double qs = 0.0;
    for (std::size_t k = 0; k < K; ++k) qs += (q[k] = h.counts[k] / static_cast<double>(h.n) + 1e-8);
    for (std::size_t k = 0; k < K; ++k) {
        q[k] /= qs;
        logq[k] = std::log(q[k]);
    }
    using namespace diff;
    const Var pi = omori_bin_probabilities(tape, bins, p, c);
    const Var Q = tape.constant({K}, q);
    return {sum(Q * (tape.constant({K}, std::move(logq)) - log(pi))), false};
}

inline FlaggedLoss omori_loss(Tape& tape, std::span<const double> delays, const Var& p, const Var& c,
                              const OmoriBins& bins) {
    return omori_loss(tape, omori_histogram(delays, bins), bins, p, c);
}

// ---------------------------------------------------------------------------
// Bath

/// mean (M_main − M_max,after − ΔM)²
inline FlaggedLoss bath_loss(Tape& tape, std::span<const std::pair<double, double>> pairs, const Var& delta_m) {
    if (pairs.empty()) return {tape.scalar(0.0), true};
    std::vector<double> gaps;
    gaps.reserve(pairs.size());
    for (const auto& [main, after] : pairs) gaps.push_back(main - after);
    using namespace diff;
    const std::size_t n = gaps.size();
    return {mean(square(tape.constant({n}, std::move(gaps)) - delta_m)), false};
}

// ---------------------------------------------------------------------------
// Weighted total

struct TaskOutputs {
    Var p_aftershock;  // (B, 1)
    Var p_tsunami;
    Var p_foreshock;
    Var energy;  // (B, 1)
    Var z;       // (B, 64)
};

struct TaskLabels {
    std::vector<double> aftershock, tsunami, foreshock;
};

/// Physics observations for one batch, pre-aggregated.
struct PhysicsBatch {
    GrCounts gr;
    OmoriHistogram omori;
    std::vector<std::pair<double, double>> bath_pairs;
};

struct PhysicsVars {
    Var b, p, c, delta_m;
};

struct LossBreakdown {
    double task_aftershock = 0, task_tsunami = 0, task_foreshock = 0;
    double gr = 0, omori = 0, bath = 0;
    double contrastive = 0, energy_reg = 0, total = 0;
    bool gr_insufficient = false, omori_insufficient = false, bath_insufficient = false;
    Var total_var;
};

inline LossBreakdown total_loss(Tape& tape, const TaskOutputs& out, const TaskLabels& labels,
                                const PhysicsBatch& physics, const PhysicsVars& pv, const OmoriBins& bins,
                                const EnergyFn& energy_fn, const LossConfig& cfg, int stage, Rng& rng) {
    using namespace diff;
    const std::size_t B = labels.aftershock.size();
    if (out.p_aftershock.size() != B || labels.tsunami.size() != B || labels.foreshock.size() != B)
        throw invalid_input("total_loss: inconsistent batch sizes");
    auto column = [&](const std::vector<double>& v) { return tape.constant({B, 1}, v); };

    const Var la = mean(smoothed_bce(out.p_aftershock, column(labels.aftershock), cfg.label_smoothing, cfg.prob_clamp));
    const Var lt = mean(focal_loss(out.p_tsunami, column(labels.tsunami), cfg.focal_alpha, cfg.focal_gamma, cfg.prob_clamp));
    const Var lf = mean(weighted_bce(out.p_foreshock, column(labels.foreshock), cfg.foreshock_pos_weight, cfg.prob_clamp));
    const Var task = scale(la + lt + lf, 1.0 / 3.0);

    const auto gr = gr_loss(tape, physics.gr, pv.b);
    const auto om = omori_loss(tape, physics.omori, bins, pv.p, pv.c);
    const auto ba = bath_loss(tape, physics.bath_pairs, pv.delta_m);
    const Var phys = scale(gr.value + om.value + ba.value, 1.0 / 3.0);

    const Var con = contrastive_loss(out.z, energy_fn, cfg.margin, cfg.noise_sigma, rng);
    const Var ereg = energy_regularizer(out.energy);

    const Var total = task + scale(phys, cfg.lambda_physics(stage)) + scale(con, cfg.lambda_contrastive) +
                      scale(ereg, cfg.lambda_energy);

    LossBreakdown r;
    r.task_aftershock = la.item();
    r.task_tsunami = lt.item();
    r.task_foreshock = lf.item();
    r.gr = gr.value.item();
    r.omori = om.value.item();
    r.bath = ba.value.item();
    r.gr_insufficient = gr.insufficient;
    r.omori_insufficient = om.insufficient;
    r.bath_insufficient = ba.insufficient;
    r.contrastive = con.item();
    r.energy_reg = ereg.item();
    r.total = total.item();
    r.total_var = total;
    return r;
}

}  // namespace poseidon::losses
