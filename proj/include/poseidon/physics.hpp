#pragma once

// Bounded parameterization of the seismological-law parameters and the
// closed-form / grid-search estimators used as independent oracles.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "poseidon/common.hpp"
#include "poseidon/diff.hpp"

namespace poseidon::physics {

inline constexpr double kBMin = 0.7, kBRange = 0.6, kBMax = 1.3;
inline constexpr double kPMin = 0.8, kPRange = 0.4, kPMax = 1.2;  // 0.8 + 0.4 rounds above 1.2
inline constexpr double kCFloor = 0.001;

/// Raw learnable scalars.
struct PhysicsParams {
    double theta_b = 0.0;
    double theta_p = 0.0;
    double theta_c = -5.0;
    double delta_m = 1.2;
};

struct DerivedPhysics {
    double b;
    double p;
    double c;  // days
    double delta_m;
};

namespace detail {

inline double sigmoid(double x) { return diff::detail::stable_sigmoid(x); }
inline double softplus(double x) { return diff::detail::stable_softplus(x); }

// Keeps a saturated bounded value strictly inside its open interval.
inline double open_interval(double v, double lo, double hi) {
    return std::clamp(v, std::nextafter(lo, hi), std::nextafter(hi, lo));
}

}  // namespace detail

inline double derive_b(double theta_b) {
    return detail::open_interval(kBMin + kBRange * detail::sigmoid(theta_b), kBMin, kBMax);
}
inline double derive_p(double theta_p) {
    return detail::open_interval(kPMin + kPRange * detail::sigmoid(theta_p), kPMin, kPMax);
}
inline double derive_c(double theta_c) {
    return std::max(detail::softplus(theta_c) + kCFloor, std::nextafter(kCFloor, 1.0));
}

inline DerivedPhysics derive(const PhysicsParams& raw) {
    return {derive_b(raw.theta_b), derive_p(raw.theta_p), derive_c(raw.theta_c), raw.delta_m};
}

/// Raw values reproducing target (b, p, c, ΔM); targets must lie inside the bounds.
inline PhysicsParams invert(const DerivedPhysics& d) {
    auto logit = [](double u) { return std::log(u) - std::log1p(-u); };
    const double ub = (d.b - kBMin) / kBRange;
    const double up = (d.p - kPMin) / kPRange;
    if (!(ub > 0.0 && ub < 1.0)) throw invalid_input("invert: b outside (0.7, 1.3)");
    if (!(up > 0.0 && up < 1.0)) throw invalid_input("invert: p outside (0.8, 1.2)");
    if (!(d.c > kCFloor)) throw invalid_input("invert: c must exceed 0.001");
    const double sp = d.c - kCFloor;
    // softplus^{-1}(y) = log(expm1(y)), written to stay accurate for large y.
    const double theta_c = sp > 30.0 ? sp + std::log(-std::expm1(-sp)) : std::log(std::expm1(sp));
    return {logit(ub), logit(up), theta_c, d.delta_m};
}

/// Differentiable counterparts of derive_b/p/c on a tape.
struct DerivedVars {
    diff::Var b, p, c, delta_m;
};

inline DerivedVars derive(const diff::Var& theta_b, const diff::Var& theta_p, const diff::Var& theta_c,
                          const diff::Var& delta_m) {
    using namespace diff;
    const Var b = clamp(shift(scale(sigmoid(theta_b), kBRange), kBMin), std::nextafter(kBMin, 2.0),
                        std::nextafter(kBMax, 0.0));
    const Var p = clamp(shift(scale(sigmoid(theta_p), kPRange), kPMin), std::nextafter(kPMin, 2.0),
                        std::nextafter(kPMax, 0.0));
    const Var c = clamp(shift(softplus(theta_c), kCFloor), std::nextafter(kCFloor, 1.0),
                        std::numeric_limits<double>::infinity());
    return {b, p, c, delta_m};
}

// ---------------------------------------------------------------------------
// Gutenberg-Richter b-value

struct BValueEstimate {
    double b;
    double std_error;
    std::size_t n;
};

/// Aki-Utsu maximum-likelihood b-value with binning correction `bin_width`
/// (0 for continuous magnitudes).
inline BValueEstimate mle_b(std::span<const double> magnitudes, double m_c, double bin_width = 0.0) {
    const std::size_t n = magnitudes.size();
    if (n < 2) throw estimation_error("mle_b: need at least 2 magnitudes");
    double sum = 0.0;
    double lo = magnitudes[0], hi = magnitudes[0];
    for (double m : magnitudes) {
        if (m < m_c) throw estimation_error("mle_b: magnitude below completeness m_c");
        sum += m;
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }
    if (hi == lo) throw estimation_error("mle_b: degenerate sample (all magnitudes equal)");
    const double denom = sum / static_cast<double>(n) - (m_c - bin_width / 2.0);
    if (!(denom > 0.0)) throw estimation_error("mle_b: mean magnitude does not exceed m_c");
    const double b = std::log10(std::exp(1.0)) / denom;
    return {b, b / std::sqrt(static_cast<double>(n)), n};
}

/// b-value MLE when magnitude i is drawn from the GR density truncated to [m_c, upper[i]].
/// Standard error from the observed information.
inline BValueEstimate mle_b_truncated(std::span<const double> magnitudes, std::span<const double> upper, double m_c) {
    const std::size_t n = magnitudes.size();
    if (n != upper.size()) throw invalid_input("mle_b_truncated: magnitudes and bounds differ in length");
    if (n < 2) throw estimation_error("mle_b_truncated: need at least 2 magnitudes");
    double excess = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (magnitudes[i] < m_c || magnitudes[i] > upper[i] + 1e-9)
            throw estimation_error("mle_b_truncated: magnitude outside its truncation interval");
        if (!(upper[i] > m_c)) throw estimation_error("mle_b_truncated: empty truncation interval");
        excess += magnitudes[i] - m_c;
    }
    // d/dβ of the log-likelihood, β = b ln 10. Strictly decreasing in β.
    auto score = [&](double beta) {
        double s = static_cast<double>(n) / beta - excess;
        for (double u : upper) {
            const double d = u - m_c;
            s -= d / std::expm1(beta * d);
        }
        return s;
    };
    double lo = 1e-6, hi = 1.0;
    if (!(score(lo) > 0.0)) throw estimation_error("mle_b_truncated: sample is not GR-like (no positive b)");
    while (score(hi) > 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e4) throw estimation_error("mle_b_truncated: b diverges");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (score(mid) > 0.0 ? lo : hi) = mid;
    }
    const double beta = 0.5 * (lo + hi);
    double info = static_cast<double>(n) / (beta * beta);
    for (double u : upper) {
        const double d = u - m_c, e = std::expm1(beta * d);
        info -= d * d * (e + 1.0) / (e * e);
    }
    const double ln10 = std::log(10.0);
    return {beta / ln10, info > 0.0 ? 1.0 / (std::sqrt(info) * ln10) : std::numeric_limits<double>::quiet_NaN(), n};
}

// ---------------------------------------------------------------------------
// Omori-Utsu (p, c)

/// Normalizer of the density (t + c)^-p on (lo, hi]:  ∫ (t + c)^-p dt.
/// Written as B^q · L · exprel(q L) with q = 1 - p, B = lo + c, L = ln((hi + c)/(lo + c)),
/// which is continuous through p = 1.
inline double omori_integral(double lo, double hi, double p, double c) {
    const double q = 1.0 - p;
    const double L = std::log((hi + c) / (lo + c));
    return std::pow(lo + c, q) * L * diff::detail::exprel(q * L);
}

/// Mean log-likelihood of delays under the truncated density on (0, horizon].
inline double omori_log_likelihood(double sum_log, std::size_t n, double p, double c, double horizon) {
    return (-p * sum_log) / static_cast<double>(n) - std::log(omori_integral(0.0, horizon, p, c));
}

struct OmoriFit {
    double p;
    double c;
    double log_likelihood;  // mean per delay
    std::size_t n;
    bool p_at_boundary;
    bool c_at_boundary;
};

struct OmoriGrid {
    double p_min = 0.5, p_max = 2.0, p_step = 0.005;
    double c_min = 0.001, c_max = 1.0;
    std::size_t c_points = 400;
};

/// Maximum likelihood (p, c): exhaustive grid, then a deterministic pattern search in (p, ln c)
/// confined to the grid box.
inline OmoriFit fit_omori(std::span<const double> delays, double horizon, const OmoriGrid& grid = {}) {
    if (delays.size() < 50) throw estimation_error("fit_omori: need at least 50 delays");
    for (double d : delays)
        if (!(d > 0.0 && d <= horizon)) throw estimation_error("fit_omori: delay outside (0, horizon]");
    const std::size_t n = delays.size();
    auto sum_log = [&](double c) {
        double s = 0.0;
        for (double d : delays) s += std::log(d + c);
        return s;
    };
    const double lc_min = std::log(grid.c_min), lc_max = std::log(grid.c_max);
    const auto p_count = static_cast<std::size_t>(std::llround((grid.p_max - grid.p_min) / grid.p_step)) + 1;

    double best_ll = -std::numeric_limits<double>::infinity();
    double best_p = grid.p_min, best_lc = lc_min;
    for (std::size_t ci = 0; ci < grid.c_points; ++ci) {
        const double lc = lc_min + (lc_max - lc_min) * static_cast<double>(ci) / static_cast<double>(grid.c_points - 1);
        const double c = std::exp(lc);
        const double sl = sum_log(c);
        for (std::size_t pi = 0; pi < p_count; ++pi) {
            const double p = grid.p_min + grid.p_step * static_cast<double>(pi);
            const double ll = omori_log_likelihood(sl, n, p, c, horizon);
            if (ll > best_ll) {
                best_ll = ll;
                best_p = p;
                best_lc = lc;
            }
        }
    }

    // Pattern search refinement.
    double step_p = grid.p_step;
    double step_lc = (lc_max - lc_min) / static_cast<double>(grid.c_points - 1);
    auto ll_at = [&](double p, double lc) {
        return omori_log_likelihood(sum_log(std::exp(lc)), n, p, std::exp(lc), horizon);
    };
    for (int iter = 0; iter < 200 && (step_p > 1e-7 || step_lc > 1e-7); ++iter) {
        bool moved = false;
        const double cand[4][2] = {{step_p, 0}, {-step_p, 0}, {0, step_lc}, {0, -step_lc}};
        for (const auto& d : cand) {
            const double p = std::clamp(best_p + d[0], grid.p_min, grid.p_max);
            const double lc = std::clamp(best_lc + d[1], lc_min, lc_max);
            if (p == best_p && lc == best_lc) continue;
            const double ll = ll_at(p, lc);
            if (ll > best_ll) {
                best_ll = ll;
                best_p = p;
                best_lc = lc;
                moved = true;
            }
        }
        if (!moved) {
            step_p /= 2;
            step_lc /= 2;
        }
    }
    const double tol = 1e-6;
    return {best_p,
            std::exp(best_lc),
            best_ll,
            n,
            best_p <= grid.p_min + tol || best_p >= grid.p_max - tol,
            best_lc <= lc_min + tol || best_lc >= lc_max - tol};
}

}  // namespace poseidon::physics
