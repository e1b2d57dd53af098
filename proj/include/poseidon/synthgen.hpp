#pragma once

// Synthetic catalogs with known Gutenberg-Richter, Omori-Utsu and Bath
// parameters. Single-generation sequences only: mainshocks are Poisson in
// space-time and each spawns its own aftershocks, which spawn nothing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "poseidon/catalog.hpp"
#include "poseidon/common.hpp"

namespace poseidon::synth {

struct TsunamiRule {
    double magnitude_threshold = 7.0;
    double depth_threshold_km = 70.0;
    double probability = 0.6;
};

struct SynthConfig {
    double b_true = 0.8;
    double p_true = 1.1;
    double c_true = 0.1;  // days
    double bath_dm = 1.2;
    double m_min = 2.5;  // also the catalog's completeness magnitude
    double m_max = 9.0;
    double mainshock_min_magnitude = 5.0;
    std::size_t n_mainshocks = 3000;
    /// Expected aftershocks of a mainshock at `mainshock_min_magnitude`.
    double aftershock_productivity = 4.0;
    /// Productivity scaling K·10^(alpha·(M − M_ref)); 0 gives a magnitude-independent mean.
    double productivity_alpha = 1.0;
    /// Productivity multiplier for mainshocks deeper than 70 km (deep events are aftershock-poor).
    double deep_productivity_factor = 0.05;
    std::size_t max_aftershocks = 5000;
    double horizon = 90.0;       // days, Omori truncation
    double span_days = 3650.0;   // mainshock time window
    double spatial_extent = 22.0; // side of the square source region, degrees
    double center_latitude = 0.0;
    double center_longitude = 0.0;
    double aftershock_scatter = 0.5;  // degrees
    double start_time = 946684800.0;  // 2000-01-01T00:00:00Z
    TsunamiRule tsunami;
    std::uint64_t seed = 1;
};

inline void validate(const SynthConfig& c) {
    auto req = [](bool ok, const char* what) {
        if (!ok) throw invalid_input(std::string("SynthConfig: ") + what);
    };
    req(c.b_true > 0.0, "b_true must be positive");
    req(c.p_true >= 0.0, "p_true must be non-negative");
    req(c.c_true > 0.0, "c_true must be positive");
    req(c.m_min < c.m_max, "m_min must be below m_max");
    req(c.m_min >= 0.0 && c.m_max <= catalog::kMaxMagnitude, "magnitudes must lie in [0, 9.1]");
    req(c.mainshock_min_magnitude >= c.m_min && c.mainshock_min_magnitude < c.m_max,
        "mainshock_min_magnitude must lie in [m_min, m_max)");
    req(c.aftershock_productivity >= 0.0, "aftershock_productivity must be non-negative");
    req(c.deep_productivity_factor >= 0.0, "deep_productivity_factor must be non-negative");
    req(c.horizon > c.c_true && c.horizon > 0.0, "horizon must exceed c_true");
    req(c.span_days > 0.0, "span_days must be positive");
    req(c.spatial_extent > 0.0 && c.spatial_extent <= 180.0, "spatial_extent must lie in (0, 180]");
    req(c.aftershock_scatter >= 0.0, "aftershock_scatter must be non-negative");
    req(c.tsunami.probability >= 0.0 && c.tsunami.probability <= 1.0, "tsunami probability must lie in [0, 1]");
}

/// Inverse-CDF draws from the truncated density ∝ 10^(−b M) on [m_min, m_max].
inline std::vector<double> sample_gr_magnitudes(double b, double m_min, double m_max, std::size_t n, Rng& rng) {
    if (n == 0) throw invalid_input("sample_gr_magnitudes: n must be positive");
    if (!(m_min < m_max) || !(b > 0.0)) throw invalid_input("sample_gr_magnitudes: degenerate bounds");
    const double tail = -std::expm1(-b * std::log(10.0) * (m_max - m_min));  // 1 − 10^(−b ΔM)
    std::vector<double> out(n);
    for (auto& m : out) {
        const double u = uniform01(rng);
        m = std::min(m_max, m_min - std::log1p(-u * tail) / (b * std::log(10.0)));
    }
    return out;
}

/// Inverse-CDF draws from the density ∝ (Δt + c)^(−p) truncated to (0, horizon].
inline std::vector<double> sample_omori_times(double p, double c, std::size_t n, double horizon, Rng& rng) {
    if (!(horizon > 0.0)) throw invalid_input("sample_omori_times: horizon must be positive");
    if (!(c > 0.0)) throw invalid_input("sample_omori_times: c must be positive");
    std::vector<double> out(n);
    const double q = 1.0 - p;
    const double lo = std::pow(c, q), hi = std::pow(horizon + c, q);
    for (auto& t : out) {
        do {
            const double u = uniform_open_closed(rng);
            if (p == 0.0) {
                t = u * horizon;
            } else if (std::abs(q) < 1e-12) {
                t = c * std::pow((horizon + c) / c, u) - c;
            } else {
                t = std::pow(lo + u * (hi - lo), 1.0 / q) - c;
            }
            t = std::min(t, horizon);
        } while (!(t > 0.0));
    }
    return out;
}

struct LogEntry {
    std::string child_id;
    std::string parent_id;
    double delay_days;
    double parent_magnitude;
    double child_magnitude;
    double offset_degrees;  // planar lat/lon offset from the parent
};

struct GenerationLog {
    std::vector<LogEntry> entries;
    std::size_t n_mainshocks = 0;

    /// (mainshock magnitude, largest aftershock magnitude) for every mainshock with aftershocks.
    std::vector<std::pair<double, double>> bath_pairs() const {
        std::vector<std::pair<double, double>> out;
        std::string current;
        for (const auto& e : entries) {
            if (e.parent_id != current) {
                out.emplace_back(e.parent_magnitude, e.child_magnitude);
                current = e.parent_id;
            } else {
                out.back().second = std::max(out.back().second, e.child_magnitude);
            }
        }
        return out;
    }

    /// Aftershock magnitudes other than each sequence's forced largest, paired with
    /// that largest value as their truncation bound. Sequences whose bound is at or
    /// below m_c carry no information and are skipped.
    std::pair<std::vector<double>, std::vector<double>> truncated_magnitudes(double m_c) const {
        std::pair<std::vector<double>, std::vector<double>> out;
        for (std::size_t i = 0; i < entries.size();) {
            std::size_t j = i, top = i;
            while (j < entries.size() && entries[j].parent_id == entries[i].parent_id) {
                if (entries[j].child_magnitude > entries[top].child_magnitude) top = j;
                ++j;
            }
            const double upper = entries[top].child_magnitude;
            if (upper > m_c)
                for (std::size_t k = i; k < j; ++k)
                    if (k != top) {
                        out.first.push_back(entries[k].child_magnitude);
                        out.second.push_back(upper);
                    }
            i = j;
        }
        return out;
    }

    std::vector<double> delays() const {
        std::vector<double> d;
        d.reserve(entries.size());
        for (const auto& e : entries) d.push_back(e.delay_days);
        return d;
    }
};

struct Generated {
    catalog::Catalog catalog;
    GenerationLog log;
};

namespace detail {

inline std::string make_id(char prefix, std::size_t i, long j = -1) {
    char buf[40];
    if (j < 0) std::snprintf(buf, sizeof buf, "%c%06zu", prefix, i);
    else std::snprintf(buf, sizeof buf, "%c%06zu_%04ld", prefix, i, j);
    return buf;
}

inline double wrap_longitude(double lon) {
    while (lon > 180.0) lon -= 360.0;
    while (lon < -180.0) lon += 360.0;
    return lon;
}

// Shallow-heavy depth mixture: 80% in [0, 70], 15% in [70, 300], 5% in [300, 700] km.
inline double sample_depth(Rng& rng) {
    const double u = uniform01(rng);
    const double v = uniform01(rng);
    if (u < 0.80) return 70.0 * v;
    if (u < 0.95) return 70.0 + 230.0 * v;
    return 300.0 + 400.0 * v;
}

}  // namespace detail

inline Generated generate_catalog(const SynthConfig& cfg) {
    validate(cfg);
    Rng rng = make_rng(cfg.seed, 0x5e15);
    std::vector<catalog::Event> events;
    GenerationLog log;
    log.n_mainshocks = cfg.n_mainshocks;
    const double half = cfg.spatial_extent / 2.0;
    const double lat_lo = std::max(-90.0, cfg.center_latitude - half);
    const double lat_hi = std::min(90.0, cfg.center_latitude + half);

    auto tsunami_flag = [&](double m, double depth) {
        const double u = uniform01(rng);
        return m >= cfg.tsunami.magnitude_threshold && depth <= cfg.tsunami.depth_threshold_km &&
               u < cfg.tsunami.probability;
    };

    for (std::size_t i = 0; i < cfg.n_mainshocks; ++i) {
        catalog::Event ms;
        ms.id = detail::make_id('m', i);
        ms.time = cfg.start_time + uniform01(rng) * cfg.span_days * kSecondsPerDay;
        ms.latitude = lat_lo + uniform01(rng) * (lat_hi - lat_lo);
        ms.longitude = detail::wrap_longitude(cfg.center_longitude - half + uniform01(rng) * cfg.spatial_extent);
        ms.depth = detail::sample_depth(rng);
        ms.magnitude = sample_gr_magnitudes(cfg.b_true, cfg.mainshock_min_magnitude, cfg.m_max, 1, rng)[0];
        ms.magnitude_type = "mw";
        ms.tsunami = tsunami_flag(ms.magnitude, ms.depth);

        const double mean = cfg.aftershock_productivity *
                            std::pow(10.0, cfg.productivity_alpha * (ms.magnitude - cfg.mainshock_min_magnitude)) *
                            (ms.depth > 70.0 ? cfg.deep_productivity_factor : 1.0);
        std::poisson_distribution<long> pois(mean);
        const auto count = mean > 0.0 ? std::min<std::size_t>(static_cast<std::size_t>(pois(rng)), cfg.max_aftershocks)
                                      : std::size_t{0};
        if (count > 0) {
            const double largest = std::max(ms.magnitude - cfg.bath_dm, cfg.m_min);
            std::vector<double> mags(count, largest);
            if (largest > cfg.m_min) {
                auto rest = sample_gr_magnitudes(cfg.b_true, cfg.m_min, largest, count, rng);
                std::copy(rest.begin(), rest.end(), mags.begin());
            }
            const auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(count));
            mags[std::min(pick, count - 1)] = largest;
            const auto delays = sample_omori_times(cfg.p_true, cfg.c_true, count, cfg.horizon, rng);
            for (std::size_t j = 0; j < count; ++j) {
                catalog::Event a;
                a.id = detail::make_id('a', i, static_cast<long>(j));
                a.time = ms.time + delays[j] * kSecondsPerDay;
                const double r = cfg.aftershock_scatter * std::sqrt(uniform01(rng));
                const double th = 2.0 * kPi * uniform01(rng);
                a.latitude = std::clamp(ms.latitude + r * std::cos(th), -90.0, 90.0);
                a.longitude = detail::wrap_longitude(ms.longitude + r * std::sin(th));
                std::normal_distribution<double> jitter(0.0, 5.0);
                a.depth = std::clamp(ms.depth + jitter(rng), 0.0, 700.0);
                a.magnitude = mags[j];
                a.magnitude_type = "ml";
                a.tsunami = tsunami_flag(a.magnitude, a.depth);
                log.entries.push_back({a.id, ms.id, delays[j], ms.magnitude, a.magnitude, r});
                events.push_back(std::move(a));
            }
        }
        events.push_back(std::move(ms));
    }
    return {catalog::Catalog(std::move(events), cfg.m_min), std::move(log)};
}

/// Generation log table: child id, parent id, true delay (days), magnitudes.
inline void write_log(std::ostream& out, const GenerationLog& log) {
    out << "child_id,parent_id,delay_days,parent_mag,child_mag\n";
    char buf[64];
    for (const auto& e : log.entries) {
        std::snprintf(buf, sizeof buf, "%.17g", e.delay_days);
        out << e.child_id << ',' << e.parent_id << ',' << buf << ',' << catalog::format_g6(e.parent_magnitude) << ','
            << catalog::format_g6(e.child_magnitude) << '\n';
    }
}

inline void write_log(const std::string& path, const GenerationLog& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write generation log '" + path + "'");
    write_log(out, log);
}

/// Reads the delay column back from a generation log table.
inline GenerationLog read_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read generation log '" + path + "'");
    GenerationLog log;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = catalog::detail::split_csv_line(line);
        if (cells.size() < 5) throw io_error("malformed generation log row in '" + path + "'");
        log.entries.push_back({cells[0], cells[1], std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4]), 0.0});
    }
    return log;
}

}  // namespace poseidon::synth
