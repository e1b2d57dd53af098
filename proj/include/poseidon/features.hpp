#pragma once

// 16-d event feature vector:
//   0-3   magnitude/10, latitude, longitude, depth/700 (unit-normalized)
//   4-5   sin/cos of the day-of-year phase
//   6-8   depth class one-hot
//   9     log10(E)/20 of the event itself
//   10-15 local block: count, max magnitude, energy, magnitude deficit, 7/30 and 30/90 day trends

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "poseidon/catalog.hpp"
#include "poseidon/common.hpp"

namespace poseidon::features {

inline constexpr std::size_t kDim = 16;
inline constexpr std::size_t kLocalOffset = 10;
using FeatureVector = std::array<double, kDim>;

struct FeatureConfig {
    double delta_lat = 1.0;  // degrees
    double delta_lon = 1.0;  // degrees at the equator, widened by 1/max(cos φ, 0.1)
    double window_days = 90.0;
    double short_days = 7.0;
    double mid_days = 30.0;
    double long_days = 90.0;
};

/// Longitude difference wrapped into [-180, 180].
inline double wrap_delta_lon(double d) {
    d = std::fmod(d, 360.0);
    if (d > 180.0) d -= 360.0;
    if (d < -180.0) d += 360.0;
    return d;
}

/// Longitude half-width at latitude φ.
inline double lon_half_width(double lat, double delta_lon) {
    return delta_lon / std::max(std::cos(lat * kPi / 180.0), 0.1);
}

/// Catalog indices of the events in the adaptive neighborhood of `e` over [t − window, t).
inline std::vector<std::size_t> neighborhood_indices(const catalog::Catalog& cat, const catalog::Event& e,
                                                     double delta_lat, double delta_lon, double window_days) {
    if (!(delta_lat > 0.0 && delta_lon > 0.0 && window_days > 0.0))
        throw invalid_input("local_neighborhood: widths and window must be positive");
    const double half = lon_half_width(e.latitude, delta_lon);
    std::vector<std::size_t> out;
    const auto a = cat.lower_index(e.time - window_days * kSecondsPerDay);
    const auto b = cat.lower_index(e.time);
    for (std::size_t i = a; i < b; ++i) {
        const auto& o = cat[i];
        if (std::abs(o.latitude - e.latitude) <= delta_lat &&
            std::abs(wrap_delta_lon(o.longitude - e.longitude)) <= half)
            out.push_back(i);
    }
    return out;
}

inline std::vector<catalog::Event> local_neighborhood(const catalog::Catalog& cat, const catalog::Event& e,
                                                      double delta_lat, double delta_lon, double window_days) {
    std::vector<catalog::Event> out;
    for (auto i : neighborhood_indices(cat, e, delta_lat, delta_lon, window_days)) out.push_back(cat[i]);
    return out;
}

/// One-hot over {shallow < 70 km, intermediate 70-300 km, deep > 300 km}.
inline std::array<double, 3> depth_class(double depth_km) {
    if (depth_km < 70.0) return {1, 0, 0};
    if (depth_km <= 300.0) return {0, 1, 0};
    return {0, 0, 1};
}

inline FeatureVector event_features(const catalog::Catalog& cat, const catalog::Event& e,
                                    const FeatureConfig& cfg = {}) {
    FeatureVector x{};
    x[0] = std::clamp(e.magnitude / 10.0, 0.0, 1.0);
    x[1] = std::clamp((e.latitude + 90.0) / 180.0, 0.0, 1.0);
    x[2] = std::clamp((e.longitude + 180.0) / 360.0, 0.0, 1.0);
    x[3] = std::clamp(e.depth / 700.0, 0.0, 1.0);
    const double omega = 2.0 * kPi * catalog::day_of_year(e.time) / 365.0;
    x[4] = std::sin(omega);
    x[5] = std::cos(omega);
    const auto dc = depth_class(e.depth);
    std::copy(dc.begin(), dc.end(), x.begin() + 6);

    const double longest = std::max({cfg.window_days, cfg.short_days, cfg.mid_days, cfg.long_days});
    std::size_t count = 0, n_short = 0, n_mid = 0, n_long = 0;
    double local_max = 0.0, energy = 0.0;
    for (auto i : neighborhood_indices(cat, e, cfg.delta_lat, cfg.delta_lon, longest)) {
        const auto& o = cat[i];
        const double age_days = (e.time - o.time) / kSecondsPerDay;
        if (age_days <= cfg.window_days) {
            ++count;
            local_max = std::max(local_max, o.magnitude);
            energy += o.energy;
        }
        if (age_days <= cfg.short_days) ++n_short;
        if (age_days <= cfg.mid_days) ++n_mid;
        if (age_days <= cfg.long_days) ++n_long;
    }
    // Slot 9: the event's own log-energy; slots 10-15: the local block.
    x[9] = std::clamp(e.log10_energy / 20.0, 0.0, 1.0);
    x[10] = std::min(std::log10(1.0 + static_cast<double>(count)) / 4.0, 1.0);
    x[11] = local_max / 10.0;
    x[12] = std::min(std::log10(1.0 + energy) / 20.0, 1.0);
    x[13] = std::clamp((local_max - e.magnitude) / 10.0, -1.0, 1.0);
    x[14] = static_cast<double>(n_short) / static_cast<double>(std::max<std::size_t>(n_mid, 1));
    x[15] = static_cast<double>(n_mid) / static_cast<double>(std::max<std::size_t>(n_long, 1));
    return x;
}

/// Feature matrix: 16 columns, one row per sample, 6 significant digits.
inline void write_feature_matrix(const std::string& path, std::span<const FeatureVector> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write feature matrix '" + path + "'");
    for (std::size_t j = 0; j < kDim; ++j) out << (j ? "," : "") << 'x' << j;
    out << '\n';
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < kDim; ++j) out << (j ? "," : "") << catalog::format_g6(r[j]);
        out << '\n';
    }
}

}  // namespace poseidon::features
