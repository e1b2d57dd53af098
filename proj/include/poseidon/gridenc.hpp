#pragma once

// Multi-scale spatiotemporal context grids: for each look-back scale
// τ ∈ {7, 30, 90} days, six per-cell statistics of the events in [t − τ, t).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "poseidon/catalog.hpp"
#include "poseidon/common.hpp"
#include "poseidon/diff.hpp"

namespace poseidon::grid {

inline constexpr std::array<double, 3> kScalesDays{7.0, 30.0, 90.0};
inline constexpr std::size_t kChannelsPerScale = 6;
inline constexpr std::size_t kChannels = kScalesDays.size() * kChannelsPerScale;

enum Channel : std::size_t {
    EventCount = 0,
    MaxMagnitude = 1,
    LogEnergy = 2,
    MeanDepth = 3,
    ActivityTrend = 4,
    MagnitudeVariance = 5,
};

/// Lat/lon box partitioned into square cells. The default box is the whole globe.
struct GridSpec {
    double cell_size = 2.0;
    double lat_min = -90.0, lat_max = 90.0;
    double lon_min = -180.0, lon_max = 180.0;

    std::size_t rows() const { return static_cast<std::size_t>(std::llround((lat_max - lat_min) / cell_size)); }
    std::size_t cols() const { return static_cast<std::size_t>(std::llround((lon_max - lon_min) / cell_size)); }
};

inline void validate(const GridSpec& g) {
    if (!(g.cell_size > 0.0)) throw invalid_input("GridSpec: cell_size must be positive");
    if (!(g.lat_min >= -90.0 && g.lat_max <= 90.0 && g.lat_min < g.lat_max && g.lon_min >= -180.0 &&
          g.lon_max <= 180.0 && g.lon_min < g.lon_max))
        throw invalid_input("GridSpec: invalid bounding box");
    auto whole = [&](double span) { return std::abs(span / g.cell_size - std::round(span / g.cell_size)) < 1e-9; };
    if (!whole(g.lat_max - g.lat_min) || !whole(g.lon_max - g.lon_min))
        throw invalid_input("GridSpec: cell_size must tile the bounding box");
}

/// Cell of a coordinate, or false when it lies outside the box. Upper edges fold into the last cell.
inline bool locate(const GridSpec& g, double lat, double lon, std::size_t& row, std::size_t& col) {
    if (lat < g.lat_min || lat > g.lat_max || lon < g.lon_min || lon > g.lon_max) return false;
    row = std::min(static_cast<std::size_t>(std::floor((lat - g.lat_min) / g.cell_size)), g.rows() - 1);
    col = std::min(static_cast<std::size_t>(std::floor((lon - g.lon_min) / g.cell_size)), g.cols() - 1);
    return true;
}

struct ContextGrid {
    diff::Tensor data;  // (18, H, W), scale-major: [τ=7 ch0..5, τ=30 ch0..5, τ=90 ch0..5]
    double cell_size = 0.0;
    double reference_time = 0.0;

    std::size_t rows() const { return data.shape[1]; }
    std::size_t cols() const { return data.shape[2]; }
    double at(std::size_t channel, std::size_t r, std::size_t c) const {
        return data.values[(channel * rows() + r) * cols() + c];
    }
};

/// Raw per-cell statistics over events with t − τ ≤ t_i < t, shape (6, H, W):
/// count, max magnitude, log10(1 + ΣE), mean depth (km), recent-half/full count ratio,
/// population magnitude variance. Empty cells are all zero.
inline diff::Tensor build_scale_grid(const catalog::Catalog& cat, double t, double tau_days, const GridSpec& spec) {
    if (!(tau_days > 0.0)) throw invalid_input("build_scale_grid: tau must be positive");
    validate(spec);
    const std::size_t H = spec.rows(), W = spec.cols(), HW = H * W;
    diff::Tensor out({kChannelsPerScale, H, W}, 0.0);
    std::vector<double> energy(HW, 0.0), depth_sum(HW, 0.0), mean_mag(HW, 0.0), m2(HW, 0.0), recent(HW, 0.0);
    const double t0 = t - tau_days * kSecondsPerDay;
    const double t_half = t - 0.5 * tau_days * kSecondsPerDay;
    auto& v = out.values;
    for (const auto& e : cat.window(t0, t)) {
        std::size_t r, c;
        if (!locate(spec, e.latitude, e.longitude, r, c)) continue;
        const std::size_t k = r * W + c;
        const double n = (v[EventCount * HW + k] += 1.0);
        v[MaxMagnitude * HW + k] = n == 1.0 ? e.magnitude : std::max(v[MaxMagnitude * HW + k], e.magnitude);
        energy[k] += e.energy;
        depth_sum[k] += e.depth;
        if (e.time >= t_half) recent[k] += 1.0;
        // Welford update of the magnitude mean/variance.
        const double d = e.magnitude - mean_mag[k];
        mean_mag[k] += d / n;
        m2[k] += d * (e.magnitude - mean_mag[k]);
    }
    for (std::size_t k = 0; k < HW; ++k) {
        const double n = v[EventCount * HW + k];
        if (n == 0.0) continue;
        v[LogEnergy * HW + k] = std::log10(1.0 + energy[k]);
        v[MeanDepth * HW + k] = depth_sum[k] / n;
        v[ActivityTrend * HW + k] = recent[k] / std::max(n, 1.0);
        v[MagnitudeVariance * HW + k] = std::max(0.0, m2[k] / n);
    }
    return out;
}

/// Concatenation of the 7, 30 and 90 day grids along the channel axis.
inline ContextGrid build_multiscale(const catalog::Catalog& cat, double t, const GridSpec& spec) {
    validate(spec);
    const std::size_t H = spec.rows(), W = spec.cols();
    ContextGrid g;
    g.data = diff::Tensor({kChannels, H, W}, 0.0);
    g.cell_size = spec.cell_size;
    g.reference_time = t;
    for (std::size_t s = 0; s < kScalesDays.size(); ++s) {
        const auto part = build_scale_grid(cat, t, kScalesDays[s], spec);
        std::copy(part.values.begin(), part.values.end(),
                  g.data.values.begin() + static_cast<std::ptrdiff_t>(s * kChannelsPerScale * H * W));
    }
    return g;
}

/// Input scaling applied before the encoder: log10(1 + count)/4, max magnitude/10,
/// log-energy/20, mean depth/700; trend and variance pass through.
inline diff::Tensor normalize(const ContextGrid& g) {
    diff::Tensor out = g.data;
    const std::size_t HW = g.rows() * g.cols();
    for (std::size_t ch = 0; ch < kChannels; ++ch) {
        double* p = out.values.data() + ch * HW;
        switch (ch % kChannelsPerScale) {
            case EventCount:
                for (std::size_t k = 0; k < HW; ++k) p[k] = std::log10(1.0 + p[k]) / 4.0;
                break;
            case MaxMagnitude:
                for (std::size_t k = 0; k < HW; ++k) p[k] /= 10.0;
                break;
            case LogEnergy:
                for (std::size_t k = 0; k < HW; ++k) p[k] /= 20.0;
                break;
            case MeanDepth:
                for (std::size_t k = 0; k < HW; ++k) p[k] /= 700.0;
                break;
            default:
                break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary dump: "PGRD", u32 version, u32 H, u32 W, then float32 little-endian
// values in (scale, channel, row, col) order.

inline constexpr std::uint32_t kDumpVersion = 1;

namespace detail {
inline void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw io_error("grid dump: truncated header");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace detail

inline void write_grid(std::ostream& out, const diff::Tensor& grid) {
    if (grid.shape.size() != 3 || grid.shape[0] != kChannels)
        throw invalid_input("write_grid: expected shape (18, H, W), got " + diff::to_string(grid.shape));
    out.write("PGRD", 4);
    detail::put_u32(out, kDumpVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(grid.shape[1]));
    detail::put_u32(out, static_cast<std::uint32_t>(grid.shape[2]));
    for (double v : grid.values) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(out, bits);
    }
}

inline diff::Tensor read_grid(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "PGRD", 4) != 0) throw io_error("grid dump: bad magic");
    if (detail::get_u32(in) != kDumpVersion) throw io_error("grid dump: unsupported version");
    const std::size_t H = detail::get_u32(in), W = detail::get_u32(in);
    diff::Tensor t({kChannels, H, W}, 0.0);
    for (auto& v : t.values) {
        const std::uint32_t bits = detail::get_u32(in);
        float f;
        std::memcpy(&f, &bits, 4);
        v = f;
    }
    return t;
}

}  // namespace poseidon::grid
