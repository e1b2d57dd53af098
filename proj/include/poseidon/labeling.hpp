#pragma once

// Trigger selection and the three binary task labels.

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "poseidon/catalog.hpp"
#include "poseidon/common.hpp"

namespace poseidon::labeling {

struct LabelConfig {
    double min_trigger_magnitude = 5.0;
    double aftershock_window = 30.0;  // days
    double aftershock_radius = 100.0; // km
    std::size_t aftershock_min_count = 5;
    double aftershock_min_magnitude = 3.0;
    double foreshock_window = 30.0;   // days
    double foreshock_radius = 100.0;  // km
    /// Drop triggers whose longest context window reaches before the catalog start.
    bool require_lookback = true;
    double lookback_days = 90.0;
};

inline void validate(const LabelConfig& c) {
    if (!(c.aftershock_window > 0 && c.aftershock_radius > 0 && c.foreshock_window > 0 && c.foreshock_radius > 0 &&
          c.lookback_days > 0))
        throw invalid_input("LabelConfig: windows and radii must be positive");
}

/// Haversine distance on a sphere of radius 6371 km.
inline double great_circle_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double rad = kPi / 180.0;
    const double dphi = (lat2 - lat1) * rad;
    const double dlam = (lon2 - lon1) * rad;
    const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlam / 2.0);
    const double a = s1 * s1 + std::cos(lat1 * rad) * std::cos(lat2 * rad) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

inline double sample_weight(bool tsunami, bool foreshock) {
    return 1.0 + 10.0 * (tsunami ? 1.0 : 0.0) + 3.0 * (foreshock ? 1.0 : 0.0);
}

/// Observations in a trigger's aftershock window that feed the physics losses.
struct PhysicsAux {
    std::vector<double> delays;      // days after the trigger
    std::vector<double> magnitudes;  // of the same events
    std::optional<std::pair<double, double>> bath_pair;  // (trigger M, largest later M)
};

struct Sample {
    std::size_t trigger_index = 0;  // position in the catalog
    bool label_aftershock = false;
    bool label_tsunami = false;
    bool label_foreshock = false;
    double sample_weight = 1.0;
    PhysicsAux aux;
};

/// Indices of events with magnitude >= min_magnitude, in time order.
inline std::vector<std::size_t> select_trigger_indices(const catalog::Catalog& cat, double min_magnitude) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cat.size(); ++i)
        if (cat[i].magnitude >= min_magnitude) out.push_back(i);
    return out;
}

inline std::vector<catalog::Event> select_triggers(const catalog::Catalog& cat, double min_magnitude) {
    std::vector<catalog::Event> out;
    for (auto i : select_trigger_indices(cat, min_magnitude)) out.push_back(cat[i]);
    return out;
}

inline Sample label_at(const catalog::Catalog& cat, std::size_t index, const LabelConfig& cfg) {
    const auto& trig = cat[index];
    Sample s;
    s.trigger_index = index;
    s.label_tsunami = trig.tsunami;
    const double horizon = std::max(cfg.aftershock_window, cfg.foreshock_window) * kSecondsPerDay;
    std::size_t counted = 0;
    double largest_after = -1.0;
    for (std::size_t j = cat.upper_index(trig.time); j < cat.size() && cat[j].time <= trig.time + horizon; ++j) {
        const auto& e = cat[j];
        const double dt_days = (e.time - trig.time) / kSecondsPerDay;
        const double dist = great_circle_km(trig.latitude, trig.longitude, e.latitude, e.longitude);
        if (dt_days <= cfg.aftershock_window && dist <= cfg.aftershock_radius) {
            if (e.magnitude >= cfg.aftershock_min_magnitude) ++counted;
            if (e.magnitude >= cat.magnitude_completeness()) {
                s.aux.delays.push_back(dt_days);
                s.aux.magnitudes.push_back(e.magnitude);
            }
            largest_after = std::max(largest_after, e.magnitude);
        }
        if (dt_days <= cfg.foreshock_window && dist <= cfg.foreshock_radius && e.magnitude > trig.magnitude)
            s.label_foreshock = true;
    }
    s.label_aftershock = counted >= cfg.aftershock_min_count;
    if (largest_after >= 0.0) s.aux.bath_pair = std::make_pair(trig.magnitude, largest_after);
    s.sample_weight = sample_weight(s.label_tsunami, s.label_foreshock);
    return s;
}

/// Labels a trigger given by value; it must be an event of `cat`.
inline Sample label_sample(const catalog::Catalog& cat, const catalog::Event& trigger, const LabelConfig& cfg) {
    validate(cfg);
    const auto idx = cat.find(trigger);
    if (!idx) throw invalid_input("label_sample: trigger '" + trigger.id + "' is not in the catalog");
    return label_at(cat, *idx, cfg);
}

/// Every usable trigger of the catalog, labeled, in time order.
inline std::vector<Sample> label_catalog(const catalog::Catalog& cat, const LabelConfig& cfg) {
    validate(cfg);
    std::vector<Sample> out;
    if (cat.empty()) return out;
    const double t_min = cat.time_span().first;
    for (auto i : select_trigger_indices(cat, cfg.min_trigger_magnitude)) {
        if (cfg.require_lookback && cat[i].time - cfg.lookback_days * kSecondsPerDay < t_min) continue;
        out.push_back(label_at(cat, i, cfg));
    }
    return out;
}

struct Prevalence {
    double aftershock = 0, tsunami = 0, foreshock = 0;
    std::size_t n = 0;
};

inline Prevalence prevalence(const std::vector<Sample>& samples) {
    Prevalence p;
    p.n = samples.size();
    if (samples.empty()) return p;
    for (const auto& s : samples) {
        p.aftershock += s.label_aftershock;
        p.tsunami += s.label_tsunami;
        p.foreshock += s.label_foreshock;
    }
    const double n = static_cast<double>(samples.size());
    p.aftershock /= n;
    p.tsunami /= n;
    p.foreshock /= n;
    return p;
}

/// Sample table: one row per trigger (id, three labels, weight).
inline void write_samples(const std::string& path, const catalog::Catalog& cat, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write sample table '" + path + "'");
    out << "id,aftershock,tsunami,foreshock,weight\n";
    for (const auto& s : samples)
        out << catalog::detail::quote_if_needed(cat[s.trigger_index].id) << ',' << s.label_aftershock << ','
            << s.label_tsunami << ',' << s.label_foreshock << ',' << s.sample_weight << '\n';
}

}  // namespace poseidon::labeling
