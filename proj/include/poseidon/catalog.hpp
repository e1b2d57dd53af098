#pragma once

// Earthquake catalog: event records, energy features, CSV ingestion/emission,
// geographic binning and quality filtering.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "poseidon/common.hpp"

namespace poseidon::catalog {

inline constexpr double kMaxMagnitude = 9.1;
inline constexpr double kMaxDepthKm = 800.0;

struct Quality {
    // Missing individual measurements are NaN.
    double n_stations = NAN;
    double min_station_dist = NAN;
    double rms_residual = NAN;
    double azimuthal_gap = NAN;
    double err_horizontal = NAN;
    double err_depth = NAN;
    double err_magnitude = NAN;
};

struct Event {
    std::string id;
    double time = 0.0;  // seconds since Unix epoch, UTC
    double latitude = 0.0;
    double longitude = 0.0;
    double depth = 0.0;  // km
    double magnitude = 0.0;
    std::string magnitude_type;
    bool tsunami = false;
    std::string event_type = "earthquake";
    std::optional<Quality> quality;
    double energy = 0.0;  // Joules
    double log10_energy = 0.0;
};

struct Energy {
    double joules;
    double log10_joules;
};

/// Energy-magnitude relation log10(E) = 1.5 M + 4.8.
inline Energy compute_energy(double magnitude) {
    if (!std::isfinite(magnitude)) throw invalid_input("compute_energy: non-finite magnitude");
    const double lg = 1.5 * magnitude + 4.8;
    return {std::pow(10.0, lg), lg};
}

/// Recomputes the derived energy fields from the magnitude.
inline void refresh_energy(Event& e) {
    const auto en = compute_energy(e.magnitude);
    e.energy = en.joules;
    e.log10_energy = en.log10_joules;
}

/// Returns an empty string when the event satisfies the field bounds, otherwise the reason.
inline std::string validate(const Event& e) {
    if (!std::isfinite(e.time)) return "time";
    if (!std::isfinite(e.latitude) || e.latitude < -90.0 || e.latitude > 90.0) return "latitude";
    if (!std::isfinite(e.longitude) || e.longitude < -180.0 || e.longitude > 180.0) return "longitude";
    if (!std::isfinite(e.depth) || e.depth < 0.0 || e.depth > kMaxDepthKm) return "depth";
    if (!std::isfinite(e.magnitude) || e.magnitude < 0.0 || e.magnitude > kMaxMagnitude) return "magnitude";
    return {};
}

/// Time-ordered, immutable event collection.
class Catalog {
public:
    Catalog() = default;

    explicit Catalog(std::vector<Event> events, double magnitude_completeness = 0.0)
        : events_(std::move(events)), magnitude_completeness_(magnitude_completeness) {
        for (auto& e : events_) {
            if (auto why = validate(e); !why.empty())
                throw invalid_input("event '" + e.id + "' has invalid " + why);
            refresh_energy(e);
        }
        std::stable_sort(events_.begin(), events_.end(),
                         [](const Event& a, const Event& b) { return a.time < b.time; });
    }

    std::span<const Event> events() const { return events_; }
    std::size_t size() const { return events_.size(); }
    bool empty() const { return events_.empty(); }
    const Event& operator[](std::size_t i) const { return events_[i]; }
    double magnitude_completeness() const { return magnitude_completeness_; }

    std::pair<double, double> time_span() const {
        if (events_.empty()) return {0.0, 0.0};
        return {events_.front().time, events_.back().time};
    }

    /// Index of the first event with time >= t.
    std::size_t lower_index(double t) const {
        return static_cast<std::size_t>(
            std::lower_bound(events_.begin(), events_.end(), t,
                             [](const Event& e, double v) { return e.time < v; }) -
            events_.begin());
    }

    /// Index of the first event with time > t.
    std::size_t upper_index(double t) const {
        return static_cast<std::size_t>(
            std::upper_bound(events_.begin(), events_.end(), t,
                             [](double v, const Event& e) { return v < e.time; }) -
            events_.begin());
    }

    /// Events with t0 <= time < t1.
    std::span<const Event> window(double t0, double t1) const {
        const auto a = lower_index(t0);
        const auto b = std::max(a, lower_index(t1));
        return std::span<const Event>(events_).subspan(a, b - a);
    }

    /// Position of `e` inside the catalog, matched on content (time, id, location, magnitude).
    std::optional<std::size_t> find(const Event& e) const {
        for (auto i = lower_index(e.time); i < events_.size() && events_[i].time == e.time; ++i) {
            const auto& c = events_[i];
            if (c.id == e.id && c.latitude == e.latitude && c.longitude == e.longitude &&
                c.magnitude == e.magnitude && c.depth == e.depth)
                return i;
        }
        return std::nullopt;
    }

private:
    std::vector<Event> events_;
    double magnitude_completeness_ = 0.0;
};

// ---------------------------------------------------------------------------
// Geographic binning

struct GridCell {
    std::size_t row;
    std::size_t col;
    bool operator==(const GridCell&) const = default;
};

inline void check_cell_size(double cell_size) {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
        throw invalid_input("cell_size must be positive");
    const double rows = 180.0 / cell_size;
    if (std::abs(rows - std::round(rows)) > 1e-9)
        throw invalid_input("cell_size must divide 180 degrees evenly");
}

/// Global lat/lon bin. Latitude 90 and longitude 180 fold into the last bin.
inline GridCell grid_index(double latitude, double longitude, double cell_size) {
    if (!(latitude >= -90.0 && latitude <= 90.0) || !(longitude >= -180.0 && longitude <= 180.0))
        throw invalid_input("grid_index: coordinates out of bounds");
    check_cell_size(cell_size);
    const auto rows = static_cast<std::size_t>(std::llround(180.0 / cell_size));
    const auto cols = static_cast<std::size_t>(std::llround(360.0 / cell_size));
    auto r = static_cast<std::size_t>(std::floor((latitude + 90.0) / cell_size));
    auto c = static_cast<std::size_t>(std::floor((longitude + 180.0) / cell_size));
    return {std::min(r, rows - 1), std::min(c, cols - 1)};
}

// ---------------------------------------------------------------------------
// Time handling (ISO 8601, UTC)

namespace detail {

// Howard Hinnant's days_from_civil / civil_from_days.
inline long long days_from_civil(long long y, unsigned m, unsigned d) {
    y -= m <= 2;
    const long long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long long>(doe) - 719468;
}

struct Civil {
    long long year;
    unsigned month;
    unsigned day;
};

inline Civil civil_from_days(long long z) {
    z += 719468;
    const long long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long long y = static_cast<long long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {y + (m <= 2), m, d};
}

inline bool parse_uint(std::string_view s, std::size_t pos, std::size_t len, unsigned& out) {
    if (pos + len > s.size()) return false;
    out = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        out = out * 10 + static_cast<unsigned>(s[i] - '0');
    }
    return true;
}

}  // namespace detail

/// Parses "YYYY-MM-DD[T| ]HH:MM[:SS[.fff]][Z|+HH:MM|-HH:MM]" or a plain number of epoch seconds.
/// Times without a zone are taken as UTC.
inline std::optional<double> parse_time(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.size() < 10 || s[4] != '-') {
        try {
            std::size_t used = 0;
            const double v = std::stod(std::string(s), &used);
            if (used != s.size() || !std::isfinite(v)) return std::nullopt;
            return v;
        } catch (...) {
            return std::nullopt;
        }
    }
    unsigned y, mo, d, h = 0, mi = 0, sec = 0;
    if (!detail::parse_uint(s, 0, 4, y) || s[7] != '-' || !detail::parse_uint(s, 5, 2, mo) ||
        !detail::parse_uint(s, 8, 2, d))
        return std::nullopt;
    if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
    double frac = 0.0;
    double offset = 0.0;
    std::size_t pos = 10;
    if (pos < s.size() && (s[pos] == 'T' || s[pos] == ' ')) {
        ++pos;
        if (!detail::parse_uint(s, pos, 2, h) || pos + 2 >= s.size() || s[pos + 2] != ':' ||
            !detail::parse_uint(s, pos + 3, 2, mi))
            return std::nullopt;
        pos += 5;
        if (pos < s.size() && s[pos] == ':') {
            if (!detail::parse_uint(s, pos + 1, 2, sec)) return std::nullopt;
            pos += 3;
            if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {
                ++pos;
                double scale = 0.1;
                while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
                    frac += scale * (s[pos] - '0');
                    scale *= 0.1;
                    ++pos;
                }
            }
        }
        if (h > 23 || mi > 59 || sec > 60) return std::nullopt;
    }
    if (pos < s.size()) {
        if (s[pos] == 'Z' && pos + 1 == s.size()) {
        } else if ((s[pos] == '+' || s[pos] == '-') && s.size() >= pos + 3) {
            unsigned oh = 0, om = 0;
            if (!detail::parse_uint(s, pos + 1, 2, oh)) return std::nullopt;
            std::size_t mpos = pos + 3;
            if (mpos < s.size() && s[mpos] == ':') ++mpos;
            if (mpos < s.size() && !detail::parse_uint(s, mpos, 2, om)) return std::nullopt;
            offset = (s[pos] == '+' ? 1.0 : -1.0) * (oh * 3600.0 + om * 60.0);
        } else {
            return std::nullopt;
        }
    }
    const long long days = detail::days_from_civil(y, mo, d);
    return static_cast<double>(days) * kSecondsPerDay + h * 3600.0 + mi * 60.0 + sec + frac - offset;
}

/// "YYYY-MM-DDTHH:MM:SS.mmmZ", rounded to the millisecond.
inline std::string format_time(double t) {
    const long long ms = std::llround(t * 1000.0);
    long long days = ms / 86400000LL;
    long long rem = ms % 86400000LL;
    if (rem < 0) {
        rem += 86400000LL;
        --days;
    }
    const auto c = detail::civil_from_days(days);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld.%03lldZ", c.year, c.month, c.day,
                  rem / 3600000LL, (rem / 60000LL) % 60, (rem / 1000LL) % 60, rem % 1000LL);
    return buf;
}

/// Zero-based day of year (January 1st is 0).
inline int day_of_year(double t) {
    const long long days = static_cast<long long>(std::floor(t / kSecondsPerDay));
    const auto c = detail::civil_from_days(days);
    return static_cast<int>(days - detail::days_from_civil(c.year, 1, 1));
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
        if (used != s.size()) return std::nullopt;
        return v;
    } catch (...) {
        return std::nullopt;
    }
}

inline std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + '"';
}

}  // namespace detail

/// Six significant digits, the catalog's fixed numeric format.
inline std::string format_g6(double v) {
    if (!std::isfinite(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

enum class Field {
    Id, Time, Latitude, Longitude, Depth, Magnitude, MagnitudeType, Tsunami, EventType,
    NStations, MinStationDist, Rms, Gap, HorizontalError, DepthError, MagError
};

/// Column mapping from event fields to header names; defaults follow the Poseidon dataset.
struct Schema {
    std::map<Field, std::string> columns{
        {Field::Id, "id"},
        {Field::Time, "time"},
        {Field::Latitude, "latitude"},
        {Field::Longitude, "longitude"},
        {Field::Depth, "depth"},
        {Field::Magnitude, "mag"},
        {Field::MagnitudeType, "magType"},
        {Field::Tsunami, "tsunami"},
        {Field::EventType, "type"},
        {Field::NStations, "nst"},
        {Field::MinStationDist, "dmin"},
        {Field::Rms, "rms"},
        {Field::Gap, "gap"},
        {Field::HorizontalError, "horizontalError"},
        {Field::DepthError, "depthError"},
        {Field::MagError, "magError"},
    };
};

struct ParseReport {
    std::size_t rows_read = 0;
    std::size_t rows_dropped = 0;
    std::map<std::string, std::size_t> drop_reasons;
    std::vector<std::string> warnings;
};

inline Catalog parse_catalog(std::istream& in, const Schema& schema = {}, ParseReport* report = nullptr,
                             double magnitude_completeness = 0.0) {
    ParseReport local;
    ParseReport& rep = report ? *report : local;
    std::string line;
    if (!std::getline(in, line)) throw schema_error("catalog has no header row");
    const auto header = detail::split_csv_line(line);
    std::map<Field, std::size_t> col;
    for (const auto& [field, name] : schema.columns) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it != header.end()) col[field] = static_cast<std::size_t>(it - header.begin());
    }
    for (Field f : {Field::Time, Field::Latitude, Field::Longitude, Field::Depth, Field::Magnitude}) {
        if (!col.count(f)) throw schema_error("missing mandatory column '" + schema.columns.at(f) + "'");
    }

    std::vector<Event> events;
    std::unordered_set<std::string> seen_ids;
    std::size_t duplicates = 0;
    auto drop = [&](const std::string& why) {
        ++rep.rows_dropped;
        ++rep.drop_reasons[why];
    };
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++rep.rows_read;
        const auto cells = detail::split_csv_line(line);
        auto cell = [&](Field f) -> std::string {
            const auto it = col.find(f);
            if (it == col.end() || it->second >= cells.size()) return {};
            return cells[it->second];
        };
        Event e;
        e.id = cell(Field::Id);
        const auto t = parse_time(cell(Field::Time));
        const auto lat = detail::parse_double(cell(Field::Latitude));
        const auto lon = detail::parse_double(cell(Field::Longitude));
        const auto dep = detail::parse_double(cell(Field::Depth));
        const auto mag = detail::parse_double(cell(Field::Magnitude));
        if (!t) { drop("time"); continue; }
        if (!lat) { drop("latitude"); continue; }
        if (!lon) { drop("longitude"); continue; }
        if (!dep) { drop("depth"); continue; }
        if (!mag) { drop("magnitude"); continue; }
        e.time = *t;
        e.latitude = *lat;
        e.longitude = *lon;
        e.depth = *dep;
        e.magnitude = *mag;
        if (auto why = validate(e); !why.empty()) { drop(why); continue; }
        e.magnitude_type = cell(Field::MagnitudeType);
        const auto ts = cell(Field::Tsunami);
        e.tsunami = ts == "1" || ts == "true" || ts == "True" || ts == "TRUE";
        if (auto et = cell(Field::EventType); !et.empty()) e.event_type = et;

        Quality q;
        bool any = false;
        auto qfield = [&](Field f, double& dst) {
            if (auto v = detail::parse_double(cell(f))) {
                dst = *v;
                any = true;
            }
        };
        qfield(Field::NStations, q.n_stations);
        qfield(Field::MinStationDist, q.min_station_dist);
        qfield(Field::Rms, q.rms_residual);
        qfield(Field::Gap, q.azimuthal_gap);
        qfield(Field::HorizontalError, q.err_horizontal);
        qfield(Field::DepthError, q.err_depth);
        qfield(Field::MagError, q.err_magnitude);
        if (any) e.quality = q;

        if (!e.id.empty() && !seen_ids.insert(e.id).second) ++duplicates;
        events.push_back(std::move(e));
    }
    if (duplicates > 0)
        rep.warnings.push_back(std::to_string(duplicates) + " duplicate event id(s)");
    return Catalog(std::move(events), magnitude_completeness);
}

inline Catalog parse_catalog(const std::string& path, const Schema& schema = {}, ParseReport* report = nullptr,
                             double magnitude_completeness = 0.0) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read catalog '" + path + "'");
    return parse_catalog(in, schema, report, magnitude_completeness);
}

/// Deterministic catalog emission: stable column order, 6-significant-digit floats,
/// millisecond ISO timestamps. Energy columns are informational and ignored on input.
inline void write_catalog(std::ostream& out, const Catalog& cat) {
    out << "id,time,latitude,longitude,depth,mag,magType,tsunami,type,nst,dmin,rms,gap,"
           "horizontalError,depthError,magError,energy_joules,log10_energy\n";
    for (const auto& e : cat.events()) {
        out << detail::quote_if_needed(e.id) << ',' << format_time(e.time) << ',' << format_g6(e.latitude)
            << ',' << format_g6(e.longitude) << ',' << format_g6(e.depth) << ',' << format_g6(e.magnitude)
            << ',' << detail::quote_if_needed(e.magnitude_type) << ',' << (e.tsunami ? 1 : 0) << ','
            << detail::quote_if_needed(e.event_type);
        const Quality q = e.quality.value_or(Quality{});
        for (double v : {q.n_stations, q.min_station_dist, q.rms_residual, q.azimuthal_gap, q.err_horizontal,
                         q.err_depth, q.err_magnitude})
            out << ',' << format_g6(v);
        out << ',' << format_g6(e.energy) << ',' << format_g6(e.log10_energy) << '\n';
    }
}

inline void write_catalog(const std::string& path, const Catalog& cat) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write catalog '" + path + "'");
    write_catalog(out, cat);
    if (!out) throw io_error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Quality filtering

/// Thresholds are optional; an unset threshold never rejects.
struct QualityCriteria {
    std::optional<double> min_stations;
    std::optional<double> max_min_station_dist;
    std::optional<double> max_rms;
    std::optional<double> max_azimuthal_gap;
    std::optional<double> max_err_horizontal;
    std::optional<double> max_err_depth;
    std::optional<double> max_err_magnitude;

    bool empty() const {
        return !min_stations && !max_min_station_dist && !max_rms && !max_azimuthal_gap &&
               !max_err_horizontal && !max_err_depth && !max_err_magnitude;
    }
};

struct FilterReport {
    std::size_t passed = 0;
    std::size_t failed = 0;
    std::size_t missing_quality = 0;
    std::vector<std::string> warnings;
};

inline bool passes(const Quality& q, const QualityCriteria& c) {
    auto below = [](double v, const std::optional<double>& lim) { return !lim || std::isnan(v) || v <= *lim; };
    auto above = [](double v, const std::optional<double>& lim) { return !lim || std::isnan(v) || v >= *lim; };
    return above(q.n_stations, c.min_stations) && below(q.min_station_dist, c.max_min_station_dist) &&
           below(q.rms_residual, c.max_rms) && below(q.azimuthal_gap, c.max_azimuthal_gap) &&
           below(q.err_horizontal, c.max_err_horizontal) && below(q.err_depth, c.max_err_depth) &&
           below(q.err_magnitude, c.max_err_magnitude);
}

/// Events without a quality group pass by default.
inline Catalog filter_quality(const Catalog& cat, const QualityCriteria& criteria, FilterReport* report = nullptr) {
    FilterReport local;
    FilterReport& rep = report ? *report : local;
    std::vector<Event> kept;
    kept.reserve(cat.size());
    for (const auto& e : cat.events()) {
        bool ok = true;
        if (!criteria.empty()) {
            if (e.quality) ok = passes(*e.quality, criteria);
            else ++rep.missing_quality;
        }
        if (ok) {
            kept.push_back(e);
            ++rep.passed;
        } else {
            ++rep.failed;
        }
    }
    if (rep.missing_quality > 0)
        rep.warnings.push_back(std::to_string(rep.missing_quality) +
                               " event(s) lack quality metrics and passed by default");
    return Catalog(std::move(kept), cat.magnitude_completeness());
}

}  // namespace poseidon::catalog
