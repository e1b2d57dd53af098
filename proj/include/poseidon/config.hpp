#pragma once

// Sectioned "key = value" run configuration. Parsing is delegated to
// Boost.PropertyTree's INI reader; this header binds keys to the config structs
// in both directions so checkpoints can embed the settings they were trained with.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "poseidon/common.hpp"
#include "poseidon/features.hpp"
#include "poseidon/gridenc.hpp"
#include "poseidon/labeling.hpp"
#include "poseidon/losses.hpp"
#include "poseidon/model.hpp"
#include "poseidon/synthgen.hpp"
#include "poseidon/train.hpp"

namespace poseidon::config {

struct GridSettings {
    grid::GridSpec spec;
    bool fit_to_catalog = true;  // replace the box by the catalog's cell-aligned extent
};

struct PhysicsFitSettings {
    std::size_t steps = 3000;
    double lr = 0.05;
    double magnitude_completeness = 2.5;
};

struct RunConfig {
    synth::SynthConfig synth;
    labeling::LabelConfig labels;
    features::FeatureConfig features;
    GridSettings grid;
    model::ModelConfig model;
    train::TrainConfig train;
    losses::LossConfig loss;
    PhysicsFitSettings physics;
};

namespace detail {

struct Field {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double to_double(const std::string& k, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw config_error("'" + k + "': expected a number, got '" + v + "'");
}

inline std::uint64_t to_uint(const std::string& k, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw config_error("'" + k + "': expected a non-negative integer, got '" + v + "'");
    return std::stoull(v);
}

inline bool to_bool(const std::string& k, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw config_error("'" + k + "': expected true/false, got '" + v + "'");
}

inline Field num(std::string key, double& ref) {
    return {key, [&ref] { return fmt(ref); }, [&ref, key](const std::string& v) { ref = to_double(key, v); }};
}
template <class U>
Field count(std::string key, U& ref) {
    return {key, [&ref] { return std::to_string(ref); },
            [&ref, key](const std::string& v) { ref = static_cast<U>(to_uint(key, v)); }};
}
inline Field flag(std::string key, bool& ref) {
    return {key, [&ref] { return std::string(ref ? "true" : "false"); },
            [&ref, key](const std::string& v) { ref = to_bool(key, v); }};
}

}  // namespace detail

using Section = std::pair<std::string, std::vector<detail::Field>>;

/// Every configurable field, by section.
inline std::vector<Section> bindings(RunConfig& c) {
    using namespace detail;
    auto& s = c.synth;
    auto& l = c.labels;
    auto& f = c.features;
    auto& g = c.grid;
    auto& m = c.model;
    auto& t = c.train;
    auto& o = c.loss;
    auto& p = c.physics;
    return {
        {"synth",
         {num("b_true", s.b_true), num("p_true", s.p_true), num("c_true", s.c_true), num("bath_dm", s.bath_dm),
          num("m_min", s.m_min), num("m_max", s.m_max), num("mainshock_min_magnitude", s.mainshock_min_magnitude),
          count("n_mainshocks", s.n_mainshocks), num("aftershock_productivity", s.aftershock_productivity),
          num("productivity_alpha", s.productivity_alpha), num("deep_productivity_factor", s.deep_productivity_factor),
          count("max_aftershocks", s.max_aftershocks), num("horizon", s.horizon), num("span_days", s.span_days),
          num("spatial_extent", s.spatial_extent), num("center_latitude", s.center_latitude),
          num("center_longitude", s.center_longitude), num("aftershock_scatter", s.aftershock_scatter),
          num("start_time", s.start_time), num("tsunami_magnitude", s.tsunami.magnitude_threshold),
          num("tsunami_depth", s.tsunami.depth_threshold_km), num("tsunami_probability", s.tsunami.probability)}},
        {"labels",
         {num("min_trigger_magnitude", l.min_trigger_magnitude), num("aftershock_window", l.aftershock_window),
          num("aftershock_radius", l.aftershock_radius), count("aftershock_min_count", l.aftershock_min_count),
          num("aftershock_min_magnitude", l.aftershock_min_magnitude), num("foreshock_window", l.foreshock_window),
          num("foreshock_radius", l.foreshock_radius), flag("require_lookback", l.require_lookback),
          num("lookback_days", l.lookback_days)}},
        {"features",
         {num("delta_lat", f.delta_lat), num("delta_lon", f.delta_lon), num("window_days", f.window_days),
          num("short_days", f.short_days), num("mid_days", f.mid_days), num("long_days", f.long_days)}},
        {"grid",
         {num("cell_size", g.spec.cell_size), num("lat_min", g.spec.lat_min), num("lat_max", g.spec.lat_max),
          num("lon_min", g.spec.lon_min), num("lon_max", g.spec.lon_max), flag("fit_to_catalog", g.fit_to_catalog)}},
        {"model",
         {count("conv1_channels", m.conv1_channels), count("conv2_channels", m.conv2_channels),
          count("kernel", m.kernel), count("attention_reduction", m.attention_reduction),
          count("spatial_kernel", m.spatial_kernel), count("spatial_dim", m.spatial_dim),
          count("event_hidden", m.event_hidden), count("event_dim", m.event_dim),
          count("energy_hidden", m.energy_hidden), count("trunk_dim", m.trunk_dim)}},
        {"train",
         {count("batch_size", t.batch_size), count("stage1_epochs", t.stage1_epochs),
          count("stage2_epochs", t.stage2_epochs), num("lr_stage1", t.lr_stage1), num("lr_stage2", t.lr_stage2),
          num("weight_decay", t.weight_decay), num("beta1", t.beta1), num("beta2", t.beta2), num("eps", t.eps),
          num("warmup_fraction", t.warmup_fraction), num("onecycle_divisor", t.onecycle_divisor),
          num("cosine_divisor", t.cosine_divisor), num("validation_fraction", t.validation_fraction)}},
        {"loss",
         {num("margin", o.margin), num("noise_sigma", o.noise_sigma), num("focal_alpha", o.focal_alpha),
          num("focal_gamma", o.focal_gamma), num("label_smoothing", o.label_smoothing),
          num("foreshock_pos_weight", o.foreshock_pos_weight), num("lambda_physics_stage1", o.lambda_physics_stage1),
          num("lambda_physics_stage2", o.lambda_physics_stage2), num("lambda_contrastive", o.lambda_contrastive),
          num("lambda_energy", o.lambda_energy), num("gr_bin_width", o.gr_bin_width), num("gr_top", o.gr_top),
          count("omori_bins", o.omori_bins), num("omori_t_min", o.omori_t_min), num("omori_t_max", o.omori_t_max)}},
        {"physics",
         {count("steps", p.steps), num("lr", p.lr), num("magnitude_completeness", p.magnitude_completeness)}},
    };
}

/// Applies every key of `in` to `c`. Unknown sections or keys are configuration errors.
inline void apply(RunConfig& c, std::istream& in, const std::string& origin = "config") {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw config_error(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    auto table = bindings(c);
    for (const auto& [sec, keys] : tree) {
        if (!keys.data().empty()) throw config_error(origin + ": key '" + sec + "' outside any section");
        auto it = std::find_if(table.begin(), table.end(), [&](const Section& s) { return s.first == sec; });
        if (it == table.end()) throw config_error(origin + ": unknown section [" + sec + "]");
        for (const auto& [key, val] : keys) {
            auto f = std::find_if(it->second.begin(), it->second.end(), [&](const auto& x) { return x.key == key; });
            if (f == it->second.end()) throw config_error(origin + ": unknown key '" + key + "' in [" + sec + "]");
            f->set(val.data());
        }
    }
}

inline RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read config '" + path + "'");
    RunConfig c;
    apply(c, in, path);
    return c;
}

/// Writes the listed sections (all when empty) in a form `apply` reads back exactly.
inline std::string to_ini(const RunConfig& cfg, const std::vector<std::string>& only = {}) {
    RunConfig copy = cfg;
    std::ostringstream out;
    for (const auto& [sec, keys] : bindings(copy)) {
        if (!only.empty() && std::find(only.begin(), only.end(), sec) == only.end()) continue;
        out << '[' << sec << "]\n";
        for (const auto& k : keys) out << k.key << " = " << k.get() << '\n';
        out << '\n';
    }
    return out.str();
}

/// Reads the pipeline sections a checkpoint header carries back into a RunConfig.
inline RunConfig from_checkpoint_header(const std::map<std::string, std::map<std::string, std::string>>& header) {
    RunConfig c;
    std::ostringstream ini;
    for (const char* sec : {"labels", "features", "grid"}) {
        const auto it = header.find(sec);
        if (it == header.end()) throw io_error(std::string("checkpoint: missing [") + sec + "] section");
        ini << '[' << sec << "]\n";
        for (const auto& [k, v] : it->second) ini << k << " = " << v << '\n';
    }
    if (const auto it = header.find("physics"); it != header.end()) {
        ini << "[physics]\n";
        for (const auto& [k, v] : it->second) ini << k << " = " << v << '\n';
    }
    std::istringstream in(ini.str());
    apply(c, in, "checkpoint");
    return c;
}

}  // namespace poseidon::config
