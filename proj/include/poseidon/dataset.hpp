#pragma once

// Model-ready samples: labeled triggers with their normalized context grid,
// feature vector, and physics observations; batch assembly for training.

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

#include "poseidon/catalog.hpp"
#include "poseidon/features.hpp"
#include "poseidon/gridenc.hpp"
#include "poseidon/labeling.hpp"
#include "poseidon/losses.hpp"
#include "poseidon/model.hpp"

namespace poseidon::data {

struct DatasetConfig {
    labeling::LabelConfig labels;
    features::FeatureConfig features;
    grid::GridSpec grid;
    std::size_t threads = 1;
};

/// Smallest box aligned to multiples of `cell_size` that holds every event of the catalog.
inline grid::GridSpec fit_grid(const catalog::Catalog& cat, double cell_size) {
    if (!(cell_size > 0.0)) throw invalid_input("fit_grid: cell_size must be positive");
    grid::GridSpec g;
    g.cell_size = cell_size;
    if (cat.empty()) return g;
    double la0 = 90, la1 = -90, lo0 = 180, lo1 = -180;
    for (const auto& e : cat.events()) {
        la0 = std::min(la0, e.latitude);
        la1 = std::max(la1, e.latitude);
        lo0 = std::min(lo0, e.longitude);
        lo1 = std::max(lo1, e.longitude);
    }
    auto down = [&](double v, double lim) { return std::max(lim, std::floor(v / cell_size) * cell_size); };
    auto up = [&](double v, double lim) { return std::min(lim, std::floor(v / cell_size) * cell_size + cell_size); };
    g.lat_min = down(la0, -90.0);
    g.lat_max = up(la1, 90.0);
    g.lon_min = down(lo0, -180.0);
    g.lon_max = up(lo1, 180.0);
    grid::validate(g);
    return g;
}

struct Dataset {
    std::vector<labeling::Sample> samples;
    std::vector<diff::Tensor> grids;  // normalized, (18, H, W) each
    std::vector<features::FeatureVector> features;
    std::vector<double> times;  // trigger times
    grid::GridSpec spec;
    double m_c = 0.0;

    std::size_t size() const { return samples.size(); }
    std::vector<double> weights() const {
        std::vector<double> w;
        w.reserve(samples.size());
        for (const auto& s : samples) w.push_back(s.sample_weight);
        return w;
    }
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is handled by exactly one worker.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline Dataset build_dataset(const catalog::Catalog& cat, const DatasetConfig& cfg) {
    grid::validate(cfg.grid);
    Dataset ds;
    ds.spec = cfg.grid;
    ds.m_c = cat.magnitude_completeness();
    ds.samples = labeling::label_catalog(cat, cfg.labels);
    const std::size_t n = ds.samples.size();
    ds.grids.resize(n);
    ds.features.resize(n);
    ds.times.resize(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
        const auto& e = cat[ds.samples[i].trigger_index];
        ds.grids[i] = grid::normalize(grid::build_multiscale(cat, e.time, cfg.grid));
        ds.features[i] = features::event_features(cat, e, cfg.features);
        ds.times[i] = e.time;
    });
    return ds;
}

/// Chronological split: the latest `fraction` of samples by trigger time go to validation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> temporal_split(const Dataset& ds,
                                                                                     double fraction = 0.2) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw invalid_input("temporal_split: fraction must lie in (0, 1)");
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ds.times[a] < ds.times[b]; });
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
    const auto cut = static_cast<std::ptrdiff_t>(ds.size() - n_val);
    return {{order.begin(), order.begin() + cut}, {order.begin() + cut, order.end()}};
}

struct MiniBatch {
    model::Batch inputs;
    losses::TaskLabels labels;
    losses::PhysicsBatch physics;
};

/// Stacks the listed samples. Physics observations are pooled over the batch's trigger windows.
inline MiniBatch make_batch(const Dataset& ds, std::span<const std::size_t> idx, const losses::LossConfig& lc,
                            const losses::OmoriBins& bins) {
    if (idx.empty()) throw invalid_input("make_batch: empty batch");
    const std::size_t B = idx.size();
    const auto& g0 = ds.grids[idx[0]];
    const std::size_t G = g0.values.size();
    MiniBatch mb;
    mb.inputs.grids = diff::Tensor({B, g0.shape[0], g0.shape[1], g0.shape[2]}, 0.0);
    mb.inputs.features = diff::Tensor({B, features::kDim}, 0.0);
    std::vector<double> mags, delays;
    for (std::size_t k = 0; k < B; ++k) {
        const std::size_t i = idx[k];
        std::copy(ds.grids[i].values.begin(), ds.grids[i].values.end(),
                  mb.inputs.grids.values.begin() + static_cast<std::ptrdiff_t>(k * G));
        std::copy(ds.features[i].begin(), ds.features[i].end(),
                  mb.inputs.features.values.begin() + static_cast<std::ptrdiff_t>(k * features::kDim));
        const auto& s = ds.samples[i];
        mb.labels.aftershock.push_back(s.label_aftershock);
        mb.labels.tsunami.push_back(s.label_tsunami);
        mb.labels.foreshock.push_back(s.label_foreshock);
        mags.insert(mags.end(), s.aux.magnitudes.begin(), s.aux.magnitudes.end());
        delays.insert(delays.end(), s.aux.delays.begin(), s.aux.delays.end());
        if (s.aux.bath_pair) mb.physics.bath_pairs.push_back(*s.aux.bath_pair);
    }
    mb.physics.gr = losses::gr_counts(mags, ds.m_c, lc.gr_bin_width, lc.gr_top);
    mb.physics.omori = losses::omori_histogram(delays, bins);
    return mb;
}

inline model::ModelConfig model_config_for(const Dataset& ds, model::ModelConfig base = {}) {
    base.grid_rows = ds.spec.rows();
    base.grid_cols = ds.spec.cols();
    return base;
}

}  // namespace poseidon::data
