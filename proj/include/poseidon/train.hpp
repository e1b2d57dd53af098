#pragma once

// Two-stage training: weighted sampling, AdamW, one-cycle (stage 1) and
// cosine (stage 2) learning-rate schedules, per-epoch history.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "poseidon/dataset.hpp"
#include "poseidon/eval.hpp"
#include "poseidon/losses.hpp"
#include "poseidon/model.hpp"
#include "poseidon/physics.hpp"

namespace poseidon::train {

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t stage1_epochs = 15;
    std::size_t stage2_epochs = 30;
    double lr_stage1 = 1e-4;
    double lr_stage2 = 1e-5;
    double weight_decay = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double warmup_fraction = 0.3;
    double onecycle_divisor = 25.0;
    double cosine_divisor = 100.0;
    double validation_fraction = 0.2;
    std::uint64_t seed = 1;
};

inline void validate(const TrainConfig& c) {
    if (c.batch_size == 0 || c.stage1_epochs + c.stage2_epochs == 0)
        throw invalid_input("TrainConfig: batch size and epoch counts must be positive");
    if (!(c.lr_stage1 > 0 && c.lr_stage2 > 0)) throw invalid_input("TrainConfig: learning rates must be positive");
    if (c.weight_decay < 0) throw invalid_input("TrainConfig: weight decay must be non-negative");
    if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1 && c.eps > 0))
        throw invalid_input("TrainConfig: invalid moment parameters");
    if (!(c.warmup_fraction > 0 && c.warmup_fraction < 1 && c.onecycle_divisor >= 1 && c.cosine_divisor >= 1))
        throw invalid_input("TrainConfig: invalid schedule shape");
}

// ---------------------------------------------------------------------------
// Sampling

/// i.i.d. draws with replacement, P(i) = w_i / Σ w.
class WeightedSampler {
public:
    explicit WeightedSampler(std::span<const double> weights) {
        if (weights.empty()) throw invalid_input("WeightedSampler: empty dataset");
        for (double w : weights)
            if (!(w >= 1.0) || !std::isfinite(w)) throw invalid_input("WeightedSampler: weights must be finite and >= 1");
        dist_ = std::discrete_distribution<std::size_t>(weights.begin(), weights.end());
    }
    std::size_t operator()(Rng& rng) { return dist_(rng); }
    std::vector<std::size_t> draw(std::size_t n, Rng& rng) {
        std::vector<std::size_t> out(n);
        for (auto& i : out) i = dist_(rng);
        return out;
    }

private:
    std::discrete_distribution<std::size_t> dist_;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
    std::vector<double> m, v;
    std::vector<std::uint64_t> steps;  // per parameter; frozen while its gradient and decay are both zero

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0), steps(n, 0) {}
};

/// AdamW: bias-corrected moments, decay θ ← θ − lr·λ·θ applied separately. `decay[i]` is λ for parameter i.
/// `name_of` labels the parameter in the non-finite-gradient diagnostic.
inline void optimizer_step(std::vector<double>& params, std::span<const double> grads, AdamState& st, double lr,
                           const TrainConfig& cfg, std::span<const double> decay,
                           const std::function<std::string(std::size_t)>& name_of = {}) {
    const std::size_t n = params.size();
    if (grads.size() != n || st.m.size() != n || decay.size() != n)
        throw invalid_input("optimizer_step: size mismatch");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(grads[i]))
            throw numerical_error("non-finite gradient in '" + (name_of ? name_of(i) : "#" + std::to_string(i)) + "'");
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        if (g == 0.0 && decay[i] == 0.0) continue;
        const auto t = static_cast<double>(++st.steps[i]);
        st.m[i] = cfg.beta1 * st.m[i] + (1 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1 - cfg.beta2) * g * g;
        const double mh = st.m[i] / (1 - std::pow(cfg.beta1, t));
        const double vh = st.v[i] / (1 - std::pow(cfg.beta2, t));
        params[i] -= lr * decay[i] * params[i];
        params[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
}

/// Stage 1: linear warmup from peak/25 to peak over the first 30% of steps, then cosine down to peak/25.
/// Stage 2: cosine from lr_stage2 to lr_stage2/100 at the final step.
inline double lr_schedule(std::size_t step, std::size_t total, int stage, const TrainConfig& cfg) {
    if (total == 0 || step >= total) throw invalid_input("lr_schedule: step out of range");
    constexpr double pi = 3.14159265358979323846;
    const auto s = static_cast<double>(step);
    if (stage == 1) {
        const double peak = cfg.lr_stage1, low = peak / cfg.onecycle_divisor;
        const double warm = cfg.warmup_fraction * static_cast<double>(total);
        if (s < warm) return low + (peak - low) * s / warm;
        const double span = static_cast<double>(total - 1) - warm;
        const double frac = span > 0 ? std::min(1.0, (s - warm) / span) : 1.0;
        return low + (peak - low) * 0.5 * (1 + std::cos(pi * frac));
    }
    const double hi = cfg.lr_stage2, low = hi / cfg.cosine_divisor;
    const double frac = total > 1 ? s / static_cast<double>(total - 1) : 1.0;
    return low + (hi - low) * 0.5 * (1 + std::cos(pi * frac));
}

/// Per-parameter decay coefficients: the physics scalars are exempt.
inline std::vector<double> decay_vector(const model::Layout& layout, double wd) {
    std::vector<double> d(layout.total(), wd);
    for (const auto& b : layout.blocks())
        if (b.kind == model::BlockKind::Physics) std::fill_n(d.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size(), 0.0);
    return d;
}

inline std::string block_name_at(const model::Layout& layout, std::size_t i) {
    for (const auto& b : layout.blocks())
        if (i >= b.offset && i < b.offset + b.size()) return b.name;
    return "#" + std::to_string(i);
}

// ---------------------------------------------------------------------------
// Forward + loss on one mini-batch

struct StepResult {
    losses::LossBreakdown loss;
    std::vector<double> grads;
};

inline StepResult loss_and_grad(const model::ModelParams& mp, const data::MiniBatch& mb, const losses::LossConfig& lc,
                                const losses::OmoriBins& bins, int stage, Rng& rng, bool with_grad = true) {
    diff::Tape tape;
    const auto P = tape.leaf({mp.values.size()}, mp.values, with_grad);
    const model::Network net(mp.config, P);
    const auto out = net.forward(tape, mb.inputs);
    const auto d = net.physics();
    const losses::TaskOutputs to{out.p_aftershock, out.p_tsunami, out.p_foreshock, out.energy, out.z};
    const losses::PhysicsVars pv{d.b, d.p, d.c, d.delta_m};
    StepResult r;
    r.loss = losses::total_loss(tape, to, mb.labels, mb.physics, pv, bins, [&](const diff::Var& z) { return net.energy(z); },
                                lc, stage, rng);
    if (!std::isfinite(r.loss.total)) throw numerical_error("training diverged: total loss is not finite");
    if (with_grad) {
        tape.backward(r.loss.total_var);
        const auto g = P.grad();
        r.grads.assign(g.begin(), g.end());
        if (r.grads.empty()) r.grads.assign(mp.values.size(), 0.0);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Inference

struct Predictions {
    std::vector<double> aftershock, tsunami, foreshock, energy;
    std::vector<double> y_aftershock, y_tsunami, y_foreshock;
};

inline Predictions predict(const model::ModelParams& mp, const data::Dataset& ds, std::span<const std::size_t> idx,
                           std::size_t batch_size = 128) {
    Predictions p;
    const losses::LossConfig lc;
    const auto bins = losses::OmoriBins::log_spaced(lc.omori_bins, lc.omori_t_min, lc.omori_t_max);
    for (std::size_t a = 0; a < idx.size(); a += batch_size) {
        const auto chunk = idx.subspan(a, std::min(batch_size, idx.size() - a));
        const auto mb = data::make_batch(ds, chunk, lc, bins);
        diff::Tape tape;
        const model::Network net(mp.config, tape.constant({mp.values.size()}, mp.values));
        const auto out = net.forward(tape, mb.inputs);
        for (std::size_t k = 0; k < chunk.size(); ++k) {
            p.aftershock.push_back(out.p_aftershock[k]);
            p.tsunami.push_back(out.p_tsunami[k]);
            p.foreshock.push_back(out.p_foreshock[k]);
            p.energy.push_back(out.energy[k]);
        }
        p.y_aftershock.insert(p.y_aftershock.end(), mb.labels.aftershock.begin(), mb.labels.aftershock.end());
        p.y_tsunami.insert(p.y_tsunami.end(), mb.labels.tsunami.begin(), mb.labels.tsunami.end());
        p.y_foreshock.insert(p.y_foreshock.end(), mb.labels.foreshock.begin(), mb.labels.foreshock.end());
    }
    return p;
}

// ---------------------------------------------------------------------------
// History

struct EpochRecord {
    std::size_t epoch = 0, stage = 1, stage_epoch = 0;
    double lr = 0;
    losses::LossBreakdown loss;  // mean over the epoch's sampled batches
    double train_objective = 0;  // total loss on the fixed sampled panel, end of epoch
    eval::TaskMetrics val_aftershock, val_tsunami, val_foreshock;
    physics::DerivedPhysics physics{};
};

using History = std::vector<EpochRecord>;

inline void write_history(std::ostream& out, const History& h) {
    out << "epoch,stage,stage_epoch,lr,task_aftershock,task_tsunami,task_foreshock,gr,omori,bath,contrastive,"
           "energy_reg,total,train_objective,val_auc_aftershock,val_auc_tsunami,val_auc_foreshock,val_f1_aftershock,"
           "val_f1_tsunami,val_f1_foreshock,b,p,c,delta_m\n";
    char buf[1024];
    for (const auto& r : h) {
        const auto& l = r.loss;
        std::snprintf(buf, sizeof buf,
                      "%zu,%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.6g,%.6g,%.6g,"
                      "%.6g,%.6g,%.6g,%.10g,%.10g,%.10g,%.10g\n",
                      r.epoch, r.stage, r.stage_epoch, r.lr, l.task_aftershock, l.task_tsunami, l.task_foreshock, l.gr,
                      l.omori, l.bath, l.contrastive, l.energy_reg, l.total, r.train_objective, r.val_aftershock.auc,
                      r.val_tsunami.auc, r.val_foreshock.auc, r.val_aftershock.f1, r.val_tsunami.f1,
                      r.val_foreshock.f1, r.physics.b, r.physics.p, r.physics.c, r.physics.delta_m);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// Two-stage loop

struct TrainResult {
    model::ModelParams params;
    History history;
    std::vector<std::size_t> train_indices, val_indices;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train_two_stage(const data::Dataset& ds, model::ModelParams init, const TrainConfig& cfg,
                                   const losses::LossConfig& lc = {}, const EpochCallback& on_epoch = {}) {
    validate(cfg);
    losses::validate(lc);
    if (ds.size() < cfg.batch_size)
        throw invalid_input("train_two_stage: dataset has fewer samples than one batch");
    TrainResult res;
    std::tie(res.train_indices, res.val_indices) = data::temporal_split(ds, cfg.validation_fraction);
    const auto& tr = res.train_indices;
    const auto& va = res.val_indices;

    std::vector<double> w;
    for (auto i : tr) w.push_back(ds.samples[i].sample_weight);
    WeightedSampler sampler(w);
    Rng sample_rng = make_rng(cfg.seed, 11);
    Rng noise_rng = make_rng(cfg.seed, 12);

    const model::Layout layout(init.config);
    const auto decay = decay_vector(layout, cfg.weight_decay);
    const auto bins = losses::OmoriBins::log_spaced(lc.omori_bins, lc.omori_t_min, lc.omori_t_max);
    AdamState state(init.values.size());
    model::ModelParams mp = std::move(init);
    const std::size_t steps_per_epoch = (tr.size() + cfg.batch_size - 1) / cfg.batch_size;

    // Training objective on a fixed panel of weighted-sampled batches with fixed contrastive noise:
    // epoch-to-epoch changes reflect parameter updates only.
    std::vector<std::vector<std::size_t>> panel(steps_per_epoch);
    {
        Rng panel_rng = make_rng(cfg.seed, 13);
        for (auto& b : panel) {
            b = sampler.draw(cfg.batch_size, panel_rng);
            for (auto& i : b) i = tr[i];
        }
    }
    auto objective = [&](int stage) {
        Rng eval_rng = make_rng(cfg.seed, 14);
        double acc = 0.0;
        for (const auto& b : panel)
            acc += loss_and_grad(mp, data::make_batch(ds, b, lc, bins), lc, bins, stage, eval_rng, false).loss.total;
        return acc / static_cast<double>(panel.size());
    };
    auto metrics = [&](const std::vector<double>& s, const std::vector<double>& y) {
        return eval::task_metrics(s, y, 0.5);
    };

    std::size_t global_epoch = 0;
    for (int stage = 1; stage <= 2; ++stage) {
        const std::size_t epochs = stage == 1 ? cfg.stage1_epochs : cfg.stage2_epochs;
        const std::size_t total_steps = epochs * steps_per_epoch;
        std::size_t step = 0;
        for (std::size_t e = 0; e < epochs; ++e) {
            EpochRecord rec;
            rec.epoch = ++global_epoch;
            rec.stage = static_cast<std::size_t>(stage);
            rec.stage_epoch = e + 1;
            auto& L = rec.loss;
            for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
                auto picks = sampler.draw(cfg.batch_size, sample_rng);
                for (auto& i : picks) i = tr[i];
                const auto mb = data::make_batch(ds, picks, lc, bins);
                const auto r = loss_and_grad(mp, mb, lc, bins, stage, noise_rng);
                rec.lr = lr_schedule(step, total_steps, stage, cfg);
                optimizer_step(mp.values, r.grads, state, rec.lr, cfg, decay,
                               [&](std::size_t i) { return block_name_at(layout, i); });
                L.task_aftershock += r.loss.task_aftershock;
                L.task_tsunami += r.loss.task_tsunami;
                L.task_foreshock += r.loss.task_foreshock;
                L.gr += r.loss.gr;
                L.omori += r.loss.omori;
                L.bath += r.loss.bath;
                L.contrastive += r.loss.contrastive;
                L.energy_reg += r.loss.energy_reg;
                L.total += r.loss.total;
            }
            const double k = 1.0 / static_cast<double>(steps_per_epoch);
            for (double* v : {&L.task_aftershock, &L.task_tsunami, &L.task_foreshock, &L.gr, &L.omori, &L.bath,
                              &L.contrastive, &L.energy_reg, &L.total})
                *v *= k;
            rec.train_objective = objective(stage);
            if (!va.empty()) {
                const auto p = predict(mp, ds, va);
                rec.val_aftershock = metrics(p.aftershock, p.y_aftershock);
                rec.val_tsunami = metrics(p.tsunami, p.y_tsunami);
                rec.val_foreshock = metrics(p.foreshock, p.y_foreshock);
            }
            rec.physics = physics::derive(mp.physics());
            if (on_epoch) on_epoch(rec);
            res.history.push_back(rec);
        }
    }
    res.params = std::move(mp);
    return res;
}

// ---------------------------------------------------------------------------
// Physics-only fitting of the raw scalars against pooled observations

struct PhysicsObservations {
    std::optional<losses::GrCounts> gr;
    std::optional<losses::OmoriHistogram> omori;
    std::optional<std::vector<std::pair<double, double>>> bath;
};

struct PhysicsTrainConfig {
    std::size_t steps = 3000;
    double lr = 0.05;
    losses::OmoriBins bins = losses::OmoriBins::log_spaced(20, 0.01, 90.0);
    double lambda_physics = 0.1;
};

struct PhysicsTrainResult {
    physics::PhysicsParams raw;
    physics::DerivedPhysics derived;
    double final_loss = 0.0;
};

/// Minimizes λ_p·(active physics terms)/3 over (θ_b, θ_p, θ_c, ΔM) with the stage-2 optimizer and schedule.
inline PhysicsTrainResult train_physics(const PhysicsObservations& obs, physics::PhysicsParams raw,
                                        const PhysicsTrainConfig& pc, const TrainConfig& base = {}) {
    if (pc.steps == 0) throw invalid_input("train_physics: steps must be positive");
    TrainConfig cfg = base;
    cfg.lr_stage2 = pc.lr;
    std::vector<double> x{raw.theta_b, raw.theta_p, raw.theta_c, raw.delta_m};
    AdamState st(4);
    const std::vector<double> no_decay(4, 0.0);
    const char* names[] = {"physics.theta_b", "physics.theta_p", "physics.theta_c", "physics.delta_m"};
    double last = 0.0;
    for (std::size_t s = 0; s < pc.steps; ++s) {
        diff::Tape tape;
        const auto X = tape.leaf({4}, x, true);
        auto at = [&](std::size_t i) { return diff::reshape(diff::slice(X, 0, i, 1), {}); };
        const auto d = physics::derive(at(0), at(1), at(2), at(3));
        diff::Var sum = tape.scalar(0.0);
        if (obs.gr) sum = sum + losses::gr_loss(tape, *obs.gr, d.b).value;
        if (obs.omori) sum = sum + losses::omori_loss(tape, *obs.omori, pc.bins, d.p, d.c).value;
        if (obs.bath) sum = sum + losses::bath_loss(tape, *obs.bath, d.delta_m).value;
        const auto loss = diff::scale(sum, pc.lambda_physics / 3.0);
        last = loss.item();
        if (!std::isfinite(last)) throw numerical_error("physics fit diverged");
        tape.backward(loss);
        std::vector<double> g(X.grad().begin(), X.grad().end());
        if (g.empty()) g.assign(4, 0.0);
        optimizer_step(x, g, st, lr_schedule(s, pc.steps, 2, cfg), cfg, no_decay,
                       [&](std::size_t i) { return std::string(names[i]); });
    }
    PhysicsTrainResult r;
    r.raw = {x[0], x[1], x[2], x[3]};
    r.derived = physics::derive(r.raw);
    r.final_loss = last;
    return r;
}

}  // namespace poseidon::train
