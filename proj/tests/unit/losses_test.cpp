#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "poseidon/losses.hpp"
#include "poseidon/synthgen.hpp"
#include "test_support.hpp"

using namespace poseidon;
using namespace poseidon::losses;
using diff::Tensor;

namespace {

double scalar_loss(const std::function<Var(Tape&)>& f) {
    Tape t;
    return f(t).item();
}

Var s(Tape& t, double v) { return t.scalar(v); }

double gr_at(const GrCounts& g, double b) {
    Tape t;
    return gr_loss(t, g, t.scalar(b)).value.item();
}

double omori_at(const OmoriHistogram& h, const OmoriBins& bins, double p, double c) {
    Tape t;
    return omori_loss(t, h, bins, t.scalar(p), t.scalar(c)).value.item();
}

}  // namespace

TEST(Focal, SpecValues) {
    EXPECT_NEAR(scalar_loss([](Tape& t) { return focal_loss(s(t, 0.5), s(t, 1), 0.25, 2); }), -0.25 * 0.25 * std::log(0.5),
                1e-15);
    EXPECT_NEAR(scalar_loss([](Tape& t) { return focal_loss(s(t, 0.5), s(t, 0), 0.25, 2); }), 0.693147180559945, 1e-14);
    EXPECT_NEAR(scalar_loss([](Tape& t) { return focal_loss(s(t, 0.5), s(t, 1), 0.25, 2); }), 0.04332, 5e-6);
    EXPECT_LT(scalar_loss([](Tape& t) { return focal_loss(s(t, 1.0 - 1e-12), s(t, 1), 0.25, 2); }), 1e-20);
}

TEST(Focal, ReducesToBceWithoutFocusing) {
    for (double p : {0.01, 0.3, 0.77, 0.999})
        for (double y : {0.0, 1.0}) {
            const double f = scalar_loss([&](Tape& t) { return focal_loss(s(t, p), s(t, y), 1.0, 0.0); });
            const double bce = scalar_loss([&](Tape& t) { return smoothed_bce(s(t, p), s(t, y), 0.0); });
            EXPECT_NEAR(f, bce, 1e-14);
        }
}

TEST(Focal, ClampKeepsLossFinite) {
    for (double p : {0.0, 1.0})
        for (double y : {0.0, 1.0}) {
            const double v = scalar_loss([&](Tape& t) { return focal_loss(s(t, p), s(t, y), 0.25, 2); });
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, -std::log(1e-7) + 1e-9);
        }
}

TEST(Bce, SmoothingIdentityAndMinimizer) {
    for (double p : {0.2, 0.6})
        for (double y : {0.0, 1.0}) {
            const double ref = -(y * std::log(p) + (1 - y) * std::log(1 - p));
            EXPECT_NEAR(scalar_loss([&](Tape& t) { return smoothed_bce(s(t, p), s(t, y), 0.0); }), ref, 1e-14);
            EXPECT_NEAR(scalar_loss([&](Tape& t) { return weighted_bce(s(t, p), s(t, y), 1.0); }), ref, 1e-14);
            EXPECT_NEAR(scalar_loss([&](Tape& t) { return weighted_bce(s(t, p), s(t, y), 3.0); }),
                        -(3 * y * std::log(p) + (1 - y) * std::log(1 - p)), 1e-14);
        }
    // p = y' = 0.95 minimizes the smoothed loss for y = 1.
    const double at = scalar_loss([](Tape& t) { return smoothed_bce(s(t, 0.95), s(t, 1), 0.05); });
    for (double p : {0.9, 0.94, 0.96, 0.99})
        EXPECT_LT(at, scalar_loss([&](Tape& t) { return smoothed_bce(s(t, p), s(t, 1), 0.05); }));
    Tape t;
    const Var p = t.scalar(0.95, true);
    t.backward(smoothed_bce(p, t.scalar(1.0), 0.05));
    EXPECT_NEAR(p.grad()[0], 0.0, 1e-12);
}

TEST(Contrastive, ConstantEnergyGivesSoftplusMargin) {
    Tape t;
    auto rng = make_rng(1);
    const Var z = t.leaf(Tensor({4, 3}, 0.5));
    const Var l = contrastive_loss(z, [&](const Var& v) { return diff::scale(diff::sum(v, 1), 0.0); }, 1.0, 0.1, rng);
    EXPECT_NEAR(l.item(), std::log1p(std::exp(1.0)), 1e-15);
    EXPECT_NEAR(l.item(), 1.3133, 5e-5);
}

TEST(Contrastive, LargeGapDrivesLossToZero) {
    Tape t;
    auto rng = make_rng(2);
    const Var z = t.leaf(Tensor({4, 3}, 0.0));
    // Energy rises steeply away from the data point z = 0.
    const Var l = contrastive_loss(z, [&](const Var& v) { return diff::scale(diff::sum(diff::square(v), 1), 1e6); }, 1.0, 0.1, rng);
    EXPECT_LT(l.item(), 1e-100);
}

TEST(Contrastive, GradientPushesDataEnergyDown) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Tape t;
        auto rng = make_rng(seed);
        std::mt19937_64 g(seed);
        std::normal_distribution<double> n(0, 1);
        std::vector<double> zv(12), wv(3);
        for (auto& v : zv) v = n(g);
        for (auto& v : wv) v = n(g);
        const Var z = t.leaf(Tensor({4, 3}, zv));
        const Var w = t.leaf(Tensor({1, 3}, wv));
        const Var bump = t.scalar(0.0, true);  // added to E(z) only
        const Var l = contrastive_loss(
            z, [&](const Var& v) { const Var e = diff::sum(v * w, 1); return v.id() == z.id() ? e + bump : e; }, 1.0, 0.1,
            rng);
        t.backward(l);
        EXPECT_GT(bump.grad()[0], 0.0);
    }
}

TEST(GrLoss, NearZeroOnLogLinearSample) {
    auto rng = make_rng(3);
    const auto m = synth::sample_gr_magnitudes(1.0, 2.0, 9.0, 50000, rng);
    const auto g = gr_counts(m, 2.0);
    EXPECT_LT(gr_at(g, 1.0), 1e-3);
}

TEST(GrLoss, ScanPicksGeneratorB) {
    auto rng = make_rng(4);
    const auto g = gr_counts(synth::sample_gr_magnitudes(1.0, 2.0, 9.0, 50000, rng), 2.0);
    EXPECT_LT(gr_at(g, 1.0), gr_at(g, 0.8));
    EXPECT_LT(gr_at(g, 1.0), gr_at(g, 1.2));
    double best = 0, best_loss = 1e9;
    for (double b = 0.5; b <= 1.5; b += 0.01)
        if (gr_at(g, b) < best_loss) best_loss = gr_at(g, b), best = b;
    EXPECT_NEAR(best, 1.0, 0.05);
}

TEST(GrLoss, SingleBinFlagged) {
    const std::vector<double> m{5.0, 5.0, 5.0};
    // Thresholds from 5.0 to 5.05: only one.
    Tape t;
    const auto r = gr_loss(t, m, t.scalar(1.0), 5.0, 0.1, 5.05);
    EXPECT_TRUE(r.insufficient);
    EXPECT_EQ(r.value.item(), 0.0);
    EXPECT_EQ(gr_counts(m, 5.0).occupied(), 1u);
    Tape u;
    EXPECT_TRUE(gr_loss(u, m, u.scalar(1.0), 5.0).insufficient);
}

TEST(GrLoss, CountsAndIntercept) {
    const std::vector<double> m{2.0, 2.05, 2.1, 2.3, 3.0};
    const auto g = gr_counts(m, 2.0, 0.1, 3.0);
    ASSERT_EQ(g.counts.size(), 11u);
    EXPECT_EQ(g.counts[0], 5.0);
    EXPECT_EQ(g.counts[1], 3.0);  // ≥ 2.1
    EXPECT_EQ(g.counts[10], 1.0);
    // The profiled intercept zeroes the weighted mean residual.
    const double a = gr_intercept(g, 0.9);
    double wsum = 0, acc = 0;
    for (std::size_t k = 0; k < g.counts.size(); ++k) {
        const double w = std::sqrt(g.counts[k]);
        wsum += w;
        acc += w * (std::log10(g.counts[k] + 1) - (a - 0.9 * g.thresholds[k]));
    }
    EXPECT_NEAR(acc / wsum, 0.0, 1e-12);
}

TEST(OmoriLoss, ZeroWhenHistogramMatchesModel) {
    const auto bins = OmoriBins::log_spaced(20, 0.01, 90);
    Tape t;
    const Var pi = omori_bin_probabilities(t, bins, t.scalar(1.1), t.scalar(0.1));
    OmoriHistogram h;
    h.n = 1000000;
    for (double v : pi.values()) h.counts.push_back(v * 1e6);
    EXPECT_LT(omori_at(h, bins, 1.1, 0.1), 1e-12);
    EXPECT_GE(omori_at(h, bins, 1.1, 0.1), -1e-15);
}

TEST(OmoriLoss, GeneratorParametersBeatShiftedP) {
    const auto bins = OmoriBins::log_spaced(20, 0.01, 90);
    auto rng = make_rng(5);
    const auto h = omori_histogram(synth::sample_omori_times(1.1, 0.1, 50000, 90, rng), bins);
    EXPECT_EQ(h.n, 50000u);
    const double at = omori_at(h, bins, 1.1, 0.1);
    EXPECT_LE(at, omori_at(h, bins, 1.4, 0.1));
    EXPECT_LE(at, omori_at(h, bins, 0.8, 0.1));
}

TEST(OmoriLoss, PropertyNonNegative) {
    const auto bins = OmoriBins::log_spaced(20, 0.01, 90);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 1), pu(0.5, 2.0), cu(0.001, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        OmoriHistogram h;
        h.counts.resize(20);
        for (auto& c : h.counts) {
            c = std::floor(u(rng) < 0.3 ? 0.0 : 100 * u(rng));
            h.n += static_cast<std::size_t>(c);
        }
        if (h.n < 50) continue;
        const double v = omori_at(h, bins, pu(rng), cu(rng));
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0);
    }
}

TEST(OmoriLoss, InsufficientDelaysFlagged) {
    const auto bins = OmoriBins::log_spaced(20, 0.01, 90);
    Tape t;
    const auto r = omori_loss(t, std::vector<double>(49, 1.0), t.scalar(1.1), t.scalar(0.1), bins);
    EXPECT_TRUE(r.insufficient);
    EXPECT_EQ(r.value.item(), 0.0);
}

TEST(OmoriLoss, FirstBinAbsorbsShortDelays) {
    const auto bins = OmoriBins::log_spaced(20, 0.01, 90);
    const auto h = omori_histogram(std::vector<double>{0.001, 0.005, 0.02, 90.0, 91.0, 0.0}, bins);
    EXPECT_EQ(h.n, 4u);
    EXPECT_EQ(h.counts.front(), 2.0);
    EXPECT_EQ(h.counts.back(), 1.0);
}

TEST(BathLoss, Examples) {
    const std::vector<std::pair<double, double>> exact{{6.0, 4.8}, {7.5, 6.3}, {5.2, 4.0}};
    Tape t;
    EXPECT_NEAR(bath_loss(t, exact, t.scalar(1.2)).value.item(), 0.0, 1e-28);

    synth::SynthConfig cfg;
    cfg.n_mainshocks = 300;
    const auto pairs = synth::generate_catalog(cfg).log.bath_pairs();
    auto at = [&](double dm) {
        Tape u;
        return bath_loss(u, pairs, u.scalar(dm)).value.item();
    };
    EXPECT_LT(at(1.2), at(1.0));
    EXPECT_LT(at(1.2), at(1.4));

    const std::vector<std::pair<double, double>> mixed{{6.0, 4.0}, {7.0, 6.0}, {5.5, 4.0}};
    Tape v;
    const Var dm = v.scalar((2.0 + 1.0 + 1.5) / 3.0, true);
    v.backward(bath_loss(v, mixed, dm).value);
    EXPECT_NEAR(dm.grad()[0], 0.0, 1e-15);

    Tape w;
    EXPECT_TRUE(bath_loss(w, std::vector<std::pair<double, double>>{}, w.scalar(1.2)).insufficient);
}

TEST(GradCheck, EachComponent) {
    const Tensor probs({6}, {0.05, 0.3, 0.5, 0.62, 0.9, 0.97});
    const Tensor ys({6}, {1, 0, 1, 1, 0, 1});
    auto with_y = [&](auto loss) {
        return [=](Tape& t, const Var& p) { return diff::sum(loss(p, t.leaf(ys))); };
    };
    EXPECT_LT(diff::grad_check(with_y([](const Var& p, const Var& y) { return focal_loss(p, y, 0.25, 2.0); }), probs).max_rel_error, 1e-6);
    EXPECT_LT(diff::grad_check(with_y([](const Var& p, const Var& y) { return smoothed_bce(p, y, 0.05); }), probs).max_rel_error, 1e-6);
    EXPECT_LT(diff::grad_check(with_y([](const Var& p, const Var& y) { return weighted_bce(p, y, 3.0); }), probs).max_rel_error, 1e-6);

    auto rng = make_rng(7);
    const auto g = gr_counts(synth::sample_gr_magnitudes(0.9, 2.5, 9.0, 3000, rng), 2.5);
    EXPECT_LT(diff::grad_check([&](Tape& t, const Var& b) { return gr_loss(t, g, b).value; }, Tensor({1}, {1.1})).max_rel_error, 1e-6);

    const auto bins = OmoriBins::log_spaced(20, 0.01, 90);
    const auto h = omori_histogram(synth::sample_omori_times(1.05, 0.2, 3000, 90, rng), bins);
    for (const Tensor& pc : {Tensor({2}, {0.9, 0.05}), Tensor({2}, {1.0, 0.3}), Tensor({2}, {1.2, 0.001 + 1e-6})}) {
        // Near the c floor the default step is 1% of c; shrink it so truncation error stays below the tolerance.
        diff::GradCheckOptions small;
        small.step = std::min(1e-5, pc.values[1] * 1e-4);
        const auto r = diff::grad_check(
            [&](Tape& t, const Var& x) { return omori_loss(t, h, bins, diff::slice(x, 0, 0, 1), diff::slice(x, 0, 1, 1)).value; },
            pc, small);
        EXPECT_LT(r.max_rel_error, 1e-6);
    }

    const std::vector<std::pair<double, double>> pairs{{6.0, 4.5}, {7.1, 5.8}};
    EXPECT_LT(diff::grad_check([&](Tape& t, const Var& d) { return bath_loss(t, pairs, d).value; }, Tensor({1}, {1.0})).max_rel_error, 1e-6);

    EXPECT_LT(diff::grad_check(
                  [&](Tape&, const Var& z) {
                      auto r = make_rng(8);
                      return contrastive_loss(z, [](const Var& v) { return diff::sum(diff::tanh(v), 1); }, 1.0, 0.1, r);
                  },
                  Tensor({3, 4}, {0.1, -0.3, 0.5, 0.2, 0.9, -1.1, 0.0, 0.4, -0.2, 0.3, 0.7, -0.6}))
                  .max_rel_error,
              1e-6);
    EXPECT_LT(diff::grad_check([](Tape&, const Var& e) { return energy_regularizer(e); }, Tensor({3, 1}, {0.4, -1.2, 2.0})).max_rel_error,
              1e-6);
}

namespace {

// Packs every differentiable input of total_loss into one vector:
// [logits (B×3) | z (B×4) | θ_b, p, c, ΔM].
struct TotalFixture {
    static constexpr std::size_t B = 5, Z = 4;
    TaskLabels labels{{1, 0, 1, 0, 1}, {0, 0, 1, 0, 0}, {0, 1, 0, 0, 1}};
    PhysicsBatch physics;
    OmoriBins bins = OmoriBins::log_spaced(20, 0.01, 90);
    LossConfig cfg;

    TotalFixture() {
        auto rng = make_rng(9);
        physics.gr = gr_counts(synth::sample_gr_magnitudes(1.0, 2.5, 9.0, 400, rng), 2.5);
        physics.omori = omori_histogram(synth::sample_omori_times(1.1, 0.1, 400, 90, rng), bins);
        physics.bath_pairs = {{6.0, 4.7}, {6.5, 5.4}};
    }

    static Tensor point(std::uint64_t seed) {
        std::mt19937_64 g(seed);
        std::normal_distribution<double> n(0, 1);
        Tensor x({B * 3 + B * Z + 4});
        for (auto& v : x.values) v = n(g);
        x.values[B * 3 + B * Z + 0] = 0.9;   // b
        x.values[B * 3 + B * Z + 1] = 1.05;  // p
        x.values[B * 3 + B * Z + 2] = 0.2;   // c
        x.values[B * 3 + B * Z + 3] = 1.1;   // ΔM
        return x;
    }

    LossBreakdown run(Tape& t, const Var& x, int stage) const {
        using namespace diff;
        const Var logits = reshape(slice(x, 0, 0, B * 3), {B, 3});
        const Var z = reshape(slice(x, 0, B * 3, B * Z), {B, Z});
        const std::size_t o = B * 3 + B * Z;
        const EnergyFn energy = [](const Var& v) { return sum(tanh(v), 1); };
        TaskOutputs out{sigmoid(slice(logits, 1, 0, 1)), sigmoid(slice(logits, 1, 1, 1)), sigmoid(slice(logits, 1, 2, 1)),
                        energy(z), z};
        PhysicsVars pv{slice(x, 0, o, 1), slice(x, 0, o + 1, 1), slice(x, 0, o + 2, 1), slice(x, 0, o + 3, 1)};
        auto rng = make_rng(10);
        return total_loss(t, out, labels, physics, pv, bins, energy, cfg, stage, rng);
    }
};

}  // namespace

TEST(TotalLoss, WeightedSumOfComponents) {
    const TotalFixture fx;
    for (int stage : {1, 2}) {
        Tape t;
        const auto r = fx.run(t, t.leaf(TotalFixture::point(1)), stage);
        const double task = (r.task_aftershock + r.task_tsunami + r.task_foreshock) / 3;
        const double phys = (r.gr + r.omori + r.bath) / 3;
        const double lp = stage == 1 ? 0.0 : 0.1;
        EXPECT_NEAR(r.total, task + lp * phys + 0.1 * r.contrastive + 0.01 * r.energy_reg, 1e-13);
        EXPECT_GT(r.gr, 0.0);
        EXPECT_GT(r.omori, 0.0);
        EXPECT_GT(r.bath, 0.0);
        for (double v : {r.task_aftershock, r.task_tsunami, r.task_foreshock, r.contrastive, r.energy_reg})
            EXPECT_GT(v, 0.0);
    }
}

TEST(TotalLoss, StageOneIgnoresPhysicsGradient) {
    const TotalFixture fx;
    Tape t;
    const Var x = t.leaf(TotalFixture::point(2), true);
    t.backward(fx.run(t, x, 1).total_var);
    const std::size_t o = TotalFixture::B * 3 + TotalFixture::B * TotalFixture::Z;
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(x.grad()[o + k], 0.0);
}

TEST(TotalLoss, GradCheckBothStages) {
    const TotalFixture fx;
    for (int stage : {1, 2})
        for (std::uint64_t seed : {3, 4, 5}) {
            const auto r = diff::grad_check([&](Tape& t, const Var& x) { return fx.run(t, x, stage).total_var; },
                                            TotalFixture::point(seed));
            EXPECT_LT(r.max_rel_error, 1e-4) << "stage " << stage << " seed " << seed;
        }
}

TEST(TotalLoss, GradientIsWeightedSumOfComponentGradients) {
    const auto x0 = TotalFixture::point(6);
    auto grad = [&](double lp, double lc, double le) {
        TotalFixture fx;
        fx.cfg.lambda_physics_stage2 = lp;
        fx.cfg.lambda_contrastive = lc;
        fx.cfg.lambda_energy = le;
        Tape t;
        const Var x = t.leaf(x0, true);
        t.backward(fx.run(t, x, 2).total_var);
        return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    const auto total = grad(0.1, 0.1, 0.01), task = grad(0, 0, 0);
    const auto phys = grad(0.1, 0, 0), con = grad(0, 0.1, 0), ereg = grad(0, 0, 0.01);
    for (std::size_t i = 0; i < total.size(); ++i)
        EXPECT_NEAR(total[i], task[i] + (phys[i] - task[i]) + (con[i] - task[i]) + (ereg[i] - task[i]), 1e-13) << i;
    // The ΔM raw is reached only through the Bath term, weighted λ_p / 3.
    const std::size_t o = TotalFixture::B * 3 + TotalFixture::B * TotalFixture::Z;
    Tape t;
    const Var dm = t.scalar(x0.values[o + 3], true);
    t.backward(bath_loss(t, TotalFixture{}.physics.bath_pairs, dm).value);
    EXPECT_NEAR(total[o + 3], 0.1 / 3.0 * dm.grad()[0], 1e-14);
}

TEST(LossConfig, Validation) {
    LossConfig c;
    EXPECT_NO_THROW(validate(c));
    c.label_smoothing = 0.5;
    EXPECT_EQ(test::error_kind_of([&] { validate(c); }), ErrorKind::InvalidInput);
    c = {};
    c.focal_gamma = -1;
    EXPECT_EQ(test::error_kind_of([&] { validate(c); }), ErrorKind::InvalidInput);
    c = {};
    c.lambda_energy = -0.1;
    EXPECT_EQ(test::error_kind_of([&] { validate(c); }), ErrorKind::InvalidInput);
}
