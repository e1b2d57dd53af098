#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "poseidon/physics.hpp"
#include "poseidon/synthgen.hpp"
#include "test_support.hpp"

using namespace poseidon;
using namespace poseidon::physics;

TEST(Derive, SpecPoints) {
    EXPECT_EQ(derive_b(0.0), 1.0);
    EXPECT_EQ(derive_p(0.0), 1.0);
    const auto d = derive(PhysicsParams{});
    EXPECT_EQ(d.b, 1.0);
    EXPECT_EQ(d.p, 1.0);
    EXPECT_NEAR(d.c, std::log1p(std::exp(-5.0)) + 0.001, 1e-15);
    EXPECT_NEAR(d.c, 0.0077, 5e-5);
    EXPECT_EQ(d.delta_m, 1.2);
}

TEST(Derive, CFloorLimit) {
    EXPECT_NEAR(derive_c(-50.0), 0.001, 1e-15);
    EXPECT_GT(derive_c(-800.0), 0.001);
    EXPECT_GT(derive_c(-1e6), 0.001);
}

TEST(Derive, ConvergedOmoriPValue) {
    const double u = (0.835 - 0.8) / 0.4;
    EXPECT_NEAR(u, 0.0875, 1e-15);
    const double theta = std::log(u / (1 - u));
    EXPECT_NEAR(theta, -2.345, 5e-4);
    EXPECT_NEAR(derive_p(theta), 0.835, 1e-14);
}

TEST(Invert, RoundTripAtReportedValues) {
    for (const DerivedPhysics target : {DerivedPhysics{0.752, 0.835, 0.1948, 1.2}, DerivedPhysics{1.0, 1.0, 0.0077, 0.7},
                                        DerivedPhysics{1.29, 0.81, 25.0, 1.5}, DerivedPhysics{0.71, 1.19, 0.0011, 0.0}}) {
        const auto back = derive(invert(target));
        EXPECT_NEAR(back.b, target.b, 1e-9);
        EXPECT_NEAR(back.p, target.p, 1e-9);
        EXPECT_NEAR(back.c, target.c, 1e-9);
        EXPECT_EQ(back.delta_m, target.delta_m);
    }
}

TEST(Invert, OutOfBoundsTargets) {
    EXPECT_EQ(test::error_kind_of([] { invert({1.3, 1.0, 0.1, 1.2}); }), ErrorKind::InvalidInput);
    EXPECT_EQ(test::error_kind_of([] { invert({1.0, 0.8, 0.1, 1.2}); }), ErrorKind::InvalidInput);
    EXPECT_EQ(test::error_kind_of([] { invert({1.0, 1.0, 0.001, 1.2}); }), ErrorKind::InvalidInput);
}

TEST(Derive, PropertyBoundsHoldForRandomAndExtremeRaws) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> wide(-50, 50);
    std::uniform_real_distribution<double> log_mag(-3, 6);
    std::bernoulli_distribution sign(0.5);
    auto draw = [&](int i) {
        if (i % 3 == 0) return wide(rng);
        const double v = std::pow(10.0, log_mag(rng));
        return sign(rng) ? v : -v;
    };
    for (int i = 0; i < 100000; ++i) {
        const PhysicsParams raw{draw(i), draw(i + 1), draw(i + 2), 1.2};
        const auto d = derive(raw);
        ASSERT_GT(d.b, 0.7);
        ASSERT_LT(d.b, 1.3);
        ASSERT_GT(d.p, 0.8);
        ASSERT_LT(d.p, 1.2);
        ASSERT_GT(d.c, 0.001);
    }
    for (double e : {-1e6, 1e6}) {
        const auto d = derive(PhysicsParams{e, e, e, 0});
        EXPECT_GT(d.b, 0.7);
        EXPECT_LT(d.b, 1.3);
        EXPECT_GT(d.p, 0.8);
        EXPECT_LT(d.p, 1.2);
        EXPECT_GT(d.c, 0.001);
        EXPECT_TRUE(std::isfinite(d.c));
    }
}

TEST(Derive, PropertyMonotone) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-30, 30);
    for (int i = 0; i < 10000; ++i) {
        double a = u(rng), b = u(rng);
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        EXPECT_LT(derive_b(a), derive_b(b));
        EXPECT_LT(derive_p(a), derive_p(b));
        EXPECT_LT(derive_c(a), derive_c(b));
    }
}

TEST(Derive, TapeVersionMatchesAndDifferentiates) {
    for (double th : {-3.0, -0.4, 0.0, 1.7}) {
        diff::Tape t;
        const auto v = derive(t.scalar(th, true), t.scalar(th, true), t.scalar(th, true), t.scalar(1.1, true));
        EXPECT_NEAR(v.b.item(), derive_b(th), 1e-15);
        EXPECT_NEAR(v.p.item(), derive_p(th), 1e-15);
        EXPECT_NEAR(v.c.item(), derive_c(th), 1e-15);
        EXPECT_EQ(v.delta_m.item(), 1.1);
    }
    diff::GradCheckOptions opt;
    const auto r = diff::grad_check(
        [](diff::Tape&, const diff::Var& x) {
            const auto v = derive(diff::slice(x, 0, 0, 1), diff::slice(x, 0, 1, 1), diff::slice(x, 0, 2, 1),
                                  diff::slice(x, 0, 3, 1));
            return diff::sum(v.b * v.p + diff::log(v.c) + diff::square(v.delta_m));
        },
        diff::Tensor({4}, {0.3, -1.2, -2.0, 1.2}), opt);
    EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(MleB, ClosedFormPoint) {
    // Mean excess exactly log10(e) → b = 1.
    const double l = std::log10(std::exp(1.0));
    const std::vector<double> m{3.0, 3.0 + 2 * l};
    const auto est = mle_b(m, 3.0);
    EXPECT_NEAR(est.b, 1.0, 1e-14);
    EXPECT_NEAR(est.std_error, 1.0 / std::sqrt(2.0), 1e-14);
    EXPECT_EQ(est.n, 2u);
    // Binning shifts the reference magnitude down by half a bin.
    const std::vector<double> binned{3.0, 3.0 + 2 * l - 0.1};
    EXPECT_NEAR(mle_b(binned, 3.0, 0.1).b, 1.0, 1e-14);
}

TEST(MleB, RecoversReportedB) {
    auto rng = make_rng(752);
    const auto m = synth::sample_gr_magnitudes(0.752, 2.0, 9.0, 50000, rng);
    EXPECT_NEAR(mle_b(m, 2.0).b, 0.752, 0.02);
}

TEST(MleB, Errors) {
    EXPECT_EQ(test::error_kind_of([] { mle_b(std::vector<double>{4.0, 4.0, 4.0}, 3.0); }), ErrorKind::Estimation);
    EXPECT_EQ(test::error_kind_of([] { mle_b(std::vector<double>{4.0}, 3.0); }), ErrorKind::Estimation);
    EXPECT_EQ(test::error_kind_of([] { mle_b(std::vector<double>{2.0, 4.0}, 3.0); }), ErrorKind::Estimation);
}

TEST(MleB, PropertyPermutationInvariant) {
    std::mt19937_64 rng(9);
    auto r = make_rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        auto m = synth::sample_gr_magnitudes(1.0, 2.5, 8.0, 500, r);
        const double b0 = mle_b(m, 2.5).b;
        std::shuffle(m.begin(), m.end(), rng);
        EXPECT_NEAR(mle_b(m, 2.5).b, b0, 1e-12);
    }
}

TEST(MleBTruncated, MatchesUntruncatedForWideBounds) {
    auto rng = make_rng(11);
    const auto m = synth::sample_gr_magnitudes(1.0, 2.0, 20.0, 20000, rng);
    const std::vector<double> upper(m.size(), 40.0);
    EXPECT_NEAR(mle_b_truncated(m, upper, 2.0).b, mle_b(m, 2.0).b, 1e-9);
}

TEST(MleBTruncated, UnbiasedUnderNarrowTruncation) {
    auto rng = make_rng(12);
    std::vector<double> m, upper;
    for (double top : {3.0, 3.5, 4.5}) {
        const auto s = synth::sample_gr_magnitudes(1.0, 2.0, top, 10000, rng);
        m.insert(m.end(), s.begin(), s.end());
        upper.insert(upper.end(), s.size(), top);
    }
    const auto est = mle_b_truncated(m, upper, 2.0);
    EXPECT_NEAR(est.b, 1.0, 4 * est.std_error);
    EXPECT_GT(std::abs(mle_b(m, 2.0).b - 1.0), 0.1);  // the untruncated estimator is badly biased here
}

TEST(FitOmori, RecoversGeneratorParameters) {
    for (auto [p, c, seed] : {std::tuple{1.1, 0.1, 31}, std::tuple{0.835, 0.1948, 32}}) {
        auto rng = make_rng(static_cast<std::uint64_t>(seed));
        const auto d = synth::sample_omori_times(p, c, 50000, 90.0, rng);
        const auto fit = fit_omori(d, 90.0);
        EXPECT_NEAR(fit.p, p, 0.05);
        EXPECT_NEAR(fit.c, c, 0.05);
        EXPECT_FALSE(fit.p_at_boundary);
        EXPECT_EQ(fit.n, d.size());
    }
}

TEST(FitOmori, UniformDelaysHitLowerPBoundary) {
    auto rng = make_rng(33);
    const auto d = synth::sample_omori_times(0.0, 0.1, 5000, 90.0, rng);
    const auto fit = fit_omori(d, 90.0);
    EXPECT_EQ(fit.p, 0.5);
    EXPECT_TRUE(fit.p_at_boundary);
}

TEST(FitOmori, Errors) {
    EXPECT_EQ(test::error_kind_of([] { fit_omori(std::vector<double>(49, 1.0), 90.0); }), ErrorKind::Estimation);
    std::vector<double> d(60, 1.0);
    d[3] = 95.0;
    EXPECT_EQ(test::error_kind_of([&] { fit_omori(d, 90.0); }), ErrorKind::Estimation);
}

TEST(FitOmori, Deterministic) {
    auto rng = make_rng(34);
    auto d = synth::sample_omori_times(1.05, 0.3, 3000, 90.0, rng);
    const auto a = fit_omori(d, 90.0);
    const auto again = fit_omori(d, 90.0);
    EXPECT_EQ(a.p, again.p);
    EXPECT_EQ(a.c, again.c);
    // Reordering only perturbs the log-likelihood sums at rounding level.
    std::reverse(d.begin(), d.end());
    const auto b = fit_omori(d, 90.0);
    EXPECT_NEAR(a.p, b.p, 1e-6);
    EXPECT_NEAR(a.c, b.c, 1e-6);
}

TEST(OmoriIntegral, ClosedFormThroughPEqualsOne) {
    for (double p : {0.5, 0.999999, 1.0, 1.000001, 1.5})
        for (double c : {0.001, 0.1, 1.0}) {
            const double ref = std::abs(p - 1.0) < 1e-12
                                   ? std::log((90 + c) / c)
                                   : (std::pow(c, 1 - p) - std::pow(90 + c, 1 - p)) / (p - 1);
            EXPECT_NEAR(omori_integral(0, 90, p, c), ref, 1e-7 * ref) << p << ' ' << c;
        }
}
