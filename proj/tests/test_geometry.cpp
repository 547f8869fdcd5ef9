#include "covlab/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace covlab;

namespace {

GraphSpec cone(double M = 1.0) {
    GraphSpec s;
    s.family = "cone";
    s.M = M;
    return s;
}

GraphSpec tilted(double m) {
    GraphSpec s;
    s.family = "tilted";
    s.slope = m;
    return s;
}

GraphSpec sine(double a, double w) {
    GraphSpec s;
    s.family = "sine";
    s.amp = a;
    s.freq = w;
    return s;
}

}  // namespace

TEST(BuildDomain, FlatHasZeroLipschitzConstant) {
    const auto d = build_domain(GraphSpec{}, 2, 4.0, 256);
    EXPECT_EQ(d.lipschitz_M(), 0.0);
    EXPECT_EQ(d.g(1.7), 0.0);
}

TEST(BuildDomain, ConeIsAbsoluteValue) {
    const auto d = build_domain(cone(), 2, 2.0, 128);
    EXPECT_EQ(d.lipschitz_M(), 1.0);
    EXPECT_DOUBLE_EQ(d.g(-0.3), 0.3);
}

TEST(BuildDomain, SineLipschitzMatchesBruteForceMaximum) {
    const auto d = build_domain(sine(0.3, 2.0), 2, 2.0, 128);
    double brute = 0;
    for (int k = 0; k <= 200000; ++k) {
        const double x = -10 + 20.0 * k / 200000;
        brute = std::max(brute, std::abs(0.3 * 2.0 * std::cos(2.0 * x)));
    }
    EXPECT_NEAR(d.lipschitz_M(), brute, 1e-8);
    EXPECT_NEAR(d.lipschitz_M(), 0.6, 1e-15);
}

TEST(BuildDomain, SamplesLieOnGraphWithBoundedSpacing) {
    const auto d = build_domain(sine(0.3, 2.0), 2, 2.0, 128);
    for (std::size_t k = 0; k < d.boundary_samples.size(); ++k) {
        const auto& s = d.boundary_samples[k];
        EXPECT_EQ(s.t, d.g(s.x));
        if (k > 0) {
            const auto& p = d.boundary_samples[k - 1];
            EXPECT_LE(s.s - p.s, d.R / d.grid_n * (1 + 1e-12));
        }
    }
}

TEST(BuildDomain, RejectsUnderstatedLipschitzConstant) {
    GraphSpec s;
    s.family = "custom-table";
    s.knots = {Row2(-1, 0), Row2(0, 1), Row2(1, 0)};
    s.declared_lipschitz = 0.5;
    EXPECT_THROW(make_graph(s), InputError);
    s.declared_lipschitz = 1.0;
    EXPECT_NO_THROW(make_graph(s));
}

TEST(BuildDomain, RejectsCoarseGrid) { EXPECT_THROW(build_domain(GraphSpec{}, 2, 1.0, 32), InputError); }

TEST(Distance, ClosedFormCases) {
    EXPECT_NEAR(dist_to_boundary(build_domain(GraphSpec{}, 2, 2.0, 128), Row2(0, 1)), 1.0, 1e-14);
    EXPECT_NEAR(dist_to_boundary(build_domain(cone(), 2, 2.0, 128), Row2(0, 1)), std::sqrt(0.5), 1e-14);
    EXPECT_NEAR(dist_to_boundary(build_domain(tilted(0.5), 2, 2.0, 128), Row2(0, 1)), 1 / std::sqrt(1.25),
                1e-14);
}

TEST(Distance, SineAgainstDenseMinimization) {
    const auto d = build_domain(sine(0.3, 2.0), 2, 2.0, 128);
    for (const Row2& X : {Row2(0.1, 0.5), Row2(-0.7, 0.05), Row2(0.8, 1.3), Row2(0.785, 0.4)}) {
        double brute = 1e9;
        for (int k = 0; k <= 400000; ++k) {
            const double z = X(0) - 2 + 4.0 * k / 400000;
            brute = std::min(brute, std::hypot(z - X(0), d.g(z) - X(1)));
        }
        const double got = dist_to_boundary(d, X);
        EXPECT_NEAR(got, brute, 2 * d.sample_spacing * 1e-3 + 1e-9);
        EXPECT_LE(std::abs(got - brute) / brute, 2 * d.sample_spacing / brute);
    }
}

TEST(Distance, BelowGraphIsRejected) {
    const auto d = build_domain(cone(), 2, 2.0, 128);
    EXPECT_THROW(dist_to_boundary(d, Row2(0.5, 0.2)), InputError);
}

TEST(Whitney, HalfWidthRatioAndDisjointGenerations) {
    const auto d = build_domain(cone(), 2, 2.0, 256);
    const auto w = whitney_decomposition(d, 0.3, 0.8, d.h());
    ASSERT_FALSE(w.boxes.empty());
    std::set<std::tuple<int, long long, long long>> seen;
    for (const auto& b : w.boxes) {
        const double q = b.half_width / b.delta_at_center;
        EXPECT_GE(q, 0.125 - 1e-12);
        EXPECT_LE(q, 0.25 + 1e-12);
        EXPECT_GT(b.center(1) - b.half_width * std::sqrt(2.0), -1.0);
        EXPECT_TRUE(seen.insert({b.generation, b.lattice_i, b.lattice_k}).second);
        // box entirely inside the domain: every corner above the graph
        for (int sx : {-1, 1})
            for (int st : {-1, 1})
                EXPECT_TRUE(d.inside(b.center + Row2(sx * b.half_width, st * b.half_width)));
    }
}

TEST(Whitney, FlatLayerCountsMatchAreaAccounting) {
    const auto d = build_domain(GraphSpec{}, 2, 2.0, 256);
    const double h = 1.0 / 128;  // resolves exactly four generations at r = 1 when hw >= 2h
    const auto w = whitney_decomposition(d, 0.0, 1.0, h * 1.0);
    ASSERT_GE(w.generations, 4);
    for (int j = 0; j < 4; ++j) {
        const double dj = std::ldexp(1.0, -j), side = dj / 4;
        // area of {dj/2 <= t < dj} inside the unit disc
        double area = 0;
        const int n = 20000;
        for (int k = 0; k < n; ++k) {
            const double t = dj / 2 + (dj / 2) * (k + 0.5) / n;
            area += 2 * std::sqrt(std::max(0.0, 1 - t * t)) * (dj / 2) / n;
        }
        int count = 0;
        for (const auto& b : w.boxes) count += (b.generation == j);
        EXPECT_NEAR(count * side * side / area, 1.0, 0.15) << "generation " << j;
    }
}

TEST(Whitney, ConeTipCoverage) {
    const auto d = build_domain(cone(), 2, 2.0, 256);
    const auto w = whitney_decomposition(d, 0.0, 1.0, d.h());
    const auto c = whitney_coverage(d, w, 0.0, 1.0);
    EXPECT_LE(c.leakage(), 0.05);
    // generations may overlap slightly where the lattice meets a slanted boundary
    EXPECT_LE(c.overlap_measure / c.region_measure, 0.15);
}

TEST(Whitney, TinyRadiusGivesEmptyResult) {
    const auto d = build_domain(cone(), 2, 2.0, 256);
    const auto w = whitney_decomposition(d, 0.0, 1.5 * d.h(), d.h());
    EXPECT_TRUE(w.boxes.empty());
    EXPECT_GT(w.cutoff_radius, 1.5 * d.h());
}

TEST(Maps, ShearNormAndInversion) {
    MapSpec s;
    s.family = "shear";
    s.eps = 0.05;
    const auto m = make_map(s);
    EXPECT_NEAR(m.eps_bound, 0.05, 1e-15);
    const auto rep = check_map(m, Box{-2, 2, -1, 3});
    EXPECT_TRUE(rep.within_bound);
    EXPECT_NEAR(rep.max_entrywise, 0.05, 1e-15);
    const Row2 X(0.3, 0.7);
    EXPECT_LE((m.invert(m(X)) - X).norm(), 1e-13);
}

TEST(Maps, WaveStaysWithinBound) {
    MapSpec s;
    s.family = "wave";
    s.eps = 0.1;
    const auto m = make_map(s);
    EXPECT_TRUE(check_map(m, Box{-3, 3, -1, 4}).within_bound);
    const Row2 X(-1.1, 2.2);
    EXPECT_LE((m.invert(m(X)) - X).norm(), 1e-12);
}

TEST(RecoverGraph, IdentityReproducesGraph) {
    const auto d = build_domain(sine(0.3, 2.0), 2, 2.0, 128);
    const auto r = recover_graph(d, make_map(MapSpec{}));
    for (double x : {-1.3, 0.0, 0.4, 1.9}) EXPECT_NEAR(r.g(x), d.g(x), 1e-12);
}

TEST(RecoverGraph, VerticalTranslation) {
    const auto d = build_domain(cone(), 2, 2.0, 128);
    MapSpec s;
    s.family = "translation";
    s.shift = Row2(0, 0.25);
    const auto r = recover_graph(d, make_map(s));
    for (double x : {-1.3, 0.0, 0.4}) EXPECT_NEAR(r.g(x), d.g(x) + 0.25, 1e-12);
}

TEST(RecoverGraph, FlatUnderVerticalWaveIsSine) {
    const auto d = build_domain(GraphSpec{}, 2, 2.0, 128);
    MapSpec s;
    s.family = "vertical-wave";
    s.eps = 0.1;
    RecoveredGraphInfo info;
    const auto r = recover_graph(d, make_map(s), &info);
    for (double x : {-1.3, 0.0, 0.4, 1.1}) EXPECT_NEAR(r.g(x), 0.1 * std::sin(x), 1e-12);
    EXPECT_LE(info.max_residual, 1e-8);
}

TEST(RecoverGraph, LipschitzBoundAndBoundaryConsistency) {
    const auto d = build_domain(cone(), 2, 2.0, 128);
    MapSpec s;
    s.family = "wave";
    s.eps = 0.05;
    const auto m = make_map(s);
    const auto r = recover_graph(d, m);
    double q = 0;
    for (std::size_t k = 1; k < r.boundary_samples.size(); ++k) {
        const auto &a = r.boundary_samples[k - 1], &b = r.boundary_samples[k];
        q = std::max(q, std::abs(b.t - a.t) / (b.x - a.x));
    }
    EXPECT_GE(r.lipschitz_M(), q);
    for (std::size_t k = 0; k < d.boundary_samples.size(); k += 7) {
        const auto& bs = d.boundary_samples[k];
        const Row2 Y = m(Row2(bs.x, bs.t));
        if (std::abs(Y(0)) > 1.5) continue;
        EXPECT_LE(distance_to_graph(r, Y), 2 * r.sample_spacing);
    }
}

TEST(RecoverGraph, RejectsLargePerturbation) {
    const auto d = build_domain(cone(), 2, 2.0, 128);
    MapSpec s;
    s.family = "shear";
    s.eps = 0.3;
    EXPECT_THROW(recover_graph(d, make_map(s)), InputError);
}

TEST(FarField, SectorModelOfConeIsQuadratic) {
    const FarFieldModel f(AsymptoticLines{-1, 0, 1, 0});
    for (const Row2& X : {Row2(0, 1), Row2(0.3, 1.2), Row2(-1, 1.5)})
        EXPECT_NEAR(f(X), X(1) * X(1) - X(0) * X(0), 1e-12);
    EXPECT_EQ(f(Row2(0.5, 0.2)), 0.0);
}

TEST(FarField, ParallelLinesGiveHalfPlane) {
    const FarFieldModel f(AsymptoticLines{0.5, 0.2, 0.5, 0.2});
    EXPECT_NEAR(f(Row2(1, 2)), (2 - 0.5 - 0.2) / std::sqrt(1.25), 1e-14);
}
