#include "covlab/green.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace covlab;

namespace {

std::shared_ptr<const GraphDomain> domain(const GraphSpec& s, double R = 2.0, int n = 128) {
    return std::make_shared<const GraphDomain>(build_domain(s, 2, R, n));
}

GraphSpec family(const std::string& f, double p = 0, double q = 0) {
    GraphSpec s;
    s.family = f;
    if (f == "tilted") s.slope = p;
    if (f == "cone") s.M = p;
    if (f == "sine") {
        s.amp = p;
        s.freq = q;
    }
    return s;
}

GreenData solved(const GraphSpec& s, int n = 128, bool richardson = false) {
    GreenOptions o;
    o.richardson = richardson;
    auto gd = solve_green(domain(s, 2.0, n), n, o);
    derivatives(gd);
    return gd;
}

}  // namespace

TEST(Green, FlatIsHeight) {
    const auto gd = solved(family("flat"));
    const auto exact = *closed_form_green(family("flat"));
    EXPECT_LE(closed_form_error(gd, exact).max_rel, 1e-10);
    EXPECT_NEAR(*gd.value_at(gd.Z0), 1.0, 1e-12);
    for (std::size_t k = 0; k < gd.grid.size(); ++k)
        if (gd.admissible(k)) {
            EXPECT_NEAR((gd.gradG.values[k] - Col2(0, 1)).norm(), 0.0, 1e-9);
            EXPECT_NEAR(gd.hessG.values[k].norm(), 0.0, 1e-7);
        }
}

TEST(Green, TiltedMatchesRotatedHalfPlane) {
    const auto gd = solved(family("tilted", 0.5));
    EXPECT_LE(closed_form_error(gd, *closed_form_green(family("tilted", 0.5))).max_rel, 1e-9);
}

TEST(Green, ConeMatchesQuadraticHarmonic) {
    const auto gd = solved(family("cone", 1.0));
    const auto exact = *closed_form_green(family("cone", 1.0));
    // r^2 cos(2 theta) with theta from the axis is t^2 - x^2
    EXPECT_NEAR(exact(Row2(0.3, 0.9)), 0.81 - 0.09, 1e-14);
    EXPECT_LE(closed_form_error(gd, exact, Row2::Zero(), 0.1).max_rel, 2e-2);
    const auto grad = *gd.gradient_at(Row2(0, 1));
    EXPECT_NEAR(grad.norm(), 2.0, 1e-8);
}

TEST(Green, ConeOfOtherOpeningMatchesSectorExponent) {
    const auto gd = solved(family("cone", 0.5));
    EXPECT_LE(closed_form_error(gd, *closed_form_green(family("cone", 0.5)), Row2::Zero(), 0.1).max_rel, 2e-2);
}

TEST(Green, DiscreteHarmonicityAndPositivity) {
    const auto gd = solved(family("sine", 0.3, 2.0));
    EXPECT_LE(gd.harmonic_residual, 1e-8);
    EXPECT_LE(gd.solve_residual, 1e-10);
    const auto rep = check_gradient_bound(gd);
    EXPECT_GT(rep.min_G, 0);
    EXPECT_GT(rep.excluded, 0u);
    for (std::size_t k = 0; k < gd.grid.size(); ++k)
        if (gd.grad_ok(k)) EXPECT_GT(gd.G.values[k], 0);
}

TEST(Green, HessianSymmetricAndCollarGuarded) {
    const auto gd = solved(family("sine", 0.3, 2.0));
    for (std::size_t k = 0; k < gd.grid.size(); ++k)
        if (gd.hessG.ok(k)) EXPECT_LE(std::abs(gd.hessG.values[k](0, 1) - gd.hessG.values[k](1, 0)), 1e-8);
    EXPECT_THROW(gd.hessian_at(Row2(0.0, gd.domain->g(0.0) + gd.h)), InputError);
}

TEST(Green, GradientMatchesSecondOrderDifferences) {
    const auto gd = solved(family("sine", 0.3, 2.0));
    const auto& g = gd.grid;
    double worst = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!gd.admissible(k)) continue;
        const int i = g.col_of(k), j = g.row_of(k);
        const Col2 c((gd.G(i + 1, j) - gd.G(i - 1, j)) / (2 * gd.h), (gd.G(i, j + 1) - gd.G(i, j - 1)) / (2 * gd.h));
        worst = std::max(worst, (c - gd.gradG.values[k]).norm());
    }
    EXPECT_LE(worst, 5 * gd.h * gd.h * 10);
}

TEST(Green, BoundaryValuesInterpolateToZero) {
    const auto gd = solved(family("sine", 0.3, 2.0));
    double gmax = 0;
    for (std::size_t k = 0; k < gd.grid.size(); ++k)
        if (gd.gradG.ok(k)) gmax = std::max(gmax, gd.gradG.values[k].norm());
    for (const auto& s : gd.domain->boundary_samples) {
        if (std::abs(s.x) > 1.8) continue;
        const auto v = gd.value_at(Row2(s.x, s.t));
        ASSERT_TRUE(v.has_value());
        EXPECT_LE(std::abs(*v), 2 * gd.h * gmax);
    }
}

TEST(Green, GradientBoundOnFlatIsOne) {
    const auto gd = solved(family("flat"));
    EXPECT_NEAR(check_gradient_bound(gd).sup_ratio, 1.0, 1e-9);
}

TEST(Green, RichardsonDiscrepancyIsRecorded) {
    const auto gd = solved(family("sine", 0.3, 2.0), 128, true);
    EXPECT_TRUE(gd.richardson.performed);
    EXPECT_LT(gd.richardson.fine_discrepancy, 0.2);
    EXPECT_LT(gd.richardson.wide_discrepancy, 0.2);
}
