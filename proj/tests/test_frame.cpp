#include "covlab/frame.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace covlab;

namespace {

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

std::shared_ptr<const GreenData> green(const GraphSpec& s, int n = 128) {
    GreenOptions o;
    o.richardson = false;
    auto d = std::make_shared<const GraphDomain>(build_domain(s, 2, 2.0, n));
    auto gd = solve_green(d, n, o);
    derivatives(gd);
    return std::make_shared<const GreenData>(std::move(gd));
}

FrameField frame(const GraphSpec& s, int n = 128) {
    auto ff = build_frame(green(s, n));
    transversal_fields(ff);
    return ff;
}

}  // namespace

TEST(FrameAlgebra, ThreeDimensionalVerticalNormalGivesStandardBasis) {
    const auto f = frame_from_normal<3>(RowN<3>(0, 0, 1));
    EXPECT_LE((f.V - MatN<3>::Identity()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FrameAlgebra, ThreeDimensionalTiltedNormalIsOrthonormal) {
    RowN<3> vn(0.3, -0.4, 1.0);
    vn.normalize();
    const auto f = frame_from_normal<3>(vn);
    EXPECT_LE((f.V * f.V.transpose() - MatN<3>::Identity()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_GT(f.V(0, 0), 0);
}

TEST(FrameAlgebra, TwoDimensionalFrameIsRightHanded) {
    const Row2 vn = Row2(-0.6, 0.8);
    const auto f = frame_from_normal<2>(vn);
    EXPECT_NEAR(f.V.determinant(), 1.0, 1e-15);
    EXPECT_LE((f.V.row(0) - Row2(0.8, 0.6)).norm(), 1e-15);
}

TEST(Frame, FlatIsCartesian) {
    const auto ff = frame(family("flat"));
    const auto& g = ff.grid();
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!ff.grad_t.ok(k)) continue;
        const Row2 X = g.node(k);
        EXPECT_LE((ff.V.values[k] - Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(ff.t.values[k], X(1), 1e-9);
        EXPECT_NEAR(ff.y.values[k], X(0), 1e-9);
        EXPECT_LE((ff.grad_t.values[k] - Col2(0, 1)).norm(), 1e-8);
    }
    EXPECT_NEAR(ff.t_over_delta_min, 1.0, 1e-8);
    EXPECT_NEAR(ff.t_over_delta_max, 1.0, 1e-8);
    EXPECT_LE(ff.frame_orthonormality, 1e-12);
}

TEST(Frame, TiltedConstants) {
    const double m = 0.5;
    const auto gd = green(family("tilted", m));
    const auto r = check_H1_H2(*gd);
    EXPECT_NEAR(r.C_2, std::sqrt(1 + m * m), 1e-8);
    EXPECT_NEAR(r.C_H, 1.0, 1e-7);
    EXPECT_NEAR(r.min_vn_en, r.vn_en_bound, 1e-8);
}

TEST(Frame, ConeAxisRatio) {
    const auto gd = green(family("cone", 1.0));
    for (double t : {0.5, 1.0}) {
        const auto f = local_frame_at(*gd, Row2(0, t));
        ASSERT_TRUE(f.has_value());
        // G = t^2 - x^2 on the axis: t_G = t/2 while delta = t/sqrt(2)
        EXPECT_NEAR(f->t / dist_to_boundary(*gd->domain, Row2(0, t)), 1 / std::sqrt(2.0), 1e-6);
        EXPECT_NEAR(f->y, 0.0, 1e-9);
    }
}

TEST(Frame, SineInvariants) {
    const auto ff = frame(family("sine", 0.3, 2.0));
    EXPECT_LE(ff.frame_orthonormality, 1e-12);
    EXPECT_GT(ff.min_tilde_norm, 0.5);
    EXPECT_GT(ff.t_over_delta_min, 0);
    const auto r = check_H1_H2(*ff.green);
    EXPECT_GE(r.min_vn_en, r.vn_en_bound * (1 - 1e-3));
    // C_H is taken away from the side walls, the frame sup is over every node
    EXPECT_LE(r.C_H, ff.t_over_delta_max * (1 + 1e-12));
    EXPECT_LE(ff.grad_t_route_residual, 1e-2);
    // |grad v_1| = |grad v_n| in two dimensions
    EXPECT_NEAR(ff.grad_v_ratio, 1.0, 1e-6);
}

TEST(Frame, ChainRuleMatchesDifferencedNormalDerivative) {
    const auto ff = frame(family("sine", 0.3, 2.0));
    double worst = 0, scale = 0;
    for (std::size_t k = 0; k < ff.grid().size(); ++k) {
        if (!ff.grad_v[1].ok(k) || !ff.grad_vn_chain.ok(k)) continue;
        // the Hessian route loses accuracy in the collar, so compare away from it
        if (ff.green->delta.values[k] < 0.25) continue;
        worst = std::max(worst, (ff.grad_v[1].values[k] - ff.grad_vn_chain.values[k]).norm());
        scale = std::max(scale, ff.grad_vn_chain.values[k].norm());
    }
    EXPECT_LE(worst, 2e-3);
    EXPECT_GT(scale, 0);
}
