#pragma once

#include "covlab/core.hpp"
#include "covlab/geometry.hpp"
#include "covlab/green.hpp"

#include <fstream>
#include <vector>

namespace covlab {

struct KappaSample {
    double x, s;          // abscissa and arclength
    Row2 point, normal;   // boundary point and inward unit normal
    double kappa = 0;
    double residual = 0;  // relative change of the extrapolant when s_min is doubled
    bool monotone = true;
    bool flagged = false; // excluded from RH averages
};

struct KappaOptions {
    double s0 = 0.25;
    double x_range = 0;       // |x| <= x_range; 0 means 3R/4
    double flag_residual = 0.10;
    int stride = 1;           // use every stride-th boundary sample
};

/// kappa(x) = lim G(x + s nu) / delta(x + s nu) along the inward normal, by first-order
/// Richardson extrapolation over s = s0 2^-j >= 2h.
inline std::vector<KappaSample> kappa_density(const GreenData& gd, const KappaOptions& opt = {}) {
    const GraphDomain& d = *gd.domain;
    const auto& S = d.boundary_samples;
    const double xr = opt.x_range > 0 ? opt.x_range : 0.75 * d.R;
    std::vector<std::size_t> idx;
    for (std::size_t k = 1; k + 1 < S.size(); k += opt.stride)
        if (std::abs(S[k].x) <= xr) idx.push_back(k);
    std::vector<KappaSample> out(idx.size());
    std::vector<std::uint8_t> keep(idx.size(), 0);
    parallel_for(idx.size(), [&](std::size_t a) {
        const std::size_t k = idx[a];
        KappaSample ks;
        ks.x = S[k].x;
        ks.s = S[k].s;
        ks.point = Row2(S[k].x, S[k].t);
        const Row2 tang = Row2(S[k + 1].x - S[k - 1].x, S[k + 1].t - S[k - 1].t).normalized();
        ks.normal = Row2(-tang(1), tang(0));
        std::vector<double> q;
        for (double s = opt.s0; s >= 2 * gd.h * (1 - 1e-12); s *= 0.5) {
            const Row2 X = ks.point + s * ks.normal;
            const auto G = gd.value_at(X);
            if (!G) break;
            q.push_back(*G / distance_to_graph(d, X));
        }
        if (q.size() < 3) return;
        const std::size_t J = q.size() - 1;
        const double k1 = 2 * q[J] - q[J - 1], k0 = 2 * q[J - 1] - q[J - 2];
        ks.kappa = k1;
        const double scale = std::max(std::abs(k1), 1e-300);
        ks.residual = std::abs(k1 - k0) / scale;
        for (std::size_t j = 2; j < q.size(); ++j)
            if ((q[j] - q[j - 1]) * (q[j - 1] - q[j - 2]) < 0) ks.monotone = false;
        ks.flagged = ks.residual > opt.flag_residual;
        out[a] = ks;
        keep[a] = 1;
    });
    std::vector<KappaSample> res;
    for (std::size_t a = 0; a < out.size(); ++a)
        if (keep[a]) res.push_back(out[a]);
    return res;
}

struct BoundaryBall {
    double x0, r;  // surface ball around (x0, g(x0)) of Euclidean radius r
};

struct BallRatio {
    double x0, r, ratio;
    std::size_t samples;
};

struct RHReport {
    double p = 2;
    std::vector<KappaSample> kappa;
    std::vector<BallRatio> per_ball;
    double C_p = 1;
    std::size_t flagged = 0, skipped_balls = 0;
    double max_residual = 0;  // over unflagged samples
};

/// Trapezoid averages in arclength over the unflagged samples inside the ball.
inline std::optional<std::pair<double, double>> ball_means(const std::vector<KappaSample>& ks, const Row2& P, double r,
                                                           double pp, std::size_t* count = nullptr) {
    std::vector<const KappaSample*> in;
    for (const auto& k : ks)
        if (!k.flagged && (k.point - P).norm() < r) in.push_back(&k);
    if (count) *count = in.size();
    if (in.size() < 8) return std::nullopt;
    double L = 0, m1 = 0, mp = 0;
    for (std::size_t i = 1; i < in.size(); ++i) {
        const double ds = in[i]->s - in[i - 1]->s;
        const double a = std::max(in[i - 1]->kappa, 0.0), b = std::max(in[i]->kappa, 0.0);
        L += ds;
        m1 += 0.5 * ds * (a + b);
        mp += 0.5 * ds * (std::pow(a, pp) + std::pow(b, pp));
    }
    return std::pair<double, double>(m1 / L, mp / L);
}

inline std::vector<BoundaryBall> default_ball_family(const GraphDomain& d, int centers = 9, int radii = 4) {
    std::vector<BoundaryBall> out;
    const double half = d.R / 2;
    for (int a = 0; a < centers; ++a)
        for (int b = 0; b < radii; ++b)
            out.push_back({-half + 2 * half * a / (centers - 1), half * std::ldexp(1.0, -b)});
    return out;
}

/// Reverse Hoelder ratio (avg kappa^{p'})^{1/p'} / avg kappa per ball; C_p is the largest.
inline RHReport rh_constant(const std::vector<KappaSample>& ks, double p, const GraphDomain& d,
                            const std::vector<BoundaryBall>& balls) {
    if (!(p > 1)) throw InputError("p must exceed 1");
    RHReport rep;
    rep.p = p;
    rep.kappa = ks;
    const double pp = p / (p - 1);
    for (const auto& k : ks) {
        rep.flagged += k.flagged;
        if (!k.flagged) rep.max_residual = std::max(rep.max_residual, k.residual);
    }
    rep.C_p = 0;
    for (const auto& b : balls) {
        std::size_t n = 0;
        const auto m = ball_means(ks, d.boundary_point(b.x0), b.r, pp, &n);
        if (!m || !(m->first > 0)) {
            ++rep.skipped_balls;
            continue;
        }
        const double ratio = std::pow(m->second, 1 / pp) / m->first;
        if (ratio < 1 - 1e-9) throw InvariantViolation("power-mean inequality", "RH ratio below 1");
        rep.per_ball.push_back({b.x0, b.r, ratio, n});
        rep.C_p = std::max(rep.C_p, ratio);
    }
    if (rep.per_ball.empty()) rep.C_p = 1;
    return rep;
}

/// Larger p means smaller p', hence a smaller power mean: C_p is nonincreasing in p.
inline void check_rh_monotone(const std::vector<RHReport>& reps) {
    for (std::size_t i = 0; i < reps.size(); ++i)
        for (std::size_t j = 0; j < reps.size(); ++j)
            if (reps[i].p < reps[j].p && reps[i].C_p < reps[j].C_p * (1 - 1e-9))
                throw InvariantViolation("RH monotonicity", "C_p increased with p");
}

inline void write_kappa_csv(const std::string& path, const std::vector<KappaSample>& ks) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open " + path + " for writing");
    os.precision(17);
    os << "x,s,kappa,residual,flagged\n";
    for (const auto& k : ks) os << k.x << ',' << k.s << ',' << k.kappa << ',' << k.residual << ',' << k.flagged << '\n';
}

inline void write_balls_csv(const std::string& path, const RHReport& rep) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open " + path + " for writing");
    os.precision(17);
    os << "x0,r,ratio,samples\n";
    for (const auto& b : rep.per_ball) os << b.x0 << ',' << b.r << ',' << b.ratio << ',' << b.samples << '\n';
}

// ---------------------------------------------------------------------------
// Finite-pole harmonic measure

struct HarmonicMeasure {
    double value = 0;
    double box_R = 0, h = 0;
    double solve_residual = 0;
};

/// omega^{pole}(Delta(x0, r)) from the Dirichlet problem with a ramped indicator as data on an
/// enlarged box (zero on the far walls).
inline HarmonicMeasure harmonic_measure_ball(const Graph& graph, const Row2& pole, double x0, double r,
                                             double h_max = 0) {
    HarmonicMeasure hm;
    const double reach = std::max(std::abs(x0) + r, std::abs(pole(0)) + pole(1));
    hm.box_R = 8 * reach;
    const double h = h_max > 0 ? h_max : std::min(r, pole(1) - graph.g(pole(0))) / 32;
    const int grid_n = std::max(64, static_cast<int>(std::ceil(2 * hm.box_R / h)));
    const GraphDomain d = build_domain_from_graph(graph, 2, hm.box_R, grid_n);
    const Grid grid = make_grid(d, grid_n);
    hm.h = grid.h;
    if (distance_to_graph(d, pole) < 8 * grid.h) throw InputError("pole too close to the boundary");
    const Row2 P(x0, graph.g(x0));
    const double w = 2 * d.sample_spacing;
    auto data = [&](double z) {
        const double dist = (Row2(z, graph.g(z)) - P).norm();
        return std::clamp((r - dist) / w + 0.5, 0.0, 1.0);
    };
    const auto sol = solve_dirichlet(graph, grid, data, [](const Row2&) { return 0.0; });
    hm.solve_residual = sol.residual;
    const auto v = interp(sol.u, pole);
    if (!v) throw InvariantViolation("harmonic measure", "pole outside the solved region");
    if (*v < -1e-6 || *v > 1 + 1e-6) throw InvariantViolation("harmonic measure", "value outside [0, 1]");
    hm.value = *v;
    return hm;
}

/// G(X) / omega_inf(Delta(pi X, 2 delta(X))) over Whitney centres, with omega_inf = int kappa ds.
struct ComparabilityReport {
    double min_ratio = 0, max_ratio = 0;
    double C = 0;  // max(max_ratio, 1 / min_ratio)
    std::size_t points = 0;
};

inline ComparabilityReport green_measure_comparability(const GreenData& gd, const std::vector<KappaSample>& ks,
                                                       double x0 = 0.0, double r = 0.0) {
    const GraphDomain& d = *gd.domain;
    if (r <= 0) r = d.R / 2;
    const auto w = whitney_decomposition(d, x0, r, gd.h);
    ComparabilityReport rep;
    rep.min_ratio = std::numeric_limits<double>::infinity();
    for (const auto& b : w.boxes) {
        const auto G = gd.value_at(b.center);
        if (!G) continue;
        const Row2 P = d.boundary_point(b.center(0));
        const double rad = 2 * b.delta_at_center;
        double mass = 0;
        const KappaSample* prev = nullptr;
        std::size_t n = 0;
        for (const auto& k : ks) {
            if (k.flagged || (k.point - P).norm() >= rad) continue;
            if (prev) mass += 0.5 * (k.s - prev->s) * (std::max(k.kappa, 0.0) + std::max(prev->kappa, 0.0));
            prev = &k;
            ++n;
        }
        if (n < 8 || !(mass > 0)) continue;
        const double q = *G / mass;
        rep.min_ratio = std::min(rep.min_ratio, q);
        rep.max_ratio = std::max(rep.max_ratio, q);
        ++rep.points;
    }
    if (rep.points == 0) return ComparabilityReport{};
    rep.C = std::max(rep.max_ratio, 1 / rep.min_ratio);
    return rep;
}

// ---------------------------------------------------------------------------
// Gradient bound in convex domains

struct ConvexGradientReport {
    double ratio = 0;  // sup_{B_1/2} |grad u| / sup_{B_1} |u|
    std::vector<std::pair<double, double>> decay;  // (s, max_{delta = s} |u| / (s sup |u|))
    double u_sup = 0;
};

inline void require_convex(const GraphDomain& d) {
    const auto& S = d.boundary_samples;
    for (std::size_t k = 1; k + 1 < S.size(); ++k) {
        const double a = (S[k].t - S[k - 1].t) / (S[k].x - S[k - 1].x);
        const double b = (S[k + 1].t - S[k].t) / (S[k + 1].x - S[k].x);
        if (b - a < -1e-9) throw InputError("domain not convex");
    }
}

/// u = G on the ball of radius 1 around (0, g(0)).
inline ConvexGradientReport convex_gradient_bound(const GreenData& gd) {
    const GraphDomain& d = *gd.domain;
    require_convex(d);
    const Row2 P0 = d.boundary_point(0.0);
    ConvexGradientReport rep;
    const Grid& g = gd.grid;
    double gsup = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!gd.inside(k)) continue;
        const double r = (g.node(k) - P0).norm();
        if (r < 1) rep.u_sup = std::max(rep.u_sup, std::abs(gd.G.values[k]));
        if (r < 0.5 && gd.gradG.ok(k) && gd.grad_ok(k)) gsup = std::max(gsup, gd.gradG.values[k].norm());
    }
    // the sup of a harmonic function over the ball sits on its edge
    for (int a = 0; a <= 2000; ++a) {
        const double th = pi * a / 2000;
        if (const auto v = gd.value_at(P0 + (1 - 1e-12) * Row2(std::cos(th), std::sin(th))))
            rep.u_sup = std::max(rep.u_sup, std::abs(*v));
    }
    if (!(rep.u_sup > 0)) throw InvariantViolation("gradient bound", "u vanishes on the unit ball");
    rep.ratio = gsup / rep.u_sup;
    // linear decay: |u| / delta along inward normals from boundary points in B_1/2
    const auto& S = d.boundary_samples;
    for (double s = 0.25; s >= 2 * gd.h * (1 - 1e-12); s *= 0.5) {
        double m = 0;
        for (std::size_t k = 1; k + 1 < S.size(); ++k) {
            const Row2 P(S[k].x, S[k].t);
            if ((P - P0).norm() >= 0.5) continue;
            const Row2 tang = Row2(S[k + 1].x - S[k - 1].x, S[k + 1].t - S[k - 1].t).normalized();
            const Row2 X = P + s * Row2(-tang(1), tang(0));
            const auto v = gd.value_at(X);
            if (v) m = std::max(m, std::abs(*v) / distance_to_graph(d, X));
        }
        rep.decay.push_back({s, m / rep.u_sup});
    }
    return rep;
}

}  // namespace covlab
