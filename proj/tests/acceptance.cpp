// Acceptance runner: `acceptance <id>` evaluates one criterion and prints a single verdict line.

#include "covlab/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>

using namespace covlab;

namespace {

class Verdict {
public:
    void check(bool ok, const std::string& what) {
        std::printf("  [%s] %s\n", ok ? "ok" : "FAILED", what.c_str());
        if (!ok) ++failures_;
    }
    bool passed() const { return failures_ == 0; }

private:
    int failures_ = 0;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
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

MapSpec map_of(const std::string& f, double eps) {
    MapSpec m;
    m.family = f;
    m.eps = eps;
    return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GreenStage stage(const GraphSpec& s, int n) {
    return green_stage(std::make_shared<const GraphDomain>(build_domain(s, 2, 2.0, n)), n, false);
}

Experiment experiment(const GraphSpec& g, const MapSpec& m, int n) {
    Experiment ex;
    ex.scenario.domain = g;
    ex.scenario.map = m;
    ex.scenario.grid_n = n;
    ex.scenario.richardson = false;
    run_base(ex, false, false);
    return ex;
}

bool within(double ratio, double tol) { return std::isfinite(ratio) && std::abs(ratio - 1) <= tol; }

// ---------------------------------------------------------------------------

void green_exactness(Verdict& v) {
    struct Case {
        GraphSpec spec;
        double tol, tip;
    };
    const Case cases[] = {{family("flat"), 1e-3, 0}, {family("tilted", 0.5), 1e-3, 0}, {family("cone", 1.0), 2e-2, 0.1}};
    for (const auto& c : cases) {
        double err[2];
        for (int i = 0; i < 2; ++i) {
            const int n = 256 << i;
            const auto t0 = std::chrono::steady_clock::now();
            GreenOptions o;
            o.richardson = false;
            auto gd = solve_green(std::make_shared<const GraphDomain>(build_domain(c.spec, 2, 2.0, n)), n, o);
            derivatives(gd);
            const double secs = seconds_since(t0);
            err[i] = closed_form_error(gd, *closed_form_green(c.spec), Row2::Zero(), c.tip).max_rel;
            if (n == 512) v.check(secs <= 30, fmt("%s grid_n 512 solve in %.1f s (limit 30 s)", c.spec.family.c_str(), secs));
        }
        v.check(err[1] <= c.tol, fmt("%s relative error %.3g at grid_n 512 (limit %.0e)", c.spec.family.c_str(), err[1], c.tol));
        // a discretization that reproduces the solution to round-off has nothing left to converge
        const bool exact = err[0] <= 1e-10 && err[1] <= 1e-10;
        v.check(exact || err[0] / err[1] >= 2,
                fmt("%s halving h: error %.3g -> %.3g%s", c.spec.family.c_str(), err[0], err[1],
                    exact ? " (exact to round-off)" : ""));
    }
    // the three closed forms are quadratic at most, which the five-point scheme reproduces; a cone of
    // another opening has a non-polynomial Green function and exercises the convergence itself
    const GraphSpec wide = family("cone", 0.5);
    double err[2];
    for (int i = 0; i < 2; ++i) {
        GreenOptions o;
        o.richardson = false;
        const int n = 256 << i;
        const auto gd = solve_green(std::make_shared<const GraphDomain>(build_domain(wide, 2, 2.0, n)), n, o);
        err[i] = closed_form_error(gd, *closed_form_green(wide), Row2::Zero(), 0.1).max_rel;
    }
    v.check(err[1] <= 2e-2 && err[0] / err[1] >= 2,
            fmt("cone M=0.5 halving h: error %.3g -> %.3g (factor %.2f)", err[0], err[1], err[0] / err[1]));
}

void positivity_h1h2(Verdict& v) {
    const GraphSpec specs[] = {family("flat"), family("tilted", 0.5), family("cone", 1.0), family("sine", 0.3, 2.0)};
    for (const auto& s : specs) {
        double CH[2];
        for (int i = 0; i < 2; ++i) {
            const auto st = stage(s, 128 << i);
            const auto& r = st.h1h2;
            v.check(r.nodes > 0 && r.positive_dn == r.nodes,
                    fmt("%s n=%d: d_n G > 0 at %zu / %zu admissible nodes", s.family.c_str(), 128 << i, r.positive_dn, r.nodes));
            CH[i] = r.C_H;
            if (s.family == "tilted")
                v.check(within(r.C_2 / std::sqrt(1 + s.slope * s.slope), 0.05),
                        fmt("tilted n=%d: C_2 = %.6f vs sqrt(1+m^2) = %.6f", 128 << i, r.C_2, std::sqrt(1 + s.slope * s.slope)));
        }
        v.check(std::isfinite(CH[1]) && within(CH[1] / CH[0], 0.2),
                fmt("%s: C_H = %.4f -> %.4f under refinement", s.family.c_str(), CH[0], CH[1]));
    }
}

void green_carleson(Verdict& v) {
    const char* names[] = {"hessian-ratio", "delta-grad-v1", "delta-grad-v2", "grad-t-defect"};
    for (const auto& s : {family("cone", 1.0), family("sine", 0.3, 2.0)}) {
        std::map<std::string, double> val[2];
        for (int i = 0; i < 2; ++i) {
            const auto st = stage(s, 256 << i);
            const auto boxes = default_box_family(*st.domain);
            for (auto& [k, f] : green_fields(*st.frame)) val[i][k] = cmsup_norm(f, *st.domain, boxes).norm_estimate;
        }
        for (const char* k : names)
            v.check(std::isfinite(val[1][k]) && within(val[1][k] / val[0][k], 0.3),
                    fmt("%s %s: CMsup %.4g -> %.4g under h -> h/2", s.family.c_str(), k, val[0][k], val[1][k]));
    }
    const auto st = stage(family("flat"), 256);
    const auto boxes = default_box_family(*st.domain);
    for (auto& [k, f] : green_fields(*st.frame)) {
        const double e = cmsup_norm(f, *st.domain, boxes).norm_estimate;
        if (k != "grad-y-defect") v.check(e <= 1e-8, fmt("flat %s: CMsup %.3g (limit 1e-8)", k.c_str(), e));
    }
}

void frame_algebra(Verdict& v) {
    struct Case {
        GraphSpec g;
        MapSpec m;
    };
    MapSpec lin = map_of("linear", 0.05);
    lin.E << 0.3, -0.4, 0.7, 0.2;
    const Case cases[] = {{family("cone", 1.0), map_of("shear", 0.05)},
                          {family("sine", 0.3, 2.0), map_of("wave", 0.05)},
                          {family("tilted", 0.5), lin},
                          {family("flat"), map_of("vertical-wave", 0.05)},
                          {family("cone", 1.0), map_of("identity", 0.0)}};
    for (const auto& c : cases) {
        auto ex = experiment(c.g, c.m, 128);
        run_perturbation(ex, c.m.eps, false);
        const auto& d = ex.runs[0].cov->diag;
        const std::string tag = c.g.family + "/" + c.m.family;
        v.check(ex.base->frame->frame_orthonormality <= 1e-12,
                fmt("%s: |V V^T - I| = %.2e", tag.c_str(), ex.base->frame->frame_orthonormality));
        v.check(d.w_orthonormality <= 1e-12, fmt("%s: |W W^T - I| = %.2e", tag.c_str(), d.w_orthonormality));
        v.check(d.upper_triangularity <= 1e-12, fmt("%s: Gram-Schmidt triangularity %.2e", tag.c_str(), d.upper_triangularity));
        v.check(d.detJ0_minus_a2 <= 1e-10, fmt("%s: |det J0 - a^2| = %.2e", tag.c_str(), d.detJ0_minus_a2));
        v.check(d.A0_vn_residual <= 1e-10, fmt("%s: |A0 vn - vn| = %.2e", tag.c_str(), d.A0_vn_residual));
        v.check(d.nodes > 1000, fmt("%s: %zu admissible nodes", tag.c_str(), d.nodes));
    }
}

void eps_scaling(Verdict& v) {
    const double eps[] = {0.01, 0.02, 0.04};
    std::map<std::string, double> q[3];
    auto ex = experiment(family("cone", 1.0), map_of("shear", 0), 256);
    for (int i = 0; i < 3; ++i) {
        run_perturbation(ex, eps[i], false);
        const auto& r = ex.runs.back();
        const auto& d = r.cov->diag;
        q[i]["|grad lambda|"] = r.sup.grad_lambda;
        q[i]["|B|"] = r.sup.B;
        q[i]["|J - I|"] = d.sup_J_minus_I;
        q[i]["|J0 - I|"] = d.sup_J0_minus_I;
        q[i]["|A0 - I|"] = d.sup_A0_minus_I;
        q[i]["|O - I|"] = d.sup_O_minus_I;
        for (const auto& [k, c] : r.carleson) q[i]["CMsup " + k] = c.norm();
    }
    for (const auto& [k, x] : q[0]) {
        const double r1 = q[1][k] / x, r2 = q[2][k] / q[1][k];
        const bool ok = std::isfinite(r1) && std::isfinite(r2) && r1 >= 1.4 && r1 <= 2.6 && r2 >= 1.4 && r2 <= 2.6;
        // with n = 2, J0 = a I, hence A0 = det(J0) J0^{-T} J0^{-1} = I at every node and every eps
        const char* note = k == "|A0 - I|" ? " [A0 = I identically in two dimensions; no eps dependence]" : "";
        v.check(ok, fmt("%s: %.3g, %.3g, %.3g (ratios %.3f, %.3f)%s", k.c_str(), x, q[1][k], q[2][k], r1, r2, note));
    }
}

void identity_translation(Verdict& v) {
    for (const auto& g : {family("cone", 1.0), family("sine", 0.3, 2.0)}) {
        auto ex = experiment(g, map_of("identity", 0), 128);
        run_perturbation(ex, 0, false);
        const auto& cf = *ex.runs[0].cov;
        double rho = 0, J = 0;
        for (std::size_t k = 0; k < cf.grid().size(); ++k)
            if (cf.J.ok(k)) {
                rho = std::max(rho, (cf.rho.values[k] - cf.grid().node(k)).norm());
                J = std::max(J, max_abs(cf.J.values[k] - Mat2::Identity()));
            }
        v.check(rho <= 1e-8, fmt("%s identity: |rho - X| = %.2e", g.family.c_str(), rho));
        v.check(J <= 1e-8, fmt("%s identity: |J - I| = %.2e", g.family.c_str(), J));
        for (const auto& [k, c] : ex.runs[0].carleson)
            v.check(c.norm() <= 1e-8, fmt("%s identity: CMsup norm of %s = %.2e", g.family.c_str(), k.c_str(), c.norm()));
    }
    MapSpec tr = map_of("translation", 0);
    tr.shift = Row2(0.3, -0.2);
    auto ex = experiment(family("cone", 1.0), tr, 128);
    run_perturbation(ex, 0, false);
    const auto& cf = *ex.runs[0].cov;
    double shift = 0, J = 0;
    for (std::size_t k = 0; k < cf.grid().size(); ++k)
        if (cf.J.ok(k)) {
            shift = std::max(shift, (cf.rho.values[k] - cf.grid().node(k) - tr.shift).norm());
            J = std::max(J, max_abs(cf.J.values[k] - Mat2::Identity()));
        }
    v.check(shift <= 1e-12, fmt("translation: |rho - X - c| = %.2e", shift));
    v.check(J <= 1e-8, fmt("translation: |J - I| = %.2e", J));
}

double abs_beta_oracle() {
    // mean L1 deviation of |z| from its best affine fit on [-1, 1]; by symmetry the fit is a constant
    double best = 1e9;
    for (int i = 0; i <= 4000; ++i) {
        const double c = 1.0 * i / 4000;
        double s = 0;
        const int n = 20000;
        for (int k = 0; k < n; ++k) {
            const double z = -1 + (k + 0.5) * 2.0 / n;
            s += std::abs(std::abs(z) - c) * 2.0 / n;
        }
        best = std::min(best, s / 2);
    }
    return best;
}

void dorronsoro(Verdict& v) {
    const auto flat = build_domain(GraphSpec{}, 2, 2.0, 128);
    MapSpec lin = map_of("linear", 0.1);
    lin.E << 0.3, -0.4, 0.7, 0.2;
    const auto h_aff = boundary_displacement(flat, make_map(lin));
    double worst = 0;
    for (double y : {-1.0, 0.0, 0.37})
        for (double t : {0.1, 1.0}) worst = std::max(worst, beta_lad(h_aff, y, t).beta);
    v.check(worst <= 1e-10, fmt("affine displacement: max beta = %.2e", worst));
    const auto cone = build_domain(family("cone", 1.0), 2, 2.0, 128);
    const double oracle = abs_beta_oracle();
    v.check(std::abs(oracle - 0.25) <= 1e-3, fmt("independent |z| oracle %.6f", oracle));
    std::vector<double> C;
    for (double eps : {0.01, 0.02, 0.04}) {
        const auto h = boundary_displacement(cone, make_map(map_of("shear", eps)));
        const double b = beta_lad(h, 0.0, 1.0).beta;
        v.check(std::abs(b / (eps * oracle) - 1) <= 0.02, fmt("eps=%.2f: beta(0,1) = %.6g vs eps/4 = %.6g", eps, b, eps / 4));
        const auto tab = dorronsoro_beta(h, BetaMesh{1.0, 1.0 / 64, 1.0});
        C.push_back(tab.carleson_norm / (eps * eps));
        v.check(tab.flagged == 0 && std::isfinite(C.back()),
                fmt("eps=%.2f: beta^2 Carleson norm %.4g = %.4f eps^2", eps, tab.carleson_norm, C.back()));
    }
    for (std::size_t i = 1; i < C.size(); ++i)
        v.check(within(C[i] / C[0], 0.5), fmt("Carleson constant stability %.4f / %.4f", C[i], C[0]));
}

void diffeomorphism(Verdict& v) {
    auto ex = experiment(family("cone", 1.0), map_of("shear", 0.05), 256);
    try {
        run_perturbation(ex, 0.05, false);
    } catch (const InvariantViolation& e) {
        v.check(false, e.what());
        return;
    }
    const auto& b = ex.runs[0].boundary;
    v.check(b.sup_grad_rho_minus_I <= 0.5, fmt("sup |grad rho - I| = %.4f", b.sup_grad_rho_minus_I));
    v.check(b.newton_targets == 100 && b.newton_success >= 98,
            fmt("Newton round trips %zu / %zu at 1e-6", b.newton_success, b.newton_targets));
    v.check(b.samples > 100 && b.C_boundary <= 2,
            fmt("collar images within %.3f (h + eps t) of the perturbed boundary over %zu samples (C = 2)", b.C_boundary,
                b.samples));
}

void carleson_oracle(Verdict& v) {
    const int n = 512;
    const auto d = build_domain(GraphSpec{}, 2, 2.0, n);
    const Grid g = make_grid(d, n);
    auto field_of = [&](const std::function<double(const Row2&)>& f) {
        Field<double> out(g, 0.0);
        for (std::size_t k = 0; k < g.size(); ++k)
            if (g.node(k)(1) > 0) out.set(k, f(g.node(k)));
        return out;
    };
    const auto w = whitney_decomposition(d, 0.0, 1.0, g.h);
    const WhitneyBox* W = nullptr;
    for (const auto& b : w.boxes)
        if (b.generation == 0 && std::abs(b.center(0)) < 0.2) W = &b;
    if (!W) {
        v.check(false, "no generation-0 Whitney box near the origin");
        return;
    }
    const auto ind = field_of([&](const Row2& X) { return (X - W->center).cwiseAbs().maxCoeff() < W->half_width ? 1.0 : 0.0; });
    // |W| sup|f|^2 / delta for the one box the indicator touches, over r = 1
    const double direct = 4 * W->half_width * W->half_width / W->delta_at_center;
    const auto rep = cmsup_norm(ind, d, {{0.0, 1.0}});
    v.check(within(rep.norm_estimate / direct, 0.10),
            fmt("single Whitney box indicator: %.6f vs direct %.6f", rep.norm_estimate, direct));
    const auto f = field_of([](const Row2& X) { return std::sin(3 * X(0)) / (1 + X(1)); });
    const auto f3 = field_of([](const Row2& X) { return 3 * std::sin(3 * X(0)) / (1 + X(1)); });
    const auto fam = default_box_family(d, 3, 2);
    const auto a = cmsup_norm(f, d, fam), b = cmsup_norm(f3, d, fam);
    v.check(std::abs(b.norm_estimate / a.norm_estimate - 9) <= 1e-10,
            fmt("f -> 3f scales the estimate by %.12f (c^2 = 9)", b.norm_estimate / a.norm_estimate));
    const auto big = cmsup_norm(f, d, default_box_family(d, 5, 4));
    v.check(big.norm_estimate >= a.norm_estimate,
            fmt("family enlargement: %.6f >= %.6f", big.norm_estimate, a.norm_estimate));
}

void rh_machinery(Verdict& v) {
    {
        const auto st = stage(family("flat"), 256);
        const auto rh = rh_stage(st.green(), {1.5, 2.0, 4.0});
        for (const auto& r : rh.reports)
            v.check(std::abs(r.C_p - 1) <= 1e-3, fmt("flat p=%.1f: C_p = %.8f", r.p, r.C_p));
    }
    double comp[2];
    for (int i = 0; i < 2; ++i) {
        const auto st = stage(family("cone", 1.0), 128 << i);
        const auto ks = kappa_density(st.green());
        if (i == 1) {
            const auto r = rh_constant(ks, 2.0, *st.domain, {{0.0, 0.5}});
            const double ratio = r.per_ball.empty() ? NAN : r.per_ball[0].ratio;
            v.check(within(ratio / (2 / std::sqrt(3.0)), 0.03), fmt("cone tip RH_2 ratio %.6f vs 2/sqrt(3) = %.6f", ratio, 2 / std::sqrt(3.0)));
        }
        comp[i] = green_measure_comparability(st.green(), ks).C;
    }
    v.check(comp[0] > 0 && within(comp[1] / comp[0], 0.3),
            fmt("cone G/omega comparability constant %.4f -> %.4f under refinement", comp[0], comp[1]));
    const auto hm = harmonic_measure_ball(make_graph(GraphSpec{}), Row2(0, 1), 0.0, 1.0);
    v.check(std::abs(hm.value - 0.5) <= 1e-2, fmt("half-plane omega^(0,1)(Delta(0,1)) = %.5f", hm.value));
}

void headline(Verdict& v) {
    Experiment ex;
    ex.scenario.name = "cone_shear";
    ex.scenario.domain = family("cone", 1.0);
    ex.scenario.map = map_of("shear", 0);
    ex.scenario.eps_sweep = {0.05};
    ex.scenario.grid_n = 256;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        stability_experiment(ex);
    } catch (const Error& e) {
        v.check(false, std::string("pipeline: ") + e.what());
        return;
    }
    const double secs = seconds_since(t0);
    for (const auto& r : comparison_table(ex))
        v.check(std::isfinite(r[3]) && r[4] <= 0.25,
                fmt("p=%.1f: C_p(perturbed) = %.5f, C_p(base) = %.5f, change %.2f%%", r[1], r[3], r[2], 100 * r[4]));
    v.check(comparison_table(ex).size() == 3, "three exponents compared");
    v.check(secs <= 300, fmt("full pipeline at grid_n 256 in %.1f s (limit 300 s)", secs));
}

void convex_bound(Verdict& v) {
    for (const auto& s : {family("flat"), family("tilted", 0.5), family("cone", 1.0)}) {
        double r[2];
        for (int i = 0; i < 2; ++i) r[i] = convex_gradient_bound(stage(s, 128 << i).green()).ratio;
        const double q = std::max(r[0] / r[1], r[1] / r[0]);
        v.check(std::isfinite(q) && q <= 1.2, fmt("%s: ratio %.5f -> %.5f (refinement ratio %.4f)", s.family.c_str(), r[0], r[1], q));
    }
    bool rejected = false;
    try {
        convex_gradient_bound(stage(family("sine", 0.3, 2.0), 128).green());
    } catch (const InputError&) {
        rejected = true;
    }
    v.check(rejected, "sine domain rejected as non-convex");
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<void(Verdict&)>>> criteria{
        {"green-exactness", green_exactness},
        {"positivity-h1-h2", positivity_h1h2},
        {"green-carleson-finiteness", green_carleson},
        {"frame-algebra", frame_algebra},
        {"eps-scaling", eps_scaling},
        {"identity-translation", identity_translation},
        {"dorronsoro", dorronsoro},
        {"diffeomorphism", diffeomorphism},
        {"carleson-oracle", carleson_oracle},
        {"rh-machinery", rh_machinery},
        {"headline-stability", headline},
        {"convex-gradient-bound", convex_bound}};
    const int id = argc > 1 ? std::atoi(argv[1]) : 0;
    if (id < 1 || id > static_cast<int>(criteria.size())) {
        std::fprintf(stderr, "usage: acceptance <1..%zu>\n", criteria.size());
        return 2;
    }
    const auto& [name, run] = criteria[id - 1];
    Verdict v;
    try {
        run(v);
    } catch (const std::exception& e) {
        v.check(false, std::string("exception: ") + e.what());
    }
    std::printf("acceptance %d %s: %s\n", id, name, v.passed() ? "PASS" : "FAIL");
    return v.passed() ? 0 : 1;
}
