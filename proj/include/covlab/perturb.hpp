#pragma once

#include "covlab/core.hpp"
#include "covlab/frame.hpp"
#include "covlab/geometry.hpp"
#include "covlab/quadrature.hpp"

#include <memory>
#include <random>
#include <vector>

namespace covlab {

/// eta(u) = c exp(-1/(1 - u^2)) on |u| < 1, normalized to unit mass on the line.
class Mollifier {
public:
    Mollifier() {
        double s = 0;
        for (const auto& q : composite_rule({-1.0, 1.0}, 128)) s += q.w * bump(q.u);
        c_ = 1.0 / s;
    }
    double normalization() const { return c_; }
    double eta(double u) const { return c_ * bump(u); }
    double deta(double u) const {
        if (std::abs(u) >= 1) return 0;
        const double d = 1 - u * u;
        return eta(u) * (-2 * u / (d * d));
    }
    /// eta_t(x) = eta(x / t) / t in one dimension.
    double eta_t(double x, double t) const { return eta(x / t) / t; }
    /// Mass of eta_t over its support with the given number of panels.
    double mass(double t, int panels = 64) const {
        double s = 0;
        for (const auto& q : composite_rule({-t, t}, panels)) s += q.w * eta_t(q.u, t);
        return s;
    }

private:
    static double bump(double u) {
        if (std::abs(u) >= 1) return 0;
        return std::exp(-1 / (1 - u * u));
    }
    double c_ = 1;
};

/// h(z) = Phi(z, g(z)) - (z, g(z)).
struct Displacement {
    std::shared_ptr<const Graph> graph;
    std::shared_ptr<const BiLipMap> map;
    double lip_h = 0;

    Row2 operator()(double z) const {
        const Row2 P(z, graph->g(z));
        return map->phi(P) - P;
    }
    const std::vector<double>& kinks() const { return graph->kinks; }
};

inline Displacement boundary_displacement(const GraphDomain& d, const BiLipMap& m) {
    Displacement h;
    h.graph = std::make_shared<const Graph>(d.graph);
    h.map = std::make_shared<const BiLipMap>(m);
    const auto& S = d.boundary_samples;
    Row2 prev = h(S.front().x);
    for (std::size_t k = 1; k < S.size(); ++k) {
        const Row2 cur = h(S[k].x);
        h.lip_h = std::max(h.lip_h, (cur - prev).norm() / (S[k].x - S[k - 1].x));
        prev = cur;
    }
    return h;
}

/// Moments of h against the mollifier at (y, t), in the variable u with z = y - t u:
///   m0 = int h eta,  m1 = int (h - a) eta',  m2 = int (h - a)(eta + u eta'),
/// with a the average of h over [y - t, y + t]. Then lambda = m0,
/// int h grad_y eta_t = m1 / t and int h d_t eta_t = -m2 / t.
struct Moments {
    Row2 m0 = Row2::Zero(), m1 = Row2::Zero(), m2 = Row2::Zero(), avg = Row2::Zero();
    Row2 m1_raw = Row2::Zero();  // m1 without the mean subtraction
    int panels = 0;
};

inline std::vector<double> kink_breaks(const std::vector<double>& kinks, double y, double t, double sign) {
    std::vector<double> b = {-1.0, 1.0};
    for (double z : kinks) {
        const double u = sign * (z - y) / t;
        if (u > -1 + 1e-14 && u < 1 - 1e-14) b.push_back(u);
    }
    std::sort(b.begin(), b.end());
    return b;
}

/// fixed_panels > 0 disables the refinement loop (used for smooth differencing in (y, t)).
inline Moments mollifier_moments(const Displacement& h, const Mollifier& eta, double y, double t,
                                 double tol = 1e-8, int fixed_panels = 0) {
    const auto breaks = kink_breaks(h.kinks(), y, t, -1.0);
    Moments prev;
    std::vector<Row2> hz;
    for (int panels = fixed_panels > 0 ? fixed_panels : 2; panels <= 512; panels *= 2) {
        const auto rule = composite_rule(breaks, panels);
        hz.resize(rule.size());
        Moments m;
        m.panels = panels;
        double hmax = 0, mass = 0;
        for (std::size_t q = 0; q < rule.size(); ++q) {
            hz[q] = h(y - t * rule[q].u);
            m.avg += 0.5 * rule[q].w * hz[q];
            hmax = std::max(hmax, hz[q].cwiseAbs().maxCoeff());
        }
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double u = rule[q].u, w = rule[q].w;
            const double e = eta.eta(u), de = eta.deta(u);
            const Row2 c = hz[q] - m.avg;
            m.m0 += w * e * hz[q];
            m.m1 += w * de * c;
            m.m1_raw += w * de * hz[q];
            m.m2 += w * (e + u * de) * c;
            mass += w * e;
        }
        m.m0 /= mass;  // discrete unit mass, so constants are reproduced to roundoff
        if (fixed_panels > 0) return m;
        if (panels > 2) {
            const double diff = std::max({(m.m0 - prev.m0).cwiseAbs().maxCoeff(),
                                          (m.m1 - prev.m1).cwiseAbs().maxCoeff(),
                                          (m.m2 - prev.m2).cwiseAbs().maxCoeff()});
            if (diff <= tol * hmax || hmax == 0) return m;
        }
        prev = m;
    }
    throw InvariantViolation("quadrature", "mollifier moments did not converge");
}

/// Pointwise lambda, its derivative kernels and B.
struct LocalPerturbation {
    Row2 lambda = Row2::Zero();
    Row2 ky = Row2::Zero();  // int (h - a) grad_y eta_t = m1 / t
    Row2 kt = Row2::Zero();  // int (h - a) d_t eta_t = -m2 / t
    Mat2 B = Mat2::Zero();   // (I_{2x1} - v_n^T pi(v_n)) ky
    Row2 ky_raw = Row2::Zero();
};

inline LocalPerturbation local_perturbation(const Displacement& h, const Mollifier& eta, const LocalFrame& f) {
    const Moments m = mollifier_moments(h, eta, f.y, f.t);
    LocalPerturbation p;
    p.lambda = m.m0;
    p.ky = m.m1 / f.t;
    p.kt = -m.m2 / f.t;
    p.ky_raw = m.m1_raw / f.t;
    p.B = (Col2(1, 0) - f.vn.transpose() * f.vn(0)) * p.ky;
    return p;
}

// ---------------------------------------------------------------------------
// Dorronsoro beta numbers

struct BetaCell {
    double y, t, beta;
    bool flagged;
    int level;
    int k;  // y = k t
};

struct BetaFit {
    double beta = 0;
    Row2 a = Row2::Zero(), b = Row2::Zero();  // h ~ a + s b with z = y + t s
    int iterations = 0;
    bool converged = true;
};

/// beta(y, t) = (1/t) inf_{a, B} avg_{B(y,t)} |h(z) - a - z B| by iteratively reweighted least squares.
inline BetaFit beta_lad(const Displacement& h, double y, double t, int panels = 16) {
    const auto rule = composite_rule(kink_breaks(h.kinks(), y, t, 1.0), panels);
    const std::size_t n = rule.size();
    std::vector<Row2> hz(n);
    double scale = 0;
    for (std::size_t q = 0; q < n; ++q) {
        hz[q] = h(y + t * rule[q].u);
        scale = std::max(scale, hz[q].cwiseAbs().maxCoeff());
    }
    BetaFit fit;
    if (scale == 0) return fit;
    std::vector<double> wt(n);
    for (std::size_t q = 0; q < n; ++q) wt[q] = rule[q].w;
    auto solve = [&](BetaFit& f) {
        double s0 = 0, s1 = 0, s2 = 0;
        Row2 r0 = Row2::Zero(), r1 = Row2::Zero();
        for (std::size_t q = 0; q < n; ++q) {
            const double s = rule[q].u;
            s0 += wt[q];
            s1 += wt[q] * s;
            s2 += wt[q] * s * s;
            r0 += wt[q] * hz[q];
            r1 += wt[q] * s * hz[q];
        }
        const double det = s0 * s2 - s1 * s1;
        f.a = (s2 * r0 - s1 * r1) / det;
        f.b = (s0 * r1 - s1 * r0) / det;
    };
    auto objective = [&](const BetaFit& f) {
        double F = 0;
        for (std::size_t q = 0; q < n; ++q) F += rule[q].w * (hz[q] - f.a - rule[q].u * f.b).norm();
        return 0.5 * F;
    };
    solve(fit);  // L2 warm start
    double best = objective(fit);
    BetaFit best_fit = fit;
    double nu = 1e-3 * scale;
    for (int it = 0; it < 200; ++it) {
        for (std::size_t q = 0; q < n; ++q)
            wt[q] = rule[q].w / std::max((hz[q] - fit.a - rule[q].u * fit.b).norm(), nu);
        solve(fit);
        const double F = objective(fit);
        fit.iterations = it + 1;
        if (!std::isfinite(F)) {
            best_fit.converged = false;
            break;
        }
        const double prev = best;
        if (F < best) {
            best = F;
            best_fit = fit;
        }
        if (std::abs(prev - F) <= 1e-13 * scale && nu <= 1e-12 * scale) break;
        nu = std::max(nu * 0.3, 1e-13 * scale);
    }
    best_fit.beta = best / t;
    return best_fit;
}

struct BetaTable {
    std::vector<BetaCell> cells;
    std::size_t flagged = 0;
    double carleson_norm = 0;  // sup over boxes of r^{-1} sum beta^2 dy dt/t
    double lip_h = 0;
    double ratio_to_lip2 = 0;  // carleson_norm / lip_h^2
    Row2 maximizer = Row2::Zero();  // (x, r)
    // beta(y', t') / beta(y, 2t') over nested pairs B(y', t') in B(y, 2t')
    double max_inclusion_ratio = 0;
    std::size_t inclusion_pairs = 0;
};

struct BetaMesh {
    double t_top = 1.0;
    double t_min = 0.01;
    double y_half_range = 1.0;
};

inline BetaTable dorronsoro_beta(const Displacement& h, const BetaMesh& mesh) {
    BetaTable tab;
    tab.lip_h = h.lip_h;
    std::vector<std::size_t> level_start;
    int level = 0;
    for (double t = mesh.t_top; t >= mesh.t_min * (1 - 1e-12); t *= 0.5, ++level) {
        level_start.push_back(tab.cells.size());
        const int kmax = static_cast<int>(std::floor(mesh.y_half_range / t + 1e-9));
        for (int k = -kmax; k <= kmax; ++k) tab.cells.push_back({k * t, t, 0.0, false, level, k});
    }
    parallel_for(tab.cells.size(), [&](std::size_t c) {
        auto& cell = tab.cells[c];
        const auto fit = beta_lad(h, cell.y, cell.t);
        cell.beta = fit.beta;
        cell.flagged = !fit.converged;
    });
    for (const auto& c : tab.cells) tab.flagged += c.flagged;
    const double tiny = 1e-9 * std::max(h.lip_h, 1e-300);
    for (const auto& c : tab.cells) {
        if (c.level == 0 || c.flagged || c.beta <= tiny) continue;
        // parent centre on the coarser lattice nearest to y
        const int kp = static_cast<int>(std::lround(0.5 * c.k));
        const std::size_t s0 = level_start[c.level - 1], s1 = level_start[c.level];
        const int kmax = tab.cells[s1 - 1].k;
        if (std::abs(kp) > kmax) continue;
        const auto& p = tab.cells[s0 + (kp + kmax)];
        if (p.flagged) continue;
        ++tab.inclusion_pairs;
        tab.max_inclusion_ratio =
            std::max(tab.max_inclusion_ratio, p.beta > 0 ? c.beta / p.beta : std::numeric_limits<double>::infinity());
    }
    // dyadic Carleson boxes: centers on a t_top/4 lattice, radii t_top, t_top/2, t_top/4
    for (double r = mesh.t_top; r >= mesh.t_top / 4 * (1 - 1e-12); r *= 0.5)
        for (double x = -mesh.y_half_range + r; x <= mesh.y_half_range - r + 1e-12; x += mesh.t_top / 4) {
            double s = 0;
            for (const auto& c : tab.cells)
                if (!c.flagged && c.t <= r * (1 + 1e-12) && std::abs(c.y - x) < r)
                    s += c.beta * c.beta * c.t * std::log(2.0);
            if (s / r > tab.carleson_norm) {
                tab.carleson_norm = s / r;
                tab.maximizer = Row2(x, r);
            }
        }
    tab.ratio_to_lip2 = tab.lip_h > 0 ? tab.carleson_norm / (tab.lip_h * tab.lip_h) : 0;
    return tab;
}

// ---------------------------------------------------------------------------

struct PerturbationData {
    Displacement h;
    Mollifier eta;
    Field<Row2> lambda;
    Field<Row2> ky, kt;
    Field<Mat2> grad_lambda;     // admissible nodes
    Field<Mat2> B, C;            // B on frame nodes, C on admissible nodes
    double lambda_fd_residual = 0;   // analytic vs nodal differences of lambda, absolute
    double kernel_residual = 0;      // m1/t, -m2/t vs (y, t)-differences of lambda, absolute
    double partition_residual = 0;   // max |B + C - grad lambda|
    double mean_subtraction_residual = 0;
    double vnB_residual = 0;         // max |v_n B|
    double anchor_constant = 0;      // max |lambda - h(pi X)| / (t eps) on the collar sample
    BetaTable beta;
};

inline PerturbationData make_perturbation(const GraphDomain& d, const BiLipMap& m) {
    PerturbationData pd;
    pd.h = boundary_displacement(d, m);
    return pd;
}

/// lambda on frame nodes, grad lambda on admissible nodes.
inline void smooth_lambda(PerturbationData& pd, const FrameField& ff) {
    const GreenData& gd = *ff.green;
    const Grid& g = gd.grid;
    pd.lambda = Field<Row2>(g, Row2::Zero());
    pd.ky = Field<Row2>(g, Row2::Zero());
    pd.kt = Field<Row2>(g, Row2::Zero());
    pd.B = Field<Mat2>(g, Mat2::Zero());
    std::vector<double> raw_diff(g.size(), 0.0);
    parallel_for(g.size(), [&](std::size_t k) {
        if (!ff.V.ok(k)) return;
        const LocalFrame f = local_frame(gd.G.values[k], gd.gradG.values[k], g.node(k));
        const LocalPerturbation p = local_perturbation(pd.h, pd.eta, f);
        pd.lambda.set(k, p.lambda);
        pd.ky.set(k, p.ky);
        pd.kt.set(k, p.kt);
        pd.B.set(k, p.B);
        const Mat2 Braw = (Col2(1, 0) - f.vn.transpose() * f.vn(0)) * p.ky_raw;
        raw_diff[k] = (Braw - p.B).cwiseAbs().maxCoeff();
    });
    pd.grad_lambda = Field<Mat2>(g, Mat2::Zero());
    Field<Mat2> fd(g, Mat2::Zero());
    parallel_for(g.size(), [&](std::size_t k) {
        if (!ff.grad_t.ok(k)) return;
        const Mat2 G = ff.grad_t.values[k] * pd.kt.values[k] + ff.grad_y.values[k] * pd.ky.values[k];
        pd.grad_lambda.set(k, G);
        if (const auto d = detail::central_gradient(pd.lambda, k)) {
            Mat2 D;
            D.row(0) = d->first;
            D.row(1) = d->second;
            fd.set(k, D);
        }
    });
    const double eps = std::max(pd.h.map->eps_bound, 1e-300);
    // mean subtraction invariance at five reproducible random nodes
    std::vector<std::size_t> nodes;
    for (std::size_t k = 0; k < g.size(); ++k)
        if (pd.grad_lambda.ok(k)) nodes.push_back(k);
    std::mt19937_64 rng(12345);
    for (int s = 0; s < 5 && !nodes.empty(); ++s) {
        const std::size_t k = nodes[rng() % nodes.size()];
        pd.mean_subtraction_residual = std::max(pd.mean_subtraction_residual, raw_diff[k]);
    }
    double anchor = 0, fdres = 0;
    for (std::size_t k : nodes) {
        if (fd.ok(k))
            fdres = std::max(fdres, (fd.values[k] - pd.grad_lambda.values[k]).cwiseAbs().maxCoeff());
        if (gd.delta.values[k] < 8 * gd.h && pd.h.map->eps_bound > 0) {
            const double x = g.node(k)(0);
            anchor = std::max(anchor, (pd.lambda.values[k] - pd.h(x)).norm() / (ff.t.values[k] * eps));
        }
    }
    pd.anchor_constant = anchor;
    pd.lambda_fd_residual = fdres;

    // the derivative kernels against 4th-order differences of lambda(y, t) on a node subsample
    std::vector<double> kres(nodes.size(), 0.0);
    const std::size_t stride = std::max<std::size_t>(1, nodes.size() / 400);
    parallel_for(nodes.size(), [&](std::size_t a) {
        if (a % stride) return;
        const std::size_t k = nodes[a];
        const double y = ff.y.values[k], t = ff.t.values[k], s = 1e-3 * t;
        auto lam = [&](double yy, double tt) -> Row2 { return mollifier_moments(pd.h, pd.eta, yy, tt, 0, 32).m0; };
        auto d4 = [&](auto f) -> Row2 { return (f(-2) - 8 * f(-1) + 8 * f(1) - f(2)) / (12 * s); };
        const Row2 dy = d4([&](int i) { return lam(y + i * s, t); });
        const Row2 dt = d4([&](int i) { return lam(y, t + i * s); });
        const Moments m = mollifier_moments(pd.h, pd.eta, y, t, 0, 32);
        kres[a] = std::max((dy - m.m1 / t).cwiseAbs().maxCoeff(), (dt + m.m2 / t).cwiseAbs().maxCoeff());
    });
    pd.kernel_residual = nodes.empty() ? 0 : *std::max_element(kres.begin(), kres.end());
}

/// B on frame nodes (mean subtracted), C = J1 + J2 on admissible nodes.
inline void decompose_B_C(PerturbationData& pd, const FrameField& ff) {
    const Grid& g = ff.grid();
    pd.C = Field<Mat2>(g, Mat2::Zero());
    double part = 0, vnb = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!pd.grad_lambda.ok(k)) continue;
        const Row2 vn = ff.V.values[k].row(1);
        const Mat2 J1 = ff.grad_t.values[k] * pd.kt.values[k];
        const Mat2 J2 = (ff.grad_y.values[k] - Col2(1, 0) + vn.transpose() * vn(0)) * pd.ky.values[k];
        pd.C.set(k, J1 + J2);
        part = std::max(part, (pd.B.values[k] + J1 + J2 - pd.grad_lambda.values[k]).cwiseAbs().maxCoeff());
        vnb = std::max(vnb, (vn * pd.B.values[k]).cwiseAbs().maxCoeff());
    }
    pd.partition_residual = part;
    pd.vnB_residual = vnb;
    if (part > 1e-6) throw InvariantViolation("B/C partition inconsistent", "residual " + std::to_string(part));
}

// Carleson-candidate magnitudes

inline Field<double> dvn_lambda(const PerturbationData& pd, const FrameField& ff) {
    Field<double> f(ff.grid(), 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k)
        if (pd.grad_lambda.ok(k)) f.set(k, (ff.V.values[k].row(1) * pd.grad_lambda.values[k]).norm());
    return f;
}

inline Field<double> C_magnitude(const PerturbationData& pd) {
    Field<double> f(pd.C.grid, 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k)
        if (pd.C.ok(k)) f.set(k, op_norm(pd.C.values[k]));
    return f;
}

/// t |grad B| with grad B differenced from the sampled B field (Frobenius norm of the 3-tensor).
inline Field<double> t_grad_B(const PerturbationData& pd, const FrameField& ff) {
    Field<double> f(ff.grid(), 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k) {
        if (!ff.admissible(k)) continue;
        if (const auto d = detail::central_gradient(pd.B, k))
            f.set(k, ff.t.values[k] * std::sqrt(d->first.squaredNorm() + d->second.squaredNorm()));
    }
    return f;
}

}  // namespace covlab
