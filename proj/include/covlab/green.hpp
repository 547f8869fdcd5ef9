#pragma once

#include "covlab/core.hpp"
#include "covlab/geometry.hpp"
#include "covlab/grid.hpp"

#include <Eigen/Sparse>
#include <Eigen/UmfPackSupport>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace covlab {

enum class NodeKind : std::uint8_t { outside = 0, boundary = 1, wall = 2, interior = 3 };

inline bool is_inside(NodeKind k) { return k != NodeKind::outside; }

struct DirichletSolution {
    Grid grid;
    Field<double> u;  // valid on non-outside nodes and on filled ghost nodes
    std::vector<NodeKind> kind;
    std::size_t unknowns = 0;
    double residual = 0;      // relative residual of the linear solve
    double harmonic_residual = 0;  // max |5-point Laplacian| h^2 on regular interior nodes
};

/// Grid over the domain box with spacing 2R/grid_n.
inline Grid make_grid(const GraphDomain& d, int grid_n) {
    Grid g;
    g.h = 2 * d.R / grid_n;
    g.x0 = -d.R;
    g.nx = grid_n;
    g.t0 = d.box.t_min;
    g.ny = static_cast<int>(std::ceil((d.box.t_max - d.box.t_min) / g.h - 1e-9));
    return g;
}

namespace detail {

/// x in (a, b) with g(x) = t, given g(a) < t <= g(b) or the reverse.
inline double crossing(const Graph& G, double a, double b, double t) {
    double fa = G.g(a) - t;
    for (int it = 0; it < 64; ++it) {
        const double m = 0.5 * (a + b);
        const double fm = G.g(m) - t;
        if ((fm < 0) == (fa < 0)) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    return 0.5 * (a + b);
}

}  // namespace detail

/// Shortley–Weller 5-point discretization of the Laplace equation above the graph with data
/// `graph_data` on the graph and `wall_data` on the side and top walls of the grid.
inline DirichletSolution solve_dirichlet(const Graph& G, const Grid& grid,
                                         const std::function<double(double)>& graph_data,
                                         const std::function<double(const Row2&)>& wall_data,
                                         int ghost_layers = 6) {
    constexpr double theta_min = 1e-6;
    DirichletSolution sol;
    sol.grid = grid;
    sol.u = Field<double>(grid, 0.0);
    sol.kind.assign(grid.size(), NodeKind::outside);
    const double h = grid.h;
    std::vector<double> gcol(grid.cols());
    for (int i = 0; i <= grid.nx; ++i) gcol[i] = G.g(grid.x(i));
    std::vector<long> unknown(grid.size(), -1);
    long n_unknown = 0;
    for (int j = 0; j <= grid.ny; ++j)
        for (int i = 0; i <= grid.nx; ++i) {
            const std::size_t k = grid.index(i, j);
            const double d = grid.t(j) - gcol[i];
            if (d > theta_min * h) {
                const bool wall = (i == 0 || i == grid.nx || j == grid.ny || j == 0);
                sol.kind[k] = wall ? NodeKind::wall : NodeKind::interior;
                if (wall) sol.u.set(k, wall_data(grid.node(i, j)));
                else unknown[k] = n_unknown++;
            } else if (d >= -theta_min * h) {
                sol.kind[k] = NodeKind::boundary;
                sol.u.set(k, graph_data(grid.x(i)));
            }
        }
    sol.unknowns = static_cast<std::size_t>(n_unknown);
    if (n_unknown == 0) throw InputError("no interior unknowns on the grid");

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(5 * n_unknown);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_unknown);
    std::vector<std::uint8_t> regular(grid.size(), 0);
    for (int j = 1; j < grid.ny; ++j)
        for (int i = 1; i < grid.nx; ++i) {
            const std::size_t k = grid.index(i, j);
            if (unknown[k] < 0) continue;
            const long row = unknown[k];
            const double t = grid.t(j), x = grid.x(i);
            struct Arm {
                double len;
                long col;
                double value;
            };
            auto arm = [&](int di, int dj) -> Arm {
                const std::size_t q = grid.index(i + di, j + dj);
                if (sol.kind[q] != NodeKind::outside) {
                    if (unknown[q] >= 0) return {h, unknown[q], 0.0};
                    return {h, -1, sol.u.values[q]};
                }
                if (di == 0) {  // downward crossing
                    return {t - gcol[i], -1, graph_data(x)};
                }
                const double xc = detail::crossing(G, x, grid.x(i + di), t);
                return {std::abs(xc - x), -1, graph_data(xc)};
            };
            const Arm L = arm(-1, 0), Rr = arm(1, 0), D = arm(0, -1), U = arm(0, 1);
            const double cl = 2 / (L.len * (L.len + Rr.len)), cr = 2 / (Rr.len * (L.len + Rr.len));
            const double cd = 2 / (D.len * (D.len + U.len)), cu = 2 / (U.len * (D.len + U.len));
            const double s = 0.5 * h * h;
            trip.emplace_back(row, row, s * (cl + cr + cd + cu));
            for (auto [a, c] : {std::pair<const Arm*, double>{&L, cl}, {&Rr, cr}, {&D, cd}, {&U, cu}}) {
                if (a->col >= 0) trip.emplace_back(row, a->col, -s * c);
                else rhs(row) += s * c * a->value;
            }
            regular[k] = (L.len == h && Rr.len == h && D.len == h && U.len == h);
        }
    Eigen::SparseMatrix<double> A(n_unknown, n_unknown);
    A.setFromTriplets(trip.begin(), trip.end());
    A.makeCompressed();
    Eigen::UmfPackLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw InvariantViolation("linear solve", "sparse LU factorization failed");
    Eigen::VectorXd x = lu.solve(rhs);
    const double bnorm = std::max(rhs.lpNorm<Eigen::Infinity>(), 1e-300);
    for (int refine = 0; refine < 3; ++refine) {
        const Eigen::VectorXd r = rhs - A * x;
        sol.residual = r.lpNorm<Eigen::Infinity>() / bnorm;
        if (sol.residual <= 1e-12) break;
        x += lu.solve(r);
    }
    sol.residual = (rhs - A * x).lpNorm<Eigen::Infinity>() / bnorm;
    if (!(sol.residual <= 1e-10))
        throw InvariantViolation("linear solve", "relative residual " + std::to_string(sol.residual));
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (unknown[k] >= 0) sol.u.set(k, x(unknown[k]));

    double umax = 0;
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (sol.u.ok(k)) umax = std::max(umax, std::abs(sol.u.values[k]));
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!regular[k]) continue;
        const int i = grid.col_of(k), j = grid.row_of(k);
        const double lap = sol.u(i - 1, j) + sol.u(i + 1, j) + sol.u(i, j - 1) + sol.u(i, j + 1) - 4 * sol.u(i, j);
        sol.harmonic_residual = std::max(sol.harmonic_residual, std::abs(lap) / std::max(umax, 1e-300));
    }

    // ghost values below the graph: quadratic extrapolation along each column
    for (int i = 0; i <= grid.nx; ++i) {
        int ja = -1;
        for (int j = 0; j <= grid.ny; ++j)
            if (sol.kind[grid.index(i, j)] != NodeKind::outside) {
                ja = j;
                break;
            }
        if (ja < 0 || ja + 2 > grid.ny) continue;
        const double tb = gcol[i], ub = graph_data(grid.x(i));
        int j1 = ja;
        if (grid.t(ja) - tb < 0.25 * h && ja + 2 <= grid.ny) j1 = ja + 1;
        const double t1 = grid.t(j1), t2 = grid.t(j1 + 1);
        const double u1 = sol.u(i, j1), u2 = sol.u(i, j1 + 1);
        for (int j = ja - 1; j >= std::max(0, ja - ghost_layers); --j) {
            const double t = grid.t(j);
            const double l0 = (t - t1) * (t - t2) / ((tb - t1) * (tb - t2));
            const double l1 = (t - tb) * (t - t2) / ((t1 - tb) * (t1 - t2));
            const double l2 = (t - tb) * (t - t1) / ((t2 - tb) * (t2 - t1));
            sol.u.set(grid.index(i, j), l0 * ub + l1 * u1 + l2 * u2);
        }
    }
    return sol;
}

// ---------------------------------------------------------------------------

struct RichardsonCheck {
    bool performed = false;
    double fine_discrepancy = 0;  // against spacing h/2
    double wide_discrepancy = 0;  // against a box with R' = 1.5 R
    bool warning = false;         // discrepancy above 5%
};

struct GreenData {
    std::shared_ptr<const GraphDomain> domain;
    Grid grid;
    Field<double> G;
    Field<double> delta;
    Field<Col2> gradG;
    Field<Mat2> hessG;
    std::vector<NodeKind> kind;
    std::vector<std::uint8_t> grad_collar;  // gradient computed from ghost-supported stencils
    Row2 Z0;
    double h = 0;
    int grid_n = 0;
    std::string farfield_model;
    double solve_residual = 0;
    double harmonic_residual = 0;
    double normalization_factor = 1;
    RichardsonCheck richardson;

    bool inside(std::size_t k) const { return is_inside(kind[k]); }
    bool grad_ok(std::size_t k) const {
        const int i = grid.col_of(k), j = grid.row_of(k);
        return inside(k) && delta.ok(k) && delta.values[k] >= 2 * h && grid.wall_margin(i, j) >= 2;
    }
    bool admissible(std::size_t k) const {
        const int i = grid.col_of(k), j = grid.row_of(k);
        return inside(k) && delta.ok(k) && delta.values[k] >= 4 * h && grid.wall_margin(i, j) >= 4;
    }
    std::vector<std::size_t> admissible_nodes() const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < grid.size(); ++k)
            if (admissible(k)) out.push_back(k);
        return out;
    }

    std::optional<double> value_at(const Row2& X) const { return interp(G, X); }
    std::optional<Col2> gradient_at(const Row2& X) const { return interp(gradG, X); }
    Mat2 hessian_at(const Row2& X) const {
        if (auto H = interp_bilinear(hessG, X)) return *H;
        throw InputError("inside Hessian collar");
    }
};

namespace detail {

inline Field<double> delta_field(const GraphDomain& d, const Grid& grid, const std::vector<NodeKind>& kind) {
    Field<double> delta(grid, 0.0);
    parallel_for(grid.size(), [&](std::size_t k) {
        if (kind[k] == NodeKind::outside) return;
        delta.values[k] = distance_to_graph(d, grid.node(k));
        delta.valid[k] = 1;
    });
    return delta;
}

inline DirichletSolution green_solve_raw(const GraphDomain& d, int grid_n, FarFieldModel* model_out = nullptr) {
    const FarFieldModel far(d.graph.far);
    if (model_out) *model_out = far;
    const Grid grid = make_grid(d, grid_n);
    return solve_dirichlet(
        d.graph, grid, [](double) { return 0.0; }, [&far](const Row2& X) { return far(X); });
}

inline double normalize(Field<double>& u, const Row2& Z0) {
    const auto v = interp_cubic(u, Z0);
    if (!v || !(*v > 0)) throw InvariantViolation("normalization", "G(Z0) is not positive");
    const double s = 1.0 / *v;
    for (auto& x : u.values) x *= s;
    return s;
}

}  // namespace detail

struct GreenOptions {
    bool richardson = true;
    double warn_threshold = 0.05;
    double error_threshold = 0.20;
};

/// Green function with pole at infinity, normalized so that G(Z0) = 1.
inline GreenData solve_green(std::shared_ptr<const GraphDomain> dom, int grid_n, const GreenOptions& opt = {}) {
    const GraphDomain& d = *dom;
    GreenData gd;
    gd.domain = dom;
    FarFieldModel far;
    DirichletSolution sol = detail::green_solve_raw(d, grid_n, &far);
    gd.grid = sol.grid;
    gd.h = sol.grid.h;
    gd.grid_n = grid_n;
    gd.kind = sol.kind;
    gd.G = std::move(sol.u);
    gd.solve_residual = sol.residual;
    gd.harmonic_residual = sol.harmonic_residual;
    gd.farfield_model = far.describe();
    gd.Z0 = d.z0();
    gd.normalization_factor = detail::normalize(gd.G, gd.Z0);
    gd.delta = detail::delta_field(d, gd.grid, gd.kind);

    if (opt.richardson) {
        auto compare = [&](const Field<double>& other) {
            const double xr = 0.5 * d.R, tmid = gd.grid.t0 + 0.5 * (gd.grid.ny * gd.h);
            double num = 0, den = 0;
            for (std::size_t k = 0; k < gd.grid.size(); ++k) {
                if (!gd.admissible(k)) continue;
                const Row2 X = gd.grid.node(k);
                if (std::abs(X(0)) > xr || X(1) > tmid) continue;
                const auto v = interp(other, X);
                if (!v) continue;
                num = std::max(num, std::abs(*v - gd.G.values[k]));
                den = std::max(den, std::abs(gd.G.values[k]));
            }
            return den > 0 ? num / den : 0.0;
        };
        {
            DirichletSolution fine = detail::green_solve_raw(d, 2 * grid_n);
            detail::normalize(fine.u, gd.Z0);
            gd.richardson.fine_discrepancy = compare(fine.u);
        }
        {
            const GraphDomain wide = build_domain_from_graph(d.graph, d.dim_n, 1.5 * d.R, grid_n * 3 / 2);
            DirichletSolution w = detail::green_solve_raw(wide, grid_n * 3 / 2);
            detail::normalize(w.u, gd.Z0);
            gd.richardson.wide_discrepancy = compare(w.u);
        }
        gd.richardson.performed = true;
        const double disc = std::max(gd.richardson.fine_discrepancy, gd.richardson.wide_discrepancy);
        gd.richardson.warning = disc > opt.warn_threshold;
        if (disc > opt.error_threshold)
            throw InvariantViolation("Richardson check",
                                     "far-field/grid discrepancy " + std::to_string(disc) + " exceeds 20%");
    }
    return gd;
}

/// Fills gradG (4th-order central differences) and hessG (at admissible nodes).
inline void derivatives(GreenData& gd) {
    const Grid& g = gd.grid;
    const double h = gd.h;
    gd.gradG = Field<Col2>(g, Col2::Zero());
    gd.hessG = Field<Mat2>(g, Mat2::Zero());
    gd.grad_collar.assign(g.size(), 0);
    const auto& G = gd.G;
    static constexpr double c1[5] = {1, -8, 0, 8, -1};        // first derivative / 12h
    static constexpr double c2[5] = {-1, 16, -30, 16, -1};    // second derivative / 12h^2
    parallel_for(g.size(), [&](std::size_t k) {
        if (!gd.inside(k)) return;
        const int i = g.col_of(k), j = g.row_of(k);
        if (g.wall_margin(i, j) < 2) return;
        double gx = 0, gt = 0;
        for (int a = -2; a <= 2; ++a) {
            if (!G.ok(i + a, j) || !G.ok(i, j + a)) return;
            gx += c1[a + 2] * G(i + a, j);
            gt += c1[a + 2] * G(i, j + a);
        }
        gd.gradG.set(k, Col2(gx, gt) / (12 * h));
        if (!(gd.delta.values[k] >= 2 * h)) gd.grad_collar[k] = 1;
        if (!gd.admissible(k)) return;
        double xx = 0, tt = 0, xt = 0;
        for (int a = -2; a <= 2; ++a) {
            xx += c2[a + 2] * G(i + a, j);
            tt += c2[a + 2] * G(i, j + a);
            for (int b = -2; b <= 2; ++b) xt += c1[a + 2] * c1[b + 2] * G(i + a, j + b);
        }
        Mat2 H;
        H << xx / (12 * h * h), xt / (144 * h * h), xt / (144 * h * h), tt / (12 * h * h);
        gd.hessG.set(k, H);
    });
}

struct GradientBoundReport {
    double sup_ratio = 0;  // sup delta |grad G| / G over admissible nodes
    std::size_t admissible = 0, excluded = 0;
    double min_G = 0;
};

inline GradientBoundReport check_gradient_bound(const GreenData& gd) {
    GradientBoundReport r;
    r.min_G = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < gd.grid.size(); ++k) {
        if (!gd.inside(k)) continue;
        if (!gd.admissible(k) || !gd.gradG.ok(k)) {
            ++r.excluded;
            continue;
        }
        ++r.admissible;
        const double G = gd.G.values[k];
        r.min_G = std::min(r.min_G, G);
        if (!(G > 0)) throw InvariantViolation("positivity", "G <= 0 at an admissible node");
        r.sup_ratio = std::max(r.sup_ratio, gd.delta.values[k] * gd.gradG.values[k].norm() / G);
    }
    if (!std::isfinite(r.sup_ratio)) throw InvariantViolation("gradient bound", "non-finite ratio");
    return r;
}

// ---------------------------------------------------------------------------
// Closed forms (normalized at Z0 = (0, g(0) + 1))

inline std::optional<std::function<double(const Row2&)>> closed_form_green(const GraphSpec& s) {
    if (s.family == "flat") return std::function<double(const Row2&)>([](const Row2& X) { return X(1); });
    if (s.family == "tilted") {
        const double m = s.slope;
        return std::function<double(const Row2&)>([m](const Row2& X) { return X(1) - m * X(0); });
    }
    if (s.family == "cone") {
        const double beta = 0.5 * pi - std::atan(s.M);  // half-opening about the axis
        const double k = pi / (2 * beta);
        return std::function<double(const Row2&)>([k](const Row2& X) {
            const double r = X.norm();
            if (r == 0) return 0.0;
            const double th = std::atan2(X(0), X(1));
            return std::pow(r, k) * std::cos(k * th);
        });
    }
    return std::nullopt;
}

struct ClosedFormError {
    double max_rel = 0;
    std::size_t nodes = 0;
};

/// Max relative error at admissible nodes outside B(tip, exclude_radius).
inline ClosedFormError closed_form_error(const GreenData& gd, const std::function<double(const Row2&)>& exact,
                                         const Row2& tip = Row2::Zero(), double exclude_radius = 0) {
    ClosedFormError e;
    for (std::size_t k = 0; k < gd.grid.size(); ++k) {
        if (!gd.admissible(k)) continue;
        const Row2 X = gd.grid.node(k);
        if ((X - tip).norm() < exclude_radius) continue;
        const double ex = exact(X);
        e.max_rel = std::max(e.max_rel, std::abs(gd.G.values[k] - ex) / std::abs(ex));
        ++e.nodes;
    }
    return e;
}

}  // namespace covlab
