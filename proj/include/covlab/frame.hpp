#pragma once

#include "covlab/core.hpp"
#include "covlab/green.hpp"

#include <memory>
#include <sstream>

namespace covlab {

template <int N>
using RowN = Eigen::Matrix<double, 1, N>;
template <int N>
using MatN = Eigen::Matrix<double, N, N>;

template <int N>
struct FrameAt {
    MatN<N> V;               // rows v_1 .. v_N
    double min_tilde_norm;   // min |v~_i| over i < N
};

/// Orthonormal frame seeded by the unit vector vn: Gram–Schmidt in decreasing index,
/// v~_i = e_i - sum_{k > i} <e_i, v_k> v_k.
template <int N>
FrameAt<N> frame_from_normal(const RowN<N>& vn) {
    FrameAt<N> f;
    f.V.setZero();
    f.V.row(N - 1) = vn;
    f.min_tilde_norm = std::numeric_limits<double>::infinity();
    for (int i = N - 2; i >= 0; --i) {
        RowN<N> v = RowN<N>::Unit(i);
        for (int k = i + 1; k < N; ++k) v -= f.V(k, i) * f.V.row(k);
        const double nv = v.norm();
        f.min_tilde_norm = std::min(f.min_tilde_norm, nv);
        f.V.row(i) = v / nv;
    }
    return f;
}

/// Local transversal data at a point from G and its gradient.
struct LocalFrame {
    double G = 0;
    Col2 grad = Col2::Zero();
    double t = 0;   // G / |grad G|
    Row2 vn = Row2::Zero();
    Mat2 V = Mat2::Identity();
    double y = 0;   // pi(X - t vn)
    double tilde_min = 1;
};

inline LocalFrame local_frame(double G, const Col2& grad, const Row2& X) {
    LocalFrame f;
    f.G = G;
    f.grad = grad;
    const double n = grad.norm();
    if (!(n > 0)) throw InvariantViolation("frame", "vanishing gradient of G");
    f.vn = grad.transpose() / n;
    f.t = G / n;
    const auto fr = frame_from_normal<2>(f.vn);
    f.V = fr.V;
    f.tilde_min = fr.min_tilde_norm;
    f.y = X(0) - f.t * f.vn(0);
    return f;
}

/// Pointwise frame from interpolated G and grad G; nullopt outside the sampled region.
inline std::optional<LocalFrame> local_frame_at(const GreenData& gd, const Row2& X) {
    const auto G = gd.value_at(X);
    const auto g = gd.gradient_at(X);
    if (!G || !g) return std::nullopt;
    return local_frame(*G, *g, X);
}

// ---------------------------------------------------------------------------

struct H1H2Report {
    double C_H = 0;        // sup G / (delta |grad G|) over |x| <= 3R/4
    double C_2 = 0;        // sup |grad G| / d_n G
    double c_dn = 0;       // inf d_n G delta / G
    double min_vn_en = 0;  // min <v_n, e_n>
    double vn_en_bound = 0;  // 1 / sqrt(1 + M^2)
    std::size_t nodes = 0;
    std::size_t positive_dn = 0;
};

inline H1H2Report check_H1_H2(const GreenData& gd) {
    H1H2Report r;
    r.c_dn = r.min_vn_en = std::numeric_limits<double>::infinity();
    const double M = gd.domain->lipschitz_M();
    r.vn_en_bound = 1 / std::sqrt(1 + M * M);
    for (std::size_t k = 0; k < gd.grid.size(); ++k) {
        if (!gd.admissible(k) || !gd.gradG.ok(k)) continue;
        ++r.nodes;
        const double G = gd.G.values[k], d = gd.delta.values[k];
        const Col2 g = gd.gradG.values[k];
        if (!(g(1) > 0)) {
            std::ostringstream os;
            os << "d_n G = " << g(1) << " at node " << gd.grid.node(k);
            throw InvariantViolation("positivity of d_n G", os.str());
        }
        ++r.positive_dn;
        // constants away from the side walls, where the far-field data is only a model
        if (std::abs(gd.grid.node(k)(0)) > 0.75 * gd.domain->R) continue;
        r.C_H = std::max(r.C_H, G / (d * g.norm()));
        r.C_2 = std::max(r.C_2, g.norm() / g(1));
        r.c_dn = std::min(r.c_dn, g(1) * d / G);
        r.min_vn_en = std::min(r.min_vn_en, g(1) / g.norm());
    }
    if (!std::isfinite(r.C_H) || !std::isfinite(r.C_2)) throw InvariantViolation("H1/H2", "non-finite constant");
    return r;
}

// ---------------------------------------------------------------------------

struct FrameField {
    std::shared_ptr<const GreenData> green;
    Field<Mat2> V;            // rows v_1, v_2; defined where grad G is (delta >= 2h)
    Field<double> t;          // G / |grad G|
    Field<double> y;          // pi(X - t v_n)
    Field<Col2> grad_t;       // admissible nodes, differenced
    Field<Col2> grad_t_chain; // admissible nodes, chain rule on G derivatives
    Field<Col2> grad_y;       // admissible nodes
    Field<Mat2> grad_v[2];    // (d_k (v_i)_j), admissible nodes
    Field<Mat2> grad_vn_chain;
    double min_tilde_norm = 1;
    double frame_orthonormality = 0;  // max |V V^T - I|
    double t_over_delta_min = 0, t_over_delta_max = 0;
    double grad_v_ratio = 0;          // max |grad v_1| / |grad v_n|
    double grad_t_route_residual = 0; // differenced vs chain rule

    const Grid& grid() const { return green->grid; }
    bool admissible(std::size_t k) const { return green->admissible(k); }
};

namespace detail {

/// 4th-order central difference of a field at node k; requires the +-2 neighbours valid.
template <class T>
std::optional<std::pair<T, T>> central_gradient(const Field<T>& f, std::size_t k) {
    static constexpr double c[5] = {1, -8, 0, 8, -1};
    const Grid& g = f.grid;
    const int i = g.col_of(k), j = g.row_of(k);
    T dx = zero_value<T>(), dt = zero_value<T>();
    for (int a = -2; a <= 2; ++a) {
        if (a == 0) continue;
        if (!f.ok(i + a, j) || !f.ok(i, j + a)) return std::nullopt;
        dx += c[a + 2] * f(i + a, j);
        dt += c[a + 2] * f(i, j + a);
    }
    return std::pair<T, T>(dx / (12 * g.h), dt / (12 * g.h));
}

}  // namespace detail

inline FrameField build_frame(std::shared_ptr<const GreenData> gdp) {
    const GreenData& gd = *gdp;
    check_H1_H2(gd);
    FrameField ff;
    ff.green = gdp;
    const Grid& g = gd.grid;
    ff.V = Field<Mat2>(g, Mat2::Identity());
    ff.t = Field<double>(g, 0.0);
    ff.y = Field<double>(g, 0.0);
    std::vector<double> tilde(g.size(), 1.0), orth(g.size(), 0.0);
    parallel_for(g.size(), [&](std::size_t k) {
        if (!gd.grad_ok(k) || !gd.gradG.ok(k)) return;
        const LocalFrame lf = local_frame(gd.G.values[k], gd.gradG.values[k], g.node(k));
        ff.V.set(k, lf.V);
        ff.t.set(k, lf.t);
        ff.y.set(k, lf.y);
        tilde[k] = lf.tilde_min;
        orth[k] = (lf.V * lf.V.transpose() - Mat2::Identity()).cwiseAbs().maxCoeff();
    });
    ff.min_tilde_norm = 1;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!ff.V.ok(k)) continue;
        if (tilde[k] < 1e-6) {
            std::ostringstream os;
            os << "|v~_1| = " << tilde[k] << " at node " << g.node(k);
            throw InvariantViolation("frame degenerate", os.str());
        }
        ff.min_tilde_norm = std::min(ff.min_tilde_norm, tilde[k]);
        if (gd.admissible(k)) ff.frame_orthonormality = std::max(ff.frame_orthonormality, orth[k]);
    }
    return ff;
}

/// Fills grad t, grad y, grad v_i and the t/delta statistics.
inline void transversal_fields(FrameField& ff) {
    const GreenData& gd = *ff.green;
    const Grid& g = gd.grid;
    ff.grad_t = Field<Col2>(g, Col2::Zero());
    ff.grad_t_chain = Field<Col2>(g, Col2::Zero());
    ff.grad_y = Field<Col2>(g, Col2::Zero());
    ff.grad_vn_chain = Field<Mat2>(g, Mat2::Zero());
    for (auto& f : ff.grad_v) f = Field<Mat2>(g, Mat2::Zero());
    Field<Row2> rows[2] = {Field<Row2>(g, Row2::Zero()), Field<Row2>(g, Row2::Zero())};
    for (std::size_t k = 0; k < g.size(); ++k)
        if (ff.V.ok(k))
            for (int i = 0; i < 2; ++i) rows[i].set(k, ff.V.values[k].row(i));
    parallel_for(g.size(), [&](std::size_t k) {
        if (!gd.admissible(k)) return;
        const auto dt = detail::central_gradient(ff.t, k);
        const auto dy = detail::central_gradient(ff.y, k);
        if (!dt || !dy) return;
        ff.grad_t.set(k, Col2(dt->first, dt->second));
        ff.grad_y.set(k, Col2(dy->first, dy->second));
        for (int i = 0; i < 2; ++i) {
            const auto dv = detail::central_gradient(rows[i], k);
            if (!dv) return;
            Mat2 D;
            D.row(0) = dv->first;
            D.row(1) = dv->second;
            ff.grad_v[i].set(k, D);
        }
        // chain rule: grad t = grad G / |grad G| - G H grad G / |grad G|^3
        const Col2 gr = gd.gradG.values[k];
        const Mat2 H = gd.hessG.values[k];
        const double n = gr.norm();
        ff.grad_t_chain.set(k, gr / n - gd.G.values[k] * H * gr / (n * n * n));
        const Row2 vn = gr.transpose() / n;
        ff.grad_vn_chain.set(k, H * (Mat2::Identity() - vn.transpose() * vn) / n);
    });
    ff.t_over_delta_min = std::numeric_limits<double>::infinity();
    ff.t_over_delta_max = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!ff.grad_t.ok(k)) continue;
        const double t = ff.t.values[k];
        if (!(t > 0)) throw InvariantViolation("transversal function", "t <= 0 at an admissible node");
        const double q = t / gd.delta.values[k];
        ff.t_over_delta_min = std::min(ff.t_over_delta_min, q);
        ff.t_over_delta_max = std::max(ff.t_over_delta_max, q);
        const double gvn = ff.grad_v[1].values[k].norm();
        if (gvn > 1e-8) ff.grad_v_ratio = std::max(ff.grad_v_ratio, ff.grad_v[0].values[k].norm() / gvn);
        ff.grad_t_route_residual =
            std::max(ff.grad_t_route_residual, (ff.grad_t.values[k] - ff.grad_t_chain.values[k]).norm());
    }
}

// ---------------------------------------------------------------------------
// Carleson candidates as nodal magnitudes

/// delta^2 |hess G| / G.
inline Field<double> hessian_ratio(const GreenData& gd) {
    Field<double> f(gd.grid, 0.0);
    for (std::size_t k = 0; k < gd.grid.size(); ++k)
        if (gd.hessG.ok(k)) {
            const double d = gd.delta.values[k];
            f.set(k, d * d * gd.hessG.values[k].norm() / gd.G.values[k]);
        }
    return f;
}

/// |grad t - v_n^T|.
inline Field<double> grad_t_defect(const FrameField& ff) {
    Field<double> f(ff.grid(), 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k)
        if (ff.grad_t.ok(k)) f.set(k, (ff.grad_t.values[k] - ff.V.values[k].row(1).transpose()).norm());
    return f;
}

/// |grad y - I_{2x1} + v_n^T pi(v_n)|.
inline Field<double> grad_y_defect(const FrameField& ff) {
    Field<double> f(ff.grid(), 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k)
        if (ff.grad_y.ok(k)) {
            const Row2 vn = ff.V.values[k].row(1);
            f.set(k, (ff.grad_y.values[k] - Col2(1, 0) + vn.transpose() * vn(0)).norm());
        }
    return f;
}

/// delta |grad v_i|.
inline Field<double> delta_grad_v(const FrameField& ff, int i) {
    Field<double> f(ff.grid(), 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k)
        if (ff.grad_v[i].ok(k)) f.set(k, ff.green->delta.values[k] * ff.grad_v[i].values[k].norm());
    return f;
}

}  // namespace covlab
