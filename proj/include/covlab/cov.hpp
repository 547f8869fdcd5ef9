#pragma once

#include "covlab/core.hpp"
#include "covlab/frame.hpp"
#include "covlab/perturb.hpp"

#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

namespace covlab {

template <int N>
struct WFrameAt {
    MatN<N> W;               // rows w_1 .. w_N
    double min_tilde_norm;   // min |w~_i|
};

/// Gram–Schmidt in increasing index on the rows of Wbar: w~_i = wbar_i - sum_{k < i} <wbar_i, w_k> w_k.
template <int N>
WFrameAt<N> w_frame_from(const MatN<N>& Wbar) {
    WFrameAt<N> f;
    f.W.setZero();
    f.min_tilde_norm = std::numeric_limits<double>::infinity();
    for (int i = 0; i < N; ++i) {
        RowN<N> w = Wbar.row(i);
        for (int k = 0; k < i; ++k) w -= Wbar.row(i).dot(f.W.row(k)) * f.W.row(k);
        const double nw = w.norm();
        f.min_tilde_norm = std::min(f.min_tilde_norm, nw);
        f.W.row(i) = w / nw;
    }
    return f;
}

/// Everything defined pointwise at X from G, grad G and h.
struct LocalCov {
    LocalFrame frame;
    LocalPerturbation pert;
    Mat2 Wbar, W, O;
    double a = 1;
    double w_tilde_min = 1;
    Row2 rho;
};

inline LocalCov local_cov(const LocalFrame& f, const Displacement& h, const Mollifier& eta, const Row2& X) {
    LocalCov c;
    c.frame = f;
    c.pert = local_perturbation(h, eta, f);
    c.Wbar = f.V * (Mat2::Identity() + c.pert.B);
    const auto wf = w_frame_from<2>(c.Wbar);
    c.W = wf.W;
    c.w_tilde_min = wf.min_tilde_norm;
    c.O = f.V.transpose() * c.W;
    c.a = c.Wbar.row(0).dot(c.W.row(0));
    c.rho = X - f.t * f.vn + c.pert.lambda + c.a * f.t * f.vn * c.O;
    return c;
}

inline std::optional<LocalCov> local_cov_at(const GreenData& gd, const Displacement& h, const Mollifier& eta,
                                            const Row2& X) {
    const auto f = local_frame_at(gd, X);
    if (!f) return std::nullopt;
    return local_cov(*f, h, eta, X);
}

inline std::optional<Row2> rho_at(const GreenData& gd, const Displacement& h, const Mollifier& eta, const Row2& X) {
    const auto c = local_cov_at(gd, h, eta, X);
    if (!c) return std::nullopt;
    return c->rho;
}

struct CovDiagnostics {
    double w_orthonormality = 0;   // max |W W^T - I|
    double O_orthogonality = 0;    // max |O^T O - I|
    double W_vs_VO = 0;            // max |W - V O|
    double upper_triangularity = 0;  // max_{j > i} |<wbar_i, w_j>|
    double detJ0_minus_a2 = 0;
    double min_w_tilde = 1;
    double closeness_wv = 0;       // max |<w_i, v_j> - I_ij|
    double sup_J_minus_I = 0, sup_J0_minus_I = 0, sup_A0_minus_I = 0, sup_O_minus_I = 0;
    double sup_grad_rho_minus_I = 0;
    double jacobian_identity_residual = 0;  // V^T J V O vs Cartesian differences of rho
    double A0_vn_residual = 0;
    double A0_symmetry = 0;
    double A0_eig_min = 1, A0_eig_max = 1;
    bool ellipticity_checked = true;  // false when |A0 - I| > 1/2: outside the perturbative regime
    double det_grad_rho_min = 0;
    double div_A0_gradG = 0, div_gradG = 0, div_agreement = 0;
    std::size_t nodes = 0, excluded_step = 0, excluded_singular = 0;
};

struct CovField {
    std::shared_ptr<const FrameField> frame;
    std::shared_ptr<const PerturbationData> pert;
    Field<Mat2> Wbar, W, O;       // frame nodes
    Field<double> A_par, a;       // A_par is 1x1 in two dimensions
    Field<Mat2> J0;
    Field<Row2> rho;              // frame nodes
    Field<Mat2> J, J1, grad_rho;  // admissible nodes
    Field<Mat2> grad_rho_cartesian;
    Field<Mat2> A_rho, A_0;
    CovDiagnostics diag;

    const Grid& grid() const { return frame->grid(); }
    const GreenData& green() const { return *frame->green; }
};

/// W, O, A_par, a, J0 and rho on the frame nodes.
inline CovField build_w_frame(std::shared_ptr<const FrameField> ffp, std::shared_ptr<const PerturbationData> pdp) {
    const FrameField& ff = *ffp;
    const PerturbationData& pd = *pdp;
    const GreenData& gd = *ff.green;
    const Grid& g = ff.grid();
    CovField cf;
    cf.frame = ffp;
    cf.pert = pdp;
    cf.Wbar = cf.W = cf.O = cf.J0 = Field<Mat2>(g, Mat2::Identity());
    cf.A_par = cf.a = Field<double>(g, 1.0);
    cf.rho = Field<Row2>(g, Row2::Zero());
    std::vector<double> wmin(g.size(), 1.0);
    parallel_for(g.size(), [&](std::size_t k) {
        if (!ff.V.ok(k)) return;
        const Row2 X = g.node(k);
        const LocalFrame f = local_frame(gd.G.values[k], gd.gradG.values[k], X);
        const LocalCov c = local_cov(f, pd.h, pd.eta, X);
        cf.Wbar.set(k, c.Wbar);
        cf.W.set(k, c.W);
        cf.O.set(k, c.O);
        cf.A_par.set(k, c.a);
        cf.a.set(k, c.a);
        Mat2 J0 = Mat2::Zero();
        J0(0, 0) = c.a;
        J0(1, 1) = c.a;
        cf.J0.set(k, J0);
        cf.rho.set(k, c.rho);
        wmin[k] = c.w_tilde_min;
    });
    auto& d = cf.diag;
    d.min_w_tilde = 1;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!ff.V.ok(k)) continue;
        if (wmin[k] < 0.5) {
            std::ostringstream os;
            os << "|w~| = " << wmin[k] << " at node " << g.node(k);
            throw InvariantViolation("w-frame degenerate (eps too large)", os.str());
        }
        if (!gd.admissible(k)) continue;
        d.min_w_tilde = std::min(d.min_w_tilde, wmin[k]);
        const Mat2 &W = cf.W.values[k], &O = cf.O.values[k], &V = ff.V.values[k], &Wb = cf.Wbar.values[k];
        d.w_orthonormality = std::max(d.w_orthonormality, max_abs(W * W.transpose() - Mat2::Identity()));
        d.O_orthogonality = std::max(d.O_orthogonality, max_abs(O.transpose() * O - Mat2::Identity()));
        d.W_vs_VO = std::max(d.W_vs_VO, max_abs(W - V * O));
        d.upper_triangularity = std::max(d.upper_triangularity, std::abs(Wb.row(0).dot(W.row(1))));
        d.closeness_wv = std::max(d.closeness_wv, max_abs(W * V.transpose() - Mat2::Identity()));
        const double a = cf.a.values[k];
        d.detJ0_minus_a2 = std::max(d.detJ0_minus_a2, std::abs(cf.J0.values[k].determinant() - a * a));
        d.sup_J0_minus_I = std::max(d.sup_J0_minus_I, max_abs(cf.J0.values[k] - Mat2::Identity()));
        d.sup_O_minus_I = std::max(d.sup_O_minus_I, max_abs(O - Mat2::Identity()));
    }
    return cf;
}

/// J = (<d_{v_i} rho, w_j>) by directional differences, J1 = J - J0, grad rho = V^T J V O.
inline void build_rho(CovField& cf) {
    const FrameField& ff = *cf.frame;
    const PerturbationData& pd = *cf.pert;
    const GreenData& gd = *ff.green;
    const Grid& g = cf.grid();
    cf.J = cf.J1 = cf.grad_rho = cf.grad_rho_cartesian = Field<Mat2>(g, Mat2::Zero());
    std::vector<std::uint8_t> step_fail(g.size(), 0);
    parallel_for(g.size(), [&](std::size_t k) {
        if (!gd.admissible(k) || !ff.V.ok(k)) return;
        const Row2 X = g.node(k);
        const Mat2& V = ff.V.values[k];
        const double s = std::min(gd.h, gd.delta.values[k] / 8);
        Mat2 D;  // rows d_{v_i} rho
        for (int i = 0; i < 2; ++i) {
            Row2 r[4];
            const int off[4] = {-2, -1, 1, 2};
            for (int q = 0; q < 4; ++q) {
                const auto v = rho_at(gd, pd.h, pd.eta, X + off[q] * s * V.row(i));
                if (!v) {
                    step_fail[k] = 1;
                    return;
                }
                r[q] = *v;
            }
            D.row(i) = (r[0] - 8 * r[1] + 8 * r[2] - r[3]) / (12 * s);
        }
        const Mat2 J = D * cf.W.values[k].transpose();
        cf.J.set(k, J);
        cf.J1.set(k, J - cf.J0.values[k]);
        cf.grad_rho.set(k, V.transpose() * J * V * cf.O.values[k]);
        if (const auto c = detail::central_gradient(cf.rho, k)) {
            Mat2 C;
            C.row(0) = c->first;
            C.row(1) = c->second;
            cf.grad_rho_cartesian.set(k, C);
        }
    });
    auto& d = cf.diag;
    for (std::size_t k = 0; k < g.size(); ++k) {
        d.excluded_step += step_fail[k];
        if (!cf.J.ok(k)) continue;
        ++d.nodes;
        d.sup_J_minus_I = std::max(d.sup_J_minus_I, max_abs(cf.J.values[k] - Mat2::Identity()));
        d.sup_grad_rho_minus_I = std::max(d.sup_grad_rho_minus_I, max_abs(cf.grad_rho.values[k] - Mat2::Identity()));
        if (cf.grad_rho_cartesian.ok(k))
            d.jacobian_identity_residual = std::max(
                d.jacobian_identity_residual, max_abs(cf.grad_rho.values[k] - cf.grad_rho_cartesian.values[k]));
    }
}

/// A_rho and A_0 with their diagnostics.
inline void assemble_operators(CovField& cf) {
    const FrameField& ff = *cf.frame;
    const GreenData& gd = *ff.green;
    const Grid& g = cf.grid();
    cf.A_rho = cf.A_0 = Field<Mat2>(g, Mat2::Identity());
    auto& d = cf.diag;
    d.det_grad_rho_min = std::numeric_limits<double>::infinity();
    d.A0_eig_min = std::numeric_limits<double>::infinity();
    d.A0_eig_max = 0;
    std::size_t considered = 0;
    Field<Col2> flux(g, Col2::Zero()), grad(g, Col2::Zero());
    for (std::size_t k = 0; k < g.size(); ++k) {
        const Mat2& V = ff.V.values[k];
        if (ff.V.ok(k)) {
            // A0 needs only J0 and V, so it is available on all frame nodes
            const Mat2& J0 = cf.J0.values[k];
            const Mat2 J0inv = J0.inverse();
            const Mat2 A0 = J0.determinant() * V.transpose() * J0inv.transpose() * J0inv * V;
            cf.A_0.set(k, A0);
            flux.set(k, A0 * gd.gradG.values[k]);
            grad.set(k, gd.gradG.values[k]);
        }
        if (!cf.J.ok(k)) continue;
        ++considered;
        const Mat2& Dr = cf.grad_rho.values[k];
        const double det = Dr.determinant();
        if (!(std::abs(det) > 1e-12)) {
            ++d.excluded_singular;
            continue;
        }
        if (det <= 0) {
            std::ostringstream os;
            os << "det grad rho = " << det << " at node " << g.node(k);
            throw InvariantViolation("orientation", os.str());
        }
        d.det_grad_rho_min = std::min(d.det_grad_rho_min, det);
        const Mat2 inv = Dr.inverse();
        cf.A_rho.set(k, det * inv.transpose() * inv);

        const Mat2& A0 = cf.A_0.values[k];
        const Row2 vn = V.row(1);
        d.A0_vn_residual = std::max(d.A0_vn_residual, (A0 * vn.transpose() - vn.transpose()).cwiseAbs().maxCoeff());
        d.A0_symmetry = std::max(d.A0_symmetry, max_abs(A0 - A0.transpose()));
        d.sup_A0_minus_I = std::max(d.sup_A0_minus_I, max_abs(A0 - Mat2::Identity()));
        Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (A0 + A0.transpose()), Eigen::EigenvaluesOnly);
        d.A0_eig_min = std::min(d.A0_eig_min, es.eigenvalues()(0));
        d.A0_eig_max = std::max(d.A0_eig_max, es.eigenvalues()(1));
    }
    if (considered > 0 && d.excluded_singular > 0.01 * considered)
        throw InvariantViolation("Jacobian singular", std::to_string(d.excluded_singular) + " of " +
                                                         std::to_string(considered) + " nodes excluded");
    if (considered == 0) d.det_grad_rho_min = 0, d.A0_eig_min = d.A0_eig_max = 1;
    d.ellipticity_checked = d.sup_A0_minus_I <= 0.5;
    if (d.ellipticity_checked && (d.A0_eig_min < 0.5 || d.A0_eig_max > 2))
        throw InvariantViolation("A0 ellipticity", "spectrum outside [1/2, 2]");

    // L0 G = 0: discrete divergence of A0 grad G against that of grad G
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!cf.J.ok(k)) continue;
        const auto f = detail::central_gradient(flux, k);
        const auto e = detail::central_gradient(grad, k);
        if (!f || !e) continue;
        const double dA = f->first(0) + f->second(1), dI = e->first(0) + e->second(1);
        d.div_A0_gradG = std::max(d.div_A0_gradG, std::abs(dA));
        d.div_gradG = std::max(d.div_gradG, std::abs(dI));
        d.div_agreement = std::max(d.div_agreement, std::abs(dA - dI));
    }
}

// ---------------------------------------------------------------------------

struct BoundaryCheck {
    double C_boundary = 0;         // max dist(rho_hat, bdry Omega) / (h + eps t)
    double max_distance = 0;
    std::size_t samples = 0, skipped = 0;
    std::size_t newton_targets = 0, newton_success = 0;
    double max_roundtrip = 0;
    std::vector<Row2> failed_targets;
    double sup_grad_rho_minus_I = 0;
    bool grad_rho_within_half = true;
};

namespace detail {

inline std::optional<Row2> newton_invert_rho(const CovField& cf, const Row2& Y, Row2 X, int max_iter = 40) {
    const GreenData& gd = cf.green();
    const PerturbationData& pd = *cf.pert;
    for (int it = 0; it < max_iter; ++it) {
        const auto r = rho_at(gd, pd.h, pd.eta, X);
        const auto D = interp_bilinear(cf.grad_rho, X);
        if (!r || !D) return std::nullopt;
        const Row2 res = *r - Y;
        if (res.norm() <= 1e-12 * (1 + Y.norm())) return X;
        Row2 step = res * D->inverse();
        // stay where rho and its Jacobian are sampled
        for (int b = 0; b < 8 && !interp_bilinear(cf.grad_rho, Row2(X - step)); ++b) step *= 0.5;
        X -= step;
    }
    const auto r = rho_at(gd, pd.h, pd.eta, X);
    if (r && (*r - Y).norm() <= 1e-9) return X;
    return std::nullopt;
}

}  // namespace detail

/// (a) collar samples map near the perturbed boundary, (b) Newton round trips, (c) sup |grad rho - I|.
inline BoundaryCheck check_boundary_and_bijection(const CovField& cf, const GraphDomain& dom0,
                                                  const GraphDomain& domP, int targets = 100,
                                                  std::uint64_t seed = 7) {
    const GreenData& gd = cf.green();
    const PerturbationData& pd = *cf.pert;
    const double h = gd.h, eps = pd.h.map->eps_bound;
    BoundaryCheck r;
    // rho_hat = linear extrapolation of rho to the boundary from two points on the vertical above it
    for (const auto& s : dom0.boundary_samples) {
        if (std::abs(s.x) > dom0.R / 2) continue;
        const Row2 P(s.x, s.t);
        const auto c1 = local_cov_at(gd, pd.h, pd.eta, P + Row2(0, 4 * h));
        const auto c2 = local_cov_at(gd, pd.h, pd.eta, P + Row2(0, 8 * h));
        if (!c1 || !c2) {
            ++r.skipped;
            continue;
        }
        ++r.samples;
        const Row2 rho_hat = 2 * c1->rho - c2->rho;
        const double dist = distance_to_graph(domP, rho_hat);
        r.max_distance = std::max(r.max_distance, dist);
        r.C_boundary = std::max(r.C_boundary, dist / (h + eps * c1->frame.t));
    }
    // Newton round trips from random admissible nodes away from the collar
    std::vector<std::size_t> pool;
    const Grid& g = cf.grid();
    for (std::size_t k = 0; k < g.size(); ++k)
        if (cf.grad_rho.ok(k) && gd.delta.values[k] >= 8 * h && std::abs(g.node(k)(0)) <= dom0.R / 2) pool.push_back(k);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    for (int q = 0; q < targets && !pool.empty(); ++q) {
        const std::size_t k = pool[rng() % pool.size()];
        const Row2 Xs = g.node(k) + h * Row2(jitter(rng), jitter(rng));
        const auto Y = rho_at(gd, pd.h, pd.eta, Xs);
        ++r.newton_targets;
        std::optional<Row2> X;
        if (Y) {
            // Phi^{-1}(Y) is within O(eps t) of the preimage and, unlike Y, inside the sampled region
            Row2 X0 = *Y;
            try {
                X0 = pd.h.map->invert(*Y);
            } catch (const InvariantViolation&) {
            }
            X = detail::newton_invert_rho(cf, *Y, X0);
        }
        const double err = X ? (*X - Xs).norm() : std::numeric_limits<double>::infinity();
        if (err <= 1e-6) {
            ++r.newton_success;
            r.max_roundtrip = std::max(r.max_roundtrip, err);
        } else {
            r.failed_targets.push_back(Xs);
        }
    }
    if (r.newton_targets > 0 && r.newton_targets - r.newton_success > 0.02 * r.newton_targets)
        throw InvariantViolation("rho inversion", std::to_string(r.newton_targets - r.newton_success) + " of " +
                                                      std::to_string(r.newton_targets) + " round trips failed");
    r.sup_grad_rho_minus_I = cf.diag.sup_grad_rho_minus_I;
    r.grad_rho_within_half = r.sup_grad_rho_minus_I <= 0.5;
    return r;
}

inline CovField build_cov(std::shared_ptr<const FrameField> ff, std::shared_ptr<const PerturbationData> pd) {
    CovField cf = build_w_frame(std::move(ff), std::move(pd));
    build_rho(cf);
    assemble_operators(cf);
    return cf;
}

// Carleson-candidate magnitudes

/// t |grad F| with grad F differenced on the sampled field (Frobenius over all components).
template <class T>
Field<double> t_grad(const Field<T>& F, const FrameField& ff) {
    Field<double> f(ff.grid(), 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k) {
        if (!ff.admissible(k)) continue;
        if (const auto d = detail::central_gradient(F, k)) {
            double s;
            if constexpr (std::is_arithmetic_v<T>) s = d->first * d->first + d->second * d->second;
            else s = d->first.squaredNorm() + d->second.squaredNorm();
            f.set(k, ff.t.values[k] * std::sqrt(s));
        }
    }
    return f;
}

inline Field<double> matrix_magnitude(const Field<Mat2>& A, const Field<Mat2>* B = nullptr) {
    Field<double> f(A.grid, 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k) {
        if (!A.ok(k) || (B && !B->ok(k))) continue;
        f.set(k, op_norm(B ? Mat2(A.values[k] - B->values[k]) : A.values[k]));
    }
    return f;
}

/// |A_rho - A_0| restricted to nodes where A_rho was assembled.
inline Field<double> operator_difference(const CovField& cf) {
    Field<double> f(cf.grid(), 0.0);
    for (std::size_t k = 0; k < f.grid.size(); ++k)
        if (cf.J.ok(k) && cf.A_rho.ok(k)) f.set(k, op_norm(cf.A_rho.values[k] - cf.A_0.values[k]));
    return f;
}

}  // namespace covlab
