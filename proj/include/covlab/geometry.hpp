#pragma once

#include "covlab/core.hpp"
#include "covlab/grid.hpp"

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace covlab {

// ---------------------------------------------------------------------------
// Graph families

struct GraphSpec {
    std::string family = "flat";  // flat | tilted | cone | sine | piecewise-linear | custom-table
    double slope = 0.0;           // tilted
    double M = 1.0;               // cone
    double amp = 0.0, freq = 0.0; // sine
    std::vector<Row2> knots;      // piecewise-linear / custom-table, as (x, g(x))
    std::optional<double> declared_lipschitz;
};

/// Asymptotic lines t = slope * x + intercept on each side; used by the far-field model.
struct AsymptoticLines {
    double slope_left = 0, intercept_left = 0, slope_right = 0, intercept_right = 0;
};

struct Graph {
    std::string label;
    std::function<double(double)> g;
    std::function<double(double)> dg;  // right derivative
    std::vector<double> kinks;         // points where g is not differentiable
    double lipschitz = 0.0;
    bool piecewise_linear = false;
    bool convex_known = false;         // convexity established analytically
    AsymptoticLines far;
};

namespace detail {

inline Graph piecewise_linear_graph(std::vector<Row2> knots, const std::string& label) {
    if (knots.size() < 2) throw InputError(label + ": at least two knots are required");
    std::sort(knots.begin(), knots.end(), [](const Row2& a, const Row2& b) { return a(0) < b(0); });
    for (std::size_t k = 0; k + 1 < knots.size(); ++k)
        if (!(knots[k + 1](0) > knots[k](0))) throw InputError(label + ": knot abscissae must be distinct");
    auto shared = std::make_shared<const std::vector<Row2>>(std::move(knots));
    const auto& K = *shared;
    auto segment = [shared](double x) {
        const auto& P = *shared;
        auto it = std::upper_bound(P.begin(), P.end(), x, [](double v, const Row2& p) { return v < p(0); });
        std::size_t k = (it == P.begin()) ? 0 : static_cast<std::size_t>(it - P.begin()) - 1;
        if (k + 1 >= P.size()) k = P.size() - 2;
        return k;
    };
    Graph G;
    G.label = label;
    G.g = [shared, segment](double x) {
        const auto& P = *shared;
        const std::size_t k = segment(x);
        const double s = (P[k + 1](1) - P[k](1)) / (P[k + 1](0) - P[k](0));
        return P[k](1) + s * (x - P[k](0));
    };
    G.dg = [shared, segment](double x) {
        const auto& P = *shared;
        const std::size_t k = segment(x);
        return (P[k + 1](1) - P[k](1)) / (P[k + 1](0) - P[k](0));
    };
    bool convex = true;
    double prev = 0;
    for (std::size_t k = 0; k + 1 < K.size(); ++k) {
        const double s = (K[k + 1](1) - K[k](1)) / (K[k + 1](0) - K[k](0));
        G.lipschitz = std::max(G.lipschitz, std::abs(s));
        if (k > 0) {
            G.kinks.push_back(K[k](0));
            if (s < prev - 1e-12) convex = false;
        }
        prev = s;
    }
    G.convex_known = convex;
    G.piecewise_linear = true;
    const double sl = (K[1](1) - K[0](1)) / (K[1](0) - K[0](0));
    const double sr = (K.back()(1) - K[K.size() - 2](1)) / (K.back()(0) - K[K.size() - 2](0));
    G.far = {sl, K[0](1) - sl * K[0](0), sr, K.back()(1) - sr * K.back()(0)};
    return G;
}

}  // namespace detail

inline Graph make_graph(const GraphSpec& spec) {
    Graph G;
    const std::string& f = spec.family;
    if (f == "flat") {
        G.label = "flat";
        G.g = [](double) { return 0.0; };
        G.dg = [](double) { return 0.0; };
        G.piecewise_linear = true;
        G.convex_known = true;
    } else if (f == "tilted") {
        const double m = spec.slope;
        G.label = "tilted(" + std::to_string(m) + ")";
        G.g = [m](double x) { return m * x; };
        G.dg = [m](double) { return m; };
        G.lipschitz = std::abs(m);
        G.piecewise_linear = true;
        G.convex_known = true;
        G.far = {m, 0, m, 0};
    } else if (f == "cone") {
        const double M = spec.M;
        if (!(M > 0)) throw InputError("cone: M must be positive");
        G.label = "cone(" + std::to_string(M) + ")";
        G.g = [M](double x) { return M * std::abs(x); };
        G.dg = [M](double x) { return x < 0 ? -M : M; };
        G.kinks = {0.0};
        G.lipschitz = M;
        G.piecewise_linear = true;
        G.convex_known = true;
        G.far = {-M, 0, M, 0};
    } else if (f == "sine") {
        const double a = spec.amp, w = spec.freq;
        G.label = "sine(" + std::to_string(a) + "," + std::to_string(w) + ")";
        G.g = [a, w](double x) { return a * std::sin(w * x); };
        G.dg = [a, w](double x) { return a * w * std::cos(w * x); };
        G.lipschitz = std::abs(a * w);
        G.convex_known = (a == 0.0 || w == 0.0);
    } else if (f == "piecewise-linear" || f == "custom-table") {
        G = detail::piecewise_linear_graph(spec.knots, f);
    } else {
        throw InputError("unknown graph family '" + f + "'");
    }
    if (spec.declared_lipschitz) {
        if (*spec.declared_lipschitz < G.lipschitz - 1e-9)
            throw InputError(G.label + ": declared Lipschitz constant " +
                             std::to_string(*spec.declared_lipschitz) + " is below the exact constant " +
                             std::to_string(G.lipschitz));
        G.lipschitz = *spec.declared_lipschitz;
    }
    return G;
}

// ---------------------------------------------------------------------------
// Far-field model: Green function of the asymptotic sector (half-plane when parallel)

class FarFieldModel {
public:
    FarFieldModel() = default;
    explicit FarFieldModel(const AsymptoticLines& L) : L_(L) {
        if (std::abs(L.slope_right - L.slope_left) < 1e-12) {
            half_plane_ = true;
            m_ = 0.5 * (L.slope_left + L.slope_right);
            c_ = 0.5 * (L.intercept_left + L.intercept_right);
            return;
        }
        half_plane_ = false;
        vx_ = (L.intercept_left - L.intercept_right) / (L.slope_right - L.slope_left);
        vt_ = L.slope_right * vx_ + L.intercept_right;
        alpha_r_ = std::atan2(L.slope_right, 1.0);
        alpha_l_ = std::atan2(-L.slope_left, -1.0);
        if (alpha_l_ < 0) alpha_l_ += 2 * pi;
        theta_ = alpha_l_ - alpha_r_;
        if (!(theta_ > 0 && theta_ < 2 * pi)) throw InputError("far field: degenerate asymptotic sector");
    }

    double operator()(const Row2& X) const {
        if (half_plane_) return std::max(0.0, (X(1) - m_ * X(0) - c_) / std::sqrt(1 + m_ * m_));
        const double dx = X(0) - vx_, dt = X(1) - vt_;
        const double r = std::hypot(dx, dt);
        if (r == 0) return 0;
        double phi = std::atan2(dt, dx);
        if (phi < alpha_r_ - 1e-12) phi += 2 * pi;
        if (phi > alpha_l_) return 0;
        const double k = pi / theta_;
        return std::pow(r, k) * std::sin(k * (phi - alpha_r_));
    }

    std::string describe() const {
        std::ostringstream os;
        if (half_plane_)
            os << "half-plane Green function above t = " << m_ << " x + " << c_;
        else
            os << "sector Green function r^(pi/theta) sin(pi (phi - alpha)/theta), vertex (" << vx_ << ", "
               << vt_ << "), opening " << theta_;
        return os.str();
    }

private:
    AsymptoticLines L_;
    bool half_plane_ = true;
    double m_ = 0, c_ = 0, vx_ = 0, vt_ = 0, alpha_r_ = 0, alpha_l_ = pi, theta_ = pi;
};

// ---------------------------------------------------------------------------
// Bi-Lipschitz maps

struct MapSpec {
    std::string family = "identity";  // identity | translation | linear | shear | wave | vertical-wave | rotation
    double eps = 0.0;
    Row2 shift = Row2::Zero();
    Mat2 E = Mat2::Zero();
    double angle = 0.0;
};

struct BiLipMap {
    std::string label;
    std::function<Row2(const Row2&)> phi;
    std::function<Mat2(const Row2&)> jacobian;  // (grad Phi)_{ij} = d_i Phi_j
    double eps_bound = 0.0;

    Row2 operator()(const Row2& X) const { return phi(X); }

    /// Newton inversion of phi.
    Row2 invert(const Row2& Y, double tol = 1e-13, int max_iter = 50) const {
        Row2 X = Y;
        for (int it = 0; it < max_iter; ++it) {
            const Row2 r = phi(X) - Y;
            if (r.norm() <= tol * (1 + Y.norm())) return X;
            X -= r * jacobian(X).inverse();
        }
        throw InvariantViolation("map inversion", "Newton did not converge");
    }
};

inline BiLipMap make_map(const MapSpec& s) {
    BiLipMap m;
    const double eps = s.eps;
    const std::string& f = s.family;
    auto linear = [&](const Mat2& E, const std::string& label) {
        const Mat2 A = Mat2::Identity() + eps * E;
        m.label = label;
        m.phi = [A](const Row2& X) -> Row2 { return X * A; };
        m.jacobian = [A](const Row2&) -> Mat2 { return A; };
        m.eps_bound = std::abs(eps) * op_norm(E);
    };
    if (f == "identity") {
        m.label = "identity";
        m.phi = [](const Row2& X) -> Row2 { return X; };
        m.jacobian = [](const Row2&) -> Mat2 { return Mat2::Identity(); };
    } else if (f == "translation") {
        const Row2 c = s.shift;
        m.label = "translation";
        m.phi = [c](const Row2& X) -> Row2 { return X + c; };
        m.jacobian = [](const Row2&) -> Mat2 { return Mat2::Identity(); };
    } else if (f == "linear") {
        linear(s.E, "linear");
    } else if (f == "shear") {
        Mat2 E;
        E << 0, 0, 1, 0;  // (x, t) -> (x + eps t, t)
        linear(E, "shear");
    } else if (f == "wave") {
        m.label = "wave";
        m.phi = [eps](const Row2& X) -> Row2 {
            return Row2(X(0) + eps * std::sin(X(1)), X(1) + eps * std::sin(X(0)));
        };
        m.jacobian = [eps](const Row2& X) -> Mat2 {
            Mat2 J;
            J << 1, eps * std::cos(X(0)), eps * std::cos(X(1)), 1;
            return J;
        };
        m.eps_bound = std::abs(eps);
    } else if (f == "vertical-wave") {
        m.label = "vertical-wave";
        m.phi = [eps](const Row2& X) -> Row2 { return Row2(X(0), X(1) + eps * std::sin(X(0))); };
        m.jacobian = [eps](const Row2& X) -> Mat2 {
            Mat2 J;
            J << 1, eps * std::cos(X(0)), 0, 1;
            return J;
        };
        m.eps_bound = std::abs(eps);
    } else if (f == "rotation") {
        const double c = std::cos(s.angle), sn = std::sin(s.angle);
        Mat2 R;
        R << c, sn, -sn, c;
        m.label = "rotation";
        m.phi = [R](const Row2& X) -> Row2 { return X * R; };
        m.jacobian = [R](const Row2&) -> Mat2 { return R; };
        m.eps_bound = 2 * std::abs(std::sin(0.5 * s.angle));
    } else {
        throw InputError("unknown map family '" + f + "'");
    }
    return m;
}

struct MapNormReport {
    double max_entrywise = 0;  // max_X max_ij |grad Phi - I|
    double max_operator = 0;   // max_X |grad Phi - I|_2
    bool within_bound = true;
};

inline MapNormReport check_map(const BiLipMap& m, const Box& box, int per_axis = 64) {
    MapNormReport r;
    for (int a = 0; a <= per_axis; ++a)
        for (int b = 0; b <= per_axis; ++b) {
            const Row2 X(box.x_min + (box.x_max - box.x_min) * a / per_axis,
                         box.t_min + (box.t_max - box.t_min) * b / per_axis);
            const Mat2 D = m.jacobian(X) - Mat2::Identity();
            r.max_entrywise = std::max(r.max_entrywise, max_abs(D));
            r.max_operator = std::max(r.max_operator, op_norm(D));
        }
    r.within_bound = r.max_operator <= m.eps_bound * (1 + 1e-12) + 1e-15;
    return r;
}

// ---------------------------------------------------------------------------
// Domains

struct BoundarySample {
    double x, t, s;  // point (x, g(x)) and arclength from the left end
};

struct GraphDomain {
    Graph graph;
    int dim_n = 2;
    double R = 1.0;
    int grid_n = 64;
    Box box;
    double sample_spacing = 0;  // arclength bound between consecutive samples
    std::vector<BoundarySample> boundary_samples;  // over [-R, R]
    std::vector<Row2> polyline;                    // distance polyline over the extended range

    double g(double x) const { return graph.g(x); }
    double lipschitz_M() const { return graph.lipschitz; }
    double h() const { return 2 * R / grid_n; }
    bool inside(const Row2& X) const { return X(1) > graph.g(X(0)); }
    Row2 boundary_point(double x) const { return Row2(x, graph.g(x)); }
    Row2 z0() const { return Row2(0.0, graph.g(0.0) + 1.0); }
};

namespace detail {

inline std::vector<double> sample_abscissae(const Graph& G, double a, double b, double spacing) {
    const double dx = spacing / std::sqrt(1 + G.lipschitz * G.lipschitz);
    const int n = std::max(2, static_cast<int>(std::ceil((b - a) / dx)));
    std::vector<double> xs;
    xs.reserve(n + 1 + G.kinks.size());
    for (int k = 0; k <= n; ++k) xs.push_back(a + (b - a) * k / n);
    for (double k : G.kinks)
        if (k > a && k < b) xs.push_back(k);
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end(), [](double p, double q) { return std::abs(p - q) < 1e-14; }),
             xs.end());
    return xs;
}

}  // namespace detail

inline GraphDomain build_domain_from_graph(Graph graph, int n, double R, int grid_n) {
    if (n != 2) throw InputError("only n = 2 is supported for graph domains");
    if (grid_n < 64) throw InputError("grid_n must be at least 64");
    if (!(R > 0)) throw InputError("R must be positive");
    GraphDomain d;
    d.graph = std::move(graph);
    d.dim_n = n;
    d.R = R;
    d.grid_n = grid_n;
    d.sample_spacing = R / grid_n;
    const auto xs = detail::sample_abscissae(d.graph, -R, R, d.sample_spacing);
    double s = 0, gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double t = d.graph.g(xs[k]);
        if (k > 0) {
            const auto& p = d.boundary_samples.back();
            const double q = std::abs(t - p.t) / (xs[k] - p.x);
            if (q > d.graph.lipschitz + 1e-9)
                throw InputError(d.graph.label + ": sampled Lipschitz quotient " + std::to_string(q) +
                                 " exceeds the declared constant " + std::to_string(d.graph.lipschitz));
            s += std::hypot(xs[k] - p.x, t - p.t);
        }
        d.boundary_samples.push_back({xs[k], t, s});
        gmin = std::min(gmin, t);
        gmax = std::max(gmax, t);
    }
    d.box = {-R, R, gmin - 0.1, std::max(R, gmax) + 0.5 * R};
    const double H = d.box.t_max - d.box.t_min;
    for (double x : detail::sample_abscissae(d.graph, -R - H, R + H, d.sample_spacing))
        d.polyline.push_back(Row2(x, d.graph.g(x)));
    return d;
}

inline GraphDomain build_domain(const GraphSpec& spec, int n, double R, int grid_n) {
    return build_domain_from_graph(make_graph(spec), n, R, grid_n);
}

/// Unsigned distance from X to the graph.
inline double distance_to_graph(const GraphDomain& d, const Row2& X) {
    const auto& P = d.polyline;
    const double x = X(0);
    if (x < P.front()(0) || x > P.back()(0)) throw InputError("point outside the sampled boundary range");
    auto it = std::lower_bound(P.begin(), P.end(), x, [](const Row2& p, double v) { return p(0) < v; });
    std::size_t k0 = static_cast<std::size_t>(it - P.begin());
    if (k0 > 0) --k0;
    double best = std::numeric_limits<double>::infinity();
    std::size_t kbest = k0;
    auto seg = [&](std::size_t k) {
        const Row2 a = P[k], b = P[k + 1];
        const Row2 ab = b - a;
        const double s = std::clamp((X - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        const double dist = (X - (a + s * ab)).norm();
        if (dist < best) {
            best = dist;
            kbest = k;
        }
    };
    for (std::size_t k = k0; k + 1 < P.size(); ++k) {
        if (P[k](0) - x > best) break;
        seg(k);
    }
    for (std::size_t k = k0; k-- > 0;) {
        if (x - P[k + 1](0) > best) break;
        seg(k);
    }
    if (d.graph.piecewise_linear) return best;
    // refine against the true graph near the best segment
    double lo = P[kbest > 0 ? kbest - 1 : 0](0), hi = P[std::min(kbest + 2, P.size() - 1)](0);
    auto f = [&](double z) { return std::hypot(z - X(0), d.graph.g(z) - X(1)); };
    const double gr = 0.5 * (std::sqrt(5.0) - 1);
    double c = hi - gr * (hi - lo), e = lo + gr * (hi - lo), fc = f(c), fe = f(e);
    for (int it = 0; it < 60; ++it) {
        if (fc < fe) {
            hi = e;
            e = c;
            fe = fc;
            c = hi - gr * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = e;
            fc = fe;
            e = lo + gr * (hi - lo);
            fe = f(e);
        }
    }
    return std::min(best, std::min(fc, fe));
}

/// delta(X) = dist(X, boundary) for X in the closed domain.
inline double dist_to_boundary(const GraphDomain& d, const Row2& X) {
    if (X(1) < d.g(X(0)) - 1e-12 * (1 + std::abs(X(1)))) throw InputError("point outside domain");
    return distance_to_graph(d, X);
}

// ---------------------------------------------------------------------------
// Whitney decomposition

struct WhitneyBox {
    Row2 center;
    double half_width;
    int generation;
    double delta_at_center;
    long long lattice_i, lattice_k;
};

struct WhitneyDecomposition {
    std::vector<WhitneyBox> boxes;
    int generations = 0;
    double cutoff_radius = 0;  // r below which nothing is resolved
    double cutoff_delta = 0;   // delta below which the region is not covered
    std::size_t dropped_outside_box = 0;
};

/// Generation j has scale d = r 2^-j; lattice squares of half-width d/8 anchored at the
/// boundary point, kept when the center lies in B(x0, r) and delta(center) is in [d/2, d).
inline WhitneyDecomposition whitney_decomposition(const GraphDomain& d, double x0, double r, double grid_h) {
    WhitneyDecomposition w;
    w.cutoff_radius = 16 * grid_h;
    const Row2 P = d.boundary_point(x0);
    if (r < w.cutoff_radius) {
        w.cutoff_delta = r;
        return w;
    }
    const double M = d.lipschitz_M();
    const double slack = std::sqrt(1 + M * M);
    for (int j = 0;; ++j) {
        const double dj = r * std::ldexp(1.0, -j);
        const double hw = dj / 8;
        if (hw < 2 * grid_h) break;
        w.generations = j + 1;
        w.cutoff_delta = dj / 2;
        const double side = 2 * hw;
        const long long nmax = static_cast<long long>(std::ceil(r / side)) + 1;
        for (long long kk = -nmax; kk <= nmax; ++kk)
            for (long long ii = -nmax; ii <= nmax; ++ii) {
                const Row2 c = P + Row2((ii + 0.5) * side, (kk + 0.5) * side);
                if ((c - P).norm() >= r) continue;
                const double vert = c(1) - d.g(c(0));
                if (vert < dj / 2 || vert > dj * slack + 1e-12) continue;
                const double delta = distance_to_graph(d, c);
                if (delta < dj / 2 || delta >= dj) continue;
                if (c(0) - hw <= d.box.x_min || c(0) + hw >= d.box.x_max || c(1) + hw >= d.box.t_max) {
                    ++w.dropped_outside_box;
                    continue;
                }
                w.boxes.push_back({c, hw, j, delta, ii, kk});
            }
    }
    return w;
}

struct WhitneyCoverage {
    double region_measure = 0, covered_measure = 0, overlap_measure = 0;
    double leakage() const { return region_measure > 0 ? 1 - covered_measure / region_measure : 0; }
};

/// Sampled coverage of {Y in B(x0,r) cap Omega : delta(Y) >= cutoff_delta}.
inline WhitneyCoverage whitney_coverage(const GraphDomain& d, const WhitneyDecomposition& w, double x0, double r,
                                        int per_axis = 200) {
    WhitneyCoverage cov;
    if (w.boxes.empty()) return cov;
    const Row2 P = d.boundary_point(x0);
    std::vector<std::unordered_set<long long>> cells(w.generations);
    auto key = [](long long i, long long k) { return (i + (1LL << 30)) * (1LL << 31) + (k + (1LL << 30)); };
    for (const auto& b : w.boxes) cells[b.generation].insert(key(b.lattice_i, b.lattice_k));
    const double cell = 2 * r / per_axis, area = cell * cell;
    for (int a = 0; a < per_axis; ++a)
        for (int b = 0; b < per_axis; ++b) {
            const Row2 Y = P + Row2(-r + (a + 0.5) * cell, -r + (b + 0.5) * cell);
            if ((Y - P).norm() >= r || !d.inside(Y)) continue;
            if (distance_to_graph(d, Y) < w.cutoff_delta) continue;
            cov.region_measure += area;
            int hits = 0;
            for (int j = 0; j < w.generations; ++j) {
                const double side = 2 * (r * std::ldexp(1.0, -j) / 8);
                const long long ii = static_cast<long long>(std::floor((Y(0) - P(0)) / side));
                const long long kk = static_cast<long long>(std::floor((Y(1) - P(1)) / side));
                if (cells[j].count(key(ii, kk))) ++hits;
            }
            if (hits > 0) cov.covered_measure += area;
            if (hits > 1) cov.overlap_measure += area;
        }
    return cov;
}

// ---------------------------------------------------------------------------
// Graph of the perturbed domain

/// Solves first-coordinate(Phi(z, g(z))) = x for z.
inline double preimage_abscissa(const Graph& G, const BiLipMap& m, double x) {
    auto F = [&](double z) { return m.phi(Row2(z, G.g(z)))(0) - x; };
    double z = x - F(x);
    double lo = -std::numeric_limits<double>::infinity(), hi = -lo;
    for (int it = 0; it < 50; ++it) {
        const double f = F(z);
        if (std::abs(f) <= 1e-14 * (1 + std::abs(x))) return z;
        if (f < 0) lo = std::max(lo, z);
        else hi = std::min(hi, z);
        const Mat2 J = m.jacobian(Row2(z, G.g(z)));
        const double dF = J(0, 0) + G.dg(z) * J(1, 0);
        double zn = z - f / dF;
        if (std::isfinite(lo) && std::isfinite(hi) && (zn <= lo || zn >= hi)) zn = 0.5 * (lo + hi);
        z = zn;
    }
    const double f = F(z);
    if (std::abs(f) <= 1e-10 * (1 + std::abs(x))) return z;
    std::ostringstream os;
    os << "graph recovery: Newton did not converge at x = " << x;
    throw InvariantViolation("recover_graph", os.str());
}

struct RecoveredGraphInfo {
    double lipschitz_bound = 0;  // (M + C eps) / (1 - C eps)
    double max_residual = 0;
};

inline GraphDomain recover_graph(const GraphDomain& d0, const BiLipMap& m, RecoveredGraphInfo* info = nullptr) {
    const double M = d0.lipschitz_M(), eps = m.eps_bound;
    if (!(eps * (M + 1) < 0.5))
        throw InputError("recover_graph requires eps (M + 1) < 1/2; got eps = " + std::to_string(eps));
    auto base = std::make_shared<const Graph>(d0.graph);
    auto map = std::make_shared<const BiLipMap>(m);
    Graph G;
    G.label = "image of " + base->label + " under " + m.label;
    G.g = [base, map](double x) {
        const double z = preimage_abscissa(*base, *map, x);
        return map->phi(Row2(z, base->g(z)))(1);
    };
    G.dg = [base, map](double x) {
        const double z = preimage_abscissa(*base, *map, x);
        const Mat2 J = map->jacobian(Row2(z, base->g(z)));
        const double gp = base->dg(z);
        return (J(0, 1) + gp * J(1, 1)) / (J(0, 0) + gp * J(1, 0));
    };
    for (double k : base->kinks) G.kinks.push_back(map->phi(Row2(k, base->g(k)))(0));
    const double C = std::sqrt(1 + M * M);
    G.lipschitz = (M + C * eps) / (1 - C * eps);
    G.piecewise_linear = base->piecewise_linear && m.label != "wave" && m.label != "vertical-wave";
    // least-squares asymptotic lines over the outer halves
    auto fit = [&](double a, double b) {
        const int n = 64;
        double sx = 0, st = 0, sxx = 0, sxt = 0;
        for (int k = 0; k <= n; ++k) {
            const double x = a + (b - a) * k / n, t = G.g(x);
            sx += x;
            st += t;
            sxx += x * x;
            sxt += x * t;
        }
        const double N = n + 1, sl = (N * sxt - sx * st) / (N * sxx - sx * sx);
        return std::pair<double, double>(sl, (st - sl * sx) / N);
    };
    const double R = d0.R;
    const auto [sl, il] = fit(-R, -0.5 * R);
    const auto [sr, ir] = fit(0.5 * R, R);
    G.far = {sl, il, sr, ir};
    GraphDomain d = build_domain_from_graph(G, d0.dim_n, d0.R, d0.grid_n);
    if (info) {
        info->lipschitz_bound = d.graph.lipschitz;
        for (const auto& s : d0.boundary_samples) {
            const Row2 Y = m.phi(Row2(s.x, s.t));
            if (Y(0) < -R || Y(0) > R) continue;
            info->max_residual = std::max(info->max_residual, std::abs(d.g(Y(0)) - Y(1)));
        }
    }
    return d;
}

}  // namespace covlab
