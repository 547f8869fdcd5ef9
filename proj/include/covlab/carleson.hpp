#pragma once

#include "covlab/core.hpp"
#include "covlab/geometry.hpp"
#include "covlab/grid.hpp"

#include <fstream>
#include <vector>

namespace covlab {

struct CarlesonBox {
    double x0, r;
};

struct PerBox {
    double x0, r, value;
    double resolved = 0, modeled = 0;  // value = (resolved + modeled) / r
    int generations = 0;
    std::size_t skipped_whitney = 0;
};

struct CarlesonReport {
    double norm_estimate = 0;
    std::vector<PerBox> per_box;
    CarlesonBox maximizer{0, 0};
    double cutoff_collar = 0;            // delta below which the sum is modeled, at the maximizer
    double modeled_collar_fraction = 0;  // largest over boxes with a nonzero sum
    bool unreliable = false;
    std::size_t skipped_boxes = 0;       // Carleson boxes below the resolution cutoff
    std::size_t skipped_whitney = 0;     // Whitney boxes where f was not sampled
    double sup_sampled = 0;              // largest |f| seen by the sampler

    double norm() const { return std::sqrt(norm_estimate); }
};

/// Boxes centred on a regular set of boundary abscissae in |x0| <= R/2 with dyadic radii r <= R/2,
/// keeping |x0| + r <= 3R/4 so that no box reaches the side walls of the truncation.
inline std::vector<CarlesonBox> default_box_family(const GraphDomain& d, int centers = 5, int radii = 4) {
    std::vector<CarlesonBox> out;
    const double half = d.R / 2;
    for (int a = 0; a < centers; ++a) {
        const double x0 = centers == 1 ? 0.0 : -half + 2 * half * a / (centers - 1);
        for (int b = 0; b < radii; ++b) {
            const double r = half * std::ldexp(1.0, -b);
            if (std::abs(x0) + r <= 0.75 * d.R * (1 + 1e-12)) out.push_back({x0, r});
        }
    }
    return out;
}

namespace detail {

/// Geometric continuation of the per-generation sums below the last resolved generation.
/// The ratio is measured only once generation 0 (clipped by the ball) is out of the picture.
inline double collar_tail(const std::vector<double>& S) {
    if (S.empty()) return 0;
    const double last = S.back();
    if (last <= 0) return 0;
    double q = 0.5;
    if (S.size() >= 3 && S[S.size() - 2] > 0) q = std::clamp(last / S[S.size() - 2], 0.0, 0.9);
    return last * q / (1 - q);
}

enum class Mode { sup, mean };

inline CarlesonReport carleson_norm(const Field<double>& f, const GraphDomain& d,
                                    const std::vector<CarlesonBox>& family, Mode mode) {
    CarlesonReport rep;
    const double h = f.grid.h;
    rep.per_box.resize(family.size());
    std::vector<double> sup_seen(family.size(), 0.0), cutoff(family.size(), 0.0);
    std::vector<std::uint8_t> resolved(family.size(), 0);
    parallel_for(family.size(), [&](std::size_t b) {
        const auto [x0, r] = family[b];
        PerBox pb{x0, r, 0.0};
        const auto w = whitney_decomposition(d, x0, r, h);
        cutoff[b] = w.cutoff_delta;
        if (w.generations == 0) {
            rep.per_box[b] = pb;
            return;
        }
        resolved[b] = 1;
        pb.generations = w.generations;
        std::vector<double> S(w.generations, 0.0);
        static const double gl[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
        static const double gw[3] = {5.0 / 9, 8.0 / 9, 5.0 / 9};
        for (const auto& W : w.boxes) {
            const double hw = W.half_width;
            double acc = 0;
            bool ok = true;
            for (int a = 0; a < 3 && ok; ++a)
                for (int c = 0; c < 3 && ok; ++c) {
                    // sup mode: 3x3 points at offsets {-hw/2, 0, hw/2}, inside both the square and
                    // the half ball; mean mode: 3x3 Gauss rule over the square
                    const Row2 off = mode == Mode::sup ? Row2((a - 1) * hw / 2, (c - 1) * hw / 2)
                                                       : Row2(gl[a] * hw, gl[c] * hw);
                    const auto v = interp_bilinear(f, W.center + off);
                    if (!v) {
                        ok = false;
                        break;
                    }
                    const double m = std::abs(*v);
                    sup_seen[b] = std::max(sup_seen[b], m);
                    if (mode == Mode::sup) acc = std::max(acc, m * m);
                    else acc += 0.25 * gw[a] * gw[c] * m * m;
                }
            if (!ok) {
                ++pb.skipped_whitney;
                continue;
            }
            S[W.generation] += 4 * hw * hw * acc / W.delta_at_center;
        }
        for (double s : S) pb.resolved += s;
        pb.modeled = collar_tail(S);
        pb.value = (pb.resolved + pb.modeled) / r;
        rep.per_box[b] = pb;
    });
    for (std::size_t b = 0; b < family.size(); ++b) {
        const auto& pb = rep.per_box[b];
        rep.sup_sampled = std::max(rep.sup_sampled, sup_seen[b]);
        rep.skipped_whitney += pb.skipped_whitney;
        if (!resolved[b]) {
            ++rep.skipped_boxes;
            continue;
        }
        const double total = pb.resolved + pb.modeled;
        if (total > 0) rep.modeled_collar_fraction = std::max(rep.modeled_collar_fraction, pb.modeled / total);
        if (pb.value > rep.norm_estimate || rep.maximizer.r == 0) {
            rep.norm_estimate = pb.value;
            rep.maximizer = {pb.x0, pb.r};
            rep.cutoff_collar = cutoff[b];
        }
    }
    rep.unreliable = rep.modeled_collar_fraction > 0.3;
    return rep;
}

}  // namespace detail

/// sup_{B} r^{-1} sum_W |W| (sup_{half ball} |f|)^2 / delta, with the collar below the resolved
/// generations continued geometrically.
inline CarlesonReport cmsup_norm(const Field<double>& f, const GraphDomain& d, const std::vector<CarlesonBox>& family) {
    return detail::carleson_norm(f, d, family, detail::Mode::sup);
}

/// As cmsup_norm with |f|^2 integrated over each Whitney square instead of its sup.
inline CarlesonReport cm_norm(const Field<double>& f, const GraphDomain& d, const std::vector<CarlesonBox>& family) {
    return detail::carleson_norm(f, d, family, detail::Mode::mean);
}

struct LinfFromCM {
    double sup = 0;
    double ratio = 0;  // sup / sqrt(norm), 0 when both vanish
};

inline LinfFromCM linf_from_cmsup(const CarlesonReport& rep) {
    LinfFromCM out;
    out.sup = rep.sup_sampled;
    out.ratio = rep.norm_estimate > 0 ? out.sup / std::sqrt(rep.norm_estimate) : 0.0;
    return out;
}

inline void write_per_box_csv(const std::string& path, const CarlesonReport& rep) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open " + path + " for writing");
    os << "x0,r,value\n";
    os.precision(17);
    for (const auto& b : rep.per_box) os << b.x0 << ',' << b.r << ',' << b.value << '\n';
}

/// |F| as a scalar field for any vector or matrix field (Frobenius norm).
template <class T>
Field<double> magnitude(const Field<T>& F) {
    Field<double> out(F.grid, 0.0);
    for (std::size_t k = 0; k < F.grid.size(); ++k)
        if (F.ok(k)) {
            if constexpr (std::is_arithmetic_v<T>) out.set(k, std::abs(F.values[k]));
            else out.set(k, F.values[k].norm());
        }
    return out;
}

}  // namespace covlab
