#pragma once

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <vector>

namespace covlab {

struct QuadNode {
    double u, w;
};

/// 16-point Gauss–Legendre rule on [-1, 1].
inline const std::vector<QuadNode>& gauss16() {
    static const std::vector<QuadNode> rule = [] {
        using G = boost::math::quadrature::gauss<double, 16>;
        std::vector<QuadNode> r;
        const auto& a = G::abscissa();
        const auto& w = G::weights();
        for (std::size_t k = 0; k < a.size(); ++k) {
            r.push_back({-a[k], w[k]});
            r.push_back({a[k], w[k]});
        }
        std::sort(r.begin(), r.end(), [](const QuadNode& p, const QuadNode& q) { return p.u < q.u; });
        return r;
    }();
    return rule;
}

/// Composite rule: each interval [breaks[k], breaks[k+1]] split into `panels` equal panels.
inline std::vector<QuadNode> composite_rule(const std::vector<double>& breaks, int panels) {
    const auto& base = gauss16();
    std::vector<QuadNode> out;
    out.reserve((breaks.size() - 1) * panels * base.size());
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        const double a = breaks[k], b = breaks[k + 1];
        if (!(b > a)) continue;
        const double w = (b - a) / panels;
        for (int p = 0; p < panels; ++p) {
            const double c = a + (p + 0.5) * w;
            for (const auto& q : base) out.push_back({c + 0.5 * w * q.u, 0.5 * w * q.w});
        }
    }
    return out;
}

}  // namespace covlab
