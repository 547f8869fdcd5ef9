#pragma once

#include "covlab/core.hpp"

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

namespace covlab {

struct Box {
    double x_min = 0, x_max = 0, t_min = 0, t_max = 0;
    bool contains(const Row2& X) const {
        return X(0) >= x_min && X(0) <= x_max && X(1) >= t_min && X(1) <= t_max;
    }
};

/// Uniform node grid: nodes (x0 + i h, t0 + j h), 0 <= i <= nx, 0 <= j <= ny.
struct Grid {
    double x0 = 0, t0 = 0, h = 1;
    int nx = 0, ny = 0;

    int cols() const { return nx + 1; }
    int rows() const { return ny + 1; }
    std::size_t size() const { return static_cast<std::size_t>(cols()) * rows(); }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * cols() + i; }
    int col_of(std::size_t k) const { return static_cast<int>(k % cols()); }
    int row_of(std::size_t k) const { return static_cast<int>(k / cols()); }
    double x(int i) const { return x0 + i * h; }
    double t(int j) const { return t0 + j * h; }
    Row2 node(int i, int j) const { return Row2(x(i), t(j)); }
    Row2 node(std::size_t k) const { return node(col_of(k), row_of(k)); }
    bool in_range(int i, int j) const { return i >= 0 && i <= nx && j >= 0 && j <= ny; }
    /// Distance in nodes to the nearest wall of the grid.
    int wall_margin(int i, int j) const { return std::min({i, nx - i, j, ny - j}); }
    Box box() const { return {x0, x0 + nx * h, t0, t0 + ny * h}; }
};

/// Node-sampled field with a validity mask.
template <class T>
struct Field {
    Grid grid;
    std::vector<T> values;
    std::vector<std::uint8_t> valid;

    Field() = default;
    explicit Field(const Grid& g, const T& fill = T{})
        : grid(g), values(g.size(), fill), valid(g.size(), 0) {}

    bool ok(std::size_t k) const { return valid[k] != 0; }
    bool ok(int i, int j) const { return grid.in_range(i, j) && valid[grid.index(i, j)] != 0; }
    const T& operator()(int i, int j) const { return values[grid.index(i, j)]; }
    void set(std::size_t k, const T& v) {
        values[k] = v;
        valid[k] = 1;
    }
    std::size_t count_valid() const {
        std::size_t c = 0;
        for (auto v : valid) c += v;
        return c;
    }
};

template <class T>
inline T zero_value() {
    if constexpr (std::is_arithmetic_v<T>) return T(0);
    else return T::Zero();
}

namespace detail {

inline void cubic_weights(double s, std::array<double, 4>& w) {
    // Lagrange weights for nodes at -1, 0, 1, 2
    w[0] = -s * (s - 1) * (s - 2) / 6.0;
    w[1] = (s + 1) * (s - 1) * (s - 2) / 2.0;
    w[2] = -(s + 1) * s * (s - 2) / 2.0;
    w[3] = (s + 1) * s * (s - 1) / 6.0;
}

}  // namespace detail

/// Bilinear interpolation; nullopt unless all four cell nodes are valid.
template <class T>
std::optional<T> interp_bilinear(const Field<T>& f, const Row2& X) {
    const Grid& g = f.grid;
    const double u = (X(0) - g.x0) / g.h, v = (X(1) - g.t0) / g.h;
    int i = static_cast<int>(std::floor(u)), j = static_cast<int>(std::floor(v));
    if (i == g.nx) --i;
    if (j == g.ny) --j;
    if (i < 0 || j < 0 || i >= g.nx || j >= g.ny) return std::nullopt;
    const double s = u - i, r = v - j;
    if (!f.ok(i, j) || !f.ok(i + 1, j) || !f.ok(i, j + 1) || !f.ok(i + 1, j + 1)) return std::nullopt;
    T out = (1 - s) * (1 - r) * f(i, j) + s * (1 - r) * f(i + 1, j) + (1 - s) * r * f(i, j + 1) +
            s * r * f(i + 1, j + 1);
    return out;
}

/// Tensor-product cubic Lagrange interpolation on the 4x4 surrounding nodes.
template <class T>
std::optional<T> interp_cubic(const Field<T>& f, const Row2& X) {
    const Grid& g = f.grid;
    const double u = (X(0) - g.x0) / g.h, v = (X(1) - g.t0) / g.h;
    int i = static_cast<int>(std::floor(u)), j = static_cast<int>(std::floor(v));
    if (i < 1 || j < 1 || i + 2 > g.nx || j + 2 > g.ny) return std::nullopt;
    std::array<double, 4> wx, wt;
    detail::cubic_weights(u - i, wx);
    detail::cubic_weights(v - j, wt);
    T out = zero_value<T>();
    for (int b = 0; b < 4; ++b) {
        T row = zero_value<T>();
        for (int a = 0; a < 4; ++a) {
            const std::size_t k = g.index(i - 1 + a, j - 1 + b);
            if (!f.valid[k]) return std::nullopt;
            row += wx[a] * f.values[k];
        }
        out += wt[b] * row;
    }
    return out;
}

/// Cubic where the full stencil is valid, bilinear otherwise.
template <class T>
std::optional<T> interp(const Field<T>& f, const Row2& X) {
    if (auto c = interp_cubic(f, X)) return c;
    return interp_bilinear(f, X);
}

template <class T>
int components_of() {
    if constexpr (std::is_arithmetic_v<T>) return 1;
    else return static_cast<int>(T::SizeAtCompileTime);
}

template <class T>
void flatten(const T& v, double* out) {
    if constexpr (std::is_arithmetic_v<T>) {
        out[0] = static_cast<double>(v);
    } else {
        // row-major order of the components
        for (int r = 0; r < v.rows(); ++r)
            for (int c = 0; c < v.cols(); ++c) out[r * v.cols() + c] = v(r, c);
    }
}

/// Binary grid export. Layout (little endian):
///   char[4] "CVLG", u32 version=1, u32 n, u32 grid_n, u32 cols, u32 rows, u32 components,
///   f64 x_min, x_max, t_min, t_max, h,
///   then cols*rows*components f64 values, t-major then x then component; invalid nodes are NaN.
template <class T>
void write_grid_binary(const std::string& path, const Field<T>& f, int grid_n) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot open " + path + " for writing");
    const Grid& g = f.grid;
    const Box b = g.box();
    os.write("CVLG", 4);
    const std::uint32_t hdr[6] = {1u, 2u, static_cast<std::uint32_t>(grid_n),
                                  static_cast<std::uint32_t>(g.cols()),
                                  static_cast<std::uint32_t>(g.rows()),
                                  static_cast<std::uint32_t>(components_of<T>())};
    os.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    const double geo[5] = {b.x_min, b.x_max, b.t_min, b.t_max, g.h};
    os.write(reinterpret_cast<const char*>(geo), sizeof(geo));
    const int nc = components_of<T>();
    std::vector<double> buf(nc);
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (f.valid[k]) flatten(f.values[k], buf.data());
        else std::fill(buf.begin(), buf.end(), std::numeric_limits<double>::quiet_NaN());
        os.write(reinterpret_cast<const char*>(buf.data()), nc * sizeof(double));
    }
}

/// CSV export of valid nodes: x,t,c0[,c1,...].
template <class T>
void write_grid_csv(const std::string& path, const Field<T>& f) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw InputError("cannot open " + path + " for writing");
    const int nc = components_of<T>();
    std::fprintf(fp, "x,t");
    for (int c = 0; c < nc; ++c) std::fprintf(fp, ",c%d", c);
    std::fprintf(fp, "\n");
    std::vector<double> buf(nc);
    for (std::size_t k = 0; k < f.grid.size(); ++k) {
        if (!f.valid[k]) continue;
        const Row2 X = f.grid.node(k);
        flatten(f.values[k], buf.data());
        std::fprintf(fp, "%.17g,%.17g", X(0), X(1));
        for (double v : buf) std::fprintf(fp, ",%.17g", v);
        std::fprintf(fp, "\n");
    }
    std::fclose(fp);
}

}  // namespace covlab
