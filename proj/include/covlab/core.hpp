#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace covlab {

// Points and frame vectors are rows; gradients of scalar fields are columns.
using Row2 = Eigen::RowVector2d;
using Col2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double pi = 3.14159265358979323846;

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range input (CLI exit code 1).
class InputError : public Error {
public:
    using Error::Error;
};

/// A hard numerical invariant failed (CLI exit code 2).
class InvariantViolation : public Error {
public:
    InvariantViolation(std::string invariant, const std::string& detail)
        : Error(invariant + ": " + detail), invariant_(std::move(invariant)) {}
    const std::string& invariant() const { return invariant_; }

private:
    std::string invariant_;
};

inline void require(bool cond, const std::string& invariant, const std::string& detail = "") {
    if (!cond) throw InvariantViolation(invariant, detail);
}

inline void set_jobs(int jobs) {
#ifdef _OPENMP
    if (jobs > 0) omp_set_num_threads(jobs);
#else
    (void)jobs;
#endif
}

/// Runs f(k) for k in [0, n). Iterations must write disjoint state.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 256)
    for (long long k = 0; k < count; ++k) f(static_cast<std::size_t>(k));
}

inline double op_norm(const Mat2& A) {
    // largest singular value of a 2x2 matrix
    const double p = std::hypot(A(0, 0) + A(1, 1), A(1, 0) - A(0, 1));
    const double q = std::hypot(A(0, 0) - A(1, 1), A(0, 1) + A(1, 0));
    return 0.5 * (p + q);
}

inline double max_abs(const Mat2& A) { return A.cwiseAbs().maxCoeff(); }

inline double rel_diff(double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

}  // namespace covlab
