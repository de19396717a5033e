#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace nvdyn::detail {

// Dense row-major helpers for the small systems used in this library
// (normal equations up to 6x6, the 5-level rate matrix). Not general-purpose.

using Matrix = std::vector<double>;  // n*n, row-major

inline double& at(Matrix& m, std::size_t n, std::size_t i, std::size_t j) { return m[i * n + j]; }
inline double at(const Matrix& m, std::size_t n, std::size_t i, std::size_t j) { return m[i * n + j]; }

// In-place Cholesky factorization of a symmetric positive definite matrix.
// Returns false if a pivot drops below `eps` times the largest diagonal.
inline bool cholesky(Matrix& a, std::size_t n, double eps = 1e-14) {
    double dmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) dmax = std::max(dmax, std::abs(at(a, n, i, i)));
    if (dmax == 0.0) return false;
    for (std::size_t j = 0; j < n; ++j) {
        double d = at(a, n, j, j);
        for (std::size_t k = 0; k < j; ++k) d -= at(a, n, j, k) * at(a, n, j, k);
        if (!(d > eps * dmax)) return false;
        const double l = std::sqrt(d);
        at(a, n, j, j) = l;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = at(a, n, i, j);
            for (std::size_t k = 0; k < j; ++k) v -= at(a, n, i, k) * at(a, n, j, k);
            at(a, n, i, j) = v / l;
        }
    }
    return true;
}

// Solves L L^T x = b given the factor from cholesky(). b is overwritten with x.
inline void cholesky_solve(const Matrix& l, std::size_t n, std::vector<double>& b) {
    for (std::size_t i = 0; i < n; ++i) {
        double v = b[i];
        for (std::size_t k = 0; k < i; ++k) v -= at(l, n, i, k) * b[k];
        b[i] = v / at(l, n, i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double v = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) v -= at(l, n, k, ii) * b[k];
        b[ii] = v / at(l, n, ii, ii);
    }
}

// Inverse of an SPD matrix via its Cholesky factor. Returns the full inverse.
inline Matrix cholesky_inverse(const Matrix& l, std::size_t n) {
    Matrix inv(n * n, 0.0);
    std::vector<double> e(n);
    for (std::size_t c = 0; c < n; ++c) {
        std::fill(e.begin(), e.end(), 0.0);
        e[c] = 1.0;
        cholesky_solve(l, n, e);
        for (std::size_t r = 0; r < n; ++r) at(inv, n, r, c) = e[r];
    }
    // Symmetrize against roundoff.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (at(inv, n, i, j) + at(inv, n, j, i));
            at(inv, n, i, j) = v;
            at(inv, n, j, i) = v;
        }
    return inv;
}

// Gaussian elimination with partial pivoting. Returns false on a zero pivot.
// a is n x n (destroyed); b is the right-hand side, overwritten with x.
inline bool solve_lu(Matrix a, std::size_t n, std::vector<double>& b, double eps = 1e-300) {
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(at(a, n, r, col)) > std::abs(at(a, n, piv, col))) piv = r;
        if (std::abs(at(a, n, piv, col)) < eps) return false;
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(at(a, n, piv, j), at(a, n, col, j));
            std::swap(b[piv], b[col]);
        }
        const double d = at(a, n, col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = at(a, n, r, col) / d;
            if (f == 0.0) continue;
            for (std::size_t j = col; j < n; ++j) at(a, n, r, j) -= f * at(a, n, col, j);
            b[r] -= f * b[col];
        }
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double v = b[ii];
        for (std::size_t j = ii + 1; j < n; ++j) v -= at(a, n, ii, j) * b[j];
        b[ii] = v / at(a, n, ii, ii);
    }
    return true;
}

}  // namespace nvdyn::detail
