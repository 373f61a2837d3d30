// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "lowflow/linalg.hpp"

namespace lowflow {

struct EigResult {
    Vec values;       // descending
    Matrix vectors;   // column k pairs with values[k]
};

// Cyclic Jacobi eigensolver for symmetric matrices. Chosen over iterative
// extremal methods because callers need the full spectrum (condition ratios
// look at the smallest positive eigenvalue, not just the top); cost is
// O(n^3) per sweep, fine for the n <= ~2000 matrices produced here.
// Terminates when the off-diagonal Frobenius mass drops below 1e-12 ||A||_F.
inline EigResult sym_eig(const Matrix& a) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw NumericError("sym_eig: matrix must be square");
    double max_abs = 0.0;
    for (double v : a.data()) max_abs = std::max(max_abs, std::abs(v));
    const double sym_tol = 1e-9 * std::max(1.0, max_abs);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > sym_tol)
                throw NumericError("sym_eig: input is not symmetric");

    Matrix b = a;
    // enforce exact symmetry so rotations stay self-consistent
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (b(i, j) + b(j, i));
            b(i, j) = b(j, i) = m;
        }
    Matrix v = Matrix::identity(n);

    const double total_norm = frobenius_norm(b);
    const double off_target = 1e-12 * total_norm;

    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += b(i, j) * b(i, j);
        return std::sqrt(2.0 * s);
    };

    constexpr int kMaxSweeps = 64;
    int sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
        const double off = off_norm();
        if (off <= off_target || off == 0.0) break;
        // skipping rotations below this cannot keep the total off-mass above
        // target once the larger entries are annihilated
        const double skip = off_target / (static_cast<double>(n) + 1.0);
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = b(p, q);
                if (std::abs(apq) <= skip) continue;
                const double tau = (b(q, q) - b(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double app = b(p, p), aqq = b(q, q);
                b(p, p) = app - t * apq;
                b(q, q) = aqq + t * apq;
                b(p, q) = b(q, p) = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i == p || i == q) continue;
                    const double aip = b(i, p), aiq = b(i, q);
                    b(i, p) = b(p, i) = c * aip - s * aiq;
                    b(i, q) = b(q, i) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    if (sweep == kMaxSweeps && off_norm() > off_target)
        throw NumericError("sym_eig: Jacobi sweeps failed to converge");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return b(i, i) > b(j, j); });
    EigResult out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = b(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

// lambda_max over the smallest eigenvalue exceeding rank_tol * lambda_max.
// Eigenvalues at or below the cutoff are treated as numerical rank
// deficiency and excluded; if nothing exceeds the cutoff the ratio is
// +infinity. Every report that prints a condition number also prints the
// rank_tol that produced it.
inline double condition_number(const Vec& eigs_desc, double rank_tol = 1e-10) {
    if (eigs_desc.empty()) throw NumericError("condition_number: empty spectrum");
    const double lmax = eigs_desc.front();
    if (!(lmax > 0.0)) return std::numeric_limits<double>::infinity();
    const double cutoff = rank_tol * lmax;
    double lmin_pos = 0.0;
    for (double l : eigs_desc)
        if (l > cutoff) lmin_pos = l;
    if (lmin_pos == 0.0) return std::numeric_limits<double>::infinity();
    return lmax / lmin_pos;
}

// Spectral norm of a general rectangular matrix via the Gram matrix of the
// thinner side.
inline double op_norm(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) return 0.0;
    const bool tall = m.rows() >= m.cols();
    const Matrix g = tall ? matmul(transpose(m), m) : matmul(m, transpose(m));
    const auto eig = sym_eig(g);
    return std::sqrt(std::max(0.0, eig.values.front()));
}

}  // namespace lowflow
