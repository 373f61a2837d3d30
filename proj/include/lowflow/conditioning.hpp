// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "lowflow/linalg.hpp"
#include "lowflow/parallel.hpp"
#include "lowflow/rng.hpp"
#include "lowflow/schedule.hpp"

namespace lowflow {

// Expected squared differences between two points on the same conditional
// path (shared x0, independent eps at times t1 and t2):
//   dv2 = E ||vstar(t1) - vstar(t2)||^2, dx2 = E ||xt(t1) - xt(t2)||^2.
struct PairMoments {
    double dv2;
    double dx2;
};

struct McMoments {
    double dv2;
    double dv2_stderr;
    double dx2;
    double dx2_stderr;
    std::size_t n;
};

struct ConditioningReport {
    double t1;
    double t2;
    double dv2_exact;
    double dx2_exact;
    double kappa_exact;
    double kappa_lb;
    double kappa_mc;         // NaN when n_mc == 0
    double kappa_mc_stderr;  // delta-method propagation, NaN when n_mc == 0
    std::size_t n_mc;
};

namespace detail {
inline void check_pair_domain(double t1, double t2) {
    if (!(t1 > 0.0) || !(t1 <= 1.0) || !(t2 > 0.0) || !(t2 <= 1.0))
        throw NumericError("conditioning: t1, t2 must lie in (0, 1]");
}
}  // namespace detail

// Closed form: independent eps draws integrate out exactly, leaving
//   dv2 = (a'(t1)-a'(t2))^2 ||x0||^2 + d (b'(t1)^2 + b'(t2)^2)
//   dx2 = (a(t1)-a(t2))^2  ||x0||^2 + d (b(t1)^2  + b(t2)^2).
inline PairMoments moments_exact(const Schedule& s, double x0_norm, double t1, double t2,
                                 std::size_t dim) {
    detail::check_pair_domain(t1, t2);
    if (dim < 1) throw UsageError("moments_exact: dim must be >= 1");
    if (!(x0_norm >= 0.0)) throw NumericError("moments_exact: x0_norm must be >= 0");
    const auto e1 = s.eval(t1);
    const auto e2 = s.eval(t2);
    const double n2 = x0_norm * x0_norm;
    const double d = static_cast<double>(dim);
    PairMoments m;
    m.dv2 = (e1.dalpha - e2.dalpha) * (e1.dalpha - e2.dalpha) * n2 +
            d * (e1.dbeta * e1.dbeta + e2.dbeta * e2.dbeta);
    m.dx2 = (e1.alpha - e2.alpha) * (e1.alpha - e2.alpha) * n2 +
            d * (e1.beta * e1.beta + e2.beta * e2.beta);
    return m;
}

// Target-to-input sensitivity ratio sqrt(dv2 / dx2). For the rectified
// schedule at t1 = t2 = t this collapses to exactly 1/t.
inline double kappa_exact(const Schedule& s, double x0_norm, double t1, double t2,
                          std::size_t dim) {
    const auto m = moments_exact(s, x0_norm, t1, t2, dim);
    if (m.dx2 == 0.0)
        throw NumericError("kappa_exact: dx2 = 0, ratio diverges");
    return std::sqrt(m.dv2 / m.dx2);
}

// Closed-form lower bound on kappa_exact:
//   min(b'(t1), b'(t2)) / sqrt(b(t1)^2 + b(t2)^2 + ||x0||^2 (a(t1)-a(t2))^2 / d).
// Dominated by kappa_exact for every schedule and argument in the domain.
inline double kappa_lower_bound(const Schedule& s, double x0_norm, double t1, double t2,
                                std::size_t dim) {
    detail::check_pair_domain(t1, t2);
    if (dim < 1) throw UsageError("kappa_lower_bound: dim must be >= 1");
    const auto e1 = s.eval(t1);
    const auto e2 = s.eval(t2);
    const double da = e1.alpha - e2.alpha;
    const double denom = e1.beta * e1.beta + e2.beta * e2.beta +
                         x0_norm * x0_norm * da * da / static_cast<double>(dim);
    return std::min(e1.dbeta, e2.dbeta) / std::sqrt(denom);
}

// Monte-Carlo estimate of the same pair moments for a pinned x0. Sample i
// draws (eps1, eps2) from substream (seed, "mc", i); the chunked reduction
// below is fixed-order, so results are bitwise identical for any `threads`.
inline McMoments mc_moments(const Schedule& s, const Vec& x0, double t1, double t2,
                            std::size_t n, std::uint64_t seed, unsigned threads = 1) {
    detail::check_pair_domain(t1, t2);
    if (n < 2) throw UsageError("mc_moments: need n >= 2");
    const auto e1 = s.eval(t1);
    const auto e2 = s.eval(t2);
    const std::size_t d = x0.size();
    const double dda = e1.dalpha - e2.dalpha;
    const double da = e1.alpha - e2.alpha;

    constexpr std::size_t kChunk = 1024;
    const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
    struct Sums {
        double v = 0, v2 = 0, x = 0, x2 = 0;
    };
    std::vector<Sums> chunk_sums(n_chunks);

    parallel_for(n_chunks, threads, [&](std::size_t c) {
        Sums acc;
        const std::size_t lo = c * kChunk;
        const std::size_t hi = std::min(n, lo + kChunk);
        for (std::size_t i = lo; i < hi; ++i) {
            Rng rng = substream(seed, stream_tag("mc"), i);
            double dv2 = 0.0, dx2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double eps1 = rng.normal();
                const double eps2 = rng.normal();
                const double dv = dda * x0[j] + e1.dbeta * eps1 - e2.dbeta * eps2;
                const double dx = da * x0[j] + e1.beta * eps1 - e2.beta * eps2;
                dv2 += dv * dv;
                dx2 += dx * dx;
            }
            acc.v += dv2;
            acc.v2 += dv2 * dv2;
            acc.x += dx2;
            acc.x2 += dx2 * dx2;
        }
        chunk_sums[c] = acc;
    });

    Sums total;
    for (const auto& cs : chunk_sums) {
        total.v += cs.v;
        total.v2 += cs.v2;
        total.x += cs.x;
        total.x2 += cs.x2;
    }
    const double nn = static_cast<double>(n);
    McMoments out;
    out.n = n;
    out.dv2 = total.v / nn;
    out.dx2 = total.x / nn;
    const double var_v = std::max(0.0, (total.v2 / nn - out.dv2 * out.dv2) * nn / (nn - 1));
    const double var_x = std::max(0.0, (total.x2 / nn - out.dx2 * out.dx2) * nn / (nn - 1));
    out.dv2_stderr = std::sqrt(var_v / nn);
    out.dx2_stderr = std::sqrt(var_x / nn);
    return out;
}

// One report per grid point with t1 = t2 = t. n_mc = 0 skips the MC columns.
inline std::vector<ConditioningReport> condition_sweep(const Schedule& s, const Vec& x0,
                                                       const Vec& t_grid, std::size_t n_mc,
                                                       std::uint64_t seed,
                                                       unsigned threads = 1) {
    if (t_grid.empty()) throw UsageError("condition_sweep: empty t grid");
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > 0.0) || !(t_grid[i] <= 1.0))
            throw UsageError("condition_sweep: grid values must lie in (0, 1]");
        if (i > 0 && !(t_grid[i] < t_grid[i - 1]))
            throw UsageError("condition_sweep: grid must be strictly descending");
    }
    const double x0_norm = norm2(x0);
    std::vector<ConditioningReport> reports(t_grid.size());
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        const double t = t_grid[i];
        ConditioningReport r{};
        r.t1 = r.t2 = t;
        const auto m = moments_exact(s, x0_norm, t, t, x0.size());
        r.dv2_exact = m.dv2;
        r.dx2_exact = m.dx2;
        r.kappa_exact = kappa_exact(s, x0_norm, t, t, x0.size());
        r.kappa_lb = kappa_lower_bound(s, x0_norm, t, t, x0.size());
        r.n_mc = n_mc;
        if (n_mc > 0) {
            const auto mc = mc_moments(s, x0, t, t, n_mc, mix_seed(seed, i), threads);
            r.kappa_mc = std::sqrt(mc.dv2 / mc.dx2);
            // delta method for sqrt(u/v); draws for u and v are shared, so
            // this is an approximation and is reported as such
            const double rel_u = mc.dv2_stderr / mc.dv2;
            const double rel_v = mc.dx2_stderr / mc.dx2;
            r.kappa_mc_stderr = 0.5 * r.kappa_mc * std::sqrt(rel_u * rel_u + rel_v * rel_v);
        } else {
            r.kappa_mc = std::numeric_limits<double>::quiet_NaN();
            r.kappa_mc_stderr = std::numeric_limits<double>::quiet_NaN();
        }
        reports[i] = r;
    }
    return reports;
}

// True when kappa_exact strictly increases as t decreases along the sweep.
inline bool kappa_monotone_increasing_toward_zero(const std::vector<ConditioningReport>& reports) {
    for (std::size_t i = 1; i < reports.size(); ++i)
        if (!(reports[i].kappa_exact > reports[i - 1].kappa_exact)) return false;
    return true;
}

}  // namespace lowflow
