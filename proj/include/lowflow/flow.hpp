// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lowflow/fmtio.hpp"
#include "lowflow/linalg.hpp"
#include "lowflow/rng.hpp"
#include "lowflow/schedule.hpp"

namespace lowflow {

// One minibatch on the interpolation path. Row i carries its own time t[i];
// xt = alpha(t) x0 + beta(t) eps and vstar = alpha'(t) x0 + beta'(t) eps
// row-wise. `seed` is the stream the eps rows were drawn from, kept so
// failures can name the batch and so positives can be re-noised later
// without touching any other stream.
struct NoisyBatch {
    Matrix x0;
    Matrix eps;
    Matrix xt;
    Matrix vstar;
    Vec t;
    std::vector<int> labels;
    std::uint64_t seed = 0;
    Schedule schedule = Schedule::rectified();

    std::size_t size() const { return x0.rows(); }
    std::size_t dim() const { return x0.cols(); }
};

struct Interpolated {
    Vec xt;
    Vec vstar;
};

inline Interpolated interpolate(const Schedule& s, std::span<const double> x0,
                                std::span<const double> eps, double t) {
    const auto e = s.eval(t);
    Interpolated out;
    out.xt.resize(x0.size());
    out.vstar.resize(x0.size());
    for (std::size_t j = 0; j < x0.size(); ++j) {
        out.xt[j] = e.alpha * x0[j] + e.beta * eps[j];
        out.vstar[j] = e.dalpha * x0[j] + e.dbeta * eps[j];
    }
    return out;
}

// eps row i comes from substream (seed, "eps", i); the draw for a row does
// not depend on how many rows there are or on execution order.
inline NoisyBatch make_batch(const Schedule& s, const Matrix& x0, std::vector<int> labels,
                             Vec t, std::uint64_t seed) {
    const std::size_t n = x0.rows(), d = x0.cols();
    if (t.size() != n || labels.size() != n)
        throw NumericError("make_batch: row count mismatch between x0, t, labels");
    NoisyBatch b;
    b.x0 = x0;
    b.eps = Matrix(n, d);
    b.xt = Matrix(n, d);
    b.vstar = Matrix(n, d);
    b.t = std::move(t);
    b.labels = std::move(labels);
    b.seed = seed;
    b.schedule = s;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = substream(seed, stream_tag("eps"), i);
        for (std::size_t j = 0; j < d; ++j) b.eps(i, j) = rng.normal();
        auto iv = interpolate(s, {b.x0.row(i), d}, {b.eps.row(i), d}, b.t[i]);
        for (std::size_t j = 0; j < d; ++j) {
            b.xt(i, j) = iv.xt[j];
            b.vstar(i, j) = iv.vstar[j];
        }
    }
    return b;
}

struct Inverted {
    Vec x0_hat;
    Vec eps_hat;
};

// Solves the 2x2 linear system (xt, v) = [[alpha, beta], [alpha', beta']]
// (x0, eps) for a known velocity v at time t. The determinant
// D = alpha beta' - alpha' beta is schedule-dependent; |D| <= 1e-9 means the
// two observations are collinear and the path cannot be inverted there.
inline Inverted invert_velocity(const Schedule& s, std::span<const double> xt,
                                std::span<const double> v, double t) {
    const auto e = s.eval(t);
    const double det = e.alpha * e.dbeta - e.dalpha * e.beta;
    if (std::abs(det) <= 1e-9)
        throw NumericError("invert_velocity: degenerate schedule at t=" + fmt_double(t) +
                           " (|det|=" + fmt_double(std::abs(det)) + ")");
    Inverted out;
    out.x0_hat.resize(xt.size());
    out.eps_hat.resize(xt.size());
    for (std::size_t j = 0; j < xt.size(); ++j) {
        out.x0_hat[j] = (e.dbeta * xt[j] - e.beta * v[j]) / det;
        out.eps_hat[j] = (e.alpha * v[j] - e.dalpha * xt[j]) / det;
    }
    return out;
}

// Explicit Euler integration of dx/dt = v(x, t) from t=1 down to t_stop > 0
// in `steps` uniform steps. Stopping strictly above zero sidesteps the
// schedule singularities at t=0; how close to zero to integrate is a run
// configuration choice (default 1e-3 in the CLI).
template <typename VelocityFn>
Vec euler_sample(VelocityFn&& v_fn, Vec x1, int steps, double t_stop) {
    if (steps < 1) throw UsageError("euler_sample: steps must be >= 1");
    if (!(t_stop > 0.0) || !(t_stop < 1.0))
        throw NumericError("euler_sample: t_stop must lie in (0, 1)");
    Vec x = std::move(x1);
    const double h = (1.0 - t_stop) / steps;
    for (int k = 0; k < steps; ++k) {
        const double t = 1.0 - h * k;
        Vec v = v_fn(x, t);
        for (std::size_t j = 0; j < x.size(); ++j) {
            x[j] -= h * v[j];
            if (!std::isfinite(x[j]))
                throw NumericError("euler_sample: integration diverged at step " +
                                   std::to_string(k) + ", coordinate " + std::to_string(j));
        }
    }
    return x;
}

// Sample dump: header row,dim0..dim{d-1}, one line per row.
inline void dump_samples_csv(const std::string& path, const Matrix& rows) {
    std::vector<std::string> header{"row"};
    for (std::size_t j = 0; j < rows.cols(); ++j) header.push_back("dim" + std::to_string(j));
    CsvWriter csv(path, header);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        std::vector<std::string> cells{std::to_string(i)};
        for (std::size_t j = 0; j < rows.cols(); ++j) cells.push_back(fmt_double(rows(i, j)));
        csv.write_row_strings(cells);
    }
    csv.close();
}

}  // namespace lowflow
