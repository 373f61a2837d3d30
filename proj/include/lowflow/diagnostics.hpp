// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lowflow/data.hpp"
#include "lowflow/eig.hpp"
#include "lowflow/flow.hpp"
#include "lowflow/net.hpp"

namespace lowflow {

// ---- linear probe ----------------------------------------------------------

struct ProbeResult {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
};

// Multinomial logistic regression on fixed features: zero-initialized
// weights, full-batch gradient descent, seeded 80/20 split. Zero init plus
// plain GD makes the probe equivariant under orthogonal feature transforms,
// so it measures linear separability, not coordinate alignment. Ties in the
// argmax go to the lowest class index.
inline ProbeResult linear_probe(const Matrix& features, const std::vector<int>& labels,
                                std::size_t n_classes, std::uint64_t seed,
                                std::size_t iters = 400, double lr = 0.25) {
    const std::size_t n = features.rows(), f = features.cols();
    if (labels.size() != n) throw UsageError("linear_probe: labels/features row mismatch");
    if (n_classes < 2) throw UsageError("linear_probe: need at least 2 classes");
    if (n < 5) throw UsageError("linear_probe: need at least 5 rows for a split");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
            throw UsageError("linear_probe: label out of range");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = substream(seed, stream_tag("probe-split"));
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(order[i], order[rng.index(i + 1)]);
    const std::size_t n_test = std::max<std::size_t>(1, n / 5);
    const std::size_t n_train = n - n_test;

    // W is n_classes x (f + 1); the last column is the bias.
    Matrix w(n_classes, f + 1);
    Vec logits(n_classes), probs(n_classes);
    auto fill_logits = [&](std::size_t row) {
        const double* x = features.row(row);
        for (std::size_t c = 0; c < n_classes; ++c) {
            double z = w(c, f);
            for (std::size_t j = 0; j < f; ++j) z += w(c, j) * x[j];
            logits[c] = z;
        }
    };

    Matrix gw(n_classes, f + 1);
    for (std::size_t it = 0; it < iters; ++it) {
        std::fill(gw.data().begin(), gw.data().end(), 0.0);
        for (std::size_t i = 0; i < n_train; ++i) {
            const std::size_t row = order[i];
            fill_logits(row);
            const double m = *std::max_element(logits.begin(), logits.end());
            double z_sum = 0.0;
            for (std::size_t c = 0; c < n_classes; ++c) {
                probs[c] = std::exp(logits[c] - m);
                z_sum += probs[c];
            }
            const double* x = features.row(row);
            for (std::size_t c = 0; c < n_classes; ++c) {
                double delta = probs[c] / z_sum;
                if (static_cast<std::size_t>(labels[row]) == c) delta -= 1.0;
                for (std::size_t j = 0; j < f; ++j) gw(c, j) += delta * x[j];
                gw(c, f) += delta;
            }
        }
        const double scale = lr / static_cast<double>(n_train);
        for (std::size_t idx = 0; idx < w.data().size(); ++idx) {
            w.data()[idx] -= scale * gw.data()[idx];
            if (!std::isfinite(w.data()[idx]))
                throw NumericError("linear_probe: diverged at iteration " + std::to_string(it));
        }
    }

    auto accuracy_on = [&](std::size_t begin, std::size_t end) {
        std::size_t hits = 0;
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t row = order[i];
            fill_logits(row);
            const auto arg =
                std::distance(logits.begin(), std::max_element(logits.begin(), logits.end()));
            if (arg == labels[row]) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(end - begin);
    };

    ProbeResult out;
    out.n_train = n_train;
    out.n_test = n_test;
    out.train_accuracy = accuracy_on(0, n_train);
    out.test_accuracy = accuracy_on(n_train, n);
    return out;
}

// ---- features over time ------------------------------------------------------

// Feature of every dataset row at a single time t, each row renoised with its
// own substream (seed, "feat-eps", i). Used by the probes; nothing here is
// trained or updated.
inline Matrix features_at_t(const VelocityNet& net, const SyntheticDataset& data,
                            const Schedule& s, double t, std::uint64_t seed) {
    const std::size_t n = data.x.rows(), d = data.x.cols();
    if (d != net.data_dim()) throw UsageError("features_at_t: dataset/net dimension mismatch");
    const auto e = s.eval(t);
    Matrix out(n, net.feature_dim());
    Vec xt(d);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = substream(seed, stream_tag("feat-eps"), i);
        for (std::size_t c = 0; c < d; ++c) xt[c] = e.alpha * data.x(i, c) + e.beta * rng.normal();
        const auto cache = forward(net, xt, t);
        const Vec& h = feature_of(net, cache);
        for (std::size_t c = 0; c < h.size(); ++c) out(i, c) = h[c];
    }
    return out;
}

struct ProbePoint {
    double t = 0.0;
    double accuracy = 0.0;
};

// Probe accuracy of the learned representation at each time in the grid.
// Each grid point gets its own noise and split streams, so values at one t
// never depend on the rest of the grid.
inline std::vector<ProbePoint> probe_vs_t(const VelocityNet& net, const SyntheticDataset& data,
                                          const Schedule& s, const Vec& t_grid,
                                          std::uint64_t seed, std::size_t iters = 400,
                                          double lr = 0.25) {
    std::vector<ProbePoint> out;
    out.reserve(t_grid.size());
    for (std::size_t g = 0; g < t_grid.size(); ++g) {
        const Matrix feats =
            features_at_t(net, data, s, t_grid[g], mix_seed(seed, stream_tag("probe-t"), g));
        const auto r = linear_probe(feats, data.labels, data.spec.k,
                                    mix_seed(seed, stream_tag("probe-fit"), g), iters, lr);
        out.push_back({t_grid[g], r.test_accuracy});
    }
    return out;
}

// ---- feature-space geometry ------------------------------------------------

inline Matrix class_means(const Matrix& rows, const std::vector<int>& labels,
                          std::size_t n_classes) {
    if (labels.size() != rows.rows()) throw UsageError("class_means: label/row mismatch");
    Matrix means(n_classes, rows.cols());
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        const int l = labels[i];
        if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
            throw UsageError("class_means: label out of range");
        counts[l]++;
        for (std::size_t c = 0; c < rows.cols(); ++c) means(l, c) += rows(i, c);
    }
    for (std::size_t k = 0; k < n_classes; ++k) {
        if (counts[k] == 0) throw UsageError("class_means: empty class " + std::to_string(k));
        for (std::size_t c = 0; c < rows.cols(); ++c) means(k, c) /= counts[k];
    }
    return means;
}

// Q: the smallest pairwise distance between class means; how far apart the
// hardest-to-tell-apart pair sits.
inline double class_separation(const Matrix& means) {
    if (means.rows() < 2) throw UsageError("class_separation: need at least 2 means");
    double lo, hi;
    detail::pairwise_mean_distances(means, lo, hi);
    return lo;
}

// Largest amplification the map J applies to directions inside the subspace
// spanned by the orthonormal columns of `basis`.
inline double subspace_gain(const Matrix& j, const Matrix& basis) {
    if (j.cols() != basis.rows()) throw UsageError("subspace_gain: dimension mismatch");
    return op_norm(matmul(j, basis));
}

// Gain the layers above the feature must supply when the whole map needs
// amplification m on a subspace, a reference part provides r there, and the
// feature stage passes at most l.
inline double g_req(double m, double r, double l) {
    if (!(l > 0.0)) throw UsageError("g_req: feature gain l must be positive");
    return (m - r) / l;
}

// ---- bound checks ------------------------------------------------------------

struct BoundCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double margin = 0.0;  // lhs - rhs; negative means violated
    bool holds = false;
    std::uint64_t seed = 0;
};

struct FuzzSummary {
    std::size_t trials = 0;
    std::size_t failures = 0;
    double worst_margin = std::numeric_limits<double>::infinity();
    BoundCheck worst;
};

// Reallocation bound for a map that factors through a feature stage:
// M = reference + above * feature, all restricted to the subspace spanned by
// `basis` (orthonormal columns). With m = |P M P|, r = |P reference P| and
// l = |feature P|, the operator norm of `above` can never be smaller than
// (m - r) / l; the check reports how much slack an instance has.
inline BoundCheck check_gain_reallocation(const Matrix& above, const Matrix& feature,
                                          const Matrix& reference, const Matrix& basis,
                                          std::uint64_t seed = 0) {
    const std::size_t d = reference.rows();
    if (reference.cols() != d || above.rows() != d || feature.cols() != d ||
        above.cols() != feature.rows() || basis.rows() != d)
        throw UsageError("check_gain_reallocation: dimension mismatch");

    Matrix m_full = matmul(above, feature);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) m_full(i, j) += reference(i, j);

    const Matrix bt = transpose(basis);
    const double m = op_norm(matmul(bt, matmul(m_full, basis)));
    const double r = op_norm(matmul(bt, matmul(reference, basis)));
    const double l = op_norm(matmul(feature, basis));

    BoundCheck out;
    out.seed = seed;
    out.lhs = op_norm(above);
    out.rhs = l > 0.0 ? g_req(m, r, l) : 0.0;
    out.margin = out.lhs - out.rhs;
    out.holds = out.margin >= -1e-9 * std::max(1.0, out.lhs);
    return out;
}

// Separation bound for a feature map with a Frobenius budget: if |F|_F = b
// and F spends gain g on the noise subspace, class means that live in the
// orthogonal complement can end up at most sqrt(b^2 - g^2) * delta_max
// apart in feature space. `noise_basis` has orthonormal columns; the input
// means must be orthogonal to it for the bound to carry its meaning.
inline BoundCheck check_separation_bound(const Matrix& f, const Matrix& input_means,
                                         const Matrix& noise_basis, std::uint64_t seed = 0) {
    if (f.cols() != input_means.cols() || noise_basis.rows() != f.cols())
        throw UsageError("check_separation_bound: dimension mismatch");
    const double b = frobenius_norm(f);
    const double g = op_norm(matmul(f, noise_basis));

    Matrix feat_means(input_means.rows(), f.rows());
    for (std::size_t i = 0; i < input_means.rows(); ++i) {
        const Vec y = matvec(f, {input_means.row(i), input_means.cols()});
        for (std::size_t c = 0; c < y.size(); ++c) feat_means(i, c) = y[c];
    }
    double q_lo, q_hi, d_lo, d_hi;
    detail::pairwise_mean_distances(feat_means, q_lo, q_hi);
    detail::pairwise_mean_distances(input_means, d_lo, d_hi);

    BoundCheck out;
    out.seed = seed;
    out.lhs = std::sqrt(std::max(b * b - g * g, 0.0)) * d_hi;  // the ceiling
    out.rhs = q_lo;                                            // achieved separation
    out.margin = out.lhs - out.rhs;
    out.holds = out.margin >= -1e-9 * std::max(1.0, out.lhs);
    return out;
}

namespace detail {

inline Matrix random_gaussian(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = rng.normal();
    return m;
}

// Orthonormal columns via modified Gram-Schmidt on a Gaussian draw.
inline Matrix random_orthonormal(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m = random_gaussian(rng, rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t prev = 0; prev < c; ++prev) {
            double proj = 0.0;
            for (std::size_t r = 0; r < rows; ++r) proj += m(r, c) * m(r, prev);
            for (std::size_t r = 0; r < rows; ++r) m(r, c) -= proj * m(r, prev);
        }
        double nrm = 0.0;
        for (std::size_t r = 0; r < rows; ++r) nrm += m(r, c) * m(r, c);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw NumericError("random_orthonormal: degenerate draw");
        for (std::size_t r = 0; r < rows; ++r) m(r, c) /= nrm;
    }
    return m;
}

}  // namespace detail

// Random instances of the reallocation bound; every tenth trial re-expresses
// the same instance in a rotated coordinate frame to confirm the check does
// not depend on the basis it is handed.
inline FuzzSummary fuzz_gain_reallocation(std::size_t trials, std::uint64_t seed) {
    FuzzSummary out;
    out.trials = trials;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::uint64_t trial_seed = mix_seed(seed, stream_tag("trial"), trial);
        Rng rng(trial_seed);
        const std::size_t d = 2 + rng.index(5);
        const std::size_t f = 1 + rng.index(5);
        const std::size_t s = 1 + rng.index(d);

        Matrix above = detail::random_gaussian(rng, d, f);
        Matrix feature = detail::random_gaussian(rng, f, d);
        Matrix reference = detail::random_gaussian(rng, d, d);
        Matrix basis = detail::random_orthonormal(rng, d, s);

        if (trial % 10 == 9) {
            const Matrix q = detail::random_orthonormal(rng, d, d);
            above = matmul(q, above);
            feature = matmul(feature, transpose(q));
            reference = matmul(q, matmul(reference, transpose(q)));
            basis = matmul(q, basis);
        }

        const BoundCheck c = check_gain_reallocation(above, feature, reference, basis,
                                                     trial_seed);
        if (!c.holds) ++out.failures;
        if (c.margin < out.worst_margin) {
            out.worst_margin = c.margin;
            out.worst = c;
        }
    }
    return out;
}

// Random instances of the separation bound. Means are drawn inside the
// orthogonal complement of the noise subspace; every tenth trial spends the
// whole budget on noise, which forces the ceiling (and the achieved
// separation) to zero.
inline FuzzSummary fuzz_separation_bound(std::size_t trials, std::uint64_t seed) {
    FuzzSummary out;
    out.trials = trials;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::uint64_t trial_seed = mix_seed(seed, stream_tag("trial"), trial);
        Rng rng(trial_seed);
        const std::size_t d = 3 + rng.index(6);
        const std::size_t f_dim = 2 + rng.index(5);
        const std::size_t k = 2 + rng.index(4);
        const std::size_t noise_dim = 1 + rng.index(d - 1);
        const std::size_t sem_dim = d - noise_dim;

        const Matrix frame = detail::random_orthonormal(rng, d, d);
        Matrix noise_basis(d, noise_dim);
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < noise_dim; ++c) noise_basis(r, c) = frame(r, c);

        Matrix means(k, d);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t c = 0; c < sem_dim; ++c) {
                const double coef = rng.normal();
                for (std::size_t r = 0; r < d; ++r)
                    means(i, r) += coef * frame(r, noise_dim + c);
            }

        const double budget = 0.5 + 2.5 * rng.uniform();
        Matrix f;
        if (trial % 10 == 7) {
            // all budget on one noise direction
            f = Matrix(f_dim, d);
            Vec u(f_dim);
            double nrm = 0.0;
            for (auto& v : u) {
                v = rng.normal();
                nrm += v * v;
            }
            nrm = std::sqrt(nrm);
            for (std::size_t r = 0; r < f_dim; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    f(r, c) = budget * (u[r] / nrm) * noise_basis(c, 0);
        } else {
            f = detail::random_gaussian(rng, f_dim, d);
            const double scale = budget / frobenius_norm(f);
            for (auto& v : f.data()) v *= scale;
        }

        const BoundCheck c = check_separation_bound(f, means, noise_basis, trial_seed);
        if (!c.holds) ++out.failures;
        if (c.margin < out.worst_margin) {
            out.worst_margin = c.margin;
            out.worst = c;
        }
    }
    return out;
}

// ---- curvature conditioning over a time window -------------------------------

struct GnReport {
    double t_lo = 0.0;
    double t_hi = 0.0;
    double kappa = 0.0;
    Vec eigenvalues;  // descending
    std::size_t n_samples = 0;
};

// Condition number of the Gauss-Newton metric built from fresh noisy views
// of dataset rows with t uniform in [t_lo, t_hi).
inline GnReport gn_conditioning(const VelocityNet& net, const SyntheticDataset& data,
                                const Schedule& s, double t_lo, double t_hi,
                                std::size_t n_samples, std::uint64_t seed,
                                double rank_tol = 1e-10) {
    if (!(t_lo >= 0.0) || !(t_hi <= 1.0) || !(t_lo < t_hi))
        throw UsageError("gn_conditioning: need 0 <= t_lo < t_hi <= 1");
    if (n_samples == 0) throw UsageError("gn_conditioning: n_samples must be positive");
    const std::size_t n = data.x.rows(), d = data.x.cols();
    Rng rng = substream(seed, stream_tag("gn"));
    Matrix x0(n_samples, d);
    std::vector<int> labels(n_samples);
    Vec t(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t r = rng.index(n);
        for (std::size_t c = 0; c < d; ++c) x0(i, c) = data.x(r, c);
        labels[i] = data.labels[r];
        t[i] = t_lo + rng.uniform() * (t_hi - t_lo);
    }
    const NoisyBatch batch = make_batch(s, x0, std::move(labels), std::move(t),
                                        mix_seed(seed, stream_tag("gn-noise")));
    const Matrix g = gauss_newton(net, batch);
    GnReport out;
    out.t_lo = t_lo;
    out.t_hi = t_hi;
    out.n_samples = n_samples;
    out.eigenvalues = sym_eig(g).values;
    out.kappa = condition_number(out.eigenvalues, rank_tol);
    return out;
}

// ---- gradient-descent complexity on a pinned quadratic -----------------------

// Steps of exact gradient descent on a diagonal quadratic with spectrum
// linspace(1, kappa), started at ones/sqrt(dim), step size 1/kappa, stopped
// when the max-norm falls to eps of its initial value. The count is
// dimension-free because every coordinate contracts geometrically and the
// slowest one (eigenvalue 1) decides the exit.
inline std::size_t gd_complexity(double kappa, double eps, std::size_t dim = 8,
                                 std::size_t max_iters = 50000000) {
    if (!(kappa >= 1.0)) throw UsageError("gd_complexity: kappa must be >= 1");
    if (!(eps > 0.0) || !(eps < 1.0)) throw UsageError("gd_complexity: eps must be in (0, 1)");
    if (dim < 2) throw UsageError("gd_complexity: dim must be >= 2");
    Vec lambda(dim);
    for (std::size_t i = 0; i < dim; ++i)
        lambda[i] = 1.0 + (kappa - 1.0) * static_cast<double>(i) / (dim - 1);
    const double init = 1.0 / std::sqrt(static_cast<double>(dim));
    Vec theta(dim, init);
    const double stop = eps * init;
    for (std::size_t k = 1; k <= max_iters; ++k) {
        double inf_norm = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            theta[i] *= 1.0 - lambda[i] / kappa;
            inf_norm = std::max(inf_norm, std::abs(theta[i]));
        }
        if (inf_norm <= stop) return k;
    }
    throw NumericError("gd_complexity: no convergence within " + std::to_string(max_iters) +
                       " iterations");
}

}  // namespace lowflow
