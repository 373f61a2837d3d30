// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lowflow/flow.hpp"
#include "lowflow/net.hpp"

namespace lowflow {

// Which terms enter the contrastive denominator. The default is the InfoNCE
// form: the positive pair plus every bank entry except the anchor's own.
// The two alternatives reproduce ablation variants: negatives_only drops the
// positive term from the denominator; include_self sums the whole bank
// (the anchor's detached copy contributes exp(0) = 1) and adds no separate
// positive term.
enum class ConsDenominator { infonce, negatives_only, include_self };

inline ConsDenominator parse_cons_denominator(std::string_view s) {
    if (s == "infonce") return ConsDenominator::infonce;
    if (s == "negatives-only") return ConsDenominator::negatives_only;
    if (s == "include-self") return ConsDenominator::include_self;
    throw UsageError("unknown cons_denominator '" + std::string(s) +
                     "' (expected infonce | negatives-only | include-self)");
}

inline std::string cons_denominator_name(ConsDenominator d) {
    switch (d) {
        case ConsDenominator::infonce: return "infonce";
        case ConsDenominator::negatives_only: return "negatives-only";
        case ConsDenominator::include_self: return "include-self";
    }
    return "";
}

// Where the positive view is taken: re-noised at t_min, or the clean x0.
enum class PositiveAt { t_min, zero };

inline PositiveAt parse_positive_at(std::string_view s) {
    if (s == "t_min") return PositiveAt::t_min;
    if (s == "zero") return PositiveAt::zero;
    throw UsageError("unknown positive_at '" + std::string(s) + "' (expected t_min | zero)");
}

inline std::string positive_at_name(PositiveAt p) {
    return p == PositiveAt::t_min ? "t_min" : "zero";
}

struct LcfConfig {
    double t_min = 0.02;
    double tau = 0.5;
    double lambda = 1.0;
    ConsDenominator denominator = ConsDenominator::infonce;
    PositiveAt positive_at = PositiveAt::t_min;
    // Reuse the row's own eps when building the positive view (default), or
    // draw a fresh one from substream (batch.seed, "pospair", row).
    bool reuse_eps_for_positive = true;

    void validate() const {
        if (!(t_min >= 0.0) || !(t_min <= 1.0)) throw UsageError("t_min must lie in [0, 1]");
        if (!(tau > 0.0)) throw UsageError("tau must be positive");
        if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
    }
};

struct SplitIndices {
    std::vector<std::size_t> fm;   // rows with t >= t_min: regression targets
    std::vector<std::size_t> low;  // rows with t < t_min: contrastive anchors
};

inline SplitIndices split_batch(const NoisyBatch& batch, double t_min) {
    SplitIndices s;
    for (std::size_t i = 0; i < batch.size(); ++i)
        (batch.t[i] >= t_min ? s.fm : s.low).push_back(i);
    return s;
}

// Mean squared velocity error over the given rows; empty selection is 0.
// With a gradient accumulator, adds d(mean)/d(params) via reverse mode.
inline double fm_loss(const VelocityNet& net, const NoisyBatch& batch,
                      const std::vector<std::size_t>& rows, Grads* grads = nullptr) {
    if (rows.empty()) return 0.0;
    const std::size_t d = batch.dim();
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    double total = 0.0;
    for (std::size_t i : rows) {
        auto c = forward(net, {batch.xt.row(i), d}, batch.t[i]);
        double row_loss = 0.0;
        Vec dout(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double r = c.output()[j] - batch.vstar(i, j);
            row_loss += r * r;
            dout[j] = 2.0 * r * inv_n;
        }
        if (!std::isfinite(row_loss))
            throw NumericError("fm_loss: non-finite loss at sample " + std::to_string(i));
        total += row_loss;
        if (grads) backward_output(net, c, dout, *grads);
    }
    return total * inv_n;
}

// Contrastive loss over feature vectors. Row i of `anchors` is the live
// (differentiated) feature; `positives` row i and every `bank` row are
// treated as constants. self_index[i] names the bank row holding the
// anchor's own detached copy (excluded from the denominator except in
// include_self mode); -1 means no self entry. Returns the mean over anchors;
// when danchors is non-null it receives d(loss_i)/d(anchor_i), unscaled by
// the mean.
inline double contrastive_loss(const Matrix& anchors, const Matrix& positives,
                               const Matrix& bank, double tau, ConsDenominator mode,
                               const std::vector<std::ptrdiff_t>* self_index = nullptr,
                               Matrix* danchors = nullptr) {
    const std::size_t n = anchors.rows(), f = anchors.cols();
    if (n == 0) return 0.0;
    if (positives.rows() != n || positives.cols() != f || bank.cols() != f)
        throw NumericError("contrastive_loss: shape mismatch");
    if (!(tau > 0.0)) throw UsageError("contrastive_loss: tau must be positive");
    if (danchors) *danchors = Matrix(n, f);

    double total = 0.0;
    std::vector<double> scores;
    std::vector<const double*> refs;
    scores.reserve(bank.rows() + 1);
    refs.reserve(bank.rows() + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::ptrdiff_t self =
            self_index ? (*self_index)[i] : static_cast<std::ptrdiff_t>(i);
        const double* z = anchors.row(i);

        auto sqdist = [&](const double* u) {
            double s = 0.0;
            for (std::size_t k = 0; k < f; ++k) {
                const double dk = z[k] - u[k];
                s += dk * dk;
            }
            return s;
        };

        const double s_pos = -sqdist(positives.row(i)) / tau;
        scores.clear();
        refs.clear();
        if (mode == ConsDenominator::infonce) {
            scores.push_back(s_pos);
            refs.push_back(positives.row(i));
        }
        for (std::size_t j = 0; j < bank.rows(); ++j) {
            if (mode != ConsDenominator::include_self &&
                static_cast<std::ptrdiff_t>(j) == self)
                continue;
            scores.push_back(-sqdist(bank.row(j)) / tau);
            refs.push_back(bank.row(j));
        }
        if (scores.empty())
            throw NumericError("contrastive_loss: empty denominator for anchor " +
                               std::to_string(i));

        double m = scores[0];
        for (double s : scores) m = std::max(m, s);
        double z_sum = 0.0;
        for (double s : scores) z_sum += std::exp(s - m);
        const double lse = m + std::log(z_sum);
        const double loss_i = -s_pos + lse;
        if (!std::isfinite(loss_i))
            throw NumericError("contrastive_loss: non-finite loss at anchor " +
                               std::to_string(i));
        total += loss_i;

        if (danchors) {
            double* dz = danchors->row(i);
            // -d s_pos/dz = +2 (z - a) / tau
            const double* a = positives.row(i);
            for (std::size_t k = 0; k < f; ++k) dz[k] = 2.0 * (z[k] - a[k]) / tau;
            // + sum_k softmax_k * d s_k/dz, with d s_k/dz = -2 (z - u_k)/tau
            for (std::size_t r = 0; r < scores.size(); ++r) {
                const double w = std::exp(scores[r] - m) / z_sum;
                const double* u = refs[r];
                for (std::size_t k = 0; k < f; ++k) dz[k] -= w * 2.0 * (z[k] - u[k]) / tau;
            }
        }
    }
    return total / static_cast<double>(n);
}

struct LcfParts {
    double fm = 0.0;
    double cons = 0.0;
    double total = 0.0;
    std::size_t n_fm = 0;
    std::size_t n_cons = 0;
};

// Split objective: rows at t >= t_min regress onto vstar; rows below t_min
// become contrastive anchors aligned with a detached positive view of the
// same x0 and repelled from the detached features of the other batch rows.
// total = fm + lambda * cons. With lambda = 0 the contrastive branch is
// skipped entirely and, by construction, no random draw ever happens there,
// so a lambda = 0 run is stream-identical to a pure regression run.
inline LcfParts lcf_loss(const VelocityNet& net, const NoisyBatch& batch, const LcfConfig& cfg,
                         Grads* grads = nullptr) {
    cfg.validate();
    const std::size_t d = batch.dim();
    const auto idx = split_batch(batch, cfg.t_min);
    LcfParts parts;
    parts.n_fm = idx.fm.size();
    parts.n_cons = idx.low.size();
    parts.fm = fm_loss(net, batch, idx.fm, grads);

    if (cfg.lambda != 0.0 && !idx.low.empty()) {
        const double t_ref = cfg.positive_at == PositiveAt::t_min ? cfg.t_min : 0.0;
        const ScheduleEval pe = batch.schedule.eval(t_ref);

        // features of every batch row at its own t form the bank (detached)
        Matrix bank(batch.size(), net.feature_dim());
        std::vector<ForwardCache> anchor_caches(idx.low.size());
        std::vector<std::size_t> cache_of(batch.size(), static_cast<std::size_t>(-1));
        for (std::size_t k = 0; k < idx.low.size(); ++k) cache_of[idx.low[k]] = k;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            ForwardCache c = forward(net, {batch.xt.row(i), d}, batch.t[i]);
            const Vec& h = feature_of(net, c);
            for (std::size_t k = 0; k < h.size(); ++k) bank(i, k) = h[k];
            if (cache_of[i] != static_cast<std::size_t>(-1))
                anchor_caches[cache_of[i]] = std::move(c);
        }

        Matrix anchors(idx.low.size(), net.feature_dim());
        Matrix positives(idx.low.size(), net.feature_dim());
        std::vector<std::ptrdiff_t> self_index(idx.low.size());
        for (std::size_t k = 0; k < idx.low.size(); ++k) {
            const std::size_t i = idx.low[k];
            self_index[k] = static_cast<std::ptrdiff_t>(i);
            const Vec& z = feature_of(net, anchor_caches[k]);
            for (std::size_t c = 0; c < z.size(); ++c) anchors(k, c) = z[c];

            // positive view: the same x0 re-noised at t_ref (detached)
            Vec x_pos(d);
            Vec eps(d);
            if (cfg.reuse_eps_for_positive) {
                for (std::size_t c = 0; c < d; ++c) eps[c] = batch.eps(i, c);
            } else {
                Rng rng = substream(batch.seed, stream_tag("pospair"), i);
                for (std::size_t c = 0; c < d; ++c) eps[c] = rng.normal();
            }
            for (std::size_t c = 0; c < d; ++c)
                x_pos[c] = pe.alpha * batch.x0(i, c) + pe.beta * eps[c];
            auto cp = forward(net, x_pos, t_ref);
            const Vec& hp = feature_of(net, cp);
            for (std::size_t c = 0; c < hp.size(); ++c) positives(k, c) = hp[c];
        }

        Matrix danchors;
        parts.cons = contrastive_loss(anchors, positives, bank, cfg.tau, cfg.denominator,
                                      &self_index, grads ? &danchors : nullptr);
        if (grads) {
            const double scale = cfg.lambda / static_cast<double>(idx.low.size());
            for (std::size_t k = 0; k < idx.low.size(); ++k) {
                Vec dfeat(net.feature_dim());
                for (std::size_t c = 0; c < dfeat.size(); ++c)
                    dfeat[c] = scale * danchors(k, c);
                backward_feature(net, anchor_caches[k], dfeat, *grads);
            }
        }
    }
    parts.total = parts.fm + cfg.lambda * parts.cons;
    return parts;
}

// Loss callables for the trainer.
inline LossFn make_fm_loss() {
    return [](const VelocityNet& net, const NoisyBatch& batch, Grads* g) {
        std::vector<std::size_t> all(batch.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return fm_loss(net, batch, all, g);
    };
}

inline LossFn make_lcf_loss(LcfConfig cfg) {
    return [cfg](const VelocityNet& net, const NoisyBatch& batch, Grads* g) {
        return lcf_loss(net, batch, cfg, g).total;
    };
}

}  // namespace lowflow
