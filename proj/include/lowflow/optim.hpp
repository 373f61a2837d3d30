// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "lowflow/linalg.hpp"

namespace lowflow {

enum class OptKind { sgd, adam };

inline OptKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptKind::sgd;
    if (s == "adam") return OptKind::adam;
    throw UsageError("unknown optimizer '" + std::string(s) + "' (expected sgd | adam)");
}

inline std::string optimizer_name(OptKind k) {
    return k == OptKind::sgd ? "sgd" : "adam";
}

struct OptConfig {
    OptKind kind = OptKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptState {
    Vec m;  // first moment (adam)
    Vec v;  // second moment (adam)
    long long step = 0;
};

inline OptState init_opt_state(const OptConfig& cfg, std::size_t n_params) {
    OptState s;
    if (cfg.kind == OptKind::adam) {
        s.m.assign(n_params, 0.0);
        s.v.assign(n_params, 0.0);
    }
    return s;
}

// One in-place update of the flat parameter vector. Adam uses bias-corrected
// moments with eps added outside the square root.
inline void opt_step(Vec& params, const Vec& grads, OptState& state, const OptConfig& cfg) {
    if (params.size() != grads.size())
        throw NumericError("opt_step: parameter/gradient size mismatch");
    state.step += 1;
    if (cfg.kind == OptKind::sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.lr * grads[i];
        return;
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace lowflow
