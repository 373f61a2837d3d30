// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "lowflow/fmtio.hpp"
#include "lowflow/flow.hpp"
#include "lowflow/linalg.hpp"
#include "lowflow/rng.hpp"

namespace lowflow {

enum class Activation { tanh_fn, relu };

inline Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::tanh_fn;
    if (s == "relu") return Activation::relu;
    throw UsageError("unknown activation '" + std::string(s) + "' (expected tanh | relu)");
}

inline std::string activation_name(Activation a) {
    return a == Activation::tanh_fn ? "tanh" : "relu";
}

// Time embedding appended to the data coordinates; gives the first layer a
// smooth periodic handle on t without any learned embedding.
inline void append_t_embed(Vec& input, double t) {
    input.push_back(t);
    input.push_back(std::sin(2.0 * std::numbers::pi * t));
    input.push_back(std::cos(2.0 * std::numbers::pi * t));
}

constexpr std::size_t kTimeEmbedDim = 3;

// Fully connected velocity model v(x, t). Hidden layers share one
// activation; the output layer is linear. feature_layer selects which hidden
// post-activation counts as the representation h(x, t) used by probes and
// the contrastive objective (1 = first hidden).
struct VelocityNet {
    std::vector<std::size_t> layer_sizes;  // [d + 3, hidden..., d]
    Activation act = Activation::tanh_fn;
    std::size_t feature_layer = 1;
    std::vector<Matrix> W;  // W[l] has shape layer_sizes[l+1] x layer_sizes[l]
    std::vector<Vec> b;

    std::size_t n_affine() const { return W.size(); }
    std::size_t data_dim() const { return layer_sizes.back(); }
    std::size_t feature_dim() const { return layer_sizes[feature_layer]; }

    std::size_t n_params() const {
        std::size_t p = 0;
        for (std::size_t l = 0; l < W.size(); ++l) p += W[l].rows() * W[l].cols() + b[l].size();
        return p;
    }
};

inline void validate_net_shape(const std::vector<std::size_t>& sizes, std::size_t feature_layer) {
    if (sizes.size() < 3)
        throw UsageError("net needs at least one hidden layer");
    if (sizes.front() != sizes.back() + kTimeEmbedDim)
        throw UsageError("net input width must be data_dim + " + std::to_string(kTimeEmbedDim) +
                         " (time embedding)");
    for (std::size_t s : sizes)
        if (s == 0) throw UsageError("net layer width must be positive");
    const std::size_t n_hidden = sizes.size() - 2;
    if (feature_layer < 1 || feature_layer > n_hidden)
        throw UsageError("feature_layer must be in [1, " + std::to_string(n_hidden) + "]");
}

// Glorot-uniform weights (+-sqrt(6 / (fan_in + fan_out))), zero biases.
// Layer l draws from substream (seed, "init", l) in row-major order, so the
// init is reproducible and independent of anything drawn elsewhere.
inline VelocityNet init_net(std::vector<std::size_t> layer_sizes, Activation act,
                            std::size_t feature_layer, std::uint64_t seed) {
    validate_net_shape(layer_sizes, feature_layer);
    VelocityNet net;
    net.layer_sizes = std::move(layer_sizes);
    net.act = act;
    net.feature_layer = feature_layer;
    const std::size_t L = net.layer_sizes.size() - 1;
    net.W.resize(L);
    net.b.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t fan_in = net.layer_sizes[l];
        const std::size_t fan_out = net.layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        net.W[l] = Matrix(fan_out, fan_in);
        net.b[l] = Vec(fan_out, 0.0);
        Rng rng = substream(seed, stream_tag("init"), l);
        for (double& w : net.W[l].data()) w = rng.uniform(-limit, limit);
    }
    return net;
}

struct ForwardCache {
    Vec input;               // x ++ t_embed
    std::vector<Vec> pre;    // affine outputs per layer
    std::vector<Vec> post;   // activations; post.back() == pre.back() (linear head)
    const Vec& output() const { return post.back(); }
};

namespace detail {
inline double phi(Activation a, double x) {
    return a == Activation::tanh_fn ? std::tanh(x) : (x > 0.0 ? x : 0.0);
}
// derivative expressed from (pre, post) so tanh reuses its output
inline double dphi(Activation a, double pre, double post) {
    return a == Activation::tanh_fn ? 1.0 - post * post : (pre > 0.0 ? 1.0 : 0.0);
}
}  // namespace detail

inline ForwardCache forward(const VelocityNet& net, std::span<const double> x, double t) {
    if (x.size() != net.data_dim())
        throw NumericError("forward: input has wrong dimension");
    ForwardCache c;
    c.input.assign(x.begin(), x.end());
    append_t_embed(c.input, t);
    const std::size_t L = net.n_affine();
    c.pre.resize(L);
    c.post.resize(L);
    const Vec* cur = &c.input;
    for (std::size_t l = 0; l < L; ++l) {
        c.pre[l] = matvec(net.W[l], *cur);
        axpy(1.0, net.b[l], c.pre[l]);
        if (l + 1 < L) {
            c.post[l].resize(c.pre[l].size());
            for (std::size_t i = 0; i < c.pre[l].size(); ++i)
                c.post[l][i] = detail::phi(net.act, c.pre[l][i]);
        } else {
            c.post[l] = c.pre[l];
        }
        cur = &c.post[l];
    }
    return c;
}

inline const Vec& feature_of(const VelocityNet& net, const ForwardCache& c) {
    return c.post[net.feature_layer - 1];
}

// Parameter-shaped gradient accumulator.
struct Grads {
    std::vector<Matrix> W;
    std::vector<Vec> b;
};

inline Grads zero_grads(const VelocityNet& net) {
    Grads g;
    g.W.reserve(net.n_affine());
    g.b.reserve(net.n_affine());
    for (std::size_t l = 0; l < net.n_affine(); ++l) {
        g.W.emplace_back(net.W[l].rows(), net.W[l].cols());
        g.b.emplace_back(net.b[l].size(), 0.0);
    }
    return g;
}

namespace detail {
// Backpropagates delta = dL/d pre[top] down to layer 0, accumulating into g.
// If dinput_x is given, also accumulates dL/dx (data coordinates only; the
// time embedding is never differentiated).
inline void backward_from(const VelocityNet& net, const ForwardCache& c, std::size_t top,
                          Vec delta, Grads& g, Vec* dinput_x) {
    for (std::size_t l = top + 1; l-- > 0;) {
        const Vec& in = (l == 0) ? c.input : c.post[l - 1];
        Matrix& gw = g.W[l];
        for (std::size_t i = 0; i < delta.size(); ++i) {
            if (delta[i] == 0.0) continue;
            axpy(delta[i], in, {gw.row(i), gw.cols()});
        }
        axpy(1.0, delta, g.b[l]);
        if (l == 0) {
            if (dinput_x) {
                Vec din = matvec_t(net.W[0], delta);
                for (std::size_t j = 0; j < dinput_x->size(); ++j) (*dinput_x)[j] += din[j];
            }
            return;
        }
        Vec prev = matvec_t(net.W[l], delta);
        for (std::size_t i = 0; i < prev.size(); ++i)
            prev[i] *= detail::dphi(net.act, c.pre[l - 1][i], c.post[l - 1][i]);
        delta = std::move(prev);
    }
}
}  // namespace detail

// Seed gradient at the network output (linear head: dL/dpre == dL/dpost).
inline void backward_output(const VelocityNet& net, const ForwardCache& c, const Vec& dout,
                            Grads& g, Vec* dinput_x = nullptr) {
    detail::backward_from(net, c, net.n_affine() - 1, dout, g, dinput_x);
}

// Seed gradient at the feature layer's post-activation.
inline void backward_feature(const VelocityNet& net, const ForwardCache& c, const Vec& dfeat,
                             Grads& g, Vec* dinput_x = nullptr) {
    const std::size_t l = net.feature_layer - 1;
    Vec delta(dfeat.size());
    for (std::size_t i = 0; i < dfeat.size(); ++i)
        delta[i] = dfeat[i] * detail::dphi(net.act, c.pre[l][i], c.post[l][i]);
    detail::backward_from(net, c, l, std::move(delta), g, dinput_x);
}

// Canonical parameter flattening: layer 0 weights in row-major order, then
// layer 0 biases, then layer 1, and so on. Every flat view in this library
// (param Jacobian columns, optimizer state, finite-difference probes) uses
// exactly this order.
inline Vec flatten_params(const VelocityNet& net) {
    Vec out;
    out.reserve(net.n_params());
    for (std::size_t l = 0; l < net.n_affine(); ++l) {
        out.insert(out.end(), net.W[l].data().begin(), net.W[l].data().end());
        out.insert(out.end(), net.b[l].begin(), net.b[l].end());
    }
    return out;
}

inline void set_params(VelocityNet& net, std::span<const double> flat) {
    if (flat.size() != net.n_params()) throw NumericError("set_params: wrong length");
    std::size_t k = 0;
    for (std::size_t l = 0; l < net.n_affine(); ++l) {
        for (double& w : net.W[l].data()) w = flat[k++];
        for (double& v : net.b[l]) v = flat[k++];
    }
}

inline Vec flatten_grads(const VelocityNet& net, const Grads& g) {
    Vec out;
    out.reserve(net.n_params());
    for (std::size_t l = 0; l < net.n_affine(); ++l) {
        out.insert(out.end(), g.W[l].data().begin(), g.W[l].data().end());
        out.insert(out.end(), g.b[l].begin(), g.b[l].end());
    }
    return out;
}

// d x P Jacobian of the output w.r.t. the flattened parameters, one reverse
// pass per output coordinate.
inline Matrix param_jacobian(const VelocityNet& net, std::span<const double> x, double t) {
    const auto c = forward(net, x, t);
    const std::size_t d = net.data_dim();
    Matrix jac(d, net.n_params());
    for (std::size_t r = 0; r < d; ++r) {
        Grads g = zero_grads(net);
        Vec seed(d, 0.0);
        seed[r] = 1.0;
        backward_output(net, c, seed, g);
        Vec flat = flatten_grads(net, g);
        for (std::size_t j = 0; j < flat.size(); ++j) jac(r, j) = flat[j];
    }
    return jac;
}

enum class JacobianAt { feature, output };

namespace detail {
// Forward-mode tangent propagation from the data coordinates (the embedding
// rows carry zero tangent) up to the requested layer.
inline Matrix push_tangents(const VelocityNet& net, const ForwardCache& c, std::size_t upto) {
    const std::size_t d = net.data_dim();
    Matrix tang(net.layer_sizes[0], d);
    for (std::size_t j = 0; j < d; ++j) tang(j, j) = 1.0;
    for (std::size_t l = 0; l < upto; ++l) {
        Matrix next = matmul(net.W[l], tang);
        if (l + 1 < net.n_affine()) {
            for (std::size_t i = 0; i < next.rows(); ++i) {
                const double dp = detail::dphi(net.act, c.pre[l][i], c.post[l][i]);
                for (std::size_t j = 0; j < next.cols(); ++j) next(i, j) *= dp;
            }
        }
        tang = std::move(next);
    }
    return tang;
}
}  // namespace detail

// Jacobian w.r.t. the data coordinates x only (time-embedding columns are
// excluded by construction). `at` picks the feature layer h(x,t) or the
// network output v(x,t).
inline Matrix input_jacobian(const VelocityNet& net, std::span<const double> x, double t,
                             JacobianAt at) {
    const auto c = forward(net, x, t);
    const std::size_t upto = (at == JacobianAt::feature) ? net.feature_layer : net.n_affine();
    return detail::push_tangents(net, c, upto);
}

// Jacobian of the output w.r.t. the feature activation (the "upper" part of
// the network above the feature layer).
inline Matrix jacobian_above_feature(const VelocityNet& net, std::span<const double> x, double t) {
    const auto c = forward(net, x, t);
    const std::size_t start = net.feature_layer;
    Matrix tang = Matrix::identity(net.feature_dim());
    for (std::size_t l = start; l < net.n_affine(); ++l) {
        Matrix next = matmul(net.W[l], tang);
        if (l + 1 < net.n_affine()) {
            for (std::size_t i = 0; i < next.rows(); ++i) {
                const double dp = detail::dphi(net.act, c.pre[l][i], c.post[l][i]);
                for (std::size_t j = 0; j < next.cols(); ++j) next(i, j) *= dp;
            }
        }
        tang = std::move(next);
    }
    return tang;
}

// G = (2/n) sum_i J_i^T J_i with J_i the per-sample parameter Jacobian; the
// Gauss-Newton metric of the summed squared-error objective. Dense P x P.
inline Matrix gauss_newton(const VelocityNet& net, const NoisyBatch& batch) {
    const std::size_t n = batch.size();
    if (n == 0) throw UsageError("gauss_newton: empty batch");
    const std::size_t p = net.n_params();
    Matrix g(p, p);
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix jac = param_jacobian(net, {batch.xt.row(i), batch.dim()}, batch.t[i]);
        for (std::size_t r = 0; r < jac.rows(); ++r) {
            const double* row = jac.row(r);
            for (std::size_t a = 0; a < p; ++a) {
                const double ra = row[a];
                if (ra == 0.0) continue;
                double* grow = g.row(a);
                for (std::size_t bcol = a; bcol < p; ++bcol) grow[bcol] += ra * row[bcol];
            }
        }
    }
    const double scale = 2.0 / static_cast<double>(n);
    for (std::size_t a = 0; a < p; ++a) {
        g(a, a) *= scale;
        for (std::size_t bcol = a + 1; bcol < p; ++bcol) {
            g(a, bcol) *= scale;
            g(bcol, a) = g(a, bcol);
        }
    }
    return g;
}

// Loss callable contract: returns the mean loss over the batch and, when the
// accumulator is non-null, adds the exact reverse-mode gradient of that mean
// into it. Implementations live in losses.hpp.
using LossFn = std::function<double(const VelocityNet&, const NoisyBatch&, Grads*)>;

struct LossAndGrads {
    double value;
    Grads grads;
};

inline LossAndGrads grad(const VelocityNet& net, const NoisyBatch& batch, const LossFn& loss_fn) {
    LossAndGrads out{0.0, zero_grads(net)};
    out.value = loss_fn(net, batch, &out.grads);
    if (!std::isfinite(out.value))
        throw NumericError("grad: non-finite loss value");
    return out;
}

// ---- checkpoint format ----------------------------------------------------
// Line-oriented text; decimal doubles at 17 significant digits (lossless):
//   version = 1
//   layer_sizes = 4,8,1
//   activation = tanh
//   feature_layer = 1
//   W0 8 4        (then one line per row)
//   b0 8          (then one line)
//   ... remaining layers in order

inline void save_checkpoint(const VelocityNet& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "version = 1\n";
    out << "layer_sizes = ";
    for (std::size_t i = 0; i < net.layer_sizes.size(); ++i)
        out << (i ? "," : "") << net.layer_sizes[i];
    out << "\n";
    out << "activation = " << activation_name(net.act) << "\n";
    out << "feature_layer = " << net.feature_layer << "\n";
    for (std::size_t l = 0; l < net.n_affine(); ++l) {
        out << "W" << l << " " << net.W[l].rows() << " " << net.W[l].cols() << "\n";
        for (std::size_t i = 0; i < net.W[l].rows(); ++i) {
            for (std::size_t j = 0; j < net.W[l].cols(); ++j)
                out << (j ? " " : "") << fmt_double17(net.W[l](i, j));
            out << "\n";
        }
        out << "b" << l << " " << net.b[l].size() << "\n";
        for (std::size_t i = 0; i < net.b[l].size(); ++i)
            out << (i ? " " : "") << fmt_double17(net.b[l][i]);
        out << "\n";
    }
    out.close();
    if (!out) throw IoError("write failed: " + path);
}

inline VelocityNet load_checkpoint(const std::string& path) {
    const auto lines = read_lines(path);
    std::size_t ln = 0;
    auto where = [&] { return path + ":" + std::to_string(ln); };
    auto next_line = [&]() -> std::string_view {
        if (ln >= lines.size()) throw IoError(path + ": unexpected end of file");
        return trim(lines[ln++]);
    };
    auto expect_kv = [&](std::string_view key) {
        auto s = next_line();
        auto eq = s.find('=');
        if (eq == std::string_view::npos || trim(s.substr(0, eq)) != key)
            throw IoError(where() + ": expected '" + std::string(key) + " = ...'");
        return std::string(trim(s.substr(eq + 1)));
    };

    if (expect_kv("version") != "1") throw IoError(where() + ": unsupported version");
    VelocityNet net;
    const std::string sizes_field = expect_kv("layer_sizes");
    for (auto part : split(sizes_field, ','))
        net.layer_sizes.push_back(static_cast<std::size_t>(parse_int(trim(part), where())));
    net.act = parse_activation(expect_kv("activation"));
    net.feature_layer = static_cast<std::size_t>(parse_int(expect_kv("feature_layer"), where()));
    validate_net_shape(net.layer_sizes, net.feature_layer);

    const std::size_t L = net.layer_sizes.size() - 1;
    auto read_row = [&](std::span<double> dst) {
        auto toks = split(next_line(), ' ');
        std::size_t k = 0;
        for (auto tok : toks) {
            if (trim(tok).empty()) continue;
            if (k >= dst.size()) throw IoError(where() + ": too many values on line");
            dst[k++] = parse_double(trim(tok), where());
        }
        if (k != dst.size()) throw IoError(where() + ": expected " + std::to_string(dst.size()) +
                                           " values, got " + std::to_string(k));
    };
    for (std::size_t l = 0; l < L; ++l) {
        auto toks = split(next_line(), ' ');
        if (toks.size() != 3 || toks[0] != "W" + std::to_string(l))
            throw IoError(where() + ": expected 'W" + std::to_string(l) + " rows cols'");
        const auto rows = static_cast<std::size_t>(parse_int(toks[1], where()));
        const auto cols = static_cast<std::size_t>(parse_int(toks[2], where()));
        if (rows != net.layer_sizes[l + 1] || cols != net.layer_sizes[l])
            throw IoError(where() + ": W" + std::to_string(l) + " shape disagrees with layer_sizes");
        net.W.emplace_back(rows, cols);
        for (std::size_t i = 0; i < rows; ++i) read_row({net.W[l].row(i), cols});
        auto btoks = split(next_line(), ' ');
        if (btoks.size() != 2 || btoks[0] != "b" + std::to_string(l) ||
            static_cast<std::size_t>(parse_int(btoks[1], where())) != rows)
            throw IoError(where() + ": expected 'b" + std::to_string(l) + " " +
                          std::to_string(rows) + "'");
        net.b.emplace_back(rows, 0.0);
        read_row(net.b[l]);
    }
    return net;
}

}  // namespace lowflow
