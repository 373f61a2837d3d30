// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lowflow/config.hpp"
#include "lowflow/data.hpp"
#include "lowflow/losses.hpp"
#include "lowflow/net.hpp"
#include "lowflow/optim.hpp"

namespace lowflow {

// Full description of a training run, independent of the dataset contents.
// `baseline` and `lcf` share one code path: baseline is the split objective
// with t_min forced to 0 and lambda forced to 0, which never activates the
// contrastive branch and consumes exactly the same random streams.
struct TrainConfig {
    std::string mode = "lcf";  // "baseline" | "lcf"
    Schedule schedule = Schedule::rectified();
    std::size_t epochs = 1;
    std::size_t batch_size = 64;
    // The trainer default lr is hotter than OptConfig's generic 1e-3: at desk
    // scale the low-noise pathology only shows once the net has actually fit
    // the steep low-t targets within a ~2000-step run.
    OptConfig opt{.kind = OptKind::adam, .lr = 6e-3};
    std::uint64_t seed = 1;
    LcfConfig lcf;
    std::vector<std::size_t> hidden{10, 10};
    std::size_t feature_layer = 2;
    Activation act = Activation::tanh_fn;

    LcfConfig effective_lcf() const {
        LcfConfig out = lcf;
        if (mode == "baseline") {
            out.t_min = 0.0;
            out.lambda = 0.0;
        }
        return out;
    }

    void validate() const {
        if (mode != "baseline" && mode != "lcf")
            throw UsageError("mode must be baseline | lcf, got '" + mode + "'");
        if (epochs == 0) throw UsageError("epochs must be positive");
        if (batch_size == 0) throw UsageError("batch_size must be positive");
        if (hidden.empty()) throw UsageError("need at least one hidden layer");
        for (std::size_t w : hidden)
            if (w == 0) throw UsageError("hidden layer width must be positive");
        if (feature_layer < 1 || feature_layer > hidden.size())
            throw UsageError("feature_layer must be in [1, " + std::to_string(hidden.size()) +
                             "]");
        if (!(opt.lr > 0.0)) throw UsageError("lr must be positive");
        lcf.validate();
    }

    static TrainConfig from_config(Config& c) {
        auto positive = [&c](const char* key, long long fallback) {
            const long long v = c.get_int(key, fallback);
            if (v <= 0) throw UsageError(c.name() + ": " + key + " must be positive");
            return static_cast<std::size_t>(v);
        };
        TrainConfig tc;
        tc.mode = c.get_string("mode", "lcf");
        tc.schedule = Schedule::parse(c.get_string("schedule", "rectified"));
        tc.epochs = positive("epochs", 1);
        tc.batch_size = positive("batch_size", 64);
        tc.opt.kind = parse_optimizer(c.get_string("optimizer", "adam"));
        tc.opt.lr = c.get_double("lr", tc.opt.lr);
        tc.seed = c.get_u64("seed", 1);
        tc.lcf.t_min = c.get_double("t_min", 0.02);
        tc.lcf.tau = c.get_double("tau", 0.5);
        tc.lcf.lambda = c.get_double("lambda", 1.0);
        tc.lcf.denominator = parse_cons_denominator(c.get_string("cons_denominator", "infonce"));
        tc.lcf.positive_at = parse_positive_at(c.get_string("positive_at", "t_min"));
        tc.lcf.reuse_eps_for_positive = c.get_bool("reuse_eps", true);
        // layer_sizes lists the hidden widths only; the input width (data dim
        // plus time embedding) and the output width come from the dataset.
        if (c.has("layer_sizes")) {
            tc.hidden.clear();
            for (int w : c.get_int_list("layer_sizes")) {
                if (w <= 0) throw UsageError(c.name() + ": layer_sizes widths must be positive");
                tc.hidden.push_back(static_cast<std::size_t>(w));
            }
        }
        tc.feature_layer = positive("feature_layer", static_cast<long long>(tc.hidden.size()));
        tc.act = parse_activation(c.get_string("activation", "tanh"));
        tc.validate();
        return tc;
    }
};

// Builds the dataset a config describes. The dataset seed defaults to a
// substream of the run seed so changing the run seed changes the data, while
// an explicit dataset.seed pins the data across runs.
inline SyntheticDataset dataset_from_config(Config& c, std::uint64_t run_seed) {
    auto positive = [&c](const char* key, long long fallback) {
        const long long v = c.get_int(key, fallback);
        if (v <= 0) throw UsageError(c.name() + ": " + key + " must be positive");
        return static_cast<std::size_t>(v);
    };
    const std::string kind = c.get_string("dataset.kind", "gaussian-mixture");
    const std::uint64_t seed =
        c.get_u64("dataset.seed", mix_seed(run_seed, stream_tag("dataset")));
    const std::size_t n = positive("dataset.n", 4096);
    const double within = c.get_double("dataset.within_std", 0.3);
    if (kind == "two-moons") return two_moons(n, within, seed);
    if (kind != "gaussian-mixture")
        throw UsageError(c.name() + ": dataset.kind must be gaussian-mixture | two-moons");
    const std::size_t dim = positive("dataset.dim", 8);
    const std::size_t k = positive("dataset.k", 3);
    std::vector<std::size_t> sem;
    for (int v : c.get_int_list("dataset.sem_dims", {0, 1})) {
        if (v < 0) throw UsageError(c.name() + ": dataset.sem_dims must be non-negative");
        sem.push_back(static_cast<std::size_t>(v));
    }
    const double scale = c.get_double("dataset.mean_scale", 0.7);
    return gaussian_mixture(dim, k, sem, scale, within, n, seed);
}

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double fm = 0.0;
    double cons = 0.0;
    double total = 0.0;
    double wall_ms = 0.0;  // kept in memory only; the CSV log omits it
};

struct TrainResult {
    VelocityNet net;
    std::vector<StepRecord> log;
    std::size_t steps_per_epoch = 0;
    double wall_ms = 0.0;
};

// Batch for step `step`: rows drawn with replacement and per-row t uniform
// on [0,1), both from substream (seed, "batch", step); the noise rows come
// from the separate stream mix(seed, "noise", step) via make_batch. Nothing
// here depends on any other step, so a training run is reproducible from
// (config, dataset) alone.
inline NoisyBatch draw_training_batch(const SyntheticDataset& data, const Schedule& s,
                                      std::size_t batch_size, std::uint64_t seed,
                                      std::size_t step) {
    const std::size_t n = data.x.rows(), d = data.x.cols();
    Rng rng = substream(seed, stream_tag("batch"), step);
    std::vector<std::size_t> rows(batch_size);
    for (auto& r : rows) r = rng.index(n);
    Vec t(batch_size);
    for (auto& v : t) v = rng.uniform();
    Matrix x0(batch_size, d);
    std::vector<int> labels(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        for (std::size_t c = 0; c < d; ++c) x0(i, c) = data.x(rows[i], c);
        labels[i] = data.labels[rows[i]];
    }
    return make_batch(s, x0, std::move(labels), std::move(t),
                      mix_seed(seed, stream_tag("noise"), step));
}

inline TrainResult train(const TrainConfig& cfg, const SyntheticDataset& data) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const std::size_t d = data.x.cols();
    std::vector<std::size_t> sizes;
    sizes.push_back(d + kTimeEmbedDim);
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(d);

    TrainResult out;
    out.net = init_net(sizes, cfg.act, cfg.feature_layer, cfg.seed);
    out.steps_per_epoch = std::max<std::size_t>(1, data.x.rows() / cfg.batch_size);
    const std::size_t total_steps = cfg.epochs * out.steps_per_epoch;
    out.log.reserve(total_steps);

    const LcfConfig lcf = cfg.effective_lcf();
    Vec params = flatten_params(out.net);
    OptState opt_state = init_opt_state(cfg.opt, params.size());

    for (std::size_t step = 0; step < total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        NoisyBatch batch =
            draw_training_batch(data, cfg.schedule, cfg.batch_size, cfg.seed, step);
        Grads g = zero_grads(out.net);
        LcfParts parts;
        try {
            parts = lcf_loss(out.net, batch, lcf, &g);
        } catch (const NumericError& e) {
            throw NumericError("training aborted at step " + std::to_string(step) +
                               " (batch seed " + std::to_string(batch.seed) + "): " + e.what());
        }
        const Vec grads = flatten_grads(out.net, g);
        opt_step(params, grads, opt_state, cfg.opt);
        set_params(out.net, params);
        const auto t1 = std::chrono::steady_clock::now();
        out.log.push_back({step, step / out.steps_per_epoch, parts.fm, parts.cons, parts.total,
                           std::chrono::duration<double, std::milli>(t1 - t0).count()});
    }
    for (double p : params)
        if (!std::isfinite(p))
            throw NumericError("training produced non-finite parameters at step " +
                               std::to_string(total_steps - 1));
    const auto t_end = std::chrono::steady_clock::now();
    out.wall_ms = std::chrono::duration<double, std::milli>(t_end - t_start).count();
    return out;
}

struct TbinLoss {
    double t_lo = 0.0;
    double t_hi = 0.0;
    double fm = 0.0;
    std::size_t n = 0;
};

// Regression loss stratified over time: bin b covers
// [b/bins, (b+1)/bins) and scores `per_bin` fresh noisy views of dataset
// rows with t drawn inside the bin. Each bin's draws come from its own
// substream (seed, "tbin", b), independent of evaluation order.
inline std::vector<TbinLoss> eval_loss_by_tbin(const VelocityNet& net,
                                               const SyntheticDataset& data, const Schedule& s,
                                               std::size_t bins, std::size_t per_bin,
                                               std::uint64_t seed) {
    if (bins == 0 || per_bin == 0)
        throw UsageError("eval_loss_by_tbin: bins and per_bin must be positive");
    const std::size_t n = data.x.rows(), d = data.x.cols();
    std::vector<TbinLoss> out(bins);
    std::vector<std::size_t> all(per_bin);
    for (std::size_t i = 0; i < per_bin; ++i) all[i] = i;
    for (std::size_t b = 0; b < bins; ++b) {
        const double lo = static_cast<double>(b) / bins;
        const double hi = static_cast<double>(b + 1) / bins;
        Rng rng = substream(seed, stream_tag("tbin"), b);
        Matrix x0(per_bin, d);
        std::vector<int> labels(per_bin);
        Vec t(per_bin);
        for (std::size_t i = 0; i < per_bin; ++i) {
            const std::size_t r = rng.index(n);
            for (std::size_t c = 0; c < d; ++c) x0(i, c) = data.x(r, c);
            labels[i] = data.labels[r];
            t[i] = lo + rng.uniform() * (hi - lo);
        }
        NoisyBatch batch = make_batch(s, x0, std::move(labels), std::move(t),
                                      mix_seed(seed, stream_tag("tbin-noise"), b));
        out[b] = {lo, hi, fm_loss(net, batch, all), per_bin};
    }
    return out;
}

inline void write_train_log(const std::string& path, const std::vector<StepRecord>& log) {
    CsvWriter csv(path, {"step", "epoch", "fm", "cons", "total"});
    for (const auto& r : log) csv.row(r.step, r.epoch, r.fm, r.cons, r.total);
    csv.close();
}

inline void write_loss_bins(const std::string& path, const std::vector<TbinLoss>& bins) {
    CsvWriter csv(path, {"t_lo", "t_hi", "fm_loss", "n"});
    for (const auto& b : bins) csv.row(b.t_lo, b.t_hi, b.fm, b.n);
    csv.close();
}

}  // namespace lowflow
