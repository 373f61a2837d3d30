// SPDX-License-Identifier: Apache-2.0
//
// lowflow: interpolation schedules, low-noise conditioning diagnostics, and
// local contrastive flow training on synthetic labeled datasets.
//
// Every subcommand that writes files also writes a JSON run manifest next to
// them (status "running" before compute, finalized afterwards). Outputs are
// deterministic functions of the resolved configuration and seeds; rerunning
// with the manifest's config reproduces every output byte for byte, and the
// --threads value never changes any file content.
//
// Exit codes: 0 success, 2 bad flags or config, 3 numeric failure, 4 I/O.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "lowflow/conditioning.hpp"
#include "lowflow/config.hpp"
#include "lowflow/data.hpp"
#include "lowflow/diagnostics.hpp"
#include "lowflow/flow.hpp"
#include "lowflow/losses.hpp"
#include "lowflow/manifest.hpp"
#include "lowflow/net.hpp"
#include "lowflow/parallel.hpp"
#include "lowflow/trainer.hpp"

namespace {

using namespace lowflow;
namespace fs = std::filesystem;

Vec parse_grid(const std::string& text, const std::string& flag) {
    Vec out;
    for (auto part : split(text, ',')) {
        auto tok = trim(part);
        if (tok.empty()) throw UsageError(flag + ": empty grid entry");
        try {
            out.push_back(parse_double(tok, flag));
        } catch (const IoError& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty()) throw UsageError(flag + ": empty grid");
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text, const std::string& flag) {
    std::vector<std::uint64_t> out;
    for (auto part : split(text, ',')) {
        auto tok = trim(part);
        long long v = 0;
        try {
            v = parse_int(tok, flag);
        } catch (const IoError& e) {
            throw UsageError(e.what());
        }
        if (v < 0) throw UsageError(flag + ": seeds must be non-negative");
        out.push_back(static_cast<std::uint64_t>(v));
    }
    return out;
}

std::string join_doubles(const Vec& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += fmt_double(v[i]);
    }
    return out;
}

template <typename T>
std::string join_ints(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::optional<std::uint64_t> env_seed_override() {
    const char* v = std::getenv("LOWFLOW_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    long long parsed = 0;
    try {
        parsed = parse_int(v, "LOWFLOW_SEED");
    } catch (const IoError& e) {
        throw UsageError(e.what());
    }
    if (parsed < 0) throw UsageError("LOWFLOW_SEED: must be non-negative");
    return static_cast<std::uint64_t>(parsed);
}

// Sample mean and n-1 standard deviation; std is 0 for a single value.
std::pair<double, double> mean_std(const Vec& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double var = v.size() > 1 ? ss / (n - 1.0) : 0.0;
    return {mean, std::sqrt(var)};
}

// The complete key set a run config resolves to, defaults included. Feeding
// these keys back through a config file reproduces the run exactly.
std::map<std::string, std::string> resolved_run_config(const TrainConfig& tc,
                                                       const DatasetSpec& ds) {
    std::map<std::string, std::string> m;
    m["mode"] = tc.mode;
    m["schedule"] = tc.schedule.name();
    m["epochs"] = std::to_string(tc.epochs);
    m["batch_size"] = std::to_string(tc.batch_size);
    m["optimizer"] = optimizer_name(tc.opt.kind);
    m["lr"] = fmt_double(tc.opt.lr);
    m["seed"] = std::to_string(tc.seed);
    m["t_min"] = fmt_double(tc.lcf.t_min);
    m["tau"] = fmt_double(tc.lcf.tau);
    m["lambda"] = fmt_double(tc.lcf.lambda);
    m["cons_denominator"] = cons_denominator_name(tc.lcf.denominator);
    m["positive_at"] = positive_at_name(tc.lcf.positive_at);
    m["reuse_eps"] = tc.lcf.reuse_eps_for_positive ? "true" : "false";
    m["layer_sizes"] = join_ints(tc.hidden);
    m["feature_layer"] = std::to_string(tc.feature_layer);
    m["activation"] = activation_name(tc.act);
    m["dataset.kind"] = ds.kind;
    m["dataset.n"] = std::to_string(ds.n);
    m["dataset.within_std"] = fmt_double(ds.within_std);
    m["dataset.seed"] = std::to_string(ds.seed);
    if (ds.kind == "gaussian-mixture") {
        m["dataset.dim"] = std::to_string(ds.dim);
        m["dataset.k"] = std::to_string(ds.k);
        m["dataset.sem_dims"] = join_ints(ds.sem_dims);
        m["dataset.mean_scale"] = fmt_double(ds.mean_scale);
    }
    return m;
}

// Runs the body between the manifest's running and ok states; any failure is
// recorded in the manifest before the error propagates to the exit code.
template <typename Body>
void run_with_manifest(RunManifest& m, const std::string& manifest_path, Body&& body) {
    try {
        body();
    } catch (const std::exception& e) {
        fail_manifest(m, manifest_path, e.what());
        throw;
    }
    finish_manifest(m, manifest_path);
}

// ---- sweep-kappa ------------------------------------------------------------

struct SweepArgs {
    std::string schedule = "rectified";
    std::string t_grid;
    std::size_t dim = 2;
    double x0_norm = 1.0;
    std::size_t mc_samples = 0;
    std::uint64_t seed = 1;
    std::string out;
};

void run_sweep_kappa(const SweepArgs& a, unsigned threads) {
    const Schedule s = Schedule::parse(a.schedule);
    const Vec grid = parse_grid(a.t_grid, "--t-grid");
    if (a.dim < 1) throw UsageError("--dim must be >= 1");
    if (!(a.x0_norm >= 0.0)) throw UsageError("--x0-norm must be >= 0");
    // pinned clean point with the requested norm, spread evenly over coords
    const Vec x0(a.dim, a.x0_norm / std::sqrt(static_cast<double>(a.dim)));

    const std::string manifest_path = a.out + ".manifest.json";
    RunManifest m = begin_manifest(
        manifest_path, "sweep-kappa",
        {{"schedule", a.schedule},
         {"t_grid", join_doubles(grid)},
         {"dim", std::to_string(a.dim)},
         {"x0_norm", fmt_double(a.x0_norm)},
         {"mc_samples", std::to_string(a.mc_samples)},
         {"seed", std::to_string(a.seed)},
         {"out", a.out}},
        a.seed, {a.out});
    run_with_manifest(m, manifest_path, [&] {
        const auto reports = condition_sweep(s, x0, grid, a.mc_samples, a.seed, threads);
        CsvWriter csv(a.out, {"t", "kappa_exact", "kappa_mc", "mc_stderr", "kappa_lb",
                              "dv2_exact", "dx2_exact"});
        for (const auto& r : reports)
            csv.row(r.t1, r.kappa_exact, r.kappa_mc, r.kappa_mc_stderr, r.kappa_lb, r.dv2_exact,
                    r.dx2_exact);
        csv.close();
    });
    std::cout << "wrote " << a.out << "\n";
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string out_dir;
    std::size_t bins = 10;
    std::size_t per_bin = 256;
};

void run_train(const TrainArgs& a) {
    if (a.bins == 0 || a.per_bin == 0)
        throw UsageError("--bins and --per-bin must be positive");
    Config c = Config::from_file(a.config);
    TrainConfig tc = TrainConfig::from_config(c);
    if (const auto env = env_seed_override()) tc.seed = *env;
    const SyntheticDataset data = dataset_from_config(c, tc.seed);
    c.reject_unknown_keys();

    fs::create_directories(a.out_dir);
    const std::string ckpt = a.out_dir + "/ckpt.txt";
    const std::string log_csv = a.out_dir + "/train_log.csv";
    const std::string bins_csv = a.out_dir + "/loss_bins.csv";
    const std::string data_csv = a.out_dir + "/dataset.csv";
    const std::string manifest_path = a.out_dir + "/manifest.json";

    auto cfg_map = resolved_run_config(tc, data.spec);
    cfg_map["flags.bins"] = std::to_string(a.bins);
    cfg_map["flags.per_bin"] = std::to_string(a.per_bin);
    RunManifest m = begin_manifest(manifest_path, "train", std::move(cfg_map), tc.seed,
                                   {ckpt, log_csv, bins_csv, data_csv,
                                    data_csv + ".meta.json"});
    run_with_manifest(m, manifest_path, [&] {
        const TrainResult res = train(tc, data);
        save_checkpoint(res.net, ckpt);
        write_train_log(log_csv, res.log);
        const auto bins = eval_loss_by_tbin(res.net, data, tc.schedule, a.bins, a.per_bin,
                                            mix_seed(tc.seed, stream_tag("eval")));
        write_loss_bins(bins_csv, bins);
        dump_dataset(data, data_csv);
    });
    std::cout << "wrote " << ckpt << "\n"
              << "wrote " << log_csv << "\n"
              << "wrote " << bins_csv << "\n"
              << "wrote " << data_csv << "\n";
}

// ---- probe (also diagnose probe) ---------------------------------------------

struct ProbeArgs {
    std::string ckpt;
    std::string data;
    std::string t_grid;
    std::string schedule = "rectified";
    std::uint64_t seed = 1;
    std::size_t iters = 400;
    double lr = 0.25;
    std::string out;
};

void run_probe(const ProbeArgs& a) {
    const Schedule s = Schedule::parse(a.schedule);
    const Vec grid = parse_grid(a.t_grid, "--t-grid");
    for (double t : grid)
        if (!(t > 0.0) || !(t <= 1.0))
            throw UsageError("--t-grid: values must lie in (0, 1]");
    if (a.iters == 0) throw UsageError("--iters must be positive");
    if (!(a.lr > 0.0)) throw UsageError("--lr must be positive");

    const std::string manifest_path = a.out + ".manifest.json";
    RunManifest m = begin_manifest(manifest_path, "probe",
                                   {{"ckpt", a.ckpt},
                                    {"data", a.data},
                                    {"t_grid", join_doubles(grid)},
                                    {"schedule", a.schedule},
                                    {"seed", std::to_string(a.seed)},
                                    {"iters", std::to_string(a.iters)},
                                    {"lr", fmt_double(a.lr)},
                                    {"out", a.out}},
                                   a.seed, {a.out});
    run_with_manifest(m, manifest_path, [&] {
        const VelocityNet net = load_checkpoint(a.ckpt);
        const SyntheticDataset data = load_dataset(a.data);
        const auto points = probe_vs_t(net, data, s, grid, a.seed, a.iters, a.lr);
        CsvWriter csv(a.out, {"t", "accuracy"});
        for (const auto& p : points) csv.row(p.t, p.accuracy);
        csv.close();
    });
    std::cout << "wrote " << a.out << "\n";
}

// ---- sample -------------------------------------------------------------------

struct SampleArgs {
    std::string ckpt;
    std::size_t n = 0;
    int steps = 200;
    double t_stop = 1e-3;
    std::uint64_t seed = 1;
    std::string out;
};

void run_sample(const SampleArgs& a, unsigned threads) {
    if (a.n == 0) throw UsageError("--n must be positive");
    if (a.steps < 1) throw UsageError("--steps must be >= 1");
    if (!(a.t_stop > 0.0) || !(a.t_stop < 1.0))
        throw UsageError("--t-stop must lie in (0, 1)");

    const std::string manifest_path = a.out + ".manifest.json";
    RunManifest m = begin_manifest(manifest_path, "sample",
                                   {{"ckpt", a.ckpt},
                                    {"n", std::to_string(a.n)},
                                    {"steps", std::to_string(a.steps)},
                                    {"t_stop", fmt_double(a.t_stop)},
                                    {"seed", std::to_string(a.seed)},
                                    {"out", a.out}},
                                   a.seed, {a.out});
    run_with_manifest(m, manifest_path, [&] {
        const VelocityNet net = load_checkpoint(a.ckpt);
        const std::size_t d = net.data_dim();
        Matrix rows(a.n, d);
        // each draw integrates independently from its own noise substream,
        // so the row set is identical for every --threads value
        parallel_for(a.n, threads, [&](std::size_t i) {
            Rng rng = substream(a.seed, stream_tag("x1"), i);
            Vec x1(d);
            for (auto& v : x1) v = rng.normal();
            const Vec x0 = euler_sample(
                [&](const Vec& x, double t) { return forward(net, x, t).output(); },
                std::move(x1), a.steps, a.t_stop);
            for (std::size_t j = 0; j < d; ++j) rows(i, j) = x0[j];
        });
        dump_samples_csv(a.out, rows);
    });
    std::cout << "wrote " << a.out << "\n";
}

// ---- diagnose gn ---------------------------------------------------------------

struct GnArgs {
    std::string ckpt;
    std::string data;
    std::vector<double> window;
    std::string schedule = "rectified";
    std::size_t samples = 128;
    std::uint64_t seed = 1;
    std::string out;
};

void run_diag_gn(const GnArgs& a) {
    const Schedule s = Schedule::parse(a.schedule);
    if (a.window.size() != 2) throw UsageError("--window takes exactly two values: lo hi");

    const std::string manifest_path = a.out + ".manifest.json";
    RunManifest m = begin_manifest(manifest_path, "diagnose gn",
                                   {{"ckpt", a.ckpt},
                                    {"data", a.data},
                                    {"window", join_doubles({a.window[0], a.window[1]})},
                                    {"schedule", a.schedule},
                                    {"samples", std::to_string(a.samples)},
                                    {"seed", std::to_string(a.seed)},
                                    {"out", a.out}},
                                   a.seed, {a.out});
    run_with_manifest(m, manifest_path, [&] {
        const VelocityNet net = load_checkpoint(a.ckpt);
        const SyntheticDataset data = load_dataset(a.data);
        const GnReport rep =
            gn_conditioning(net, data, s, a.window[0], a.window[1], a.samples, a.seed);
        CsvWriter csv(a.out, {"t_lo", "t_hi", "n_samples", "kappa", "eig_index", "eigenvalue"});
        for (std::size_t i = 0; i < rep.eigenvalues.size(); ++i)
            csv.row(rep.t_lo, rep.t_hi, rep.n_samples, rep.kappa, i, rep.eigenvalues[i]);
        csv.close();
        std::cout << "kappa = " << fmt_double(rep.kappa) << "\n";
    });
    std::cout << "wrote " << a.out << "\n";
}

// ---- diagnose prop --------------------------------------------------------------

struct PropArgs {
    int which = 0;  // 4 = Jacobian gain reallocation, 5 = separation ceiling
    std::size_t trials = 10000;
    std::uint64_t seed = 1;
    std::string out;
};

void run_diag_prop(const PropArgs& a) {
    if (a.which != 4 && a.which != 5) throw UsageError("--which must be 4 or 5");
    if (a.trials == 0) throw UsageError("--trials must be positive");

    std::optional<RunManifest> m;
    const std::string manifest_path = a.out.empty() ? "" : a.out + ".manifest.json";
    if (!a.out.empty())
        m = begin_manifest(manifest_path, "diagnose prop",
                           {{"which", std::to_string(a.which)},
                            {"trials", std::to_string(a.trials)},
                            {"seed", std::to_string(a.seed)},
                            {"out", a.out}},
                           a.seed, {a.out});

    auto body = [&] {
        const FuzzSummary sum = a.which == 4 ? fuzz_gain_reallocation(a.trials, a.seed)
                                             : fuzz_separation_bound(a.trials, a.seed);
        if (!a.out.empty()) {
            CsvWriter csv(a.out, {"which", "trials", "failures", "worst_margin", "worst_lhs",
                                  "worst_rhs", "worst_seed"});
            csv.row(a.which, sum.trials, sum.failures, sum.worst_margin, sum.worst.lhs,
                    sum.worst.rhs, sum.worst.seed);
            csv.close();
        }
        std::cout << "trials=" << sum.trials << " failures=" << sum.failures
                  << " worst_margin=" << fmt_double(sum.worst_margin) << "\n";
    };
    if (m)
        run_with_manifest(*m, manifest_path, body);
    else
        body();
}

// ---- diagnose gdk ----------------------------------------------------------------

struct GdkArgs {
    double kappa = 0.0;
    double eps = 0.0;
    std::size_t dim = 8;
    std::string out;
};

void run_diag_gdk(const GdkArgs& a) {
    std::optional<RunManifest> m;
    const std::string manifest_path = a.out.empty() ? "" : a.out + ".manifest.json";
    if (!a.out.empty())
        m = begin_manifest(manifest_path, "diagnose gdk",
                           {{"kappa", fmt_double(a.kappa)},
                            {"eps", fmt_double(a.eps)},
                            {"dim", std::to_string(a.dim)},
                            {"out", a.out}},
                           0, {a.out});

    auto body = [&] {
        const std::size_t iters = gd_complexity(a.kappa, a.eps, a.dim);
        if (!a.out.empty()) {
            CsvWriter csv(a.out, {"kappa", "eps", "dim", "iters"});
            csv.row(a.kappa, a.eps, a.dim, iters);
            csv.close();
        }
        std::cout << iters << "\n";
    };
    if (m)
        run_with_manifest(*m, manifest_path, body);
    else
        body();
}

// ---- figure1 ----------------------------------------------------------------------

struct Figure1Args {
    std::string baseline_config;
    std::string lcf_config;
    std::string out_dir;
    std::string seeds = "1,2,3,4,5";
    std::size_t bins = 10;
    std::size_t per_bin = 256;
    std::string t_grid = "0.01,0.05,0.1,0.2,0.3,0.5,0.7,0.9";
    std::size_t probe_iters = 400;
    double probe_lr = 0.25;
};

struct CellRun {
    std::vector<TbinLoss> init_bins;
    std::vector<TbinLoss> final_bins;
    std::vector<ProbePoint> probe;
};

CellRun run_cell(const std::string& cfg_path, std::uint64_t seed, std::size_t bins,
                 std::size_t per_bin, const Vec& grid, std::size_t probe_iters,
                 double probe_lr) {
    Config c = Config::from_file(cfg_path);
    TrainConfig tc = TrainConfig::from_config(c);
    tc.seed = seed;
    const SyntheticDataset data = dataset_from_config(c, seed);
    c.reject_unknown_keys();

    // same construction the trainer uses, evaluated before any update to
    // anchor the per-window convergence ratio
    std::vector<std::size_t> sizes;
    sizes.push_back(data.x.cols() + kTimeEmbedDim);
    sizes.insert(sizes.end(), tc.hidden.begin(), tc.hidden.end());
    sizes.push_back(data.x.cols());
    const VelocityNet init = init_net(sizes, tc.act, tc.feature_layer, tc.seed);

    const std::uint64_t eval_seed = mix_seed(seed, stream_tag("eval"));
    CellRun out;
    out.init_bins = eval_loss_by_tbin(init, data, tc.schedule, bins, per_bin, eval_seed);
    const TrainResult res = train(tc, data);
    out.final_bins = eval_loss_by_tbin(res.net, data, tc.schedule, bins, per_bin, eval_seed);
    out.probe = probe_vs_t(res.net, data, tc.schedule, grid, mix_seed(seed, stream_tag("probe")),
                           probe_iters, probe_lr);
    return out;
}

void run_figure1(const Figure1Args& a, unsigned threads) {
    if (a.bins == 0 || a.per_bin == 0)
        throw UsageError("--bins and --per-bin must be positive");
    if (a.probe_iters == 0) throw UsageError("--probe-iters must be positive");
    if (!(a.probe_lr > 0.0)) throw UsageError("--probe-lr must be positive");
    const std::vector<std::uint64_t> seeds = parse_seed_list(a.seeds, "--seeds");
    if (seeds.size() < 5)
        throw UsageError("--seeds: the aggregation contract needs at least 5 seeds");
    const Vec grid = parse_grid(a.t_grid, "--t-grid");
    for (double t : grid)
        if (!(t > 0.0) || !(t <= 1.0))
            throw UsageError("--t-grid: values must lie in (0, 1]");

    fs::create_directories(a.out_dir);
    const std::string loss_csv = a.out_dir + "/loss_vs_t.csv";
    const std::string conv_csv = a.out_dir + "/convergence_vs_window.csv";
    const std::string probe_csv = a.out_dir + "/probe_vs_t.csv";
    const std::string manifest_path = a.out_dir + "/manifest.json";

    const std::vector<std::string> modes{"baseline", "lcf"};
    const std::vector<std::string> cfg_paths{a.baseline_config, a.lcf_config};

    // resolve both configs up front so flag typos and config errors surface
    // before any training, and so the manifest records the resolved keys
    std::map<std::string, std::string> cfg_map;
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        Config c = Config::from_file(cfg_paths[mi]);
        const bool pinned_data_seed = c.has("dataset.seed");
        TrainConfig tc = TrainConfig::from_config(c);
        tc.seed = seeds[0];
        const SyntheticDataset data = dataset_from_config(c, seeds[0]);
        c.reject_unknown_keys();
        auto resolved = resolved_run_config(tc, data.spec);
        resolved.erase("seed");  // governed by the seeds list
        if (!pinned_data_seed) resolved.erase("dataset.seed");
        for (const auto& [k, v] : resolved) cfg_map[modes[mi] + "." + k] = v;
    }
    cfg_map["seeds"] = join_ints(seeds);
    cfg_map["bins"] = std::to_string(a.bins);
    cfg_map["per_bin"] = std::to_string(a.per_bin);
    cfg_map["t_grid"] = join_doubles(grid);
    cfg_map["probe_iters"] = std::to_string(a.probe_iters);
    cfg_map["probe_lr"] = fmt_double(a.probe_lr);

    RunManifest m = begin_manifest(manifest_path, "figure1", std::move(cfg_map), seeds[0],
                                   {loss_csv, conv_csv, probe_csv});
    run_with_manifest(m, manifest_path, [&] {
        // cell (mi, si) -> slot mi * seeds + si; cells are independent runs
        std::vector<CellRun> cells(modes.size() * seeds.size());
        parallel_for(cells.size(), threads, [&](std::size_t idx) {
            const std::size_t mi = idx / seeds.size();
            const std::size_t si = idx % seeds.size();
            cells[idx] = run_cell(cfg_paths[mi], seeds[si], a.bins, a.per_bin, grid,
                                  a.probe_iters, a.probe_lr);
        });

        CsvWriter loss(loss_csv, {"t", "mean", "std", "mode"});
        CsvWriter conv(conv_csv, {"t", "mean", "std", "mode"});
        CsvWriter probe(probe_csv, {"t", "mean", "std", "mode"});
        for (std::size_t mi = 0; mi < modes.size(); ++mi) {
            const CellRun& first = cells[mi * seeds.size()];
            for (std::size_t b = 0; b < a.bins; ++b) {
                Vec fin(seeds.size()), ratio(seeds.size());
                for (std::size_t si = 0; si < seeds.size(); ++si) {
                    const CellRun& cell = cells[mi * seeds.size() + si];
                    fin[si] = cell.final_bins[b].fm;
                    ratio[si] = cell.final_bins[b].fm / cell.init_bins[b].fm;
                }
                const double mid = 0.5 * (first.final_bins[b].t_lo + first.final_bins[b].t_hi);
                const auto [lm, ls] = mean_std(fin);
                loss.row(mid, lm, ls, modes[mi]);
                // fraction of the pre-training loss still left in this window;
                // near 1 means the window has barely converged
                const auto [cm, cs] = mean_std(ratio);
                conv.row(mid, cm, cs, modes[mi]);
            }
            for (std::size_t g = 0; g < grid.size(); ++g) {
                Vec acc(seeds.size());
                for (std::size_t si = 0; si < seeds.size(); ++si)
                    acc[si] = cells[mi * seeds.size() + si].probe[g].accuracy;
                const auto [pm, ps] = mean_std(acc);
                probe.row(grid[g], pm, ps, modes[mi]);
            }
        }
        loss.close();
        conv.close();
        probe.close();
    });
    std::cout << "wrote " << loss_csv << "\n"
              << "wrote " << conv_csv << "\n"
              << "wrote " << probe_csv << "\n";
}

void add_probe_options(CLI::App* cmd, ProbeArgs& a) {
    cmd->add_option("--ckpt", a.ckpt, "checkpoint file")->required();
    cmd->add_option("--data", a.data, "dataset CSV (with .meta.json sidecar)")->required();
    cmd->add_option("--t-grid", a.t_grid, "comma-separated noise times in (0,1]")->required();
    cmd->add_option("--schedule", a.schedule, "interpolation schedule (default rectified)");
    cmd->add_option("--seed", a.seed, "noise and split seed");
    cmd->add_option("--iters", a.iters, "probe optimizer iterations");
    cmd->add_option("--lr", a.lr, "probe learning rate");
    cmd->add_option("--out", a.out, "output CSV (t,accuracy)")->required();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-matching interpolation schedules, low-noise conditioning diagnostics, "
                 "and local contrastive flow training"};
    app.require_subcommand(1);
    unsigned threads = 1;

    SweepArgs sweep;
    auto* sweep_cmd = app.add_subcommand(
        "sweep-kappa", "closed-form and Monte-Carlo condition ratios over a time grid");
    sweep_cmd->add_option("--schedule", sweep.schedule, "interpolation schedule");
    sweep_cmd->add_option("--t-grid", sweep.t_grid, "strictly descending times in (0,1]")
        ->required();
    sweep_cmd->add_option("--dim", sweep.dim, "ambient dimension");
    sweep_cmd->add_option("--x0-norm", sweep.x0_norm, "norm of the pinned clean point");
    sweep_cmd->add_option("--mc-samples", sweep.mc_samples,
                          "Monte-Carlo draws per grid point (0 = closed form only)");
    sweep_cmd->add_option("--seed", sweep.seed, "Monte-Carlo seed");
    sweep_cmd->add_option("--out", sweep.out, "output CSV")->required();
    sweep_cmd->add_option("--threads", threads, "worker threads (never changes outputs)");
    sweep_cmd->callback([&] { run_sweep_kappa(sweep, threads); });

    TrainArgs train_args;
    auto* train_cmd =
        app.add_subcommand("train", "train a velocity net from a run config file");
    train_cmd->add_option("--config", train_args.config, "run config file")->required();
    train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();
    train_cmd->add_option("--bins", train_args.bins, "time bins for the loss report");
    train_cmd->add_option("--per-bin", train_args.per_bin, "evaluation draws per bin");
    train_cmd->add_option("--threads", threads, "worker threads (never changes outputs)");
    train_cmd->callback([&] { run_train(train_args); });

    ProbeArgs probe_args;
    auto* probe_cmd = app.add_subcommand(
        "probe", "linear-probe accuracy of checkpoint features across noise times");
    add_probe_options(probe_cmd, probe_args);
    probe_cmd->add_option("--threads", threads, "worker threads (never changes outputs)");
    probe_cmd->callback([&] { run_probe(probe_args); });

    SampleArgs sample_args;
    auto* sample_cmd =
        app.add_subcommand("sample", "integrate the learned velocity field from noise");
    sample_cmd->add_option("--ckpt", sample_args.ckpt, "checkpoint file")->required();
    sample_cmd->add_option("--n", sample_args.n, "number of draws")->required();
    sample_cmd->add_option("--steps", sample_args.steps, "integration steps");
    sample_cmd->add_option("--t-stop", sample_args.t_stop, "final time in (0,1)");
    sample_cmd->add_option("--seed", sample_args.seed, "noise seed");
    sample_cmd->add_option("--out", sample_args.out, "output CSV (row,dim0..)")->required();
    sample_cmd->add_option("--threads", threads, "worker threads (never changes outputs)");
    sample_cmd->callback([&] { run_sample(sample_args, threads); });

    auto* diag = app.add_subcommand("diagnose", "theory-checking instruments");
    diag->require_subcommand(1);

    GnArgs gn_args;
    auto* gn_cmd = diag->add_subcommand(
        "gn", "curvature-matrix spectrum and condition number in a time window");
    gn_cmd->add_option("--ckpt", gn_args.ckpt, "checkpoint file")->required();
    gn_cmd->add_option("--data", gn_args.data, "dataset CSV")->required();
    gn_cmd->add_option("--window", gn_args.window, "time window: lo hi")
        ->expected(2)
        ->required();
    gn_cmd->add_option("--schedule", gn_args.schedule, "interpolation schedule");
    gn_cmd->add_option("--samples", gn_args.samples, "noisy views in the window");
    gn_cmd->add_option("--seed", gn_args.seed, "sampling seed");
    gn_cmd->add_option("--out", gn_args.out, "output CSV")->required();
    gn_cmd->callback([&] { run_diag_gn(gn_args); });

    ProbeArgs diag_probe_args;
    auto* diag_probe_cmd = diag->add_subcommand(
        "probe", "linear-probe accuracy of checkpoint features across noise times");
    add_probe_options(diag_probe_cmd, diag_probe_args);
    diag_probe_cmd->callback([&] { run_probe(diag_probe_args); });

    PropArgs prop_args;
    auto* prop_cmd = diag->add_subcommand(
        "prop", "fuzz the Jacobian-gain (4) or separation-ceiling (5) inequality");
    prop_cmd->add_option("--which", prop_args.which, "4 or 5")->required();
    prop_cmd->add_option("--trials", prop_args.trials, "random instances");
    prop_cmd->add_option("--seed", prop_args.seed, "fuzzing seed");
    prop_cmd->add_option("--out", prop_args.out, "optional summary CSV");
    prop_cmd->callback([&] { run_diag_prop(prop_args); });

    GdkArgs gdk_args;
    auto* gdk_cmd = diag->add_subcommand(
        "gdk", "iterations of exact gradient descent on a quadratic of given conditioning");
    gdk_cmd->add_option("--kappa", gdk_args.kappa, "condition number (>= 1)")->required();
    gdk_cmd->add_option("--eps", gdk_args.eps, "target contraction in (0,1)")->required();
    gdk_cmd->add_option("--dim", gdk_args.dim, "quadratic dimension");
    gdk_cmd->add_option("--out", gdk_args.out, "optional summary CSV");
    gdk_cmd->callback([&] { run_diag_gdk(gdk_args); });

    Figure1Args fig;
    auto* fig_cmd = app.add_subcommand(
        "figure1", "multi-seed baseline-vs-lcf loss, convergence, and probe curves");
    fig_cmd->add_option("--baseline-config", fig.baseline_config, "baseline run config")
        ->required();
    fig_cmd->add_option("--lcf-config", fig.lcf_config, "lcf run config")->required();
    fig_cmd->add_option("--out", fig.out_dir, "output directory")->required();
    fig_cmd->add_option("--seeds", fig.seeds, "comma-separated seeds (at least 5)");
    fig_cmd->add_option("--bins", fig.bins, "time bins for loss and convergence curves");
    fig_cmd->add_option("--per-bin", fig.per_bin, "evaluation draws per bin");
    fig_cmd->add_option("--t-grid", fig.t_grid, "probe times in (0,1]");
    fig_cmd->add_option("--probe-iters", fig.probe_iters, "probe optimizer iterations");
    fig_cmd->add_option("--probe-lr", fig.probe_lr, "probe learning rate");
    fig_cmd->add_option("--threads", threads, "worker threads (never changes outputs)");
    fig_cmd->callback([&] { run_figure1(fig, threads); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
