// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Each numbered criterion below is a property the library
// must hold end to end: exact identities of the condition-ratio algebra,
// Monte-Carlo agreement with the closed forms, gradient fidelity of the
// split objective, the conditioning and probe patterns of low-noise training
// on the default configuration, a closed-form sampler oracle, and CLI-level
// byte determinism. One line is printed per criterion; the exit code is
// nonzero if any line reads FAIL. Everything is seeded, so a rerun prints
// byte-identical results.

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lowflow/conditioning.hpp"
#include "lowflow/data.hpp"
#include "lowflow/diagnostics.hpp"
#include "lowflow/flow.hpp"
#include "lowflow/losses.hpp"
#include "lowflow/net.hpp"
#include "lowflow/schedule.hpp"
#include "lowflow/trainer.hpp"

namespace fs = std::filesystem;
using namespace lowflow;

namespace {

int g_failures = 0;

void criterion(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("[%2d] %s  %-42s %s\n", id, ok ? "PASS" : "FAIL", name, detail.c_str());
    if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

Schedule random_schedule(Rng& rng) {
    const int pick = static_cast<int>(rng.uniform() * 3.0);
    if (pick == 0) return Schedule::rectified();
    if (pick == 1) return Schedule::cosine();
    return Schedule::power_law(rng.uniform(1.2, 3.0));
}

// ---------------------------------------------------------------------------
// 1. The rectified schedule's equal-time condition ratio is exactly 1/t,
//    independent of the pinned point and the dimension.
void c1_exact_ratio() {
    double worst = 0.0;
    for (double t : {0.5, 0.1, 0.02, 0.001}) {
        for (double norm : {0.0, 1.0, 7.3}) {
            const double k = kappa_exact(Schedule::rectified(), norm, t, t, 8);
            worst = std::max(worst, std::abs(k - 1.0 / t) * t);
        }
    }
    criterion(1, "equal-time condition ratio identity", worst <= 1e-12,
              fmt("worst rel err %.2e over t in {0.5,0.1,0.02,0.001}", worst));
}

// ---------------------------------------------------------------------------
// 2. Monte-Carlo pair moments agree with the closed forms within 4 standard
//    errors on at least 95 of 100 seeded instances.
void c2_mc_agreement() {
    const std::uint64_t seed = 20260815;
    int within = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        Rng rng = substream(seed, stream_tag("accept-mc"), i);
        const Schedule s = random_schedule(rng);
        const std::size_t dim = 2 + static_cast<std::size_t>(rng.uniform() * 7.0);
        Vec x0(dim);
        for (double& v : x0) v = 1.5 * rng.normal();
        const double t1 = rng.uniform(0.02, 1.0);
        const double t2 = rng.uniform(0.02, 1.0);
        double n2 = 0.0;
        for (double v : x0) n2 += v * v;
        const auto ex = moments_exact(s, std::sqrt(n2), t1, t2, dim);
        const auto mc = mc_moments(s, x0, t1, t2, 100000, rng.next_u64());
        if (std::abs(mc.dv2 - ex.dv2) <= 4.0 * mc.dv2_stderr &&
            std::abs(mc.dx2 - ex.dx2) <= 4.0 * mc.dx2_stderr)
            ++within;
    }
    criterion(2, "monte carlo moments vs closed form", within >= 95,
              fmt("%d/100 instances within 4 stderr (need >= 95)", within));
}

// ---------------------------------------------------------------------------
// 3. The closed-form lower bound never exceeds the exact condition ratio.
void c3_lower_bound() {
    const std::uint64_t seed = 20260815;
    std::size_t violations = 0;
    double worst = 1e300;
    for (std::size_t i = 0; i < 10000; ++i) {
        Rng rng = substream(seed, stream_tag("accept-lb"), i);
        const Schedule s = random_schedule(rng);
        const std::size_t dim = 1 + static_cast<std::size_t>(rng.uniform() * 8.0);
        const double norm = rng.uniform() < 0.1 ? 0.0 : std::abs(3.0 * rng.normal());
        const double t1 = std::pow(10.0, -3.0 * rng.uniform());
        const double t2 = std::pow(10.0, -3.0 * rng.uniform());
        const double ke = kappa_exact(s, norm, t1, t2, dim);
        const double lb = kappa_lower_bound(s, norm, t1, t2, dim);
        if (ke < lb * (1.0 - 1e-12)) ++violations;
        worst = std::min(worst, ke - lb);
    }
    criterion(3, "lower bound dominated by exact ratio", violations == 0,
              fmt("%zu violations in 10000 trials, min slack %.2e", violations, worst));
}

// ---------------------------------------------------------------------------
// 4. Reverse-mode gradients of the split objective match central finite
//    differences with the detached views (positive features and the feature
//    bank) frozen at the evaluation point, contrastive branch active.
void c4_gradient_fidelity() {
    const std::uint64_t seed = 20260815;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < 50; ++trial) {
        Rng rng = substream(seed, stream_tag("accept-grad"), trial);
        const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform() * 3.0);
        const std::size_t n = 5 + static_cast<std::size_t>(rng.uniform() * 4.0);
        std::vector<std::size_t> sizes{d + 3};
        const std::size_t layers = 1 + static_cast<std::size_t>(rng.uniform() * 2.0);
        for (std::size_t l = 0; l < layers; ++l)
            sizes.push_back(4 + static_cast<std::size_t>(rng.uniform() * 4.0));
        sizes.push_back(d);
        const std::size_t fl = 1 + static_cast<std::size_t>(rng.uniform() * layers);
        VelocityNet net = init_net(sizes, Activation::tanh_fn, fl, rng.next_u64());

        LcfConfig cfg;
        cfg.t_min = 0.3;
        cfg.tau = rng.uniform(0.25, 1.0);
        cfg.lambda = rng.uniform(0.3, 1.2);
        cfg.denominator = static_cast<ConsDenominator>(trial % 3);
        cfg.positive_at = trial % 2 == 0 ? PositiveAt::t_min : PositiveAt::zero;
        cfg.reuse_eps_for_positive = trial % 4 < 2;

        Matrix x0(n, d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) x0(i, j) = rng.normal();
        Vec t(n);
        std::vector<int> labels(n, 0);
        // guarantee both branches are populated
        t[0] = rng.uniform(0.35, 0.95);
        t[1] = rng.uniform(0.005, 0.28);
        for (std::size_t i = 2; i < n; ++i) t[i] = rng.uniform(0.005, 0.95);
        NoisyBatch b = make_batch(Schedule::rectified(), x0, labels, t, rng.next_u64());

        Grads g = zero_grads(net);
        lcf_loss(net, b, cfg, &g);
        const Vec ad = flatten_grads(net, g);
        const Vec theta0 = flatten_params(net);

        // freeze the detached quantities exactly as the loss computes them
        const auto idx = split_batch(b, cfg.t_min);
        const double t_ref = cfg.positive_at == PositiveAt::t_min ? cfg.t_min : 0.0;
        const ScheduleEval pe = b.schedule.eval(t_ref);
        Matrix bank(b.size(), net.feature_dim());
        for (std::size_t i = 0; i < b.size(); ++i) {
            auto c = forward(net, {b.xt.row(i), d}, b.t[i]);
            const Vec& h = feature_of(net, c);
            for (std::size_t k = 0; k < h.size(); ++k) bank(i, k) = h[k];
        }
        Matrix positives(idx.low.size(), net.feature_dim());
        std::vector<std::ptrdiff_t> self(idx.low.size());
        for (std::size_t k = 0; k < idx.low.size(); ++k) {
            const std::size_t i = idx.low[k];
            self[k] = static_cast<std::ptrdiff_t>(i);
            Vec eps(d);
            if (cfg.reuse_eps_for_positive) {
                for (std::size_t c = 0; c < d; ++c) eps[c] = b.eps(i, c);
            } else {
                Rng pr = substream(b.seed, stream_tag("pospair"), i);
                for (std::size_t c = 0; c < d; ++c) eps[c] = pr.normal();
            }
            Vec x_pos(d);
            for (std::size_t c = 0; c < d; ++c)
                x_pos[c] = pe.alpha * b.x0(i, c) + pe.beta * eps[c];
            auto fc = forward(net, x_pos, t_ref);
            const Vec& hp = feature_of(net, fc);
            for (std::size_t c = 0; c < hp.size(); ++c) positives(k, c) = hp[c];
        }

        auto frozen_total = [&](const Vec& theta) {
            VelocityNet m = net;
            set_params(m, theta);
            const double fm = fm_loss(m, b, idx.fm);
            double cons = 0.0;
            if (!idx.low.empty()) {
                Matrix anchors(idx.low.size(), m.feature_dim());
                for (std::size_t k = 0; k < idx.low.size(); ++k) {
                    const std::size_t i = idx.low[k];
                    auto c = forward(m, {b.xt.row(i), d}, b.t[i]);
                    const Vec& h = feature_of(m, c);
                    for (std::size_t j = 0; j < h.size(); ++j) anchors(k, j) = h[j];
                }
                cons = contrastive_loss(anchors, positives, bank, cfg.tau, cfg.denominator,
                                        &self);
            }
            return fm + cfg.lambda * cons;
        };

        Vec point = theta0;
        for (std::size_t i = 0; i < point.size(); ++i) {
            const double keep = point[i];
            const double h = 1e-5;
            point[i] = keep + h;
            const double up = frozen_total(point);
            point[i] = keep - h;
            const double dn = frozen_total(point);
            point[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            worst = std::max(worst, std::abs(ad[i] - fd) / std::max(std::abs(fd), 1e-6));
        }
    }
    criterion(4, "autodiff matches finite differences", worst < 1e-4,
              fmt("worst rel err %.2e over 50 nets (need < 1e-4)", worst));
}

// ---------------------------------------------------------------------------
// 5. Gradient descent on the reference quadratic follows the kappa*log(1/eps)
//    complexity law, with the two pinned instances exact.
void c5_gd_complexity() {
    const std::size_t k10 = gd_complexity(10.0, 1e-3);
    const std::size_t k100 = gd_complexity(100.0, 1e-3);
    bool ratios_ok = true;
    std::string detail = fmt("gd(10)=%zu gd(100)=%zu", k10, k100);
    for (double kappa : {10.0, 50.0, 100.0, 500.0}) {
        const double measured = static_cast<double>(gd_complexity(kappa, 1e-3));
        const double law = kappa * std::log(1e3);
        ratios_ok = ratios_ok && measured / law >= 0.5 && measured / law <= 1.5;
    }
    criterion(5, "gradient descent complexity law", k10 == 66 && k100 == 688 && ratios_ok,
              detail + (ratios_ok ? ", ratio law in [0.5,1.5]" : ", ratio law VIOLATED"));
}

// ---------------------------------------------------------------------------
// Shared 5-seed study of the default configuration: baseline and lcf runs at
// ~2000 steps on the default mixture, with conditioning, binned losses and
// probes recorded once and consumed by criteria 6 and 8.
struct DefaultStudy {
    double kappa_low = 0.0;   // mean over seeds, window (0.01, 0.02)
    double kappa_mid = 0.0;   // mean over seeds, window (0.4, 0.5)
    double bin_low = 0.0;     // mean baseline loss, t bin [0, 0.1)
    double bin_mid = 0.0;     // mean baseline loss, t bin [0.4, 0.5)
    double base01 = 0.0;      // mean baseline probe accuracy at t = 0.01
    double base30 = 0.0;      // mean baseline probe accuracy at t = 0.3
    double lcf01 = 0.0;       // mean lcf probe accuracy at t = 0.01
};

DefaultStudy run_default_study() {
    DefaultStudy st;
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    const double w = 1.0 / static_cast<double>(seeds.size());
    for (std::uint64_t seed : seeds) {
        TrainConfig tc;  // library defaults throughout
        tc.mode = "baseline";
        tc.epochs = 31;  // 31 epochs x 64 steps = 1984 steps on the default n
        tc.seed = seed;
        auto data = gaussian_mixture(8, 3, {0, 1}, 0.7, 0.3, 4096,
                                     mix_seed(seed, stream_tag("dataset")));
        auto base = train(tc, data);

        auto lo = gn_conditioning(base.net, data, tc.schedule, 0.01, 0.02, 128,
                                  mix_seed(seed, stream_tag("gn")));
        auto mid = gn_conditioning(base.net, data, tc.schedule, 0.4, 0.5, 128,
                                   mix_seed(seed, stream_tag("gn")) + 1);
        st.kappa_low += w * lo.kappa;
        st.kappa_mid += w * mid.kappa;

        auto bins = eval_loss_by_tbin(base.net, data, tc.schedule, 10, 256,
                                      mix_seed(seed, stream_tag("eval")));
        st.bin_low += w * bins[0].fm;
        st.bin_mid += w * bins[4].fm;

        auto bp = probe_vs_t(base.net, data, tc.schedule, {0.01, 0.3},
                             mix_seed(seed, stream_tag("probe")));
        st.base01 += w * bp[0].accuracy;
        st.base30 += w * bp[1].accuracy;

        TrainConfig tl = tc;
        tl.mode = "lcf";
        auto lcf = train(tl, data);
        auto lp = probe_vs_t(lcf.net, data, tl.schedule, {0.01},
                             mix_seed(seed, stream_tag("probe")));
        st.lcf01 += w * lp[0].accuracy;
    }
    return st;
}

// 6. The Gauss-Newton condition number of the default trained net is at
//    least an order of magnitude larger in the low-noise window.
void c6_gn_growth(const DefaultStudy& st) {
    criterion(6, "gauss-newton conditioning growth at low t", st.kappa_low >= 10.0 * st.kappa_mid,
              fmt("mean kappa %.3g at (0.01,0.02) vs %.3g at (0.4,0.5), ratio %.1f",
                  st.kappa_low, st.kappa_mid, st.kappa_low / st.kappa_mid));
}

// ---------------------------------------------------------------------------
// 7. The gain-reallocation and separation bounds hold on 10^4 fuzzed
//    instances each (they are unconditional; a violation is a bug).
void c7_bound_fuzzing() {
    const auto a = fuzz_gain_reallocation(10000, 20260815);
    const auto b = fuzz_separation_bound(10000, 20260815);
    criterion(7, "reallocation / separation bound fuzzing",
              a.failures == 0 && b.failures == 0,
              fmt("gain bound %zu/10000 failed, separation bound %zu/10000 failed", a.failures,
                  b.failures));
}

// 8. Low-noise training patterns on the default configuration, means over
//    5 seeds: the lowest-t loss bin stays hardest, the baseline probe is
//    worse at t = 0.01 than at t = 0.3, and the contrastive run repairs the
//    low-t probe.
void c8_training_patterns(const DefaultStudy& st) {
    const bool a = st.bin_low > st.bin_mid;
    const bool c = st.base30 > st.base01;
    const bool l = st.lcf01 >= st.base01;
    criterion(8, "low-noise training pattern suite", a && c && l,
              fmt("bin loss %.2f>%.2f %s; probe %.3f@0.3 > %.3f@0.01 %s; lcf %.3f >= %.3f %s",
                  st.bin_low, st.bin_mid, a ? "ok" : "VIOLATED", st.base30, st.base01,
                  c ? "ok" : "VIOLATED", st.lcf01, st.base01, l ? "ok" : "VIOLATED"));
}

// ---------------------------------------------------------------------------
// 9. Integrating the exact marginal velocity of a single Gaussian source
//    back from t = 1 recovers the source variance.
void c9_sampler_oracle() {
    const double sigma2 = 0.25;
    const std::size_t dim = 4, draws = 10000;
    auto vfn = [&](const Vec& x, double t) {
        // conditional expectation of (eps - x0) given x_t for x0 ~ N(0, s2 I)
        const double c = (t - (1.0 - t) * sigma2) / ((1.0 - t) * (1.0 - t) * sigma2 + t * t);
        Vec v(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) v[j] = c * x[j];
        return v;
    };
    double sum2 = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        Rng rng = substream(20260815, stream_tag("accept-x1"), i);
        Vec x1(dim);
        for (double& v : x1) v = rng.normal();
        Vec x = euler_sample(vfn, std::move(x1), 200, 1e-3);
        for (double v : x) sum2 += v * v;
    }
    const double recovered = sum2 / static_cast<double>(draws * dim);
    const double rel = std::abs(recovered - sigma2) / sigma2;
    criterion(9, "gaussian sampler oracle", rel <= 0.05,
              fmt("recovered variance %.4f vs %.2f (rel err %.3f, need <= 0.05)", recovered,
                  sigma2, rel));
}

// ---------------------------------------------------------------------------
// 10. CLI determinism: reruns, manifest replay and thread counts all
//     reproduce outputs byte for byte.
struct CliResult {
    int code;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(LOWFLOW_CLI_PATH) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return {-1, "popen failed"};
    std::string out;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    const int raw = pclose(p);
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void c10_cli_determinism() {
    const fs::path dir = fs::temp_directory_path() / "lowflow_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();

    std::ofstream(dir / "run.cfg") << "mode = lcf\nepochs = 4\nbatch_size = 32\nseed = 5\n"
                                      "layer_sizes = 8,8\nfeature_layer = 2\n"
                                      "dataset.n = 512\ndataset.dim = 4\ndataset.k = 2\n"
                                      "dataset.sem_dims = 0,1\n";
    const std::vector<std::string> files{"ckpt.txt", "train_log.csv", "loss_bins.csv",
                                         "dataset.csv", "dataset.csv.meta.json"};

    std::string why;
    bool ok = true;
    auto expect = [&](bool cond, const std::string& msg) {
        if (!cond && ok) {
            ok = false;
            why = msg;
        }
    };

    auto ra = run_cli("train --config " + d + "/run.cfg --out " + d + "/a");
    auto rb = run_cli("train --config " + d + "/run.cfg --out " + d + "/b --threads 3");
    expect(ra.code == 0 && rb.code == 0, "train exit " + std::to_string(ra.code));
    for (const auto& f : files)
        expect(slurp(dir / "a" / f) == slurp(dir / "b" / f), "rerun differs in " + f);

    // replay from the manifest's resolved config
    if (ok) {
        const auto man = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
        expect(man.at("status") == "ok", "manifest status not ok");
        std::string bins = "10", per_bin = "256";
        std::ofstream cfg(dir / "replay.cfg");
        for (const auto& [k, v] : man.at("config").items()) {
            if (k == "flags.bins")
                bins = v.get<std::string>();
            else if (k == "flags.per_bin")
                per_bin = v.get<std::string>();
            else
                cfg << k << " = " << v.get<std::string>() << "\n";
        }
        cfg.close();
        auto rc = run_cli("train --config " + d + "/replay.cfg --out " + d + "/c --bins " +
                          bins + " --per-bin " + per_bin);
        expect(rc.code == 0, "replay exit " + std::to_string(rc.code));
        for (const auto& f : files)
            expect(slurp(dir / "a" / f) == slurp(dir / "c" / f), "replay differs in " + f);
    }

    auto s1 = run_cli("sweep-kappa --schedule rectified --t-grid 0.5,0.1,0.02 --mc-samples "
                      "5000 --seed 3 --out " +
                      d + "/s1.csv --threads 1");
    auto s2 = run_cli("sweep-kappa --schedule rectified --t-grid 0.5,0.1,0.02 --mc-samples "
                      "5000 --seed 3 --out " +
                      d + "/s2.csv --threads 4");
    expect(s1.code == 0 && s2.code == 0, "sweep exit " + std::to_string(s1.code));
    expect(slurp(dir / "s1.csv") == slurp(dir / "s2.csv"), "sweep differs across threads");

    auto g1 = run_cli("sample --ckpt " + d + "/a/ckpt.txt --n 64 --steps 50 --seed 9 --out " +
                      d + "/g1.csv");
    auto g2 = run_cli("sample --ckpt " + d + "/a/ckpt.txt --n 64 --steps 50 --seed 9 --out " +
                      d + "/g2.csv --threads 3");
    expect(g1.code == 0 && g2.code == 0, "sample exit " + std::to_string(g1.code));
    expect(slurp(dir / "g1.csv") == slurp(dir / "g2.csv"), "sample differs across threads");

    criterion(10, "cli rerun / replay / thread determinism", ok,
              ok ? "train rerun, manifest replay, sweep and sample all byte-identical" : why);
    fs::remove_all(dir);
}

}  // namespace

int main() {
    std::printf("lowflow acceptance suite\n");
    c1_exact_ratio();
    c2_mc_agreement();
    c3_lower_bound();
    c4_gradient_fidelity();
    c5_gd_complexity();
    const DefaultStudy st = run_default_study();
    c6_gn_growth(st);
    c7_bound_fuzzing();
    c8_training_patterns(st);
    c9_sampler_oracle();
    c10_cli_determinism();
    std::printf("%d/10 criteria passed\n", 10 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
