// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "lowflow/trainer.hpp"

using namespace lowflow;

TEST_CASE("training config parses from key-value text", "[trainer]") {
    SECTION("explicit values land in the right fields") {
        Config c = Config::from_string(
            "mode = baseline\n"
            "schedule = power:2\n"
            "epochs = 3\n"
            "batch_size = 32\n"
            "optimizer = sgd\n"
            "lr = 0.05\n"
            "seed = 99\n"
            "t_min = 0.05\n"
            "tau = 0.25\n"
            "lambda = 0.5\n"
            "cons_denominator = negatives-only\n"
            "positive_at = zero\n"
            "reuse_eps = false\n"
            "layer_sizes = 8,4\n"
            "feature_layer = 1\n"
            "activation = relu\n");
        TrainConfig tc = TrainConfig::from_config(c);
        c.reject_unknown_keys();
        REQUIRE(tc.mode == "baseline");
        REQUIRE(tc.schedule.name() == "power:2");
        REQUIRE(tc.epochs == 3);
        REQUIRE(tc.batch_size == 32);
        REQUIRE(tc.opt.kind == OptKind::sgd);
        REQUIRE(tc.opt.lr == 0.05);
        REQUIRE(tc.seed == 99);
        REQUIRE(tc.lcf.t_min == 0.05);
        REQUIRE(tc.lcf.tau == 0.25);
        REQUIRE(tc.lcf.lambda == 0.5);
        REQUIRE(tc.lcf.denominator == ConsDenominator::negatives_only);
        REQUIRE(tc.lcf.positive_at == PositiveAt::zero);
        REQUIRE(tc.lcf.reuse_eps_for_positive == false);
        REQUIRE(tc.hidden == std::vector<std::size_t>{8, 4});
        REQUIRE(tc.feature_layer == 1);
        REQUIRE(tc.act == Activation::relu);
    }
    SECTION("defaults fill everything else") {
        Config c = Config::from_string("");
        TrainConfig tc = TrainConfig::from_config(c);
        REQUIRE(tc.mode == "lcf");
        REQUIRE(tc.schedule.name() == "rectified");
        REQUIRE(tc.lcf.t_min == 0.02);
        REQUIRE(tc.lcf.tau == 0.5);
        REQUIRE(tc.lcf.lambda == 1.0);
        REQUIRE(tc.hidden == std::vector<std::size_t>{10, 10});
        REQUIRE(tc.feature_layer == 2);  // last hidden layer
    }
    SECTION("mistakes are usage errors") {
        Config a = Config::from_string("mode = turbo\n");
        REQUIRE_THROWS_AS(TrainConfig::from_config(a), UsageError);
        Config b = Config::from_string("epochs = 0\n");
        REQUIRE_THROWS_AS(TrainConfig::from_config(b), UsageError);
        Config d = Config::from_string("epochs = -3\n");
        REQUIRE_THROWS_AS(TrainConfig::from_config(d), UsageError);
        Config e = Config::from_string("feature_layer = 5\nlayer_sizes = 8,8\n");
        REQUIRE_THROWS_AS(TrainConfig::from_config(e), UsageError);
        Config f = Config::from_string("typo_key = 1\n");
        TrainConfig::from_config(f);
        REQUIRE_THROWS_AS(f.reject_unknown_keys(), UsageError);
    }
}

TEST_CASE("dataset config builds the described dataset", "[trainer]") {
    Config c = Config::from_string(
        "dataset.kind = gaussian-mixture\n"
        "dataset.n = 24\n"
        "dataset.dim = 5\n"
        "dataset.k = 3\n"
        "dataset.sem_dims = 0,2\n"
        "dataset.mean_scale = 1.5\n"
        "dataset.within_std = 0.1\n"
        "dataset.seed = 7\n");
    auto ds = dataset_from_config(c, 1);
    c.reject_unknown_keys();
    REQUIRE(ds.spec.kind == "gaussian-mixture");
    REQUIRE(ds.x.rows() == 24);
    REQUIRE(ds.x.cols() == 5);
    REQUIRE(ds.spec.k == 3);
    REQUIRE(ds.spec.seed == 7);

    SECTION("dataset seed defaults to a substream of the run seed") {
        Config d = Config::from_string("dataset.n = 8\n");
        auto a = dataset_from_config(d, 1);
        Config e = Config::from_string("dataset.n = 8\n");
        auto b = dataset_from_config(e, 2);
        REQUIRE(a.spec.seed != b.spec.seed);
        REQUIRE(a.x.data() != b.x.data());
    }
    SECTION("two moons ignores mixture-only keys") {
        Config d = Config::from_string("dataset.kind = two-moons\ndataset.n = 10\n");
        auto m = dataset_from_config(d, 3);
        d.reject_unknown_keys();
        REQUIRE(m.x.cols() == 2);
        REQUIRE(m.spec.kind == "two-moons");
    }
}

TEST_CASE("training batches are reproducible and well formed", "[trainer]") {
    auto ds = gaussian_mixture(3, 2, {0}, 2.0, 0.2, 40, 5);
    auto a = draw_training_batch(ds, Schedule::rectified(), 16, 11, 4);
    auto b = draw_training_batch(ds, Schedule::rectified(), 16, 11, 4);
    REQUIRE(a.xt.data() == b.xt.data());
    REQUIRE(a.t == b.t);
    REQUIRE(a.labels == b.labels);

    auto c = draw_training_batch(ds, Schedule::rectified(), 16, 11, 5);
    REQUIRE(a.xt.data() != c.xt.data());

    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.t[i] >= 0.0);
        REQUIRE(a.t[i] < 1.0);
        REQUIRE((a.labels[i] == 0 || a.labels[i] == 1));
    }
}

TEST_CASE("training is deterministic end to end", "[trainer]") {
    auto ds = gaussian_mixture(2, 2, {0}, 2.0, 0.2, 64, 13);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.hidden = {8};
    cfg.feature_layer = 1;
    cfg.seed = 17;

    auto r1 = train(cfg, ds);
    auto r2 = train(cfg, ds);
    REQUIRE(flatten_params(r1.net) == flatten_params(r2.net));
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        REQUIRE(r1.log[i].total == r2.log[i].total);
        REQUIRE(r1.log[i].fm == r2.log[i].fm);
        REQUIRE(r1.log[i].cons == r2.log[i].cons);
    }
}

TEST_CASE("baseline mode equals the split objective with both knobs at zero",
          "[trainer]") {
    auto ds = gaussian_mixture(2, 2, {0}, 2.0, 0.2, 64, 19);
    TrainConfig base;
    base.mode = "baseline";
    base.epochs = 2;
    base.batch_size = 16;
    base.hidden = {8};
    base.feature_layer = 1;
    base.seed = 23;
    // the lcf knobs in `base` are deliberately non-zero: baseline must ignore them
    base.lcf.t_min = 0.3;
    base.lcf.lambda = 2.0;

    TrainConfig split = base;
    split.mode = "lcf";
    split.lcf.t_min = 0.0;
    split.lcf.lambda = 0.0;
    split.lcf.reuse_eps_for_positive = false;  // must not matter: branch never runs

    auto a = train(base, ds);
    auto b = train(split, ds);
    REQUIRE(flatten_params(a.net) == flatten_params(b.net));
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        REQUIRE(a.log[i].total == b.log[i].total);
        REQUIRE(a.log[i].cons == 0.0);
        REQUIRE(b.log[i].cons == 0.0);
    }
}

TEST_CASE("step accounting follows epochs times floor(n / batch)", "[trainer]") {
    auto ds = gaussian_mixture(2, 2, {0}, 2.0, 0.2, 10, 29);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 3;
    cfg.hidden = {4};
    cfg.feature_layer = 1;

    auto r = train(cfg, ds);
    REQUIRE(r.steps_per_epoch == 3);
    REQUIRE(r.log.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        REQUIRE(r.log[i].step == i);
        REQUIRE(r.log[i].epoch == i / 3);
        REQUIRE(r.log[i].wall_ms >= 0.0);
    }

    SECTION("a dataset smaller than the batch still trains one step per epoch") {
        cfg.batch_size = 64;
        auto small = train(cfg, ds);
        REQUIRE(small.steps_per_epoch == 1);
        REQUIRE(small.log.size() == 2);
    }
}

TEST_CASE("regression loss drops at mid t once trained", "[trainer]") {
    auto ds = gaussian_mixture(1, 2, {0}, 2.0, 0.1, 512, 31);
    TrainConfig cfg;
    cfg.mode = "baseline";
    cfg.epochs = 250;  // 250 * 8 = 2000 steps
    cfg.batch_size = 64;
    cfg.opt.lr = 3e-3;
    cfg.hidden = {32, 32};
    cfg.feature_layer = 2;
    cfg.seed = 37;

    std::vector<std::size_t> sizes{1 + kTimeEmbedDim, 32, 32, 1};
    VelocityNet untrained = init_net(sizes, cfg.act, cfg.feature_layer, cfg.seed);
    auto before = eval_loss_by_tbin(untrained, ds, cfg.schedule, 10, 512, 41);

    auto r = train(cfg, ds);
    auto after = eval_loss_by_tbin(r.net, ds, cfg.schedule, 10, 512, 41);

    // bin 3 covers t in [0.3, 0.4): classes are far apart there relative to
    // the injected noise, so the reachable loss is the small within-class
    // residual, not the class-ambiguity floor that dominates later bins
    REQUIRE(before[3].fm > 10.0 * after[3].fm);
    // and the late-step training loss sits below the early one; the margin is
    // modest because the total is dominated by the irreducible noise-end part
    double early = 0.0, late = 0.0;
    for (std::size_t i = 0; i < 10; ++i) early += r.log[i].total / 10.0;
    for (std::size_t i = r.log.size() - 50; i < r.log.size(); ++i)
        late += r.log[i].total / 50.0;
    REQUIRE(late < 0.7 * early);
}

TEST_CASE("a diverging run aborts with the failing step named", "[trainer]") {
    auto ds = gaussian_mixture(2, 2, {0}, 2.0, 0.2, 32, 43);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 16;
    cfg.hidden = {8};
    cfg.feature_layer = 1;
    cfg.opt.kind = OptKind::sgd;
    cfg.opt.lr = 1e12;

    try {
        train(cfg, ds);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("time-binned evaluation is deterministic and spans the grid", "[trainer]") {
    auto ds = gaussian_mixture(2, 2, {0}, 2.0, 0.2, 64, 47);
    VelocityNet net = init_net({5, 8, 2}, Activation::tanh_fn, 1, 53);

    auto a = eval_loss_by_tbin(net, ds, Schedule::rectified(), 5, 100, 59);
    auto b = eval_loss_by_tbin(net, ds, Schedule::rectified(), 5, 100, 59);
    REQUIRE(a.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(a[i].fm == b[i].fm);
        REQUIRE(a[i].t_lo == Catch::Approx(i * 0.2));
        REQUIRE(a[i].t_hi == Catch::Approx((i + 1) * 0.2));
        REQUIRE(a[i].n == 100);
        REQUIRE(std::isfinite(a[i].fm));
        REQUIRE(a[i].fm > 0.0);
    }
    REQUIRE_THROWS_AS(eval_loss_by_tbin(net, ds, Schedule::rectified(), 0, 10, 1),
                      UsageError);
}

TEST_CASE("training artifacts serialize with fixed headers", "[trainer]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "lowflow_trainer_test";
    fs::create_directories(dir);

    auto ds = gaussian_mixture(2, 2, {0}, 2.0, 0.2, 32, 61);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.hidden = {4};
    cfg.feature_layer = 1;
    auto r = train(cfg, ds);

    const std::string log_path = (dir / "train_log.csv").string();
    write_train_log(log_path, r.log);
    {
        std::ifstream in(log_path, std::ios::binary);
        std::string first;
        std::getline(in, first);
        REQUIRE(first == "step,epoch,fm,cons,total");
        std::size_t rows = 0;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        REQUIRE(rows == r.log.size());
    }

    const std::string bins_path = (dir / "loss_bins.csv").string();
    write_loss_bins(bins_path, eval_loss_by_tbin(r.net, ds, cfg.schedule, 4, 50, 67));
    {
        std::ifstream in(bins_path, std::ios::binary);
        std::string first;
        std::getline(in, first);
        REQUIRE(first == "t_lo,t_hi,fm_loss,n");
    }

    fs::remove_all(dir);
}
