// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "lowflow/schedule.hpp"

using lowflow::Schedule;

namespace {
const Schedule kAll[] = {Schedule::rectified(), Schedule::power_law(0.5),
                         Schedule::power_law(2.0), Schedule::power_law(3.5),
                         Schedule::cosine()};
}

TEST_CASE("rectified evaluates to exact linear coefficients", "[schedule]") {
    auto e = Schedule::rectified().eval(0.25);
    CHECK(e.alpha == 0.75);
    CHECK(e.beta == 0.25);
    CHECK(e.dalpha == -1.0);
    CHECK(e.dbeta == 1.0);
}

TEST_CASE("power-law p=2 at t=0.5", "[schedule]") {
    auto e = Schedule::power_law(2.0).eval(0.5);
    CHECK(e.alpha == Catch::Approx(0.75).margin(1e-15));
    CHECK(e.beta == Catch::Approx(0.25).margin(1e-15));
    CHECK(e.dalpha == Catch::Approx(-1.0).margin(1e-15));
    CHECK(e.dbeta == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("cosine at t=0.5 and its gain ratio", "[schedule]") {
    constexpr double half_pi = std::numbers::pi / 2.0;
    auto e = Schedule::cosine().eval(0.5);
    const double r = std::sqrt(0.5);
    CHECK(e.alpha == Catch::Approx(r).epsilon(1e-15));
    CHECK(e.beta == Catch::Approx(r).epsilon(1e-15));
    CHECK(e.dalpha == Catch::Approx(-half_pi * r).epsilon(1e-15));
    CHECK(e.dbeta == Catch::Approx(half_pi * r).epsilon(1e-15));
    // beta'/beta at t=0.5 is (pi/2) * cot(pi/4) = pi/2
    CHECK(Schedule::cosine().gain_ratio(0.5) == Catch::Approx(half_pi).epsilon(1e-15));
}

TEST_CASE("boundary conditions hold for every schedule", "[schedule]") {
    for (const auto& s : kAll) {
        auto e0 = s.eval(0.0);
        auto e1 = s.eval(1.0);
        INFO(s.name());
        CHECK(e0.alpha == 1.0);
        CHECK(e0.beta == 0.0);
        CHECK(e1.alpha == Catch::Approx(0.0).margin(1e-16));
        CHECK(e1.beta == 1.0);
    }
}

TEST_CASE("alpha decreases and beta increases across a dense grid", "[schedule]") {
    constexpr int n = 10000;
    for (const auto& s : kAll) {
        INFO(s.name());
        double prev_alpha = s.eval(0.0).alpha;
        double prev_beta = s.eval(0.0).beta;
        for (int i = 1; i <= n; ++i) {
            auto e = s.eval(static_cast<double>(i) / n);
            CHECK(e.alpha < prev_alpha);
            CHECK(e.beta > prev_beta);
            prev_alpha = e.alpha;
            prev_beta = e.beta;
        }
    }
}

TEST_CASE("analytic derivatives match central finite differences", "[schedule]") {
    constexpr double h = 1e-6;
    for (const auto& s : kAll) {
        INFO(s.name());
        for (int i = 1; i <= 1000; ++i) {
            const double t = static_cast<double>(i) / 1001.0;
            auto e = s.eval(t);
            auto lo = s.eval(t - h);
            auto hi = s.eval(t + h);
            const double fd_alpha = (hi.alpha - lo.alpha) / (2 * h);
            const double fd_beta = (hi.beta - lo.beta) / (2 * h);
            CAPTURE(t);
            CHECK(std::abs(fd_alpha - e.dalpha) <= 1e-6 * std::max(1.0, std::abs(e.dalpha)));
            CHECK(std::abs(fd_beta - e.dbeta) <= 1e-6 * std::max(1.0, std::abs(e.dbeta)));
        }
    }
}

TEST_CASE("gain ratio diverges toward t=0", "[schedule]") {
    for (const auto& s : kAll) {
        INFO(s.name());
        CHECK(s.gain_ratio(1e-6) > s.gain_ratio(1e-2));
        CHECK(s.gain_ratio(1e-2) > s.gain_ratio(0.5));
        CHECK(std::isfinite(s.gain_ratio(1e-12)));
    }
    CHECK(Schedule::rectified().gain_ratio(0.01) == Catch::Approx(100.0).epsilon(1e-15));
    CHECK(Schedule::power_law(3.0).gain_ratio(0.01) == Catch::Approx(300.0).epsilon(1e-15));
}

TEST_CASE("names round-trip through parse", "[schedule]") {
    for (const auto& s : kAll) {
        auto back = Schedule::parse(s.name());
        CHECK(back.kind() == s.kind());
        if (s.kind() == Schedule::Kind::power_law) CHECK(back.power() == s.power());
    }
    CHECK(Schedule::parse("power:2.5").power() == 2.5);
}

TEST_CASE("domain and parse errors are reported", "[schedule]") {
    auto s = Schedule::rectified();
    CHECK_THROWS_AS(s.eval(-0.1), lowflow::NumericError);
    CHECK_THROWS_AS(s.eval(1.0000001), lowflow::NumericError);
    CHECK_THROWS_AS(s.gain_ratio(0.0), lowflow::NumericError);
    CHECK_THROWS_AS(Schedule::power_law(0.0), lowflow::UsageError);
    CHECK_THROWS_AS(Schedule::power_law(-1.0), lowflow::UsageError);
    CHECK_THROWS_AS(Schedule::parse("linear"), lowflow::UsageError);
    CHECK_THROWS_AS(Schedule::parse("power:x"), lowflow::UsageError);
}
