// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "lowflow/errors.hpp"
#include "lowflow/fmtio.hpp"

namespace lowflow {

// Interpolation path coefficients at time t: x_t = alpha * x0 + beta * eps.
struct ScheduleEval {
    double alpha;
    double beta;
    double dalpha;  // d(alpha)/dt
    double dbeta;   // d(beta)/dt
};

// Noise schedule on t in [0,1] with alpha(0)=1, beta(0)=0, alpha(1)=0,
// beta(1)=1. t=0 is the data end, t=1 the noise end. All values are exact
// closed forms; nothing here is tabulated or fitted.
class Schedule {
  public:
    enum class Kind { rectified, power_law, cosine };

    static Schedule rectified() { return Schedule(Kind::rectified, 1.0); }
    static Schedule power_law(double p) {
        if (!(p > 0.0)) throw UsageError("power-law schedule requires p > 0");
        return Schedule(Kind::power_law, p);
    }
    static Schedule cosine() { return Schedule(Kind::cosine, 0.0); }

    // Accepts "rectified", "power:<p>", "cosine".
    static Schedule parse(std::string_view name) {
        if (name == "rectified") return rectified();
        if (name == "cosine") return cosine();
        constexpr std::string_view prefix = "power:";
        if (name.substr(0, prefix.size()) == prefix) {
            double p = 0.0;
            try {
                p = parse_double(name.substr(prefix.size()), "schedule 'power:<p>'");
            } catch (const IoError& e) {
                throw UsageError(e.what());
            }
            return power_law(p);
        }
        throw UsageError("unknown schedule '" + std::string(name) +
                         "' (expected rectified | power:<p> | cosine)");
    }

    std::string name() const {
        switch (kind_) {
            case Kind::rectified: return "rectified";
            case Kind::power_law: return "power:" + fmt_double(p_);
            case Kind::cosine: return "cosine";
        }
        return "";
    }

    Kind kind() const { return kind_; }
    double power() const { return p_; }

    ScheduleEval eval(double t) const {
        check_domain(t, 0.0);
        constexpr double half_pi = std::numbers::pi / 2.0;
        switch (kind_) {
            case Kind::rectified:
                return {1.0 - t, t, -1.0, 1.0};
            case Kind::power_law: {
                const double tp = std::pow(t, p_);
                const double dtp = p_ * std::pow(t, p_ - 1.0);  // +inf at t=0 when p<1
                return {1.0 - tp, tp, -dtp, dtp};
            }
            case Kind::cosine:
                return {std::cos(half_pi * t), std::sin(half_pi * t),
                        -half_pi * std::sin(half_pi * t), half_pi * std::cos(half_pi * t)};
        }
        throw NumericError("unreachable schedule kind");
    }

    // beta'(t) / beta(t) in closed form; diverges like Theta(1/t) as t -> 0
    // for every schedule here, which is the source of the low-noise blow-up
    // this library measures. Domain (0, 1].
    double gain_ratio(double t) const {
        check_domain(t, std::nextafter(0.0, 1.0));
        constexpr double half_pi = std::numbers::pi / 2.0;
        switch (kind_) {
            case Kind::rectified: return 1.0 / t;
            case Kind::power_law: return p_ / t;
            case Kind::cosine: return half_pi * std::cos(half_pi * t) / std::sin(half_pi * t);
        }
        throw NumericError("unreachable schedule kind");
    }

  private:
    Schedule(Kind kind, double p) : kind_(kind), p_(p) {}

    void check_domain(double t, double lo) const {
        if (!(t >= lo) || !(t <= 1.0))
            throw NumericError("schedule time t=" + fmt_double(t) + " outside domain");
    }

    Kind kind_;
    double p_;
};

}  // namespace lowflow
