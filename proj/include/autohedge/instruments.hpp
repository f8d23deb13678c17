#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autohedge/errors.hpp"

namespace autohedge {

inline constexpr double kTimeTol = 1e-9;

inline bool same_time(double a, double b) { return std::abs(a - b) < kTimeTol; }

/// Worst-of autocallable coupon note. Barriers are returns of the worst performer
/// relative to its initial price. Coupons are non-memory; comparisons use >=.
struct NoteSpec {
    double notional = 100.0;
    std::vector<double> initial_prices;
    double maturity = 4.0;
    double coupon_freq = 4.0;      ///< observations per year
    double coupon_rate = 0.02275;  ///< fraction of notional per coupon period
    double coupon_barrier = -0.25;
    double call_freq = 4.0;
    double call_barrier = 0.0;
    double protection_barrier = -0.30;

    /// The 3-asset, 4-year reference note.
    static NoteSpec reference() {
        NoteSpec s;
        s.initial_prices = {382.0, 494.0, 142.0};
        return s;
    }

    std::size_t n_assets() const { return initial_prices.size(); }
    double coupon_amount() const { return coupon_rate * notional; }

    std::size_t n_observations() const {
        return static_cast<std::size_t>(std::llround(maturity * coupon_freq));
    }

    double observation_date(std::size_t k) const {
        return static_cast<double>(k + 1) / coupon_freq;
    }

    /// k/coupon_freq for k = 1..n; the last one is the maturity.
    std::vector<double> observation_dates() const {
        std::vector<double> out(n_observations());
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = observation_date(k);
        return out;
    }

    /// Index of the observation on date t, if any.
    std::optional<std::size_t> observation_index(double t) const {
        const double x = t * coupon_freq;
        const double r = std::round(x);
        if (std::abs(x - r) > kTimeTol * coupon_freq || r < 1.0 ||
            r > static_cast<double>(n_observations()))
            return std::nullopt;
        return static_cast<std::size_t>(r) - 1;
    }

    /// Call observations share the coupon schedule every (coupon_freq/call_freq)
    /// dates and stop strictly before maturity.
    bool is_call_observation(std::size_t k) const {
        const auto stride = static_cast<std::size_t>(std::llround(coupon_freq / call_freq));
        return k + 1 < n_observations() && (k + 1) % stride == 0;
    }

    /// First observation date strictly after t (maturity if none remain before it).
    double next_observation_after(double t) const {
        for (std::size_t k = 0; k < n_observations(); ++k) {
            const double d = observation_date(k);
            if (d > t + kTimeTol) return d;
        }
        return maturity;
    }

    void validate() const {
        require(!initial_prices.empty(), "note needs at least one underlying");
        for (double p : initial_prices) require(p > 0.0 && std::isfinite(p), "initial prices must be positive");
        require(notional > 0.0, "notional must be positive");
        require(maturity > 0.0 && coupon_freq > 0.0 && call_freq > 0.0, "maturity and frequencies must be positive");
        const double n = maturity * coupon_freq;
        require(std::abs(n - std::round(n)) < 1e-9 && std::round(n) >= 1.0,
                "maturity must be a whole number of coupon periods");
        const double stride = coupon_freq / call_freq;
        require(std::abs(stride - std::round(stride)) < 1e-9 && std::round(stride) >= 1.0,
                "call schedule must be a subset of the coupon schedule");
        require(coupon_rate >= 0.0, "coupon rate must be non-negative");
        require(protection_barrier <= coupon_barrier && coupon_barrier <= call_barrier,
                "barriers must satisfy protection <= coupon <= call");
    }
};

/// min_i(spots_i / initial_i - 1).
inline double reference_return(const NoteSpec& spec, std::span<const double> spots) {
    require(spots.size() == spec.n_assets(), "reference_return: spot vector has wrong length");
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < spots.size(); ++i)
        worst = std::min(worst, spots[i] / spec.initial_prices[i] - 1.0);
    return worst;
}

/// Index of the worst performer.
inline std::size_t worst_asset(const NoteSpec& spec, std::span<const double> spots) {
    std::size_t w = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < spots.size(); ++i) {
        const double r = spots[i] / spec.initial_prices[i];
        if (r < worst) {
            worst = r;
            w = i;
        }
    }
    return w;
}

/// What happens on one observation date, given the worst-of return there.
struct ObservationOutcome {
    double coupon = 0.0;
    double redemption = 0.0;
    bool terminates = false;
    bool called = false;
};

inline ObservationOutcome observe(const NoteSpec& spec, std::size_t k, double ref_return) {
    ObservationOutcome o;
    if (ref_return >= spec.coupon_barrier) o.coupon = spec.coupon_amount();
    if (k + 1 == spec.n_observations()) {
        o.terminates = true;
        o.redemption = ref_return >= spec.protection_barrier ? spec.notional
                                                             : spec.notional * (1.0 + ref_return);
    } else if (spec.is_call_observation(k) && ref_return >= spec.call_barrier) {
        o.terminates = true;
        o.called = true;
        o.redemption = spec.notional;
    }
    return o;
}

enum class OptionKind { call, put };
enum class Exercise { american, european };

struct VanillaOptionSpec {
    std::size_t underlying_index = 0;
    double strike = 0.0;
    double expiry = 0.0;
    OptionKind kind = OptionKind::call;
    Exercise exercise = Exercise::american;

    void validate() const {
        require(strike > 0.0, "option strike must be positive");
        require(expiry > 0.0, "option expiry must be positive");
    }

    double intrinsic(double spot) const {
        return kind == OptionKind::call ? std::max(spot - strike, 0.0) : std::max(strike - spot, 0.0);
    }
};

struct Cashflow {
    enum class Kind { coupon, redemption };
    double time = 0.0;
    double amount = 0.0;
    Kind kind = Kind::coupon;
};

struct NoteLifecycleResult {
    std::vector<Cashflow> cashflows;
    bool called = false;
    std::optional<double> call_time;

    double total() const {
        double s = 0.0;
        for (const auto& c : cashflows) s += c.amount;
        return s;
    }
};

/// Runs the note over a path sampled at exactly the observation dates.
inline NoteLifecycleResult note_cashflows(const NoteSpec& spec, const std::vector<double>& dates,
                                          const std::vector<std::vector<double>>& spots) {
    spec.validate();
    const auto obs = spec.observation_dates();
    require(dates.size() == obs.size() && spots.size() == obs.size(),
            "note_cashflows: path must be sampled at every observation date");
    for (std::size_t k = 0; k < obs.size(); ++k)
        require(same_time(dates[k], obs[k]), "note_cashflows: path dates do not match the observation schedule");

    NoteLifecycleResult res;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const auto o = observe(spec, k, reference_return(spec, spots[k]));
        if (o.coupon > 0.0) res.cashflows.push_back({obs[k], o.coupon, Cashflow::Kind::coupon});
        if (o.terminates) {
            res.cashflows.push_back({obs[k], o.redemption, Cashflow::Kind::redemption});
            if (o.called) {
                res.called = true;
                res.call_time = obs[k];
            }
            break;
        }
    }
    return res;
}

/// Cashflows discounted to t = 0 at a flat continuously-compounded rate.
inline double note_payoff_pv(const NoteSpec& spec, const std::vector<double>& dates,
                             const std::vector<std::vector<double>>& spots, double rate) {
    const auto life = note_cashflows(spec, dates, spots);
    double pv = 0.0;
    for (const auto& c : life.cashflows) pv += c.amount * std::exp(-rate * c.time);
    return pv;
}

}  // namespace autohedge
