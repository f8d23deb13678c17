#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "autohedge/errors.hpp"
#include "autohedge/instruments.hpp"
#include "autohedge/market_sim.hpp"
#include "autohedge/parallel.hpp"
#include "autohedge/rng.hpp"

namespace autohedge {

inline constexpr double kDaysPerYear = 252.0;

inline bool on_daily_grid(double t) {
    const double d = t * kDaysPerYear;
    return std::abs(d - std::round(d)) < 1e-6;
}

struct PriceResult {
    double price = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
};

/// Whether an observation falling exactly on the valuation date is still ahead of us.
/// `included` gives the cum value (today's coupon/call decided by `spots`); `excluded`
/// gives the continuation value after today's observation for a note that survived it.
enum class TodayObservation { included, excluded };

inline constexpr std::size_t kMaxBatches = 32;

/// Risk-neutral value at time t of the note's remaining cashflows, assuming no call so far.
/// Antithetic pairs; pairs are split into up to kMaxBatches batches, batch b drawing from
/// substream (seed, b), and std_error is the standard error of the batch means.
inline PriceResult price_note_mc(const NoteSpec& spec, const MarketModel& model, double t,
                                 std::span<const double> spots, std::size_t n_paths, std::uint64_t seed,
                                 TodayObservation today = TodayObservation::included) {
    spec.validate();
    model.validate();
    require(model.n_assets() == spec.n_assets(), "price_note_mc: model/note asset count mismatch");
    require(spots.size() == spec.n_assets(), "price_note_mc: spot vector has wrong length");
    for (double s : spots) require(s > 0.0 && std::isfinite(s), "price_note_mc: spots must be positive");
    require(t >= 0.0, "price_note_mc: negative valuation time");
    require(t < spec.maturity - kTimeTol, "price_note_mc: valuation date must be before maturity");
    require(on_daily_grid(t), "price_note_mc: valuation date must lie on the daily grid");
    require(n_paths >= 1, "price_note_mc: n_paths must be >= 1");

    const std::size_t na = spec.n_assets();
    double today_cash = 0.0;
    if (const auto k = spec.observation_index(t); k && today == TodayObservation::included) {
        const auto o = observe(spec, *k, reference_return(spec, spots));
        if (o.terminates) return {o.coupon + o.redemption, 0.0, n_paths};
        today_cash = o.coupon;
    }

    // Remaining observations strictly after t.
    std::vector<std::size_t> obs_idx;
    std::vector<double> df;
    std::vector<GbmStep> steps;
    const auto chol = model.cholesky();
    double prev = t;
    for (std::size_t k = 0; k < spec.n_observations(); ++k) {
        const double d = spec.observation_date(k);
        if (d <= t + kTimeTol) continue;
        obs_idx.push_back(k);
        df.push_back(std::exp(-model.rate * (d - t)));
        steps.emplace_back(model, chol, d - prev, Measure::risk_neutral);
        prev = d;
    }
    const std::size_t m = obs_idx.size();

    std::vector<double> log_init(na), log_spot(na);
    for (std::size_t i = 0; i < na; ++i) {
        log_init[i] = std::log(spec.initial_prices[i]);
        log_spot[i] = std::log(spots[i]);
    }

    auto leg_pv = [&](const double* z, double sign, double* log_s) {
        std::copy(log_spot.begin(), log_spot.end(), log_s);
        double pv = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            steps[j].apply(log_s, z + j * na, sign);
            double worst = log_s[0] - log_init[0];
            for (std::size_t i = 1; i < na; ++i) worst = std::min(worst, log_s[i] - log_init[i]);
            const auto o = observe(spec, obs_idx[j], std::exp(worst) - 1.0);
            pv += (o.coupon + o.redemption) * df[j];
            if (o.terminates) break;
        }
        return pv;
    };

    const std::size_t n_pairs = (n_paths + 1) / 2;
    const std::size_t n_batches = std::min(kMaxBatches, n_pairs);
    std::vector<double> batch_sum(n_batches, 0.0), batch_sq(n_batches, 0.0);
    std::vector<std::size_t> batch_n(n_batches, 0);
    parallel_for(n_batches, [&](std::size_t b) {
        const std::size_t lo = b * n_pairs / n_batches, hi = (b + 1) * n_pairs / n_batches;
        Rng rng = make_rng(seed, b, stream_tag::mc_batch);
        std::normal_distribution<double> normal;
        std::vector<double> z(m * na), scratch(na);
        double sum = 0.0, sq = 0.0;
        for (std::size_t p = lo; p < hi; ++p) {
            for (auto& v : z) v = normal(rng);
            const double pair = 0.5 * (leg_pv(z.data(), 1.0, scratch.data()) + leg_pv(z.data(), -1.0, scratch.data()));
            sum += pair;
            sq += pair * pair;
        }
        batch_sum[b] = sum;
        batch_sq[b] = sq;
        batch_n[b] = hi - lo;
    });

    double total = 0.0;
    for (double s : batch_sum) total += s;
    const double mean = total / static_cast<double>(n_pairs);
    double se = 0.0;
    if (n_batches >= 2) {
        double acc = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const double bm = batch_sum[b] / static_cast<double>(batch_n[b]);
            acc += (bm - mean) * (bm - mean);
        }
        se = std::sqrt(acc / static_cast<double>(n_batches - 1) / static_cast<double>(n_batches));
    }
    return {today_cash + mean, se, 2 * n_pairs};
}

/// Cox-Ross-Rubinstein binomial value of a single-asset option at time t.
/// When the risk-neutral up-probability leaves [0, 1] (vanishing volatility) the
/// tree degenerates to the deterministic forward path on the same time steps.
inline double price_vanilla(const VanillaOptionSpec& opt, const MarketModel& model, double t, double spot,
                            int n_steps) {
    opt.validate();
    require(n_steps >= 1, "price_vanilla: n_steps must be >= 1");
    require(opt.underlying_index < model.n_assets(), "price_vanilla: underlying index out of range");
    require(spot > 0.0, "price_vanilla: spot must be positive");
    const double tau = opt.expiry - t;
    require(tau > 0.0, "price_vanilla: valuation time must be before expiry");

    const double sigma = model.vol[opt.underlying_index];
    const double r = model.rate;
    const double dt = tau / n_steps;
    const double u = std::exp(sigma * std::sqrt(dt));
    const double d = 1.0 / u;
    const double growth = std::exp(r * dt);
    const double disc = 1.0 / growth;
    const bool american = opt.exercise == Exercise::american;

    const double p = (growth - d) / (u - d);
    if (!(u > d) || !(p >= 0.0 && p <= 1.0)) {
        double best = 0.0;
        for (int j = american ? 0 : n_steps; j <= n_steps; ++j)
            best = std::max(best, std::exp(-r * dt * j) * opt.intrinsic(spot * std::exp(r * dt * j)));
        return best;
    }

    const double pu = disc * p, pd = disc * (1.0 - p);
    std::vector<double> value(static_cast<std::size_t>(n_steps) + 1);
    std::vector<double> node(static_cast<std::size_t>(n_steps) + 1);
    const double u2 = u * u;
    node[0] = spot * std::pow(d, n_steps);
    for (int j = 1; j <= n_steps; ++j) node[j] = node[j - 1] * u2;
    for (int j = 0; j <= n_steps; ++j) value[j] = opt.intrinsic(node[j]);
    for (int i = n_steps - 1; i >= 0; --i) {
        for (int j = 0; j <= i; ++j) {
            const double cont = pu * value[j + 1] + pd * value[j];
            if (american) {
                node[j] *= u;  // level i node j = level i+1 node j * u
                value[j] = std::max(cont, opt.intrinsic(node[j]));
            } else {
                value[j] = cont;
            }
        }
    }
    return value[0];
}

struct GreekReport {
    std::vector<double> delta;
    std::vector<double> gamma;
    double bump_rel = 0.0;
    double value = 0.0;  ///< unbumped value

    /// sum_i S_i^2 * gamma_i
    double cash_gamma(std::span<const double> spots) const {
        double g = 0.0;
        for (std::size_t i = 0; i < gamma.size(); ++i) g += spots[i] * spots[i] * gamma[i];
        return g;
    }
};

/// Central-difference delta and gamma with relative bump h per asset. The pricer is
/// called 2n+1 times; common random numbers are the pricer's job (fixed seed).
template <class Pricer>
GreekReport greeks_fd(Pricer&& price, std::span<const double> spots, double bump_rel) {
    require(bump_rel > 0.0, "greeks_fd: bump must be positive");
    const std::size_t n = spots.size();
    GreekReport g{std::vector<double>(n), std::vector<double>(n), bump_rel, 0.0};
    std::vector<double> x(spots.begin(), spots.end());
    const double v0 = price(std::span<const double>(x));
    g.value = v0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = spots[i];
        const double h = bump_rel * s;
        x[i] = s * (1.0 + bump_rel);
        const double up = price(std::span<const double>(x));
        x[i] = s * (1.0 - bump_rel);
        const double dn = price(std::span<const double>(x));
        x[i] = s;
        g.delta[i] = (up - dn) / (2.0 * h);
        g.gamma[i] = (up - 2.0 * v0 + dn) / (h * h);
        require(std::isfinite(g.delta[i]) && std::isfinite(g.gamma[i]), "greeks_fd: non-finite greek");
    }
    return g;
}

/// Fixed-seed MC note pricer at date t, suitable for greeks_fd with common random numbers.
inline auto note_mc_pricer(const NoteSpec& spec, const MarketModel& model, double t, std::size_t n_paths,
                           std::uint64_t seed, TodayObservation today = TodayObservation::included) {
    return [=](std::span<const double> spots) {
        return price_note_mc(spec, model, t, spots, n_paths, seed, today).price;
    };
}

}  // namespace autohedge
