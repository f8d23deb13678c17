#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autohedge/cheb_tensor.hpp"
#include "autohedge/errors.hpp"
#include "autohedge/instruments.hpp"
#include "autohedge/market_sim.hpp"
#include "autohedge/mc_pricer.hpp"

namespace autohedge {

enum class PricingMode { oracle, tensor };

inline std::string to_string(PricingMode m) { return m == PricingMode::oracle ? "oracle" : "tensor"; }

inline PricingMode parse_pricing_mode(const std::string& s) {
    if (s == "oracle") return PricingMode::oracle;
    if (s == "tensor") return PricingMode::tensor;
    throw ValidationError("unknown pricing mode '" + s + "' (expected oracle or tensor)");
}

struct EnvConfig {
    NoteSpec note = NoteSpec::reference();
    MarketModel model;
    double rebalance_dt = 1.0 / 12.0;
    double txn_cost = 0.02;
    double hedge_expiry = 0.25;
    PricingMode pricing_mode = PricingMode::tensor;
    std::uint64_t episode_seed = 0;
    Measure measure = Measure::real_world;
    int tree_steps = 100;           ///< CRR steps for hedge options
    double bump_rel = 0.01;         ///< finite-difference bump for all greeks
    std::size_t oracle_paths = 4000;  ///< MC paths in oracle mode and for out-of-domain fallback
    std::uint64_t oracle_seed = 20240917;
    double max_pairs = 5.0;         ///< absolute cap on straddle pairs per trade
    double lot_size = 1e-4;         ///< straddle pair counts are rounded to this grid

    std::size_t n_steps() const { return static_cast<std::size_t>(std::llround(note.maturity / rebalance_dt)); }
    double time_at(std::size_t step) const { return static_cast<double>(step) * rebalance_dt; }

    /// Rebalancing dates 0, dt, ..., maturity - dt (the days a tensor bank must cover).
    std::vector<double> rebalance_days() const {
        std::vector<double> d(n_steps());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = time_at(i);
        return d;
    }

    void validate() const {
        note.validate();
        model.validate();
        require(model.n_assets() == note.n_assets(), "env: model and note asset counts differ");
        require(txn_cost >= 0.0, "env: transaction cost must be non-negative");
        require(rebalance_dt > 0.0 && hedge_expiry > 0.0, "env: rebalance_dt and hedge_expiry must be positive");
        const double per_gap = (1.0 / note.coupon_freq) / rebalance_dt;
        require(std::abs(per_gap - std::round(per_gap)) < 1e-9 && std::round(per_gap) >= 1.0,
                "env: rebalance_dt must divide the gap between observation dates");
        require(on_daily_grid(rebalance_dt), "env: rebalance_dt must be a whole number of days");
        require(tree_steps >= 1, "env: tree_steps must be >= 1");
        require(bump_rel > 0.0 && bump_rel < 0.5, "env: bump_rel must lie in (0, 0.5)");
        require(oracle_paths >= 2, "env: oracle_paths must be >= 2");
        require(max_pairs > 0.0 && lot_size >= 0.0, "env: max_pairs must be positive, lot_size non-negative");
    }
};

/// What the agent observes: s_t = (spots, portfolio cash gamma, time to next call).
struct EnvState {
    std::vector<double> spots;
    double portfolio_gamma = 0.0;
    double tau = 0.0;
    std::size_t step_index = 0;
    double time = 0.0;
};

struct Position {
    VanillaOptionSpec option;
    double units = 0.0;
    double entry_time = 0.0;
};

struct HedgeBook {
    std::vector<Position> positions;
    std::vector<double> underlying_units;
    double cash = 0.0;
};

/// One rebalancing decision: straddle pairs on one asset plus per-asset underlying trades.
struct Orders {
    std::size_t hedge_asset = 0;
    double pair_units = 0.0;
    std::vector<double> underlying_trades;  ///< empty = no trades
};

struct TransitionInfo {
    bool called = false;
    bool matured = false;
    double note_cashflow = 0.0;  ///< paid by the trader during the step
    double txn_cost = 0.0;
    double pair_price = 0.0;
    double pair_units = 0.0;
    double value_before = 0.0;  ///< P_i^+
    double value_after = 0.0;   ///< P_{i+1}^-
};

struct Transition {
    EnvState state;
    std::optional<double> action;
    double reward = 0.0;
    EnvState next_state;
    bool terminal = false;
    TransitionInfo info;
};

struct PortfolioGreeks {
    std::vector<double> delta;                     ///< including underlying holdings
    std::vector<double> delta_ex_underlying;
    double cash_gamma = 0.0;                       ///< sum_i S_i^2 d2P/dS_i^2
};

/// Hedging MDP for a trader short one note. Cash accrues at the risk-free rate;
/// transaction costs go to a separate ledger, so Sum(rewards) = P_T - P_0 - Sum(costs).
class HedgeEnv {
public:
    explicit HedgeEnv(EnvConfig cfg, std::shared_ptr<const ChebTensorBank> bank = nullptr)
        : cfg_(std::move(cfg)), bank_(std::move(bank)) {
        cfg_.validate();
        if (cfg_.pricing_mode == PricingMode::tensor) {
            require(bank_ != nullptr, "env: tensor pricing mode needs a tensor bank");
            require(bank_->meta().model_hash == pricing_hash(cfg_.note, cfg_.model),
                    "env: tensor bank was built for a different note/model");
            for (double d : cfg_.rebalance_days())
                require(bank_->find(d) != nullptr, "env: tensor bank lacks rebalancing day " + std::to_string(d));
        }
        reset();
    }

    const EnvConfig& config() const { return cfg_; }
    const EnvState& state() const { return state_; }
    const HedgeBook& book() const { return book_; }
    bool done() const { return done_; }
    bool note_alive() const { return alive_; }
    double time() const { return cfg_.time_at(step_); }
    std::span<const double> spots() const { return spots_; }
    double initial_value() const { return initial_value_; }
    double costs_paid() const { return costs_; }
    std::size_t fallback_count() const { return fallbacks_; }
    double cumulative_reward() const { return reward_sum_; }

    /// Called once per out-of-domain tensor query (falls back to the MC oracle).
    std::function<void(const std::string&)> on_warning = [](const std::string& msg) {
        std::cerr << "warning: " << msg << '\n';
    };

    EnvState reset(std::uint64_t episode_seed) {
        cfg_.episode_seed = episode_seed;
        return reset();
    }

    EnvState reset() {
        std::vector<double> times(cfg_.n_steps() + 1);
        for (std::size_t i = 0; i < times.size(); ++i) times[i] = cfg_.time_at(i);
        path_ = simulate_paths(cfg_.model, times, 1, cfg_.episode_seed, cfg_.measure);
        step_ = 0;
        alive_ = true;
        done_ = false;
        costs_ = 0.0;
        reward_sum_ = 0.0;
        spots_.assign(path_.row(0, 0), path_.row(0, 0) + cfg_.note.n_assets());
        book_ = HedgeBook{{}, std::vector<double>(cfg_.note.n_assets(), 0.0), 0.0};
        book_.cash = note_value(0.0, spots_);
        initial_value_ = portfolio_value();
        refresh_state();
        return state_;
    }

    // ---- valuation -------------------------------------------------------------------

    /// Continuation value of the (not yet called) note at rebalancing time t.
    double note_value(double t, std::span<const double> s) const {
        if (cfg_.pricing_mode == PricingMode::tensor) {
            const auto& day = bank_->at(t);
            bool inside = true;
            for (std::size_t a = 0; a < day.n_axes(); ++a) inside = inside && day.grids[a].contains(s[a]);
            if (inside) return eval_tensor(day, s);
            if (fallbacks_++ == 0 && on_warning)
                on_warning("spots outside the tensor domain at t=" + std::to_string(t) +
                           "; falling back to the Monte Carlo oracle (reported once per environment)");
        }
        return price_note_mc(cfg_.note, cfg_.model, t, s, cfg_.oracle_paths, cfg_.oracle_seed,
                             TodayObservation::excluded)
            .price;
    }

    double option_value(const VanillaOptionSpec& opt, double t, double spot) const {
        return price_vanilla(opt, cfg_.model, t, spot, cfg_.tree_steps);
    }

    /// -note + positions + underlyings + cash, at the current time and spots.
    double portfolio_value() const {
        const double t = time();
        double v = book_.cash;
        if (alive_) v -= note_value(t, spots_);
        for (const auto& p : book_.positions) v += p.units * option_value(p.option, t, spots_[p.option.underlying_index]);
        for (std::size_t i = 0; i < spots_.size(); ++i) v += book_.underlying_units[i] * spots_[i];
        return v;
    }

    /// Note greeks (investor side) at the current state; zero once the note is gone.
    GreekReport note_greeks() const {
        const std::size_t n = spots_.size();
        if (!alive_) return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), cfg_.bump_rel, 0.0};
        const double t = time();
        // Never mix tensor and oracle values inside one finite-difference stencil.
        if (cfg_.pricing_mode == PricingMode::tensor && !stencil_in_domain(t)) {
            if (fallbacks_++ == 0 && on_warning)
                on_warning("greek stencil leaves the tensor domain at t=" + std::to_string(t) +
                           "; using the Monte Carlo oracle (reported once per environment)");
            return greeks_fd(note_mc_pricer(cfg_.note, cfg_.model, t, cfg_.oracle_paths, cfg_.oracle_seed,
                                            TodayObservation::excluded),
                             spots_, cfg_.bump_rel);
        }
        return greeks_fd([&](std::span<const double> s) { return note_value(t, s); }, spots_, cfg_.bump_rel);
    }

    bool stencil_in_domain(double t) const {
        const auto& day = bank_->at(t);
        for (std::size_t a = 0; a < day.n_axes(); ++a) {
            const auto& g = day.grids[a];
            if (!g.contains(spots_[a] * (1.0 - cfg_.bump_rel)) || !g.contains(spots_[a] * (1.0 + cfg_.bump_rel)))
                return false;
        }
        return true;
    }

    /// Delta and gamma of one option at the current time (1-D finite differences).
    std::pair<double, double> option_greeks(const VanillaOptionSpec& opt) const {
        const double t = time();
        const double s0 = spots_[opt.underlying_index];
        const double one[1] = {s0};
        const auto g = greeks_fd([&](std::span<const double> s) { return option_value(opt, t, s[0]); },
                                 std::span<const double>(one, 1), cfg_.bump_rel);
        return {g.delta[0], g.gamma[0]};
    }

    PortfolioGreeks portfolio_greeks() const {
        const std::size_t n = spots_.size();
        const auto ng = note_greeks();
        PortfolioGreeks pg{std::vector<double>(n), std::vector<double>(n), 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            pg.delta_ex_underlying[i] = -ng.delta[i];
            pg.cash_gamma -= spots_[i] * spots_[i] * ng.gamma[i];
        }
        for (const auto& p : book_.positions) {
            const auto [d, g] = option_greeks(p.option);
            const std::size_t u = p.option.underlying_index;
            pg.delta_ex_underlying[u] += p.units * d;
            pg.cash_gamma += p.units * spots_[u] * spots_[u] * g;
        }
        for (std::size_t i = 0; i < n; ++i) pg.delta[i] = pg.delta_ex_underlying[i] + book_.underlying_units[i];
        return pg;
    }

    double aggregate_gamma() const { return portfolio_greeks().cash_gamma; }

    // ---- hedge instrument ------------------------------------------------------------

    /// ATM American call + put on `asset`, struck at the current spot.
    std::pair<VanillaOptionSpec, VanillaOptionSpec> straddle(std::size_t asset) const {
        const double expiry = time() + cfg_.hedge_expiry;
        VanillaOptionSpec c{asset, spots_[asset], expiry, OptionKind::call, Exercise::american};
        VanillaOptionSpec p{asset, spots_[asset], expiry, OptionKind::put, Exercise::american};
        return {c, p};
    }

    struct PairQuote {
        std::size_t asset = 0;
        double price = 0.0;
        double delta = 0.0;
        double cash_gamma = 0.0;
    };

    /// Straddle on the currently worst-performing asset.
    PairQuote pair_quote() const { return pair_quote(worst_asset(cfg_.note, spots_)); }

    PairQuote pair_quote(std::size_t asset) const {
        const auto [c, p] = straddle(asset);
        const double t = time(), s = spots_[asset];
        const auto [dc, gc] = option_greeks(c);
        const auto [dp, gp] = option_greeks(p);
        return {asset, option_value(c, t, s) + option_value(p, t, s), dc + dp, s * s * (gc + gp)};
    }

    double round_to_lot(double units) const {
        if (cfg_.lot_size <= 0.0) return units;
        return std::round(units / cfg_.lot_size) * cfg_.lot_size;
    }

    /// Pairs that would neutralise the current portfolio cash gamma, capped at max_pairs.
    double max_hedge_units(const PairQuote& q) const {
        if (!(q.cash_gamma > 1e-12)) return 0.0;
        return std::min(std::abs(state_.portfolio_gamma) / q.cash_gamma, cfg_.max_pairs);
    }

    /// Action a in [0, 1] as a fraction of the gamma-neutralising straddle position.
    Orders orders_for_action(double a) const {
        require(a >= 0.0 && a <= 1.0, "env: action must lie in [0, 1]");
        const auto q = pair_quote();
        const double dir = state_.portfolio_gamma > 0.0 ? -1.0 : 1.0;
        return Orders{q.asset, round_to_lot(dir * a * max_hedge_units(q)), {}};
    }

    // ---- dynamics --------------------------------------------------------------------

    /// Executes orders at the current time without advancing. Returns the transaction
    /// cost, which is charged in the next step's reward.
    double trade(const Orders& orders) {
        require(!done_, "env: episode already terminated");
        const double t = time();
        double cost = 0.0;
        if (orders.pair_units != 0.0) {
            require(orders.hedge_asset < spots_.size(), "env: hedge asset out of range");
            require(std::isfinite(orders.pair_units), "env: non-finite order");
            const auto [c, p] = straddle(orders.hedge_asset);
            const double s = spots_[orders.hedge_asset];
            const double v = option_value(c, t, s) + option_value(p, t, s);
            book_.cash -= orders.pair_units * v;
            cost += cfg_.txn_cost * std::abs(v * orders.pair_units);
            book_.positions.push_back({c, orders.pair_units, t});
            book_.positions.push_back({p, orders.pair_units, t});
            last_pair_price_ = v;
            last_pair_units_ += orders.pair_units;
        }
        if (!orders.underlying_trades.empty()) {
            require(orders.underlying_trades.size() == spots_.size(), "env: underlying trade vector has wrong length");
            for (std::size_t i = 0; i < spots_.size(); ++i) {
                const double q = orders.underlying_trades[i];
                require(std::isfinite(q), "env: non-finite order");
                book_.underlying_units[i] += q;
                book_.cash -= q * spots_[i];
                cost += cfg_.txn_cost * std::abs(q * spots_[i]);
            }
        }
        pending_cost_ += cost;
        costs_ += cost;
        return cost;
    }

    Transition step(const Orders& orders) {
        require(!done_, "env: cannot step a terminated episode");
        trade(orders);
        return advance(std::nullopt);
    }

    Transition step_action(double a) {
        require(!done_, "env: cannot step a terminated episode");
        trade(orders_for_action(a));
        return advance(a);
    }

private:
    Transition advance(std::optional<double> action) {
        Transition tr;
        tr.state = state_;
        tr.action = action;
        const double value_before = portfolio_value();
        const double cost = pending_cost_;
        tr.info.txn_cost = cost;
        tr.info.pair_price = last_pair_price_;
        tr.info.pair_units = last_pair_units_;
        pending_cost_ = 0.0;
        last_pair_price_ = 0.0;
        last_pair_units_ = 0.0;

        ++step_;
        const double t = time();
        book_.cash *= std::exp(cfg_.model.rate * cfg_.rebalance_dt);
        const double* row = path_.row(0, step_);
        spots_.assign(row, row + spots_.size());

        if (alive_) {
            if (const auto k = cfg_.note.observation_index(t)) {
                const auto o = observe(cfg_.note, *k, reference_return(cfg_.note, spots_));
                tr.info.note_cashflow = o.coupon + o.redemption;
                book_.cash -= tr.info.note_cashflow;
                if (o.terminates) {
                    alive_ = false;
                    tr.info.called = o.called;
                    tr.info.matured = !o.called;
                }
            }
        }
        settle_options(t);
        if (step_ >= cfg_.n_steps()) alive_ = false;
        done_ = !alive_;

        const double value_after = portfolio_value();
        tr.info.value_before = value_before;
        tr.info.value_after = value_after;
        tr.reward = -cost + (value_after - value_before);
        reward_sum_ += tr.reward;
        tr.terminal = done_;
        refresh_state();
        tr.next_state = state_;
        return tr;
    }

    void settle_options(double t) {
        std::vector<Position> keep;
        keep.reserve(book_.positions.size());
        for (const auto& p : book_.positions) {
            const double s = spots_[p.option.underlying_index];
            const double intrinsic = p.option.intrinsic(s);
            bool exercise = p.option.expiry <= t + kTimeTol;
            if (!exercise && p.option.exercise == Exercise::american && intrinsic > 0.0)
                exercise = intrinsic >= option_value(p.option, t, s) - 1e-12;
            if (exercise)
                book_.cash += p.units * intrinsic;
            else
                keep.push_back(p);
        }
        book_.positions = std::move(keep);
    }

    void refresh_state() {
        state_.spots = spots_;
        state_.step_index = step_;
        state_.time = time();
        if (done_) {
            state_.tau = 0.0;
            state_.portfolio_gamma = 0.0;
            return;
        }
        state_.portfolio_gamma = aggregate_gamma();
        state_.tau = next_call_date(time()) - time();
    }

    double next_call_date(double t) const {
        const auto& n = cfg_.note;
        for (std::size_t k = 0; k < n.n_observations(); ++k) {
            const double d = n.observation_date(k);
            if (d > t + kTimeTol && (n.is_call_observation(k) || k + 1 == n.n_observations())) return d;
        }
        return n.maturity;
    }

    EnvConfig cfg_;
    std::shared_ptr<const ChebTensorBank> bank_;
    PathSet path_;
    std::size_t step_ = 0;
    bool alive_ = true;
    bool done_ = false;
    std::vector<double> spots_;
    HedgeBook book_;
    EnvState state_;
    double initial_value_ = 0.0;
    double costs_ = 0.0;
    double pending_cost_ = 0.0;
    double last_pair_price_ = 0.0;
    double last_pair_units_ = 0.0;
    double reward_sum_ = 0.0;
    mutable std::size_t fallbacks_ = 0;
};

}  // namespace autohedge
