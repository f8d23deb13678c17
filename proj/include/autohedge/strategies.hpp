#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "autohedge/drl_agent.hpp"
#include "autohedge/errors.hpp"
#include "autohedge/hedge_env.hpp"

namespace autohedge {

/// What a policy wants done at the current rebalancing date: explicit orders, or an
/// action in [0, 1] that the environment translates into straddle pairs.
struct Decision {
    Orders orders;
    std::optional<double> action;
};

inline Transition apply_decision(HedgeEnv& env, const Decision& d) {
    return d.action ? env.step_action(*d.action) : env.step(d.orders);
}

class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string name() const = 0;
    virtual Decision decide(const HedgeEnv& env) const = 0;
};

/// Underlying trades that zero every per-asset delta. `extra_delta` is the delta of
/// trades decided in the same step but not yet in the book.
inline std::vector<double> delta_offsets(const PortfolioGreeks& pg, const std::vector<double>& extra_delta = {}) {
    std::vector<double> q(pg.delta.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double d = pg.delta[i] + (extra_delta.empty() ? 0.0 : extra_delta[i]);
        q[i] = -d;
    }
    return q;
}

inline Orders delta_neutral(const HedgeEnv& env) {
    return Orders{0, 0.0, delta_offsets(env.portfolio_greeks())};
}

/// Straddle pairs cancelling the aggregate cash gamma (capped at max_pairs, rounded to the
/// lot grid), then underlying trades for the residual deltas. A vanishing pair gamma
/// degrades to delta_neutral and reports through `warn`.
inline Orders delta_gamma_neutral(const HedgeEnv& env, const std::function<void(const std::string&)>& warn = {}) {
    const auto pg = env.portfolio_greeks();
    const auto q = env.pair_quote();
    if (!(q.cash_gamma > 1e-12)) {
        if (warn) warn("straddle gamma vanishes; falling back to delta-neutral");
        return Orders{0, 0.0, delta_offsets(pg)};
    }
    const double cap = env.config().max_pairs;
    const double units = env.round_to_lot(std::clamp(-pg.cash_gamma / q.cash_gamma, -cap, cap));
    std::vector<double> extra(pg.delta.size(), 0.0);
    extra[q.asset] = units * q.delta;
    return Orders{q.asset, units, delta_offsets(pg, extra)};
}

class NoHedgePolicy : public Policy {
public:
    std::string name() const override { return "none"; }
    Decision decide(const HedgeEnv&) const override { return {}; }
};

class DeltaNeutralPolicy : public Policy {
public:
    std::string name() const override { return "delta"; }
    Decision decide(const HedgeEnv& env) const override { return {delta_neutral(env), std::nullopt}; }
};

class DeltaGammaNeutralPolicy : public Policy {
public:
    std::function<void(const std::string&)> on_warning = [](const std::string& m) {
        std::cerr << "warning: " << m << '\n';
    };

    std::string name() const override { return "delta-gamma"; }
    Decision decide(const HedgeEnv& env) const override { return {delta_gamma_neutral(env, on_warning), std::nullopt}; }
};

/// Deterministic trained actor (no exploration noise).
class RlPolicy : public Policy {
public:
    RlPolicy(DenseNet<float> actor, StateNormalizer norm) : actor_(std::move(actor)), norm_(std::move(norm)) {
        require(actor_.n_in() == norm_.dim() && actor_.n_out() == 1, "rl policy: actor shape does not match the state");
        require(actor_.output_activation() == OutputActivation::sigmoid, "rl policy: actor must squash to [0, 1]");
    }

    explicit RlPolicy(const Checkpoint& c) : RlPolicy(c.actor, c.normalizer) {}
    explicit RlPolicy(const D4pgAgent& a) : RlPolicy(a.actor(), a.normalizer()) {}

    std::string name() const override { return "rl"; }

    double action(const EnvState& s) const {
        return std::clamp(static_cast<double>(actor_.forward(norm_.features(s))(0, 0)), 0.0, 1.0);
    }

    Decision decide(const HedgeEnv& env) const override { return {{}, action(env.state())}; }

    const DenseNet<float>& actor() const { return actor_; }

private:
    DenseNet<float> actor_;
    StateNormalizer norm_;
};

inline const std::vector<std::string>& strategy_names() {
    static const std::vector<std::string> names{"delta", "delta-gamma", "rl", "none"};
    return names;
}

/// Baseline by name; "rl" needs a checkpoint.
inline std::unique_ptr<Policy> make_policy(const std::string& name, const Checkpoint* ckpt = nullptr) {
    if (name == "none") return std::make_unique<NoHedgePolicy>();
    if (name == "delta") return std::make_unique<DeltaNeutralPolicy>();
    if (name == "delta-gamma") return std::make_unique<DeltaGammaNeutralPolicy>();
    if (name == "rl") {
        require(ckpt != nullptr, "strategy 'rl' needs a trained checkpoint");
        return std::make_unique<RlPolicy>(*ckpt);
    }
    throw ValidationError("unknown strategy '" + name + "' (expected delta, delta-gamma, rl or none)");
}

}  // namespace autohedge
