#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autohedge/cheb_tensor.hpp"
#include "autohedge/drl_agent.hpp"
#include "autohedge/errors.hpp"
#include "autohedge/hedge_env.hpp"
#include "autohedge/instruments.hpp"
#include "autohedge/market_sim.hpp"

namespace autohedge {

struct BankConfig {
    GridConfig grid;
    std::size_t n_paths = 20000;
    std::uint64_t seed = 11;
    std::string path = "bank.bin";
};

struct PricingConfig {
    std::size_t n_paths = 100000;
    std::uint64_t seed = 7;
};

struct EvaluationConfig {
    std::size_t episodes = 5000;
    std::uint64_t seed = 4242;
    std::size_t histogram_bins = 50;
    std::size_t trace_episodes = 10;
    std::string checkpoint = "agent.ckpt";
};

/// Everything an experiment needs, in one file.
struct ExperimentConfig {
    NoteSpec note = NoteSpec::reference();
    MarketModel market = MarketModel::flat(NoteSpec::reference().initial_prices, 0.2, 0.5, 0.03);
    BankConfig bank;
    PricingConfig pricing;
    EnvConfig env;  ///< note and model are taken from the sections above
    TrainConfig training;
    EvaluationConfig evaluation;

    EnvConfig env_config() const {
        EnvConfig e = env;
        e.note = note;
        e.model = market;
        return e;
    }

    void validate() const {
        note.validate();
        market.validate();
        require(market.n_assets() == note.n_assets(), "config: market and note asset counts differ");
        require(bank.grid.nodes_per_axis.size() == note.n_assets(), "config: grid needs one node count per asset");
        require(bank.n_paths >= 2 && pricing.n_paths >= 2, "config: path counts must be >= 2");
        env_config().validate();
        training.validate();
        require(evaluation.histogram_bins >= 1, "config: histogram_bins must be >= 1");
    }
};

namespace detail {

/// Rejects keys the section does not know, so typos fail loudly.
inline void check_keys(const nlohmann::json& j, const std::string& section, const std::set<std::string>& known) {
    if (!j.is_object()) throw ValidationError("config: section '" + section + "' must be an object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ValidationError("config: unknown key '" + section + "." + k + "'");
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    json j;
    j["note"] = {{"notional", c.note.notional},
                 {"initial_prices", c.note.initial_prices},
                 {"maturity", c.note.maturity},
                 {"coupon_freq", c.note.coupon_freq},
                 {"coupon_rate", c.note.coupon_rate},
                 {"coupon_barrier", c.note.coupon_barrier},
                 {"call_freq", c.note.call_freq},
                 {"call_barrier", c.note.call_barrier},
                 {"protection_barrier", c.note.protection_barrier}};
    j["market"] = {{"spot0", c.market.spot0},
                   {"drift", c.market.drift},
                   {"vol", c.market.vol},
                   {"corr", c.market.corr},
                   {"rate", c.market.rate}};
    j["grid"] = {{"nodes_per_axis", c.bank.grid.nodes_per_axis},
                 {"lo_rel", c.bank.grid.lo_rel},
                 {"hi_rel", c.bank.grid.hi_rel},
                 {"weights", to_string(c.bank.grid.weights)},
                 {"n_paths", c.bank.n_paths},
                 {"seed", c.bank.seed},
                 {"bank_path", c.bank.path}};
    j["pricing"] = {{"n_paths", c.pricing.n_paths}, {"seed", c.pricing.seed}};
    const auto& e = c.env;
    j["env"] = {{"rebalance_dt", e.rebalance_dt},     {"txn_cost", e.txn_cost},
                {"hedge_expiry", e.hedge_expiry},     {"pricing_mode", to_string(e.pricing_mode)},
                {"measure", to_string(e.measure)},    {"tree_steps", e.tree_steps},
                {"bump_rel", e.bump_rel},             {"oracle_paths", e.oracle_paths},
                {"oracle_seed", e.oracle_seed},       {"max_pairs", e.max_pairs},
                {"lot_size", e.lot_size}};
    const auto& t = c.training;
    j["training"] = {{"episodes", t.episodes},
                     {"batch_size", t.batch_size},
                     {"actor_lr", t.actor_lr},
                     {"critic_lr", t.critic_lr},
                     {"target_rate", t.target_rate},
                     {"noise_sigma", t.noise_sigma},
                     {"gamma", t.gamma},
                     {"n_step", t.n_step},
                     {"seed", t.seed},
                     {"buffer_capacity", t.buffer_capacity},
                     {"warmup", t.warmup},
                     {"updates_per_step", t.updates_per_step},
                     {"huber_kappa", t.huber_kappa},
                     {"objective", to_string(t.objective)},
                     {"actor_hidden", t.actor_hidden},
                     {"critic_hidden", t.critic_hidden},
                     {"n_quantiles", t.n_quantiles},
                     {"eval_every", t.eval_every},
                     {"eval_episodes", t.eval_episodes},
                     {"divergence_factor", t.divergence_factor},
                     {"divergence_window", t.divergence_window}};
    j["evaluation"] = {{"episodes", c.evaluation.episodes},
                       {"seed", c.evaluation.seed},
                       {"histogram_bins", c.evaluation.histogram_bins},
                       {"trace_episodes", c.evaluation.trace_episodes},
                       {"checkpoint", c.evaluation.checkpoint}};
    return j;
}

/// Missing keys keep their defaults; unknown keys are rejected. The market section
/// defaults to flat parameters around the note's initial prices.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::read;
    ExperimentConfig c;
    detail::check_keys(j, "<root>", {"note", "market", "grid", "pricing", "env", "training", "evaluation"});
    if (j.contains("note")) {
        const auto& s = j["note"];
        detail::check_keys(s, "note", {"notional", "initial_prices", "maturity", "coupon_freq", "coupon_rate",
                                       "coupon_barrier", "call_freq", "call_barrier", "protection_barrier"});
        read(s, "notional", c.note.notional);
        read(s, "initial_prices", c.note.initial_prices);
        read(s, "maturity", c.note.maturity);
        read(s, "coupon_freq", c.note.coupon_freq);
        read(s, "coupon_rate", c.note.coupon_rate);
        read(s, "coupon_barrier", c.note.coupon_barrier);
        read(s, "call_freq", c.note.call_freq);
        read(s, "call_barrier", c.note.call_barrier);
        read(s, "protection_barrier", c.note.protection_barrier);
    }
    c.market = MarketModel::flat(c.note.initial_prices, 0.2, 0.5, 0.03);
    if (j.contains("market")) {
        const auto& s = j["market"];
        detail::check_keys(s, "market", {"spot0", "drift", "vol", "corr", "rate"});
        read(s, "spot0", c.market.spot0);
        read(s, "drift", c.market.drift);
        read(s, "vol", c.market.vol);
        read(s, "corr", c.market.corr);
        read(s, "rate", c.market.rate);
    }
    if (j.contains("grid")) {
        const auto& s = j["grid"];
        detail::check_keys(s, "grid", {"nodes_per_axis", "lo_rel", "hi_rel", "weights", "n_paths", "seed", "bank_path"});
        read(s, "nodes_per_axis", c.bank.grid.nodes_per_axis);
        read(s, "lo_rel", c.bank.grid.lo_rel);
        read(s, "hi_rel", c.bank.grid.hi_rel);
        if (s.contains("weights")) c.bank.grid.weights = parse_bary_weights(s["weights"].get<std::string>());
        read(s, "n_paths", c.bank.n_paths);
        read(s, "seed", c.bank.seed);
        read(s, "bank_path", c.bank.path);
    }
    if (j.contains("pricing")) {
        const auto& s = j["pricing"];
        detail::check_keys(s, "pricing", {"n_paths", "seed"});
        read(s, "n_paths", c.pricing.n_paths);
        read(s, "seed", c.pricing.seed);
    }
    if (j.contains("env")) {
        const auto& s = j["env"];
        detail::check_keys(s, "env", {"rebalance_dt", "txn_cost", "hedge_expiry", "pricing_mode", "measure",
                                      "tree_steps", "bump_rel", "oracle_paths", "oracle_seed", "max_pairs", "lot_size"});
        auto& e = c.env;
        read(s, "rebalance_dt", e.rebalance_dt);
        read(s, "txn_cost", e.txn_cost);
        read(s, "hedge_expiry", e.hedge_expiry);
        if (s.contains("pricing_mode")) e.pricing_mode = parse_pricing_mode(s["pricing_mode"].get<std::string>());
        if (s.contains("measure")) e.measure = parse_measure(s["measure"].get<std::string>());
        read(s, "tree_steps", e.tree_steps);
        read(s, "bump_rel", e.bump_rel);
        read(s, "oracle_paths", e.oracle_paths);
        read(s, "oracle_seed", e.oracle_seed);
        read(s, "max_pairs", e.max_pairs);
        read(s, "lot_size", e.lot_size);
    }
    if (j.contains("training")) {
        const auto& s = j["training"];
        detail::check_keys(s, "training",
                           {"episodes", "batch_size", "actor_lr", "critic_lr", "target_rate", "noise_sigma", "gamma",
                            "n_step", "seed", "buffer_capacity", "warmup", "updates_per_step", "huber_kappa",
                            "objective", "actor_hidden", "critic_hidden", "n_quantiles", "eval_every",
                            "eval_episodes", "divergence_factor", "divergence_window"});
        auto& t = c.training;
        read(s, "episodes", t.episodes);
        read(s, "batch_size", t.batch_size);
        read(s, "actor_lr", t.actor_lr);
        read(s, "critic_lr", t.critic_lr);
        read(s, "target_rate", t.target_rate);
        read(s, "noise_sigma", t.noise_sigma);
        read(s, "gamma", t.gamma);
        read(s, "n_step", t.n_step);
        read(s, "seed", t.seed);
        read(s, "buffer_capacity", t.buffer_capacity);
        read(s, "warmup", t.warmup);
        read(s, "updates_per_step", t.updates_per_step);
        read(s, "huber_kappa", t.huber_kappa);
        if (s.contains("objective")) t.objective = parse_risk_objective(s["objective"].get<std::string>());
        read(s, "actor_hidden", t.actor_hidden);
        read(s, "critic_hidden", t.critic_hidden);
        read(s, "n_quantiles", t.n_quantiles);
        read(s, "eval_every", t.eval_every);
        read(s, "eval_episodes", t.eval_episodes);
        read(s, "divergence_factor", t.divergence_factor);
        read(s, "divergence_window", t.divergence_window);
    }
    if (j.contains("evaluation")) {
        const auto& s = j["evaluation"];
        detail::check_keys(s, "evaluation", {"episodes", "seed", "histogram_bins", "trace_episodes", "checkpoint"});
        read(s, "episodes", c.evaluation.episodes);
        read(s, "seed", c.evaluation.seed);
        read(s, "histogram_bins", c.evaluation.histogram_bins);
        read(s, "trace_episodes", c.evaluation.trace_episodes);
        read(s, "checkpoint", c.evaluation.checkpoint);
    }
    c.validate();
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline std::string serialize_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

}  // namespace autohedge
