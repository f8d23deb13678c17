#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "autohedge/analytics.hpp"
#include "autohedge/cheb_tensor.hpp"
#include "autohedge/dense_net.hpp"
#include "autohedge/errors.hpp"
#include "autohedge/hedge_env.hpp"
#include "autohedge/rng.hpp"

namespace autohedge {

inline constexpr std::size_t kNumQuantiles = 100;

/// Cumulative probability of quantile j (0-based): (2j + 1) / (2n).
inline double quantile_tau(std::size_t j, std::size_t n = kNumQuantiles) {
    return (2.0 * static_cast<double>(j) + 1.0) / (2.0 * static_cast<double>(n));
}

/// Return distribution as quantile locations at fixed, uniform probabilities.
struct QuantileValue {
    std::vector<double> theta;

    double tau(std::size_t j) const { return quantile_tau(j, theta.size()); }

    /// Q(s, a): unweighted mean of the locations.
    double mean() const {
        return std::accumulate(theta.begin(), theta.end(), 0.0) / static_cast<double>(theta.size());
    }
};

// ---- losses -------------------------------------------------------------------------------

/// rho^kappa_tau(u) = |tau - 1{u<0}| * L_kappa(u) / kappa; kappa = 0 is the plain pinball loss.
inline double quantile_huber(double u, double tau, double kappa) {
    const double w = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
    const double au = std::abs(u);
    if (kappa <= 0.0) return w * au;
    return au <= kappa ? w * 0.5 * u * u / kappa : w * (au - 0.5 * kappa);
}

/// d rho / du.
inline double quantile_huber_du(double u, double tau, double kappa) {
    const double w = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
    if (kappa <= 0.0) return u > 0.0 ? w : (u < 0.0 ? -w : 0.0);
    return w * std::clamp(u / kappa, -1.0, 1.0);
}

/// Mean over (j, i) of rho_tau_j(target_i - theta_j). When `grad` is given it receives
/// d loss / d theta.
template <class T>
double quantile_loss(std::span<const T> theta, std::span<const T> targets, double kappa,
                     std::span<T> grad = {}) {
    require(!theta.empty() && !targets.empty(), "quantile_loss: empty input");
    const std::size_t n = theta.size(), m = targets.size();
    const double scale = 1.0 / static_cast<double>(n * m);
    double loss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double tau = quantile_tau(j, n);
        double g = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double u = static_cast<double>(targets[i]) - static_cast<double>(theta[j]);
            loss += quantile_huber(u, tau, kappa);
            g -= quantile_huber_du(u, tau, kappa);
        }
        if (!grad.empty()) grad[j] = static_cast<T>(g * scale);
    }
    return loss * scale;
}

/// Distributional Bellman targets r + gamma * theta'_j; a terminal transition uses r only.
inline std::vector<double> critic_targets(double reward, bool terminal, std::span<const double> next_theta,
                                          double gamma) {
    std::vector<double> out(next_theta.size(), reward);
    if (!terminal)
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += gamma * next_theta[j];
    return out;
}

enum class RiskObjective : std::uint32_t { mean = 0, left_tail_5 = 1, left_tail_1 = 2 };

inline std::string to_string(RiskObjective o) {
    switch (o) {
        case RiskObjective::mean: return "mean";
        case RiskObjective::left_tail_5: return "left-tail-5";
        case RiskObjective::left_tail_1: return "left-tail-1";
    }
    return "?";
}

inline RiskObjective parse_risk_objective(const std::string& s) {
    if (s == "mean") return RiskObjective::mean;
    if (s == "left-tail-5") return RiskObjective::left_tail_5;
    if (s == "left-tail-1") return RiskObjective::left_tail_1;
    throw ValidationError("unknown risk objective '" + s + "' (expected mean, left-tail-5 or left-tail-1)");
}

/// How many of the lowest quantiles the objective averages.
inline std::size_t objective_count(RiskObjective o, std::size_t n) {
    const auto frac = [n](double f) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
    };
    switch (o) {
        case RiskObjective::mean: return n;
        case RiskObjective::left_tail_5: return frac(0.05);
        case RiskObjective::left_tail_1: return frac(0.01);
    }
    return n;
}

/// f(theta): mean of the k lowest locations. `grad` receives df/dtheta (1/k on those).
template <class T>
double risk_objective(std::span<const T> theta, RiskObjective o, std::span<T> grad = {}) {
    const std::size_t n = theta.size();
    const std::size_t k = objective_count(o, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return theta[a] < theta[b] || (theta[a] == theta[b] && a < b); });
    double f = 0.0;
    for (std::size_t r = 0; r < k; ++r) f += static_cast<double>(theta[idx[r]]);
    if (!grad.empty()) {
        std::fill(grad.begin(), grad.end(), T(0));
        for (std::size_t r = 0; r < k; ++r) grad[idx[r]] = static_cast<T>(1.0 / static_cast<double>(k));
    }
    return f / static_cast<double>(k);
}

// ---- network plumbing -----------------------------------------------------------------------

/// Spots over initial prices, cash gamma over a scale (the notional), tau over 0.25.
struct StateNormalizer {
    std::vector<double> spot_scale;
    double gamma_scale = 100.0;
    double tau_scale = 0.25;

    static StateNormalizer for_note(const NoteSpec& note) { return {note.initial_prices, note.notional, 0.25}; }

    std::size_t dim() const { return spot_scale.size() + 2; }

    void features(const EnvState& s, float* out) const {
        require(s.spots.size() == spot_scale.size(), "normalizer: state has wrong number of assets");
        for (std::size_t i = 0; i < spot_scale.size(); ++i) out[i] = static_cast<float>(s.spots[i] / spot_scale[i]);
        out[spot_scale.size()] = static_cast<float>(s.portfolio_gamma / gamma_scale);
        out[spot_scale.size() + 1] = static_cast<float>(s.tau / tau_scale);
    }

    Eigen::VectorXf features(const EnvState& s) const {
        Eigen::VectorXf f(static_cast<Eigen::Index>(dim()));
        features(s, f.data());
        return f;
    }
};

/// Stacks states (d x B) over actions (1 x B).
template <class T>
typename DenseNet<T>::Mat critic_input(const typename DenseNet<T>::Mat& states,
                                       const typename DenseNet<T>::Mat& actions) {
    typename DenseNet<T>::Mat x(states.rows() + 1, states.cols());
    x.topRows(states.rows()) = states;
    x.bottomRows(1) = actions;
    return x;
}

/// Batch-mean quantile loss of `critic` at `inputs` against per-column `targets`
/// (M x B). Accumulates parameter gradients into `grads` when given.
template <class T>
double critic_loss(const DenseNet<T>& critic, const typename DenseNet<T>::Mat& inputs,
                   const typename DenseNet<T>::Mat& targets, double kappa, typename DenseNet<T>::Grads* grads) {
    using Mat = typename DenseNet<T>::Mat;
    typename DenseNet<T>::Cache cache;
    const Mat theta = critic.forward(inputs, cache);
    const auto b = theta.cols();
    Mat d_theta(theta.rows(), b);
    double loss = 0.0;
    for (Eigen::Index c = 0; c < b; ++c) {
        loss += quantile_loss<T>(std::span<const T>(theta.col(c).data(), static_cast<std::size_t>(theta.rows())),
                                 std::span<const T>(targets.col(c).data(), static_cast<std::size_t>(targets.rows())),
                                 kappa, std::span<T>(d_theta.col(c).data(), static_cast<std::size_t>(theta.rows())));
    }
    d_theta /= static_cast<T>(b);
    if (grads) critic.backward(cache, d_theta, grads);
    return loss / static_cast<double>(b);
}

/// Batch mean of f(critic(s, actor(s))). Accumulates the gradient of the *negated*
/// objective with respect to the actor's parameters into `grads` (descent ascends f).
template <class T>
double actor_objective(const DenseNet<T>& actor, const DenseNet<T>& critic, const typename DenseNet<T>::Mat& states,
                       RiskObjective objective, typename DenseNet<T>::Grads* grads) {
    using Mat = typename DenseNet<T>::Mat;
    typename DenseNet<T>::Cache ca, cc;
    const Mat a = actor.forward(states, ca);
    const Mat theta = critic.forward(critic_input<T>(states, a), cc);
    const auto b = theta.cols();
    const auto n = static_cast<std::size_t>(theta.rows());
    Mat d_theta(theta.rows(), b);
    double f = 0.0;
    for (Eigen::Index c = 0; c < b; ++c)
        f += risk_objective<T>(std::span<const T>(theta.col(c).data(), n), objective,
                               std::span<T>(d_theta.col(c).data(), n));
    if (grads) {
        d_theta *= static_cast<T>(-1.0 / static_cast<double>(b));
        const Mat d_in = critic.backward(cc, d_theta, nullptr);
        actor.backward(ca, d_in.bottomRows(1), grads);
    }
    return f / static_cast<double>(b);
}

// ---- replay ---------------------------------------------------------------------------------

struct Batch {
    Eigen::MatrixXf states;       ///< d x B
    Eigen::MatrixXf actions;      ///< 1 x B
    Eigen::MatrixXf rewards;      ///< 1 x B
    Eigen::MatrixXf next_states;  ///< d x B
    std::vector<std::uint8_t> terminal;
};

/// Fixed-capacity FIFO store of transitions in feature space.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::size_t state_dim) : capacity_(capacity), dim_(state_dim) {
        require(capacity >= 1 && state_dim >= 1, "replay buffer needs positive capacity and state size");
    }

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t state_dim() const { return dim_; }

    void push(const float* state, float action, float reward, const float* next_state, bool terminal) {
        std::size_t slot = head_;
        if (size_ < capacity_) {
            slot = size_++;
            states_.resize(size_ * dim_);
            next_.resize(size_ * dim_);
            actions_.resize(size_);
            rewards_.resize(size_);
            terminal_.resize(size_);
        } else {
            head_ = (head_ + 1) % capacity_;
        }
        std::copy(state, state + dim_, states_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
        std::copy(next_state, next_state + dim_, next_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
        actions_[slot] = action;
        rewards_[slot] = reward;
        terminal_[slot] = terminal ? 1 : 0;
    }

    /// Slot of the i-th oldest stored transition.
    std::size_t slot_of(std::size_t i) const { return (head_ + i) % capacity_; }

    float reward_at(std::size_t i) const { return rewards_[slot_of(i)]; }

    /// k distinct indices, uniformly (Floyd's algorithm).
    std::vector<std::size_t> sample_indices(std::size_t k, Rng& rng) const {
        require(k <= size_, "replay buffer: batch larger than buffer");
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t j = size_ - k; j < size_; ++j) {
            std::uniform_int_distribution<std::size_t> u(0, j);
            const std::size_t t = u(rng);
            out.push_back(std::find(out.begin(), out.end(), t) == out.end() ? t : j);
        }
        return out;
    }

    Batch gather(const std::vector<std::size_t>& idx) const {
        const auto b = static_cast<Eigen::Index>(idx.size());
        const auto d = static_cast<Eigen::Index>(dim_);
        Batch out{Eigen::MatrixXf(d, b), Eigen::MatrixXf(1, b), Eigen::MatrixXf(1, b), Eigen::MatrixXf(d, b), {}};
        out.terminal.resize(idx.size());
        for (Eigen::Index c = 0; c < b; ++c) {
            const std::size_t s = slot_of(idx[static_cast<std::size_t>(c)]);
            out.states.col(c) = Eigen::Map<const Eigen::VectorXf>(states_.data() + s * dim_, d);
            out.next_states.col(c) = Eigen::Map<const Eigen::VectorXf>(next_.data() + s * dim_, d);
            out.actions(0, c) = actions_[s];
            out.rewards(0, c) = rewards_[s];
            out.terminal[static_cast<std::size_t>(c)] = terminal_[s];
        }
        return out;
    }

    Batch sample(std::size_t k, Rng& rng) const { return gather(sample_indices(k, rng)); }

private:
    std::size_t capacity_, dim_;
    std::size_t size_ = 0, head_ = 0;
    std::vector<float> states_, next_, actions_, rewards_;
    std::vector<std::uint8_t> terminal_;
};

// ---- agent ----------------------------------------------------------------------------------

struct TrainConfig {
    std::size_t episodes = 5000;
    std::size_t batch_size = 256;
    double actor_lr = 1e-4;
    double critic_lr = 1e-3;
    double target_rate = 5e-3;     ///< soft-update rate
    double noise_sigma = 0.1;      ///< exploration noise on the pre-squash action
    double gamma = 1.0;
    std::size_t n_step = 1;
    std::uint64_t seed = 1;
    std::size_t buffer_capacity = 1000000;
    std::size_t warmup = 1000;     ///< transitions stored before updates start
    std::size_t updates_per_step = 1;
    double huber_kappa = 1.0;
    RiskObjective objective = RiskObjective::left_tail_1;
    std::vector<std::size_t> actor_hidden{256, 256, 256};
    std::vector<std::size_t> critic_hidden{512, 512, 256};
    std::size_t n_quantiles = kNumQuantiles;
    std::size_t eval_every = 500;  ///< episodes between held-out evaluations (0 = never)
    std::size_t eval_episodes = 200;
    double divergence_factor = 1e3;
    std::size_t divergence_window = 100;  ///< critic updates averaged for the guard's baseline

    void validate() const {
        require(batch_size >= 1 && buffer_capacity >= batch_size, "train: need 1 <= batch_size <= buffer_capacity");
        require(actor_lr > 0.0 && critic_lr > 0.0, "train: learning rates must be positive");
        require(target_rate > 0.0 && target_rate <= 1.0, "train: target_rate must lie in (0, 1]");
        require(noise_sigma >= 0.0, "train: noise_sigma must be non-negative");
        require(gamma > 0.0 && gamma <= 1.0, "train: gamma must lie in (0, 1]");
        require(n_step == 1, "train: only one-step returns are supported");
        require(huber_kappa >= 0.0, "train: huber_kappa must be non-negative");
        require(n_quantiles >= 1 && updates_per_step >= 1, "train: n_quantiles and updates_per_step must be >= 1");
        require(divergence_factor > 1.0 && divergence_window >= 1, "train: bad divergence guard settings");
    }
};

inline DenseNet<float> make_actor(std::size_t state_dim, const std::vector<std::size_t>& hidden, Rng& rng) {
    std::vector<std::size_t> sizes{state_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    return DenseNet<float>(sizes, OutputActivation::sigmoid, rng);
}

inline DenseNet<float> make_critic(std::size_t state_dim, const std::vector<std::size_t>& hidden,
                                   std::size_t n_quantiles, Rng& rng) {
    std::vector<std::size_t> sizes{state_dim + 1};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(n_quantiles);
    return DenseNet<float>(sizes, OutputActivation::linear, rng);
}

inline float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

/// Deterministic actor with a quantile critic, target copies and Adam optimisers.
class D4pgAgent {
public:
    using Net = DenseNet<float>;
    using Mat = Net::Mat;

    struct UpdateStats {
        double critic_loss = 0.0;
        double actor_objective = 0.0;
    };

    D4pgAgent(const TrainConfig& cfg, StateNormalizer norm) : cfg_(cfg), norm_(std::move(norm)) {
        cfg_.validate();
        Rng rng = make_rng(cfg_.seed, 0, stream_tag::net_init);
        actor_ = make_actor(norm_.dim(), cfg_.actor_hidden, rng);
        critic_ = make_critic(norm_.dim(), cfg_.critic_hidden, cfg_.n_quantiles, rng);
        init_aux();
    }

    D4pgAgent(const TrainConfig& cfg, StateNormalizer norm, Net actor, Net critic)
        : cfg_(cfg), norm_(std::move(norm)), actor_(std::move(actor)), critic_(std::move(critic)) {
        require(actor_.n_in() == norm_.dim() && actor_.n_out() == 1, "agent: actor shape does not match the state");
        require(critic_.n_in() == norm_.dim() + 1, "agent: critic shape does not match the state");
        init_aux();
    }

    const TrainConfig& config() const { return cfg_; }
    const StateNormalizer& normalizer() const { return norm_; }
    const Net& actor() const { return actor_; }
    const Net& critic() const { return critic_; }
    const Net& actor_target() const { return actor_target_; }
    const Net& critic_target() const { return critic_target_; }
    Net& actor() { return actor_; }
    Net& critic() { return critic_; }

    double act(const EnvState& s) const { return actor_.forward(norm_.features(s))(0, 0); }

    /// sigmoid(z + sigma * eps), z the actor's pre-squash output.
    double act_explore(const EnvState& s, Rng& rng) const {
        const float z = actor_.output_preactivation(norm_.features(s))(0, 0);
        std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg_.noise_sigma));
        return std::clamp(static_cast<double>(sigmoid(z + noise(rng))), 0.0, 1.0);
    }

    QuantileValue critic_forward(const EnvState& s, double a) const {
        Mat x(norm_.dim() + 1, 1);
        norm_.features(s, x.data());
        x(static_cast<Eigen::Index>(norm_.dim()), 0) = static_cast<float>(a);
        const Mat th = critic_.forward(x);
        return {std::vector<double>(th.data(), th.data() + th.size())};
    }

    /// One critic step on the batch's distributional Bellman targets.
    double update_critic(const Batch& b) {
        const Mat a2 = actor_target_.forward(b.next_states);
        const Mat th2 = critic_target_.forward(critic_input<float>(b.next_states, a2));
        Mat targets(th2.rows(), th2.cols());
        const auto g = static_cast<float>(cfg_.gamma);
        for (Eigen::Index c = 0; c < th2.cols(); ++c) {
            if (b.terminal[static_cast<std::size_t>(c)])
                targets.col(c).setConstant(b.rewards(0, c));
            else
                targets.col(c) = (g * th2.col(c)).array() + b.rewards(0, c);
        }
        auto grads = critic_.zero_grads();
        const double loss = critic_loss<float>(critic_, critic_input<float>(b.states, b.actions), targets,
                                               cfg_.huber_kappa, &grads);
        critic_opt_.step(critic_, grads);
        return loss;
    }

    double update_actor(const Mat& states) {
        auto grads = actor_.zero_grads();
        const double f = actor_objective<float>(actor_, critic_, states, cfg_.objective, &grads);
        actor_opt_.step(actor_, grads);
        return f;
    }

    void soft_update() {
        const auto r = static_cast<float>(cfg_.target_rate);
        actor_target_.soft_update_from(actor_, r);
        critic_target_.soft_update_from(critic_, r);
    }

    UpdateStats update(const Batch& b) {
        UpdateStats st;
        st.critic_loss = update_critic(b);
        st.actor_objective = update_actor(b.states);
        soft_update();
        return st;
    }

private:
    void init_aux() {
        actor_target_ = actor_;
        critic_target_ = critic_;
        actor_opt_ = Adam<float>(actor_, cfg_.actor_lr);
        critic_opt_ = Adam<float>(critic_, cfg_.critic_lr);
    }

    TrainConfig cfg_;
    StateNormalizer norm_;
    Net actor_, critic_, actor_target_, critic_target_;
    Adam<float> actor_opt_, critic_opt_;
};

// ---- training ---------------------------------------------------------------------------------

struct TrainLogRow {
    std::size_t episode = 0;
    std::size_t steps = 0;
    double episode_return = 0.0;  ///< sum of rewards = episode PnL
    double mean_action = 0.0;
    std::size_t updates = 0;      ///< cumulative gradient steps
    double critic_loss = std::numeric_limits<double>::quiet_NaN();  ///< mean over this episode's updates
    double actor_objective = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> eval_var95;  ///< held-out 95% VaR of PnL, at the evaluation cadence
};

inline void write_train_log_header(std::ostream& os) {
    os << "episode,steps,return,mean_action,updates,critic_loss,actor_objective,eval_var95\n";
}

inline void write_train_log_row(std::ostream& os, const TrainLogRow& r) {
    os << r.episode << ',' << r.steps << ',' << fmt_num(r.episode_return) << ',' << fmt_num(r.mean_action) << ','
       << r.updates << ',' << fmt_num(r.critic_loss) << ',' << fmt_num(r.actor_objective) << ','
       << (r.eval_var95 ? fmt_num(*r.eval_var95) : std::string()) << '\n';
}

using EnvFactory = std::function<HedgeEnv()>;

/// Episode PnL of the agent's deterministic policy on seed `episode_seed`.
inline double rollout_pnl(HedgeEnv& env, const D4pgAgent& agent, std::uint64_t episode_seed) {
    env.reset(episode_seed);
    while (!env.done()) env.step_action(agent.act(env.state()));
    return env.cumulative_reward();
}

/// Held-out seeds: substreams of the training seed under their own tag.
inline double holdout_var95(HedgeEnv& env, const D4pgAgent& agent, std::size_t n_episodes, std::uint64_t seed) {
    std::vector<double> pnl(n_episodes);
    for (std::size_t e = 0; e < n_episodes; ++e)
        pnl[e] = rollout_pnl(env, agent, substream_seed(seed, e, stream_tag::holdout_episode));
    return var_pnl(pnl, 0.95);
}

struct TrainResult {
    D4pgAgent agent;
    std::vector<TrainLogRow> log;
};

/// Off-policy training loop. Single-threaded and deterministic for a fixed config.
inline TrainResult train(const EnvFactory& make_env, const TrainConfig& cfg,
                         const std::function<void(const TrainLogRow&)>& on_row = {}) {
    cfg.validate();
    HedgeEnv env = make_env();
    D4pgAgent agent(cfg, StateNormalizer::for_note(env.config().note));
    std::vector<TrainLogRow> log;
    if (cfg.episodes == 0) return {std::move(agent), std::move(log)};

    HedgeEnv eval_env = make_env();
    const std::size_t d = agent.normalizer().dim();
    ReplayBuffer buffer(cfg.buffer_capacity, d);
    Rng explore = make_rng(cfg.seed, 0, stream_tag::exploration);
    Rng sampler = make_rng(cfg.seed, 0, stream_tag::replay);
    std::vector<float> s(d), s2(d);
    std::size_t updates = 0;
    double guard_sum = 0.0, guard_base = 0.0;

    for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
        env.reset(substream_seed(cfg.seed, ep, stream_tag::train_episode));
        TrainLogRow row;
        row.episode = ep;
        double loss_sum = 0.0, obj_sum = 0.0, act_sum = 0.0;
        std::size_t ep_updates = 0;
        while (!env.done()) {
            agent.normalizer().features(env.state(), s.data());
            const double a = agent.act_explore(env.state(), explore);
            const auto tr = env.step_action(a);
            agent.normalizer().features(tr.next_state, s2.data());
            buffer.push(s.data(), static_cast<float>(a), static_cast<float>(tr.reward), s2.data(), tr.terminal);
            act_sum += a;
            ++row.steps;
            if (buffer.size() < std::max(cfg.warmup, cfg.batch_size)) continue;
            for (std::size_t u = 0; u < cfg.updates_per_step; ++u) {
                const auto st = agent.update(buffer.sample(cfg.batch_size, sampler));
                if (!std::isfinite(st.critic_loss) || !std::isfinite(st.actor_objective))
                    throw NumericError("training diverged: non-finite loss at update " + std::to_string(updates));
                ++updates;
                if (updates <= cfg.divergence_window) {
                    guard_sum += st.critic_loss;
                    if (updates == cfg.divergence_window) guard_base = guard_sum / static_cast<double>(updates);
                } else if (st.critic_loss > cfg.divergence_factor * guard_base) {
                    throw NumericError("training diverged: critic loss " + std::to_string(st.critic_loss) +
                                       " exceeds " + std::to_string(cfg.divergence_factor) +
                                       "x its initial average " + std::to_string(guard_base));
                }
                loss_sum += st.critic_loss;
                obj_sum += st.actor_objective;
                ++ep_updates;
            }
        }
        row.episode_return = env.cumulative_reward();
        row.mean_action = row.steps ? act_sum / static_cast<double>(row.steps) : 0.0;
        row.updates = updates;
        if (ep_updates) {
            row.critic_loss = loss_sum / static_cast<double>(ep_updates);
            row.actor_objective = obj_sum / static_cast<double>(ep_updates);
        }
        if (cfg.eval_every && (ep + 1) % cfg.eval_every == 0 && cfg.eval_episodes > 0)
            row.eval_var95 = holdout_var95(eval_env, agent, cfg.eval_episodes, cfg.seed);
        if (on_row) on_row(row);
        log.push_back(row);
    }
    return {std::move(agent), std::move(log)};
}

// ---- checkpoints ------------------------------------------------------------------------------
// Layout (little-endian host order):
//   char[8] "ACNCKPT1" | u32 version | u32 n_assets | f64 spot_scale[n_assets] | f64 gamma_scale
//   | f64 tau_scale | u32 objective | actor | critic
//   where each net is: u32 n_sizes | u32 sizes[n_sizes] | u32 output_activation
//   | per layer: f32 weights (column-major, rows = fan_out) then f32 biases.

inline constexpr char kCheckpointMagic[8] = {'A', 'C', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    StateNormalizer normalizer;
    RiskObjective objective = RiskObjective::left_tail_1;
    DenseNet<float> actor;
    DenseNet<float> critic;
};

namespace detail {
inline void put_net(std::ostream& os, const DenseNet<float>& net) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(net.sizes().size()));
    for (auto s : net.sizes()) put<std::uint32_t>(os, static_cast<std::uint32_t>(s));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(net.output_activation()));
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const auto& w = net.weights()[l];
        const auto& b = net.biases()[l];
        os.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
        os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(float)));
    }
}

inline DenseNet<float> get_net(std::istream& is) {
    const auto n = get<std::uint32_t>(is);
    if (n < 2 || n > 64) throw ValidationError("checkpoint: implausible layer count");
    std::vector<std::size_t> sizes(n);
    for (auto& s : sizes) {
        s = get<std::uint32_t>(is);
        if (s == 0 || s > (1u << 16)) throw ValidationError("checkpoint: implausible layer size");
    }
    const auto act = get<std::uint32_t>(is);
    if (act > 1) throw ValidationError("checkpoint: unknown output activation");
    Rng dummy(0);
    DenseNet<float> net(sizes, static_cast<OutputActivation>(act), dummy);
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        auto& w = net.weights()[l];
        auto& b = net.biases()[l];
        is.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
        is.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(float)));
        if (!is) throw ValidationError("truncated checkpoint");
    }
    return net;
}
}  // namespace detail

inline void save_checkpoint(const D4pgAgent& agent, const std::string& path) {
    using detail::put;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open '" + path + "' for writing");
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint32_t>(os, kCheckpointVersion);
    const auto& n = agent.normalizer();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(n.spot_scale.size()));
    for (double v : n.spot_scale) put<double>(os, v);
    put<double>(os, n.gamma_scale);
    put<double>(os, n.tau_scale);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(agent.config().objective));
    detail::put_net(os, agent.actor());
    detail::put_net(os, agent.critic());
    if (!os) throw ValidationError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using detail::get;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open checkpoint '" + path + "'");
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw ValidationError("'" + path + "' is not a checkpoint file");
    const auto version = get<std::uint32_t>(is);
    if (version != kCheckpointVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    const auto na = get<std::uint32_t>(is);
    if (na == 0 || na > 64) throw ValidationError("checkpoint: implausible asset count");
    c.normalizer.spot_scale.resize(na);
    for (auto& v : c.normalizer.spot_scale) v = get<double>(is);
    c.normalizer.gamma_scale = get<double>(is);
    c.normalizer.tau_scale = get<double>(is);
    const auto obj = get<std::uint32_t>(is);
    if (obj > 2) throw ValidationError("checkpoint: unknown objective");
    c.objective = static_cast<RiskObjective>(obj);
    c.actor = detail::get_net(is);
    c.critic = detail::get_net(is);
    if (c.actor.n_in() != c.normalizer.dim() || c.actor.n_out() != 1 || c.critic.n_in() != c.normalizer.dim() + 1)
        throw ValidationError("checkpoint: network shapes do not match the normaliser");
    return c;
}

}  // namespace autohedge
