#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "autohedge/drl_agent.hpp"
#include "autohedge/strategies.hpp"

using namespace autohedge;

namespace {

using NetD = DenseNet<double>;

EnvConfig tiny_env() {
    EnvConfig cfg;
    cfg.note.maturity = 0.5;
    cfg.model = MarketModel::flat(cfg.note.initial_prices, 0.2, 0.5, 0.03);
    cfg.pricing_mode = PricingMode::oracle;
    cfg.oracle_paths = 100;
    cfg.tree_steps = 10;
    return cfg;
}

TrainConfig tiny_train() {
    TrainConfig t;
    t.episodes = 3;
    t.batch_size = 4;
    t.warmup = 4;
    t.actor_hidden = {8};
    t.critic_hidden = {8};
    t.n_quantiles = 10;
    t.eval_every = 0;
    t.seed = 3;
    return t;
}

EnvState state_with(double gamma, double tau) {
    EnvState s;
    s.spots = {382.0, 494.0, 142.0};
    s.portfolio_gamma = gamma;
    s.tau = tau;
    return s;
}

}  // namespace

TEST(QuantileLoss, HuberAndPinballShapes) {
    EXPECT_EQ(quantile_huber(0.0, 0.3, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(quantile_huber(2.0, 0.3, 0.0), 0.6);
    EXPECT_DOUBLE_EQ(quantile_huber(-2.0, 0.3, 0.0), 1.4);
    EXPECT_DOUBLE_EQ(quantile_huber(0.5, 0.3, 1.0), 0.3 * 0.125);
    EXPECT_DOUBLE_EQ(quantile_huber(3.0, 0.3, 1.0), 0.3 * 2.5);
    for (double kappa : {0.0, 0.5, 1.0})
        for (double u : {-2.0, -0.3, 0.2, 1.7}) {
            const double h = 1e-6;
            const double fd = (quantile_huber(u + h, 0.8, kappa) - quantile_huber(u - h, 0.8, kappa)) / (2 * h);
            EXPECT_NEAR(quantile_huber_du(u, 0.8, kappa), fd, 1e-6);
        }
    EXPECT_DOUBLE_EQ(quantile_tau(0, 100), 0.005);
    EXPECT_DOUBLE_EQ(quantile_tau(99, 100), 0.995);
}

TEST(QuantileLoss, GradientMatchesFiniteDifferences) {
    const std::vector<double> theta{-1.0, 0.1, 0.4, 2.0}, targets{-0.5, 0.3, 0.35, 1.0, 3.0};
    std::vector<double> g(4);
    quantile_loss<double>(theta, targets, 0.5, g);
    for (std::size_t j = 0; j < 4; ++j) {
        auto tp = theta, tm = theta;
        tp[j] += 1e-6;
        tm[j] -= 1e-6;
        const double fd = (quantile_loss<double>(tp, targets, 0.5) - quantile_loss<double>(tm, targets, 0.5)) / 2e-6;
        EXPECT_NEAR(g[j], fd, 1e-6);
    }
}

TEST(QuantileLoss, MinimiserIsTheEmpiricalQuantile) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> z(1.0, 2.0);
    std::vector<double> targets(2000);
    for (auto& t : targets) t = z(rng);
    auto sorted = targets;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = 20;
    for (double kappa : {0.0, 0.01}) {
        std::vector<double> theta(n, 0.0), g(n);
        for (int it = 0; it < 4000; ++it) {
            quantile_loss<double>(theta, targets, kappa, g);
            const double lr = 20.0 / (1.0 + it / 200.0);
            for (std::size_t j = 0; j < n; ++j) theta[j] -= lr * g[j];
        }
        for (std::size_t j = 0; j < n; ++j)
            EXPECT_NEAR(theta[j], quantile_sorted(sorted, quantile_tau(j, n)), 0.08) << "j=" << j << " kappa=" << kappa;
    }
}

TEST(Distributional, CriticTargets) {
    const std::vector<double> next{1.0, 2.0};
    EXPECT_EQ(critic_targets(0.5, false, next, 0.9), (std::vector<double>{1.4, 2.3}));
    EXPECT_EQ(critic_targets(0.5, true, next, 0.9), (std::vector<double>{0.5, 0.5}));
}

TEST(Distributional, RiskObjectiveAveragesLowestQuantiles) {
    std::vector<double> theta(100);
    for (std::size_t j = 0; j < 100; ++j) theta[j] = static_cast<double>((j * 37) % 100);  // permutation of 0..99
    std::vector<double> g(100);
    EXPECT_DOUBLE_EQ(risk_objective<double>(theta, RiskObjective::mean, g), 49.5);
    EXPECT_DOUBLE_EQ(g[3], 0.01);
    EXPECT_DOUBLE_EQ(risk_objective<double>(theta, RiskObjective::left_tail_5, g), 2.0);
    double gsum = 0.0;
    for (std::size_t j = 0; j < 100; ++j) {
        gsum += g[j];
        EXPECT_EQ(g[j], theta[j] < 5.0 ? 0.2 : 0.0);
    }
    EXPECT_DOUBLE_EQ(gsum, 1.0);
    EXPECT_DOUBLE_EQ(risk_objective<double>(theta, RiskObjective::left_tail_1, g), 0.0);
    EXPECT_EQ(objective_count(RiskObjective::left_tail_1, 10), 1u);
    EXPECT_EQ(parse_risk_objective(to_string(RiskObjective::left_tail_5)), RiskObjective::left_tail_5);
    EXPECT_THROW(parse_risk_objective("cvar"), ValidationError);
}

TEST(Distributional, CriticLossGradientMatchesFiniteDifferences) {
    Rng rng(5);
    NetD critic({3, 6, 4}, OutputActivation::linear, rng, 0.5);
    const NetD::Mat x = NetD::Mat::Random(3, 5);
    const NetD::Mat targets = NetD::Mat::Random(4, 5);
    auto grads = critic.zero_grads();
    critic_loss<double>(critic, x, targets, 0.3, &grads);
    std::size_t k = 0;
    std::vector<double> analytic;
    for (std::size_t l = 0; l < critic.n_layers(); ++l) {
        for (Eigen::Index i = 0; i < grads.w[l].size(); ++i) analytic.push_back(grads.w[l].data()[i]);
        for (Eigen::Index i = 0; i < grads.b[l].size(); ++i) analytic.push_back(grads.b[l].data()[i]);
    }
    critic.for_each_param([&](double& p) {
        const double s = p;
        p = s + 1e-6;
        const double up = critic_loss<double>(critic, x, targets, 0.3, nullptr);
        p = s - 1e-6;
        const double dn = critic_loss<double>(critic, x, targets, 0.3, nullptr);
        p = s;
        EXPECT_NEAR(analytic[k++], (up - dn) / 2e-6, 1e-6);
    });
}

TEST(Distributional, ActorGradientAscendsTheObjective) {
    Rng rng(6);
    NetD actor({2, 5, 1}, OutputActivation::sigmoid, rng, 0.5);
    NetD critic({3, 7, 6}, OutputActivation::linear, rng, 0.5);
    const NetD::Mat s = NetD::Mat::Random(2, 4);
    auto grads = actor.zero_grads();
    actor_objective<double>(actor, critic, s, RiskObjective::mean, &grads);
    std::vector<double> analytic;
    for (std::size_t l = 0; l < actor.n_layers(); ++l) {
        for (Eigen::Index i = 0; i < grads.w[l].size(); ++i) analytic.push_back(grads.w[l].data()[i]);
        for (Eigen::Index i = 0; i < grads.b[l].size(); ++i) analytic.push_back(grads.b[l].data()[i]);
    }
    std::size_t k = 0;
    actor.for_each_param([&](double& p) {
        const double v = p;
        p = v + 1e-6;
        const double up = actor_objective<double>(actor, critic, s, RiskObjective::mean, nullptr);
        p = v - 1e-6;
        const double dn = actor_objective<double>(actor, critic, s, RiskObjective::mean, nullptr);
        p = v;
        // grads hold the derivative of the negated objective
        EXPECT_NEAR(-analytic[k++], (up - dn) / 2e-6, 1e-6);
    });
}

TEST(Distributional, ActorMovesTowardsActionTheCriticPrefers) {
    const auto norm = StateNormalizer::for_note(NoteSpec::reference());
    auto cfg = tiny_train();
    cfg.actor_lr = 1e-2;
    Rng rng(7);
    auto actor = make_actor(norm.dim(), {8}, rng);
    auto critic = make_critic(norm.dim(), {4}, 10, rng);
    // critic(s, a) = a for every quantile: hidden unit 0 copies the action, output sums it
    for (auto& w : critic.weights()) w.setZero();
    for (auto& b : critic.biases()) b.setZero();
    critic.weights()[0](0, static_cast<Eigen::Index>(norm.dim())) = 1.0f;
    critic.weights()[1].col(0).setOnes();
    D4pgAgent agent(cfg, norm, actor, critic);
    const auto s = state_with(-5.0, 0.25);
    const double a0 = agent.act(s);
    D4pgAgent::Mat states(norm.dim(), 1);
    norm.features(s, states.data());
    for (int i = 0; i < 300; ++i) agent.update_actor(states);
    EXPECT_GT(agent.act(s), a0);
    EXPECT_GT(agent.act(s), 0.95);
}

TEST(Distributional, CriticLearnsTwoStepReturnDistribution) {
    // s0 --(r = 0)--> s1 --(r = +-1, terminal)-->; with gamma = 1 both states have the
    // same two-point return distribution.
    const auto norm = StateNormalizer::for_note(NoteSpec::reference());
    auto cfg = tiny_train();
    cfg.critic_hidden = {32, 32};
    cfg.huber_kappa = 0.0;
    cfg.target_rate = 0.05;
    cfg.batch_size = 64;
    D4pgAgent agent(cfg, norm);
    ReplayBuffer buf(4000, norm.dim());
    const auto s0 = state_with(-5.0, 0.25), s1 = state_with(-5.0, 0.0);
    std::vector<float> f0(norm.dim()), f1(norm.dim());
    norm.features(s0, f0.data());
    norm.features(s1, f1.data());
    Rng rng(9);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < 2000; ++i) {
        buf.push(f0.data(), 0.5f, 0.0f, f1.data(), false);
        buf.push(f1.data(), 0.5f, coin(rng) ? 1.0f : -1.0f, f1.data(), true);
    }
    for (int it = 0; it < 3000; ++it) {
        agent.update_critic(buf.sample(cfg.batch_size, rng));
        agent.soft_update();
    }
    for (const auto& s : {s1, s0}) {
        const auto q = agent.critic_forward(s, 0.5);
        EXPECT_NEAR(q.mean(), 0.0, 0.15);
        EXPECT_NEAR(q.theta[1], -1.0, 0.25);
        EXPECT_NEAR(q.theta[8], 1.0, 0.25);
    }
}

TEST(Replay, FifoEvictionAndDistinctSampling) {
    ReplayBuffer buf(3, 1);
    for (int i = 0; i < 5; ++i) {
        const float s = static_cast<float>(i);
        buf.push(&s, 0.1f * i, static_cast<float>(i), &s, i == 4);
    }
    EXPECT_EQ(buf.size(), 3u);
    EXPECT_EQ(buf.reward_at(0), 2.0f);
    EXPECT_EQ(buf.reward_at(2), 4.0f);
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const auto idx = buf.sample_indices(3, rng);
        EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 3u);
    }
    const auto b = buf.gather({2});
    EXPECT_EQ(b.rewards(0, 0), 4.0f);
    EXPECT_EQ(b.states(0, 0), 4.0f);
    EXPECT_EQ(b.terminal[0], 1);
    EXPECT_THROW(buf.sample_indices(4, rng), ValidationError);
}

TEST(Replay, SamplingIsRoughlyUniform) {
    ReplayBuffer buf(10, 1);
    const float z = 0.0f;
    for (int i = 0; i < 10; ++i) buf.push(&z, 0.0f, 0.0f, &z, false);
    Rng rng(2);
    std::vector<int> hits(10, 0);
    for (int t = 0; t < 20000; ++t)
        for (auto i : buf.sample_indices(3, rng)) ++hits[i];
    for (int h : hits) EXPECT_NEAR(h, 6000, 300);
}

TEST(Agent, NormalisedFeatures) {
    const auto norm = StateNormalizer::for_note(NoteSpec::reference());
    const auto f = norm.features(state_with(-50.0, 0.125));
    ASSERT_EQ(f.size(), 5);
    EXPECT_FLOAT_EQ(f[0], 1.0f);
    EXPECT_FLOAT_EQ(f[3], -0.5f);
    EXPECT_FLOAT_EQ(f[4], 0.5f);
}

TEST(Agent, ExplorationWithoutNoiseIsTheGreedyAction) {
    auto cfg = tiny_train();
    cfg.noise_sigma = 0.0;
    D4pgAgent agent(cfg, StateNormalizer::for_note(NoteSpec::reference()));
    Rng rng(3);
    const auto s = state_with(-3.0, 0.2);
    EXPECT_NEAR(agent.act_explore(s, rng), agent.act(s), 1e-6);
    cfg.noise_sigma = 0.5;
    D4pgAgent noisy(cfg, StateNormalizer::for_note(NoteSpec::reference()));
    for (int i = 0; i < 100; ++i) {
        const double a = noisy.act_explore(s, rng);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
}

TEST(Agent, CheckpointRoundTripReproducesPolicy) {
    D4pgAgent agent(tiny_train(), StateNormalizer::for_note(NoteSpec::reference()));
    const auto path = (std::filesystem::temp_directory_path() / "autohedge_test_agent.ckpt").string();
    save_checkpoint(agent, path);
    const auto c = load_checkpoint(path);
    EXPECT_EQ(c.objective, agent.config().objective);
    EXPECT_EQ(c.normalizer.spot_scale, agent.normalizer().spot_scale);
    EXPECT_EQ(c.actor.distance2(agent.actor()), 0.0f);
    EXPECT_EQ(c.critic.distance2(agent.critic()), 0.0f);
    const RlPolicy policy(c);
    const auto s = state_with(-8.0, 0.1);
    EXPECT_EQ(policy.action(s), std::clamp(agent.act(s), 0.0, 1.0));
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << "ACNCKPT1 but then garbage";
    }
    EXPECT_THROW(load_checkpoint(path), ValidationError);
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path), ValidationError);
}

TEST(Agent, ZeroEpisodesReturnsInitialisedAgent) {
    auto cfg = tiny_train();
    cfg.episodes = 0;
    const auto r = train([] { return HedgeEnv(tiny_env()); }, cfg);
    EXPECT_TRUE(r.log.empty());
    const D4pgAgent fresh(cfg, StateNormalizer::for_note(tiny_env().note));
    EXPECT_EQ(r.agent.actor().distance2(fresh.actor()), 0.0f);
}

TEST(Agent, TrainingLogsEveryEpisodeDeterministically) {
    auto cfg = tiny_train();
    cfg.eval_every = 2;
    cfg.eval_episodes = 2;
    std::vector<TrainLogRow> streamed;
    const auto a = train([] { return HedgeEnv(tiny_env()); }, cfg, [&](const TrainLogRow& r) { streamed.push_back(r); });
    const auto b = train([] { return HedgeEnv(tiny_env()); }, cfg);
    ASSERT_EQ(a.log.size(), 3u);
    EXPECT_EQ(streamed.size(), 3u);
    EXPECT_EQ(a.log[0].steps, 6u);
    EXPECT_GT(a.log.back().updates, 0u);
    EXPECT_FALSE(a.log[0].eval_var95.has_value());
    EXPECT_TRUE(a.log[1].eval_var95.has_value());
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a.log[i].episode_return, b.log[i].episode_return);
        EXPECT_EQ(a.log[i].mean_action, b.log[i].mean_action);
    }
    EXPECT_EQ(a.agent.actor().distance2(b.agent.actor()), 0.0f);
    EXPECT_GT(a.agent.actor().distance2(D4pgAgent(cfg, a.agent.normalizer()).actor()), 0.0f);
    std::ostringstream os;
    write_train_log_header(os);
    write_train_log_row(os, a.log[0]);
    const auto text = os.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST(Agent, RejectsBadTrainConfig) {
    auto cfg = tiny_train();
    cfg.n_step = 3;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = tiny_train();
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = tiny_train();
    cfg.gamma = 1.5;
    EXPECT_THROW(cfg.validate(), ValidationError);
}
