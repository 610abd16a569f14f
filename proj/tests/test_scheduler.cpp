#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "semdiff/scheduler.hpp"
#include "test_support.hpp"

using namespace semdiff;

namespace {

TranscriptRecord transcript(double l, double mse, bool failed = false) {
    TranscriptRecord tr;
    tr.l_s = l;
    tr.mse = mse;
    tr.failed = failed;
    return tr;
}

} // namespace

TEST_CASE("reward shape") {
    CHECK(reward(transcript(10.0, 2.0), 1.0) == Catch::Approx(-12.0));
    SECTION("failed runs are dominated by the penalty") {
        CHECK(reward(transcript(10.0, 2.0, true), 1.0) <= -1000.0);
    }
    SECTION("lower latency is strictly better, all else equal") {
        CHECK(reward(transcript(8.0, 2.0), 1.0) > reward(transcript(9.0, 2.0), 1.0));
    }
    SECTION("lambda 0 ranks purely by latency") {
        const double a = reward(transcript(3.0, 100.0), 0.0);
        const double b = reward(transcript(4.0, 0.0), 0.0);
        CHECK(a > b);
    }
}

TEST_CASE("grid search oracle") {
    const ActionMenu menu = ActionMenu::from_edge_steps({0, 10, 20}, 20);
    SECTION("degenerate menu returns its only action") {
        const ActionMenu one = ActionMenu::from_edge_steps({12}, 20);
        const auto a = grid_search_optimal(
            {}, one, [](const ScenarioState&, const Action&, std::uint64_t) { return 0.0; }, 3);
        CHECK(a.t_edge == 12);
    }
    SECTION("starved local compute pushes all steps to the edge") {
        // rho_local -> 0+ makes local steps arbitrarily expensive.
        const ActionEvaluator eval = [](const ScenarioState&, const Action& a, std::uint64_t) {
            const double l = a.t_edge * 0.4 / 1.0 + a.t_local * 1.6 / 1e-3;
            return -l;
        };
        const auto best = grid_search_optimal({}, menu, eval, 8);
        CHECK(best.t_local == 0);
    }
    SECTION("starved edge compute pushes steps local") {
        const ActionEvaluator eval = [](const ScenarioState&, const Action& a, std::uint64_t) {
            const double l = a.t_edge * 0.4 / 1e-3 + a.t_local * 1.6 / 1.0;
            return -l;
        };
        const auto best = grid_search_optimal({}, menu, eval, 8);
        CHECK(best.t_edge == 0);
    }
    SECTION("ties break toward larger t_edge") {
        const ActionEvaluator eval = [](const ScenarioState&, const Action&, std::uint64_t) {
            return 1.0;
        };
        const auto best = grid_search_optimal({}, menu, eval, 4);
        CHECK(best.t_edge == 20);
    }
}

TEST_CASE("q_update mechanics") {
    Rng rng(3);
    QTable q = QTable::zeros(2, 2);
    SECTION("zero step size leaves the tables unchanged") {
        q_update(q, 0, 0, 5.0, std::nullopt, 0.0, 0.0, rng);
        CHECK(q.a == std::vector<double>(4, 0.0));
        CHECK(q.b == std::vector<double>(4, 0.0));
    }
    SECTION("unit step on a terminal transition writes the reward") {
        q_update(q, 1, 0, 3.5, std::nullopt, 1.0, 0.9, rng);
        CHECK(q.value(1, 0) == Catch::Approx(1.75));  // one estimator holds 3.5
        const double single = std::max(q.a[q.at(1, 0)], q.b[q.at(1, 0)]);
        CHECK(single == Catch::Approx(3.5));
    }
    SECTION("bootstraps through the other estimator") {
        for (int i = 0; i < 64; ++i) {
            QTable fresh = QTable::zeros(2, 2);
            fresh.a[fresh.at(1, 1)] = 2.0;
            fresh.b[fresh.at(1, 1)] = 4.0;
            Rng r(static_cast<std::uint64_t>(i));
            q_update(fresh, 0, 0, 1.0, 1, 1.0, 0.5, r);
            const double updated = fresh.a[fresh.at(0, 0)] + fresh.b[fresh.at(0, 0)];
            // Whichever estimator fired, the target was 1 + 0.5 * other[argmax].
            if (fresh.a[fresh.at(0, 0)] != 0.0)
                CHECK(fresh.a[fresh.at(0, 0)] == Catch::Approx(1.0 + 0.5 * 4.0));
            else
                CHECK(updated == Catch::Approx(1.0 + 0.5 * 2.0));
        }
    }
    SECTION("repeated updates converge to the mean reward") {
        // Robbins-Monro with 1/n steps on each estimator separately.
        Rng noise(17);
        QTable table = QTable::zeros(1, 1);
        int visits_a = 0, visits_b = 0;
        const int n = 20000;
        const double mean_reward = 2.5, spread = 1.0;
        for (int i = 0; i < n; ++i) {
            const double r = mean_reward + spread * noise.normal();
            const bool pick_a = noise.uniform() < 0.5;
            if (pick_a) {
                ++visits_a;
                table.a[0] += (r - table.a[0]) / visits_a;
            } else {
                ++visits_b;
                table.b[0] += (r - table.b[0]) / visits_b;
            }
        }
        const double tol = 3.0 * spread / std::sqrt(static_cast<double>(n) / 2.0);
        CHECK(table.a[0] == Catch::Approx(mean_reward).margin(tol));
        CHECK(table.b[0] == Catch::Approx(mean_reward).margin(tol));
    }
}

namespace {

/// Deterministic 3-state, 3-action toy bandit with known argmaxes.
BanditEnv toy_env() {
    BanditEnv env;
    env.n_states = 3;
    env.n_actions = 3;
    env.sample_state = [](Rng& rng) { return static_cast<int>(rng.below(3)); };
    env.evaluate = [](int s, int a, std::uint64_t) {
        static const double table[3][3] = {{1.0, 2.0, 0.5}, {0.0, -1.0, 3.0}, {5.0, 4.0, 4.5}};
        return table[s][a];
    };
    return env;
}

} // namespace

TEST_CASE("double Q-learning recovers the deterministic toy optimum exactly") {
    const BanditEnv env = toy_env();
    Rng rng(2025);
    const TrainPolicyResult res = train_policy(env, 10000, EpsilonSchedule{1.0, 1.0}, rng);
    const std::vector<int> greedy = greedy_policy(res.q);
    const ActionMenu menu = ActionMenu::from_edge_steps({0, 10, 20}, 20);
    for (int s = 0; s < 3; ++s) {
        const ActionEvaluator eval = [&env](const ScenarioState& st, const Action& a,
                                            std::uint64_t seed) {
            // Map t_edge {0,10,20} back to action ids {0,1,2}.
            const int id = a.t_edge / 10;
            return env.evaluate(st.snr_bucket, id, seed);
        };
        ScenarioState st;
        st.snr_bucket = s;
        ScenarioGrid grid;
        grid.snr_db = {0, 1, 2};
        grid.rho_edge = {1.0};
        grid.rho_local = {1.0};
        const Action oracle = grid_search_optimal(st, menu, eval, 1);
        CHECK(greedy[static_cast<std::size_t>(s)] == oracle.t_edge / 10);
    }
}

TEST_CASE("pure exploration visits actions uniformly") {
    const BanditEnv env = toy_env();
    Rng rng(31337);
    const int episodes = 30000;
    const TrainPolicyResult res = train_policy(env, episodes, EpsilonSchedule{1.0, 1.0}, rng);
    long total = 0;
    for (int v : res.q.visits) total += v;
    CHECK(total == episodes);
    const double expect = static_cast<double>(episodes) / 9.0;
    const double sd = std::sqrt(expect * (1.0 - 1.0 / 9.0));
    for (int v : res.q.visits)
        CHECK(std::abs(v - expect) < 3.0 * sd);
}

TEST_CASE("policy training is bitwise reproducible") {
    const BanditEnv env = toy_env();
    Rng a(5), b(5);
    const TrainPolicyResult ra = train_policy(env, 5000, EpsilonSchedule{1.0, 0.2}, a);
    const TrainPolicyResult rb = train_policy(env, 5000, EpsilonSchedule{1.0, 0.2}, b);
    REQUIRE(ra.q.a == rb.q.a);
    REQUIRE(ra.q.b == rb.q.b);
    REQUIRE(ra.q.visits == rb.q.visits);
}

TEST_CASE("positive reward scaling leaves the greedy policy unchanged") {
    BanditEnv env = toy_env();
    Rng a(9);
    const TrainPolicyResult base = train_policy(env, 20000, EpsilonSchedule{1.0, 1.0}, a);
    BanditEnv scaled = toy_env();
    const auto inner = scaled.evaluate;
    scaled.evaluate = [inner](int s, int act, std::uint64_t seed) {
        return 7.5 * inner(s, act, seed);
    };
    Rng b(9);
    const TrainPolicyResult big = train_policy(scaled, 20000, EpsilonSchedule{1.0, 1.0}, b);
    CHECK(greedy_policy(base.q) == greedy_policy(big.q));
}

TEST_CASE("value divergence aborts training") {
    BanditEnv env = toy_env();
    env.evaluate = [](int, int, std::uint64_t) { return 1e9; };
    Rng rng(1);
    TrainPolicyOptions opts;
    opts.reward_bound = 1e6;
    CHECK_THROWS_WITH(train_policy(env, 100, EpsilonSchedule{1.0, 1.0}, rng, opts),
                      Catch::Matchers::ContainsSubstring("diverged"));
}
