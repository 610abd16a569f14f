#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdiff/metrics.hpp"
#include "semdiff/rng.hpp"
#include "semdiff/transceiver.hpp"

namespace semdiff {

/// Discretized (SNR, edge compute, local compute) situation.
struct ScenarioState {
    int snr_bucket = 0;
    int rho_edge_bucket = 0;
    int rho_local_bucket = 0;
};

/// Step-split choice under a fixed total budget.
struct Action {
    int t_edge = 0;
    int t_local = 0;
};

/// The discrete bucket grid the policy is trained over.
struct ScenarioGrid {
    std::vector<double> snr_db;
    std::vector<double> rho_edge;
    std::vector<double> rho_local;
    double c_edge = 0.4;
    double c_local = 1.6;
    double bandwidth_hz = 2e7;
    double fixed_rate_bps = 0.0;

    int n_states() const {
        return static_cast<int>(snr_db.size() * rho_edge.size() * rho_local.size());
    }
    int state_index(const ScenarioState& s) const {
        check(s);
        return (s.snr_bucket * static_cast<int>(rho_edge.size()) + s.rho_edge_bucket) *
                   static_cast<int>(rho_local.size()) +
               s.rho_local_bucket;
    }
    ScenarioState state_at(int index) const {
        if (index < 0 || index >= n_states()) throw std::out_of_range("ScenarioGrid: state index");
        ScenarioState s;
        s.rho_local_bucket = index % static_cast<int>(rho_local.size());
        index /= static_cast<int>(rho_local.size());
        s.rho_edge_bucket = index % static_cast<int>(rho_edge.size());
        s.snr_bucket = index / static_cast<int>(rho_edge.size());
        return s;
    }
    ResourceScenario scenario(const ScenarioState& s) const {
        check(s);
        ResourceScenario sc;
        sc.snr_db = snr_db[static_cast<std::size_t>(s.snr_bucket)];
        sc.rho_edge = rho_edge[static_cast<std::size_t>(s.rho_edge_bucket)];
        sc.rho_local = rho_local[static_cast<std::size_t>(s.rho_local_bucket)];
        sc.c_edge = c_edge;
        sc.c_local = c_local;
        sc.bandwidth_hz = bandwidth_hz;
        sc.fixed_rate_bps = fixed_rate_bps;
        return sc;
    }

private:
    void check(const ScenarioState& s) const {
        if (s.snr_bucket < 0 || s.snr_bucket >= static_cast<int>(snr_db.size()) ||
            s.rho_edge_bucket < 0 || s.rho_edge_bucket >= static_cast<int>(rho_edge.size()) ||
            s.rho_local_bucket < 0 || s.rho_local_bucket >= static_cast<int>(rho_local.size()))
            throw std::out_of_range("ScenarioGrid: bucket index outside grid");
    }
};

/// Discrete step-split menu with a shared budget.
struct ActionMenu {
    int total_steps = 20;
    std::vector<Action> actions;

    static ActionMenu from_edge_steps(const std::vector<int>& t_edges, int total) {
        ActionMenu m;
        m.total_steps = total;
        for (int te : t_edges) {
            if (te < 0 || te > total)
                throw std::invalid_argument("ActionMenu: t_edge outside [0, total]");
            m.actions.push_back({te, total - te});
        }
        if (m.actions.empty()) throw std::invalid_argument("ActionMenu: empty menu");
        return m;
    }
};

/// Scalar objective for one transcript: negative latency, a weighted fidelity
/// penalty, and a large constant penalty for timed-out runs.
inline double reward(const TranscriptRecord& tr, double lambda_q, double penalty = 1000.0) {
    double r = -tr.l_s - lambda_q * tr.mse;
    if (tr.failed) r -= penalty;
    return r;
}

/// Evaluate action `a` in state `s` once, using the given rollout seed.
using ActionEvaluator = std::function<double(const ScenarioState&, const Action&, std::uint64_t)>;

/// Exhaustive-search oracle: argmax of the mean reward over n_eval rollouts
/// per action (seeds paired across actions); ties break toward larger t_edge.
inline Action grid_search_optimal(const ScenarioState& s, const ActionMenu& menu,
                                  const ActionEvaluator& evaluate, int n_eval,
                                  std::uint64_t seed0 = 0) {
    if (n_eval < 1) throw std::invalid_argument("grid_search_optimal: n_eval must be >= 1");
    double best = -std::numeric_limits<double>::infinity();
    Action best_action = menu.actions.front();
    for (const Action& a : menu.actions) {
        double mean = 0.0;
        for (int k = 0; k < n_eval; ++k)
            mean += evaluate(s, a, mix_seed(seed0, static_cast<std::uint64_t>(k)));
        mean /= static_cast<double>(n_eval);
        if (mean > best || (mean == best && a.t_edge > best_action.t_edge)) {
            best = mean;
            best_action = a;
        }
    }
    return best_action;
}

/// Double-estimator value tables over states x actions.
struct QTable {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> a;  // estimator A
    std::vector<double> b;  // estimator B
    std::vector<int> visits;

    static QTable zeros(int n_states, int n_actions) {
        QTable q;
        q.n_states = n_states;
        q.n_actions = n_actions;
        q.a.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
        q.b.assign(q.a.size(), 0.0);
        q.visits.assign(q.a.size(), 0);
        return q;
    }
    std::size_t at(int s, int act) const {
        if (s < 0 || s >= n_states || act < 0 || act >= n_actions)
            throw std::out_of_range("QTable: index outside table");
        return static_cast<std::size_t>(s) * n_actions + act;
    }
    double value(int s, int act) const { return 0.5 * (a[at(s, act)] + b[at(s, act)]); }
    int greedy(int s) const {
        int best = 0;
        for (int act = 1; act < n_actions; ++act)
            if (value(s, act) > value(s, best)) best = act;
        return best;
    }
    int argmax_of(const std::vector<double>& table, int s) const {
        int best = 0;
        for (int act = 1; act < n_actions; ++act)
            if (table[at(s, act)] > table[at(s, best)]) best = act;
        return best;
    }
};

/// Standard double Q-learning update. With probability 1/2 estimator A is
/// updated toward r + discount * B[s', argmax_a A[s', a]], else symmetrically.
/// A terminal transition (no s_next) drops the bootstrap term. Consumes one
/// uniform draw.
inline void q_update(QTable& q, int s, int act, double r, std::optional<int> s_next,
                     double step_size, double discount, Rng& rng) {
    if (step_size < 0.0 || step_size > 1.0)
        throw std::invalid_argument("q_update: step_size outside [0,1]");
    if (step_size == 0.0) return;  // degenerate: tables unchanged
    if (discount < 0.0 || discount > 1.0)
        throw std::invalid_argument("q_update: discount outside [0,1]");
    const bool update_a = rng.uniform() < 0.5;
    std::vector<double>& primary = update_a ? q.a : q.b;
    const std::vector<double>& other = update_a ? q.b : q.a;
    double target = r;
    if (s_next.has_value() && discount > 0.0) {
        const int best = q.argmax_of(primary, *s_next);
        target += discount * other[q.at(*s_next, best)];
    }
    const std::size_t idx = q.at(s, act);
    primary[idx] += step_size * (target - primary[idx]);
    q.visits[idx] += 1;
}

/// Linear epsilon ramp over the episode count.
struct EpsilonSchedule {
    double start = 1.0;
    double end = 1.0;
    double at(int episode, int episodes) const {
        if (episodes <= 1) return end;
        const double u = static_cast<double>(episode) / static_cast<double>(episodes - 1);
        return start + (end - start) * u;
    }
};

/// Contextual-bandit environment: each episode samples a state, takes one
/// action, receives a terminal reward.
struct BanditEnv {
    int n_states = 0;
    int n_actions = 0;
    std::function<int(Rng&)> sample_state;
    std::function<double(int state, int action, std::uint64_t seed)> evaluate;
};

struct TrainPolicyOptions {
    double discount = 0.0;       // episodes are single-step
    double fixed_step = 0.0;     // 0: use 1/n visit-count steps
    double reward_bound = 1e6;   // divergence guard on |Q|
    int log_every = 0;           // 0: no intermediate log rows
};

struct PolicyTrainLog {
    int episode = 0;
    double epsilon = 0.0;
    double mean_abs_q = 0.0;
};

struct TrainPolicyResult {
    QTable q;
    std::vector<PolicyTrainLog> log;
};

/// Epsilon-greedy double Q-learning over the bandit environment. Step sizes
/// default to 1/n per (state, action, estimator) visit so values converge to
/// mean rewards. Deterministic given the rng.
inline TrainPolicyResult train_policy(const BanditEnv& env, int episodes,
                                      EpsilonSchedule epsilon, Rng& rng,
                                      const TrainPolicyOptions& opts = {}) {
    if (episodes < 1) throw std::invalid_argument("train_policy: episodes must be >= 1");
    if (env.n_states < 1 || env.n_actions < 1)
        throw std::invalid_argument("train_policy: empty environment");
    TrainPolicyResult res;
    res.q = QTable::zeros(env.n_states, env.n_actions);
    // Separate visit counters per estimator drive the 1/n steps.
    std::vector<int> visits_a(res.q.a.size(), 0), visits_b(res.q.a.size(), 0);
    for (int e = 0; e < episodes; ++e) {
        const int s = env.sample_state(rng);
        const double eps = epsilon.at(e, episodes);
        int act;
        if (rng.uniform() < eps) {
            act = static_cast<int>(rng.below(static_cast<std::uint64_t>(env.n_actions)));
        } else {
            act = res.q.greedy(s);
        }
        const double r = env.evaluate(s, act, mix_seed(rng.seed(), static_cast<std::uint64_t>(e)));
        // Inline double update with per-estimator 1/n step.
        const bool update_a = rng.uniform() < 0.5;
        const std::size_t idx = res.q.at(s, act);
        std::vector<double>& primary = update_a ? res.q.a : res.q.b;
        std::vector<int>& vis = update_a ? visits_a : visits_b;
        vis[idx] += 1;
        const double step = (opts.fixed_step > 0.0) ? opts.fixed_step : 1.0 / vis[idx];
        primary[idx] += step * (r - primary[idx]);  // terminal: no bootstrap
        res.q.visits[idx] += 1;
        if (std::abs(primary[idx]) > opts.reward_bound)
            throw std::runtime_error("train_policy: value diverged at episode " +
                                     std::to_string(e));
        if (opts.log_every > 0 && (e + 1) % opts.log_every == 0) {
            double acc = 0.0;
            for (std::size_t i = 0; i < res.q.a.size(); ++i)
                acc += std::abs(0.5 * (res.q.a[i] + res.q.b[i]));
            res.log.push_back({e + 1, eps, acc / static_cast<double>(res.q.a.size())});
        }
    }
    return res;
}

/// Greedy action per state from the averaged double tables.
inline std::vector<int> greedy_policy(const QTable& q) {
    std::vector<int> out(static_cast<std::size_t>(q.n_states));
    for (int s = 0; s < q.n_states; ++s) out[static_cast<std::size_t>(s)] = q.greedy(s);
    return out;
}

} // namespace semdiff
