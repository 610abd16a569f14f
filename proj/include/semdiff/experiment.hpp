#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "semdiff/config.hpp"
#include "semdiff/csv.hpp"
#include "semdiff/diffusion.hpp"
#include "semdiff/metrics.hpp"
#include "semdiff/scheduler.hpp"
#include "semdiff/transceiver.hpp"

namespace semdiff {

/// A config resolved into runnable pieces.
struct Experiment {
    ExperimentConfig cfg;
    VarianceSchedule schedule;
    ScenarioGrid grid;
    ActionMenu menu;
};

inline Experiment assemble_experiment(ExperimentConfig cfg) {
    cfg.source.validate();
    if (cfg.auto_signal_power) cfg.channel.signal_power = analytic_signal_power(cfg.source);
    if (cfg.auto_clip_range) cfg.channel.clip_range = default_clip_range(cfg.source);
    Experiment ex;
    ex.schedule = build_variance_schedule(cfg.steps, cfg.beta_start, cfg.beta_end,
                                          cfg.schedule_kind, cfg.sigma_bar_zero);
    if (cfg.total_steps > ex.schedule.T)
        throw ConfigError("pipeline total_steps exceeds schedule steps");
    if (cfg.t_edge + cfg.t_local != cfg.total_steps)
        throw ConfigError("pipeline t_edge + t_local must equal total_steps");
    ex.grid.snr_db = cfg.grid_snr_db;
    ex.grid.rho_edge = cfg.grid_rho_edge;
    ex.grid.rho_local = cfg.grid_rho_local;
    ex.grid.c_edge = cfg.c_edge;
    ex.grid.c_local = cfg.c_local;
    ex.grid.bandwidth_hz = cfg.channel.bandwidth_hz;
    ex.grid.fixed_rate_bps = cfg.link_rate_bps;
    ex.menu = ActionMenu::from_edge_steps(cfg.actions_t_edge, cfg.total_steps);
    ex.cfg = std::move(cfg);
    return ex;
}

inline PipelineConfig pipeline_for(const Experiment& ex, Variant v) {
    PipelineConfig pc;
    pc.variant = v;
    pc.total_steps = ex.cfg.total_steps;
    switch (v) {
        case Variant::ROUTE:
            pc.t_edge = ex.cfg.t_edge;
            pc.t_local = ex.cfg.t_local;
            break;
        case Variant::NonFineTuning:
        case Variant::EdgeAIGC:
            pc.t_edge = ex.cfg.total_steps;
            pc.t_local = 0;
            break;
        case Variant::LocalAIGC:
            pc.t_edge = 0;
            pc.t_local = ex.cfg.total_steps;
            break;
    }
    pc.channel = ex.cfg.channel;
    pc.timeout_s = ex.cfg.timeout_s;
    pc.expansion_factor = ex.cfg.expansion_factor;
    pc.gamma_shape = ex.cfg.gamma_shape;
    pc.form = ex.cfg.form;
    return pc;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct ValidationReport {
    bool ok = true;
    std::vector<std::string> lines;

    void pass(const std::string& what) { lines.push_back("[ok]   " + what); }
    void fail(const std::string& what, const std::string& why) {
        ok = false;
        lines.push_back("[FAIL] " + what + ": " + why);
    }
    std::string to_string() const {
        std::string out;
        for (const auto& l : lines) out += l + "\n";
        return out;
    }
};

/// Run all schedule/source invariants plus a randomized consistency suite for
/// the posterior derivation (quadrature vs closed form vs noise form).
inline ValidationReport validate_experiment(const Experiment& ex) {
    ValidationReport rep;
    const auto guard = [&rep](const std::string& what, const auto& fn) {
        try {
            fn();
            rep.pass(what);
        } catch (const std::exception& err) {
            rep.fail(what, err.what());
        }
    };

    guard("schedule invariants (" + std::string(to_string(ex.schedule.kind)) +
              ", T=" + std::to_string(ex.schedule.T) + ")",
          [&] { ex.schedule.validate(); });
    guard("source invariants (" + std::to_string(ex.cfg.source.components.size()) +
              " components, d=" + std::to_string(ex.cfg.source.dim) + ")",
          [&] { ex.cfg.source.validate(); });
    guard("channel config", [&] { ex.cfg.channel.validate(); });

    for (double snr : ex.cfg.grid_snr_db) {
        guard("channel schedule feasibility at snr " + format_g(snr, 6) + " dB", [&] {
            const double sigma = snr_to_noise_std(ex.cfg.channel.signal_power, snr);
            for (int tbar : {1, std::max(1, ex.cfg.total_steps / 2), ex.cfg.total_steps}) {
                const auto cs = build_channel_schedule(tbar, sigma, ex.schedule, ex.cfg.gamma_shape);
                cs.validate();
            }
        });
    }

    for (Variant v : ex.cfg.variants)
        guard(std::string("pipeline wiring for ") + to_string(v),
              [&] { pipeline_for(ex, v).validate(); });

    // Posterior-derivation consistency suite over randomized schedules.
    guard("posterior closed form vs scalar quadrature (40 cases, tol 1e-6)", [&] {
        Rng rng(20240817);
        for (int k = 0; k < 40; ++k) {
            const int T = 2 + static_cast<int>(rng.below(10));
            std::vector<double> betas(static_cast<std::size_t>(T));
            double lo = 0.01 + 0.02 * rng.uniform();
            double hi = lo + 0.2 + 0.3 * rng.uniform();
            for (int t = 0; t < T; ++t)
                betas[static_cast<std::size_t>(t)] =
                    lo + (hi - lo) * (T == 1 ? 0.0 : static_cast<double>(t) / (T - 1));
            const auto vs = schedule_from_betas(betas);
            const double sigma = 1.5 * rng.uniform();
            const auto cs = build_channel_schedule(T, sigma, vs, GammaShape::linear);
            const int t = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T - 1)));
            const double z_t = 3.0 * rng.normal();
            const double z0 = 2.0 * rng.normal();
            Component fixed;
            fixed.mean = {z0};
            fixed.std = 0.0;
            const double quad = posterior_mean_bruteforce(cs, z_t, fixed, t);
            const double closed = posterior_mean_given_start({z_t}, {z0}, t, cs)[0];
            if (std::abs(quad - closed) > 1e-6)
                throw std::runtime_error("mismatch " + format_g17(quad - closed) + " at case " +
                                         std::to_string(k));
        }
    });

    guard("noise-form posterior matches the z0 substitution (200 cases, tol 1e-10)", [&] {
        Rng rng(715);
        for (int k = 0; k < 200; ++k) {
            const int T = 2 + static_cast<int>(rng.below(16));
            const auto vs = build_variance_schedule(T, 0.01 + 0.01 * rng.uniform(),
                                                    0.3 + 0.3 * rng.uniform(), BetaKind::linear);
            const auto cs = build_channel_schedule(T, 2.0 * rng.uniform(), vs, GammaShape::linear);
            const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
            const Latent z_t{4.0 * rng.normal()};
            const Latent eps{rng.normal()};
            const double u = channel_residual_scale(cs, t, ex.cfg.form);
            const double ab = cs.base.alpha_bar_at(t);
            const Latent z0{(z_t[0] - u * eps[0]) / std::sqrt(ab)};
            const double via_start = posterior_mean_given_start(z_t, z0, t, cs)[0];
            const double via_noise = posterior_mean_from_noise(z_t, eps, t, cs, ex.cfg.form)[0];
            if (std::abs(via_start - via_noise) > 1e-10)
                throw std::runtime_error("mismatch " + format_g17(via_start - via_noise) + " at case " +
                                         std::to_string(k));
        }
    });

    guard("zero-channel reduction of the modified coefficient (200 cases, tol 1e-12)", [&] {
        Rng rng(99);
        for (int k = 0; k < 200; ++k) {
            const int T = 2 + static_cast<int>(rng.below(16));
            const auto vs = build_variance_schedule(T, 0.005 + 0.01 * rng.uniform(),
                                                    0.3 + 0.4 * rng.uniform(), BetaKind::linear);
            const auto cs = build_channel_schedule(T, 0.0, vs, GammaShape::linear);
            const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
            const double diff = std::abs(modified_coefficient(cs, t) - standard_coefficient(vs, t));
            if (diff > 1e-12)
                throw std::runtime_error("reduction gap " + format_g17(diff));
        }
    });

    return rep;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

enum class SweepAxis { snr, compute };

inline const char* to_string(SweepAxis a) { return a == SweepAxis::snr ? "snr" : "compute"; }

struct SweepTables {
    std::string transcripts_csv;
    std::string aggregate_csv;
};

namespace detail {

struct RunSpec {
    int scenario_index = 0;
    ResourceScenario scenario;
    Variant variant = Variant::ROUTE;
    int seed_index = 0;
};

inline std::vector<std::string> transcript_row(const TranscriptRecord& tr) {
    return {to_string(tr.variant),
            CsvWriter::field(tr.label),
            CsvWriter::field(tr.snr_db),
            CsvWriter::field(tr.rho_edge),
            CsvWriter::field(tr.rho_local),
            CsvWriter::field(tr.t_edge),
            CsvWriter::field(tr.t_local),
            CsvWriter::field(tr.o_bits),
            CsvWriter::field(tr.l1_s),
            CsvWriter::field(tr.l2_s),
            CsvWriter::field(tr.l3_s),
            CsvWriter::field(tr.l_s),
            CsvWriter::field(tr.failed),
            CsvWriter::field(tr.mse),
            CsvWriter::field(tr.component_acc),
            CsvWriter::field(tr.energy_dist),
            CsvWriter::field(tr.seed)};
}

inline const std::vector<std::string>& transcript_header() {
    static const std::vector<std::string> h{
        "variant", "label", "snr_db", "rho_edge", "rho_local", "t_edge", "t_local", "O_bits",
        "L1_s",    "L2_s",  "L3_s",   "L_s",      "failed",    "mse",    "component_acc",
        "energy_dist", "seed"};
    return h;
}

} // namespace detail

/// Scenario list for one sweep axis. The snr axis holds compute at full
/// availability; the compute axis holds the SNR at the configured nominal.
inline std::vector<ResourceScenario> sweep_scenarios(const Experiment& ex, SweepAxis axis) {
    std::vector<ResourceScenario> out;
    if (axis == SweepAxis::snr) {
        for (double snr : ex.cfg.grid_snr_db) {
            ResourceScenario sc;
            sc.snr_db = snr;
            sc.rho_edge = 1.0;
            sc.rho_local = 1.0;
            sc.c_edge = ex.cfg.c_edge;
            sc.c_local = ex.cfg.c_local;
            sc.bandwidth_hz = ex.cfg.channel.bandwidth_hz;
            sc.fixed_rate_bps = ex.cfg.link_rate_bps;
            out.push_back(sc);
        }
    } else {
        for (double re : ex.cfg.grid_rho_edge) {
            for (double rl : ex.cfg.grid_rho_local) {
                ResourceScenario sc;
                sc.snr_db = ex.cfg.channel.snr_db;
                sc.rho_edge = re;
                sc.rho_local = rl;
                sc.c_edge = ex.cfg.c_edge;
                sc.c_local = ex.cfg.c_local;
                sc.bandwidth_hz = ex.cfg.channel.bandwidth_hz;
                sc.fixed_rate_bps = ex.cfg.link_rate_bps;
                out.push_back(sc);
            }
        }
    }
    return out;
}

/// Run the full variant x scenario x seed grid and render both CSVs.
///
/// Deterministic: every run's rng seed is mix(master_seed, scenario index,
/// seed index); rows are written in grid order regardless of the thread
/// count, so reruns produce byte-identical files.
inline SweepTables run_sweep_tables(const Experiment& ex, SweepAxis axis, int jobs = 1) {
    const std::vector<ResourceScenario> scenarios = sweep_scenarios(ex, axis);
    const auto labels = ex.cfg.source.labels();

    // Reference draws per label for the energy metric, derived from the
    // master seed (stream ids 0xF1D0 + label index).
    std::vector<FidelityContext> fid;
    fid.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Rng ref_rng(mix_seed(ex.cfg.master_seed, 0xF1D0ULL + i));
        fid.push_back(make_fidelity_context(ex.cfg.source, Conditioning{labels[i]},
                                            ex.cfg.reference_draws, ref_rng));
    }

    std::vector<detail::RunSpec> specs;
    for (std::size_t si = 0; si < scenarios.size(); ++si)
        for (Variant v : ex.cfg.variants)
            for (int k = 0; k < ex.cfg.seeds; ++k)
                specs.push_back({static_cast<int>(si), scenarios[si], v, k});

    std::vector<TranscriptRecord> results(specs.size());
    std::vector<std::string> errors(specs.size());
    const int n_threads = std::max(1, jobs);
    const auto worker = [&](int tid) {
        PipelineContext ctx =
            make_pipeline_context(ex.cfg.source, ex.schedule, ex.cfg.gamma_shape);
        for (std::size_t i = static_cast<std::size_t>(tid); i < specs.size();
             i += static_cast<std::size_t>(n_threads)) {
            const detail::RunSpec& rs = specs[i];
            const int label = labels[static_cast<std::size_t>(rs.seed_index) % labels.size()];
            ctx.fid = &fid[static_cast<std::size_t>(rs.seed_index) % labels.size()];
            const std::uint64_t seed =
                mix_seed(ex.cfg.master_seed, static_cast<std::uint64_t>(rs.scenario_index),
                         static_cast<std::uint64_t>(rs.seed_index));
            try {
                results[i] = run_pipeline(pipeline_for(ex, rs.variant), Conditioning{label},
                                          rs.scenario, ctx, seed);
            } catch (const std::exception& err) {
                // Partial failure: record the run as failed and keep sweeping.
                errors[i] = err.what();
                TranscriptRecord tr;
                tr.variant = rs.variant;
                tr.label = label;
                tr.snr_db = rs.scenario.snr_db;
                tr.rho_edge = rs.scenario.rho_edge;
                tr.rho_local = rs.scenario.rho_local;
                tr.failed = true;
                tr.mse = std::numeric_limits<double>::quiet_NaN();
                tr.component_acc = std::numeric_limits<double>::quiet_NaN();
                tr.seed = seed;
                results[i] = tr;
            }
        }
    };
    if (n_threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
    }

    CsvWriter transcripts(detail::transcript_header());
    for (const auto& tr : results) transcripts.add_row(detail::transcript_row(tr));

    // Aggregate per (scenario point, variant) in grid order.
    // Welford accumulators: exact zeros for constant series.
    struct Welford {
        int n = 0;
        double mean = 0.0, m2 = 0.0;
        void add(double x) {
            ++n;
            const double d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        double std() const { return n > 1 ? std::sqrt(m2 / (n - 1)) : 0.0; }
    };
    struct Agg {
        int n = 0, failed = 0;
        Welford l, mse;
        double acc = 0, energy = 0;
    };
    std::vector<std::pair<std::string, Agg>> groups;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const TranscriptRecord& tr = results[i];
        const std::string key = CsvWriter::field(tr.snr_db) + "|" + CsvWriter::field(tr.rho_edge) +
                                "|" + CsvWriter::field(tr.rho_local) + "|" + to_string(tr.variant);
        auto it = index.find(key);
        if (it == index.end()) {
            index.emplace(key, groups.size());
            groups.emplace_back(key, Agg{});
            it = index.find(key);
        }
        Agg& g = groups[it->second].second;
        g.n += 1;
        g.failed += tr.failed ? 1 : 0;
        if (std::isfinite(tr.l_s)) g.l.add(tr.l_s);
        if (std::isfinite(tr.mse)) g.mse.add(tr.mse);
        if (std::isfinite(tr.component_acc)) g.acc += tr.component_acc;
        if (std::isfinite(tr.energy_dist)) g.energy += tr.energy_dist;
    }
    CsvWriter aggregate({"snr_db", "rho_edge", "rho_local", "variant", "n", "mean_L_s", "std_L_s",
                         "mean_mse", "std_mse", "mean_component_acc", "mean_energy_dist",
                         "fail_rate"});
    for (const auto& [key, g] : groups) {
        std::vector<std::string> cells;
        std::istringstream ks(key);
        std::string part;
        while (std::getline(ks, part, '|')) cells.push_back(part);
        const double n = static_cast<double>(g.n);
        cells.push_back(CsvWriter::field(g.n));
        cells.push_back(CsvWriter::field(g.l.mean));
        cells.push_back(CsvWriter::field(g.l.std()));
        cells.push_back(CsvWriter::field(g.mse.mean));
        cells.push_back(CsvWriter::field(g.mse.std()));
        cells.push_back(CsvWriter::field(g.acc / n));
        cells.push_back(CsvWriter::field(g.energy / n));
        cells.push_back(CsvWriter::field(static_cast<double>(g.failed) / n));
        aggregate.add_row(cells);
    }

    bool any_error = false;
    for (const auto& e : errors)
        if (!e.empty()) any_error = true;
    if (any_error) {
        // Errors are recorded in the transcripts as failed rows; nothing to do.
    }
    return {transcripts.to_string(), aggregate.to_string()};
}

struct SweepPaths {
    std::string transcripts;
    std::string aggregate;
};

inline SweepPaths run_sweep(const Experiment& ex, SweepAxis axis, const std::string& out_dir,
                            int jobs = 1) {
    const SweepTables tables = run_sweep_tables(ex, axis, jobs);
    std::filesystem::create_directories(out_dir);
    SweepPaths paths;
    paths.transcripts =
        (std::filesystem::path(out_dir) / ("transcripts_" + std::string(to_string(axis)) + ".csv"))
            .string();
    paths.aggregate =
        (std::filesystem::path(out_dir) / ("aggregate_" + std::string(to_string(axis)) + ".csv"))
            .string();
    std::ofstream t(paths.transcripts, std::ios::binary);
    if (!t) throw std::runtime_error("run_sweep: cannot write " + paths.transcripts);
    t << tables.transcripts_csv;
    std::ofstream a(paths.aggregate, std::ios::binary);
    if (!a) throw std::runtime_error("run_sweep: cannot write " + paths.aggregate);
    a << tables.aggregate_csv;
    return paths;
}

/// Rebuild the aggregate table from a transcripts CSV (the report command).
inline std::string aggregate_from_transcripts(const CsvTable& t) {
    const int c_variant = t.column("variant");
    const int c_snr = t.column("snr_db");
    const int c_re = t.column("rho_edge");
    const int c_rl = t.column("rho_local");
    const int c_l = t.column("L_s");
    const int c_failed = t.column("failed");
    const int c_mse = t.column("mse");
    const int c_acc = t.column("component_acc");
    const int c_energy = t.column("energy_dist");
    // Welford accumulators: exact zeros for constant series.
    struct Welford {
        int n = 0;
        double mean = 0.0, m2 = 0.0;
        void add(double x) {
            ++n;
            const double d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        double std() const { return n > 1 ? std::sqrt(m2 / (n - 1)) : 0.0; }
    };
    struct Agg {
        int n = 0, failed = 0;
        Welford l, mse;
        double acc = 0, energy = 0;
    };
    std::vector<std::pair<std::string, Agg>> groups;
    std::map<std::string, std::size_t> index;
    const auto num = [](const std::string& s) {
        return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::strtod(s.c_str(), nullptr);
    };
    for (const auto& row : t.rows) {
        const std::string key = row[static_cast<std::size_t>(c_snr)] + "|" +
                                row[static_cast<std::size_t>(c_re)] + "|" +
                                row[static_cast<std::size_t>(c_rl)] + "|" +
                                row[static_cast<std::size_t>(c_variant)];
        auto it = index.find(key);
        if (it == index.end()) {
            index.emplace(key, groups.size());
            groups.emplace_back(key, Agg{});
            it = index.find(key);
        }
        Agg& g = groups[it->second].second;
        const double l = num(row[static_cast<std::size_t>(c_l)]);
        const double mse = num(row[static_cast<std::size_t>(c_mse)]);
        g.n += 1;
        g.failed += row[static_cast<std::size_t>(c_failed)] == "1" ? 1 : 0;
        if (std::isfinite(l)) g.l.add(l);
        if (std::isfinite(mse)) g.mse.add(mse);
        const double acc = num(row[static_cast<std::size_t>(c_acc)]);
        if (std::isfinite(acc)) g.acc += acc;
        const double en = num(row[static_cast<std::size_t>(c_energy)]);
        if (std::isfinite(en)) g.energy += en;
    }
    CsvWriter aggregate({"snr_db", "rho_edge", "rho_local", "variant", "n", "mean_L_s", "std_L_s",
                         "mean_mse", "std_mse", "mean_component_acc", "mean_energy_dist",
                         "fail_rate"});
    for (const auto& [key, g] : groups) {
        std::vector<std::string> cells;
        std::istringstream ks(key);
        std::string part;
        while (std::getline(ks, part, '|')) cells.push_back(part);
        const double n = static_cast<double>(g.n);
        cells.push_back(CsvWriter::field(g.n));
        cells.push_back(CsvWriter::field(g.l.mean));
        cells.push_back(CsvWriter::field(g.l.std()));
        cells.push_back(CsvWriter::field(g.mse.mean));
        cells.push_back(CsvWriter::field(g.mse.std()));
        cells.push_back(CsvWriter::field(g.acc / n));
        cells.push_back(CsvWriter::field(g.energy / n));
        cells.push_back(CsvWriter::field(static_cast<double>(g.failed) / n));
        aggregate.add_row(cells);
    }
    return aggregate.to_string();
}

// ---------------------------------------------------------------------------
// policy training
// ---------------------------------------------------------------------------

/// Reward-evaluating environment over the configured grid and action menu.
/// Conditioning labels cycle with the rollout seed.
struct PolicyEnvironment {
    const Experiment* ex = nullptr;
    PipelineContext ctx;
    std::vector<int> labels;

    double evaluate(const ScenarioState& s, const Action& a, std::uint64_t seed) const {
        PipelineConfig pc = pipeline_for(*ex, Variant::ROUTE);
        pc.t_edge = a.t_edge;
        pc.t_local = a.t_local;
        const int label = labels[static_cast<std::size_t>(seed % labels.size())];
        const TranscriptRecord tr =
            run_pipeline(pc, Conditioning{label}, ex->grid.scenario(s), ctx, seed);
        return reward(tr, ex->cfg.lambda_q, ex->cfg.penalty);
    }

    BanditEnv bandit() const {
        BanditEnv env;
        env.n_states = ex->grid.n_states();
        env.n_actions = static_cast<int>(ex->menu.actions.size());
        const auto* self = this;
        env.sample_state = [n = env.n_states](Rng& rng) {
            return static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        };
        env.evaluate = [self](int state, int action, std::uint64_t seed) {
            return self->evaluate(self->ex->grid.state_at(state),
                                  self->ex->menu.actions[static_cast<std::size_t>(action)], seed);
        };
        return env;
    }
};

inline PolicyEnvironment make_policy_environment(const Experiment& ex) {
    PolicyEnvironment env;
    env.ex = &ex;
    env.ctx = make_pipeline_context(ex.cfg.source, ex.schedule, ex.cfg.gamma_shape);
    env.labels = ex.cfg.source.labels();
    return env;
}

struct PolicyArtifacts {
    QTable q;
    std::string qtable_csv;
    std::string report_csv;
    std::string log_csv;
    double worst_rel_gap = 0.0;  // learned vs oracle mean reward, relative
    int states_matching_oracle = 0;
    int n_states = 0;
};

inline PolicyArtifacts run_train_policy(const Experiment& ex) {
    const PolicyEnvironment env = make_policy_environment(ex);
    Rng rng(mix_seed(ex.cfg.master_seed, 0x9011CauLL));
    TrainPolicyOptions opts;
    opts.log_every = std::max(1, ex.cfg.episodes / 20);
    TrainPolicyResult trained =
        train_policy(env.bandit(), ex.cfg.episodes,
                     EpsilonSchedule{ex.cfg.epsilon_start, ex.cfg.epsilon_end}, rng, opts);

    PolicyArtifacts art;
    art.n_states = ex.grid.n_states();

    CsvWriter qcsv({"state", "snr_db", "rho_edge", "rho_local", "t_edge", "t_local", "value_a",
                    "value_b", "visits"});
    for (int s = 0; s < ex.grid.n_states(); ++s) {
        const ScenarioState st = ex.grid.state_at(s);
        const ResourceScenario sc = ex.grid.scenario(st);
        for (std::size_t a = 0; a < ex.menu.actions.size(); ++a) {
            const std::size_t idx = trained.q.at(s, static_cast<int>(a));
            qcsv.add_row({CsvWriter::field(s), CsvWriter::field(sc.snr_db),
                          CsvWriter::field(sc.rho_edge), CsvWriter::field(sc.rho_local),
                          CsvWriter::field(ex.menu.actions[a].t_edge),
                          CsvWriter::field(ex.menu.actions[a].t_local),
                          CsvWriter::field(trained.q.a[idx]), CsvWriter::field(trained.q.b[idx]),
                          CsvWriter::field(trained.q.visits[idx])});
        }
    }

    const ActionEvaluator evaluator = [&env](const ScenarioState& s, const Action& a,
                                             std::uint64_t seed) {
        return env.evaluate(s, a, seed);
    };

    CsvWriter report({"state", "snr_db", "rho_edge", "rho_local", "learned_t_edge",
                      "learned_t_local", "learned_mean_reward", "oracle_t_edge", "oracle_t_local",
                      "oracle_mean_reward", "rel_gap", "argmax_match"});
    for (int s = 0; s < ex.grid.n_states(); ++s) {
        const ScenarioState st = ex.grid.state_at(s);
        const ResourceScenario sc = ex.grid.scenario(st);
        const Action learned = ex.menu.actions[static_cast<std::size_t>(trained.q.greedy(s))];
        const Action oracle = grid_search_optimal(
            st, ex.menu, evaluator, ex.cfg.grid_search_evals,
            mix_seed(ex.cfg.master_seed, 0x6B1DULL, static_cast<std::uint64_t>(s)));
        // Paired evaluation over a common seed set.
        double learned_mean = 0.0, oracle_mean = 0.0;
        for (int k = 0; k < ex.cfg.policy_eval_runs; ++k) {
            const std::uint64_t seed =
                mix_seed(ex.cfg.master_seed, 0xEBA1ULL + static_cast<std::uint64_t>(s),
                         static_cast<std::uint64_t>(k));
            learned_mean += env.evaluate(st, learned, seed);
            oracle_mean += env.evaluate(st, oracle, seed);
        }
        learned_mean /= ex.cfg.policy_eval_runs;
        oracle_mean /= ex.cfg.policy_eval_runs;
        const double gap = (oracle_mean - learned_mean) / std::max(1e-12, std::abs(oracle_mean));
        art.worst_rel_gap = std::max(art.worst_rel_gap, gap);
        const bool match = learned.t_edge == oracle.t_edge;
        if (match) ++art.states_matching_oracle;
        report.add_row({CsvWriter::field(s), CsvWriter::field(sc.snr_db),
                        CsvWriter::field(sc.rho_edge), CsvWriter::field(sc.rho_local),
                        CsvWriter::field(learned.t_edge), CsvWriter::field(learned.t_local),
                        CsvWriter::field(learned_mean), CsvWriter::field(oracle.t_edge),
                        CsvWriter::field(oracle.t_local), CsvWriter::field(oracle_mean),
                        CsvWriter::field(gap), CsvWriter::field(match)});
    }

    CsvWriter log({"episode", "epsilon", "mean_abs_q"});
    for (const auto& row : trained.log)
        log.add_row({CsvWriter::field(row.episode), CsvWriter::field(row.epsilon),
                     CsvWriter::field(row.mean_abs_q)});

    art.q = std::move(trained.q);
    art.qtable_csv = qcsv.to_string();
    art.report_csv = report.to_string();
    art.log_csv = log.to_string();
    return art;
}

// ---------------------------------------------------------------------------
// denoiser training
// ---------------------------------------------------------------------------

struct DenoiserArtifacts {
    TinyDenoiser model;
    std::vector<std::uint8_t> blob;
    std::string curve_csv;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

inline DenoiserArtifacts run_train_denoiser(const Experiment& ex) {
    const double sigma = ex.cfg.trainer_mode == NoiseMode::channel
                             ? snr_to_noise_std(ex.cfg.channel.signal_power, ex.cfg.channel.snr_db)
                             : 0.0;
    const ChannelNoiseSchedule cs =
        build_channel_schedule(ex.cfg.total_steps, sigma, ex.schedule, ex.cfg.gamma_shape);
    Rng rng(mix_seed(ex.cfg.master_seed, 0xDE201ULL));
    TrainOptions opts = ex.cfg.trainer;
    opts.form = ex.cfg.form;
    const TrainResult res =
        train_tiny_denoiser(ex.cfg.source, cs, ex.cfg.trainer_mode, ex.cfg.trainer_epochs, rng, opts);
    DenoiserArtifacts art;
    art.model = res.model;
    art.blob = serialize_denoiser(res.model, ex.schedule.digest());
    CsvWriter curve({"epoch", "loss"});
    for (const auto& [epoch, loss] : res.curve)
        curve.add_row({CsvWriter::field(epoch), CsvWriter::field(loss)});
    art.curve_csv = curve.to_string();
    art.initial_loss = res.curve.front().second;
    art.final_loss = res.curve.back().second;
    return art;
}

} // namespace semdiff
