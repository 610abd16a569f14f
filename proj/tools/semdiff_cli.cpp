// semdiff command line: experiment harness around the header-only library.
//
// Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "semdiff/semdiff.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
};

std::optional<std::uint64_t> env_u64(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v, &end, 10);
    if (end == v || *end != '\0') return std::nullopt;
    return static_cast<std::uint64_t>(x);
}

/// Precedence: command-line flag > environment variable > config file.
semdiff::Experiment load(const CommonArgs& args) {
    semdiff::ExperimentConfig cfg =
        semdiff::load_experiment_config_file(args.config_path);
    if (const auto env_seed = env_u64("SEMDIFF_SEED")) cfg.master_seed = *env_seed;
    if (args.seed) cfg.master_seed = *args.seed;
    return semdiff::assemble_experiment(std::move(cfg));
}

int resolve_jobs(const CommonArgs& args) {
    if (args.jobs) return std::max(1, *args.jobs);
    if (const auto env_jobs = env_u64("SEMDIFF_JOBS")) return std::max(1, static_cast<int>(*env_jobs));
    return 1;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semdiff: split-diffusion semantic content delivery simulator"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string axis = "snr";
    std::string transcripts_path;

    const auto add_common = [&args](CLI::App* cmd, bool needs_config = true) {
        auto* opt = cmd->add_option("--config", args.config_path, "experiment config file");
        if (needs_config) opt->required();
        cmd->add_option("--out", args.out_dir, "output directory");
        cmd->add_option("--seed", args.seed, "master seed override");
        cmd->add_option("--jobs", args.jobs, "worker thread count");
    };

    auto* c_validate = app.add_subcommand("validate", "check config and core invariants");
    add_common(c_validate);

    auto* c_sweep = app.add_subcommand("sweep", "run the scenario sweep and emit CSVs");
    add_common(c_sweep);
    c_sweep->add_option("--axis", axis, "sweep axis: snr or compute")
        ->check(CLI::IsMember({"snr", "compute"}));

    auto* c_policy = app.add_subcommand("train-policy", "train the step-split policy");
    add_common(c_policy);

    auto* c_denoiser = app.add_subcommand("train-denoiser", "train the tiny noise predictor");
    add_common(c_denoiser);

    auto* c_report = app.add_subcommand("report", "aggregate an existing transcripts CSV");
    c_report->add_option("--transcripts", transcripts_path, "transcripts CSV path")->required();
    c_report->add_option("--out", args.out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_validate->parsed()) {
            const semdiff::Experiment ex = load(args);
            const semdiff::ValidationReport rep = semdiff::validate_experiment(ex);
            std::cout << rep.to_string();
            if (!rep.ok) {
                std::cout << "validation FAILED\n";
                return 1;
            }
            std::cout << "validation OK\n";
            return 0;
        }
        if (c_sweep->parsed()) {
            const semdiff::Experiment ex = load(args);
            const auto sweep_axis =
                axis == "snr" ? semdiff::SweepAxis::snr : semdiff::SweepAxis::compute;
            const semdiff::SweepPaths paths =
                semdiff::run_sweep(ex, sweep_axis, args.out_dir, resolve_jobs(args));
            std::cout << "wrote " << paths.transcripts << "\n";
            std::cout << "wrote " << paths.aggregate << "\n";
            return 0;
        }
        if (c_policy->parsed()) {
            const semdiff::Experiment ex = load(args);
            const semdiff::PolicyArtifacts art = semdiff::run_train_policy(ex);
            std::filesystem::create_directories(args.out_dir);
            const std::filesystem::path out(args.out_dir);
            write_file(out / "qtable.csv", art.qtable_csv);
            write_file(out / "policy_report.csv", art.report_csv);
            write_file(out / "policy_log.csv", art.log_csv);
            std::cout << "states matching oracle argmax: " << art.states_matching_oracle << "/"
                      << art.n_states << "\n";
            std::cout << "worst relative reward gap vs oracle: "
                      << semdiff::format_g(art.worst_rel_gap, 6) << "\n";
            std::cout << "wrote " << (out / "qtable.csv").string() << ", policy_report.csv, policy_log.csv\n";
            return 0;
        }
        if (c_denoiser->parsed()) {
            const semdiff::Experiment ex = load(args);
            const semdiff::DenoiserArtifacts art = semdiff::run_train_denoiser(ex);
            std::filesystem::create_directories(args.out_dir);
            const std::filesystem::path out(args.out_dir);
            write_file(out / "denoiser.bin", art.blob);
            write_file(out / "training_curve.csv", art.curve_csv);
            std::cout << "loss " << semdiff::format_g(art.initial_loss, 6) << " -> "
                      << semdiff::format_g(art.final_loss, 6) << " over "
                      << (art.model.T) << "-step schedule\n";
            std::cout << "wrote " << (out / "denoiser.bin").string() << ", training_curve.csv\n";
            return 0;
        }
        if (c_report->parsed()) {
            const semdiff::CsvTable t = semdiff::load_csv(transcripts_path);
            const std::string agg = semdiff::aggregate_from_transcripts(t);
            std::filesystem::create_directories(args.out_dir);
            const std::filesystem::path out =
                std::filesystem::path(args.out_dir) / "aggregate_report.csv";
            write_file(out, agg);
            std::cout << agg;
            std::cout << "wrote " << out.string() << "\n";
            return 0;
        }
    } catch (const semdiff::ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& err) {
        std::cerr << "validation error: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    return 2;
}
