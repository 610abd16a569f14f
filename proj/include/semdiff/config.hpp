#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdiff/channel.hpp"
#include "semdiff/losses.hpp"
#include "semdiff/schedules.hpp"
#include "semdiff/source.hpp"
#include "semdiff/text.hpp"
#include "semdiff/transceiver.hpp"

namespace semdiff {

/// Parse error carrying file/line context.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Plain-text key-value configuration: [section] headers, key = value lines,
/// '#' comments. Repeated keys accumulate (used for source components).
class ParsedConfig {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static ParsedConfig from_text(const std::string& text, const std::string& origin = "<text>") {
        ParsedConfig cfg;
        cfg.origin_ = origin;
        std::istringstream is(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string t = trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": unterminated section header");
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty())
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
                continue;
            }
            const std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected key = value, got '" + t + "'");
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.entries_[section + "." + key].push_back({value, lineno});
        }
        return cfg;
    }

    static ParsedConfig from_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::ostringstream os;
        os << f.rdbuf();
        return from_text(os.str(), path);
    }

    std::optional<std::string> find(const std::string& section, const std::string& key) const {
        const auto it = entries_.find(section + "." + key);
        if (it == entries_.end()) return std::nullopt;
        return it->second.back().value;  // last assignment wins
    }

    std::vector<std::string> find_all(const std::string& section, const std::string& key) const {
        const auto it = entries_.find(section + "." + key);
        std::vector<std::string> out;
        if (it != entries_.end())
            for (const auto& e : it->second) out.push_back(e.value);
        return out;
    }

    std::string require(const std::string& section, const std::string& key) const {
        const auto v = find(section, key);
        if (!v)
            throw ConfigError(origin_ + ": missing required key [" + section + "] " + key);
        return *v;
    }

    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback) const {
        return find(section, key).value_or(fallback);
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        const auto v = find(section, key);
        return v ? parse_double(*v, section, key) : fallback;
    }

    int get_int(const std::string& section, const std::string& key, int fallback) const {
        const auto v = find(section, key);
        return v ? parse_int(*v, section, key) : fallback;
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const {
        const auto v = find(section, key);
        if (!v) return fallback;
        char* end = nullptr;
        const unsigned long long x = std::strtoull(v->c_str(), &end, 10);
        if (end == v->c_str() || *end != '\0')
            throw ConfigError(origin_ + ": [" + section + "] " + key + ": not an integer: " + *v);
        return static_cast<std::uint64_t>(x);
    }

    std::vector<double> get_double_list(const std::string& section, const std::string& key,
                                        std::vector<double> fallback) const {
        const auto v = find(section, key);
        if (!v) return fallback;
        return parse_double_list(*v, section, key);
    }

    std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                  std::vector<int> fallback) const {
        const auto v = find(section, key);
        if (!v) return fallback;
        std::vector<int> out;
        for (double d : parse_double_list(*v, section, key)) out.push_back(static_cast<int>(d));
        return out;
    }

    double parse_double(const std::string& s, const std::string& section,
                        const std::string& key) const {
        char* end = nullptr;
        const double x = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0')
            throw ConfigError(origin_ + ": [" + section + "] " + key + ": not a number: " + s);
        return x;
    }

    int parse_int(const std::string& s, const std::string& section, const std::string& key) const {
        char* end = nullptr;
        const long x = std::strtol(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0')
            throw ConfigError(origin_ + ": [" + section + "] " + key + ": not an integer: " + s);
        return static_cast<int>(x);
    }

    std::vector<double> parse_double_list(const std::string& s, const std::string& section,
                                          const std::string& key) const {
        std::vector<double> out;
        std::istringstream is(s);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            const std::string t = trim(tok);
            if (t.empty())
                throw ConfigError(origin_ + ": [" + section + "] " + key + ": empty list item");
            out.push_back(parse_double(t, section, key));
        }
        if (out.empty())
            throw ConfigError(origin_ + ": [" + section + "] " + key + ": empty list");
        return out;
    }

    const std::string& origin() const { return origin_; }

private:
    std::string origin_ = "<text>";
    std::map<std::string, std::vector<Entry>> entries_;
};

/// Everything one experiment needs, bound from the plain-text config.
struct ExperimentConfig {
    // [schedule]
    BetaKind schedule_kind = BetaKind::linear;
    int steps = 20;
    double beta_start = 0.02;
    double beta_end = 0.35;
    GammaShape gamma_shape = GammaShape::linear;
    bool sigma_bar_zero = false;
    // [source]
    SemanticSource source;
    // [channel]
    ChannelConfig channel;
    bool auto_signal_power = true;
    bool auto_clip_range = true;
    // [pipeline]
    int total_steps = 20;
    int t_edge = 10;
    int t_local = 10;
    double timeout_s = 60.0;
    int expansion_factor = 48;
    CoefficientForm form = CoefficientForm::std_minus_variance;
    // [latency]
    double c_edge = 0.4;
    double c_local = 1.6;
    double link_rate_bps = 0.0;  // 0: Shannon rate from bandwidth and SNR
    // [grid]
    std::vector<double> grid_snr_db{0.0, 5.0, 10.0, 15.0};
    std::vector<double> grid_rho_edge{0.3, 0.65, 1.0};
    std::vector<double> grid_rho_local{0.3, 0.65, 1.0};
    // [policy]
    std::vector<int> actions_t_edge{0, 4, 8, 12, 16, 20};
    double lambda_q = 1.0;
    double penalty = 1000.0;
    int episodes = 150000;
    double epsilon_start = 1.0;
    double epsilon_end = 1.0;
    int grid_search_evals = 64;
    int policy_eval_runs = 1000;
    // [trainer]
    TrainOptions trainer;
    int trainer_epochs = 400;
    NoiseMode trainer_mode = NoiseMode::clean;
    // [run]
    int seeds = 100;
    std::uint64_t master_seed = 1;
    std::vector<Variant> variants{Variant::ROUTE, Variant::NonFineTuning, Variant::EdgeAIGC,
                                  Variant::LocalAIGC};
    std::size_t reference_draws = 10000;
};

namespace detail {

inline Component parse_component(const std::string& text, int dim, const std::string& origin) {
    Component c;
    bool have_mean = false, have_label = false;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ": component token '" + tok + "' is not key=value");
        const std::string key = tok.substr(0, eq);
        const std::string value = tok.substr(eq + 1);
        char* end = nullptr;
        if (key == "label") {
            c.label = static_cast<int>(std::strtol(value.c_str(), &end, 10));
            have_label = true;
        } else if (key == "weight") {
            c.weight = std::strtod(value.c_str(), &end);
        } else if (key == "std") {
            c.std = std::strtod(value.c_str(), &end);
        } else if (key == "mean") {
            have_mean = true;
            if (value.rfind("const:", 0) == 0) {
                const double v = std::strtod(value.c_str() + 6, &end);
                c.mean.assign(static_cast<std::size_t>(dim), v);
            } else {
                std::istringstream ms(value);
                std::string cell;
                while (std::getline(ms, cell, ','))
                    c.mean.push_back(std::strtod(cell.c_str(), &end));
            }
        } else {
            throw ConfigError(origin + ": unknown component key '" + key + "'");
        }
        if (end != nullptr && *end != '\0')
            throw ConfigError(origin + ": malformed component value '" + tok + "'");
    }
    if (!have_label || !have_mean)
        throw ConfigError(origin + ": component needs at least label= and mean=");
    return c;
}

} // namespace detail

inline ExperimentConfig load_experiment_config(const ParsedConfig& p) {
    ExperimentConfig e;
    const std::string& origin = p.origin();

    const std::string kind = p.get("schedule", "kind", "linear");
    if (kind == "linear") e.schedule_kind = BetaKind::linear;
    else if (kind == "cosine") e.schedule_kind = BetaKind::cosine;
    else throw ConfigError(origin + ": [schedule] kind must be linear or cosine");
    e.steps = p.get_int("schedule", "steps", e.steps);
    e.beta_start = p.get_double("schedule", "beta_start", e.beta_start);
    e.beta_end = p.get_double("schedule", "beta_end", e.beta_end);
    const std::string shape = p.get("schedule", "gamma_shape", "linear");
    if (shape == "linear") e.gamma_shape = GammaShape::linear;
    else if (shape == "proportional") e.gamma_shape = GammaShape::proportional;
    else throw ConfigError(origin + ": [schedule] gamma_shape must be linear or proportional");
    const std::string sb = p.get("schedule", "sigma_bar", "posterior");
    if (sb == "posterior") e.sigma_bar_zero = false;
    else if (sb == "zero") e.sigma_bar_zero = true;
    else throw ConfigError(origin + ": [schedule] sigma_bar must be posterior or zero");

    e.source.dim = p.get_int("source", "dim", 16);
    for (const std::string& comp : p.find_all("source", "component"))
        e.source.components.push_back(detail::parse_component(comp, e.source.dim, origin));
    if (e.source.components.empty())
        throw ConfigError(origin + ": [source] needs at least one component line");

    e.channel.bandwidth_hz = p.get_double("channel", "bandwidth_hz", e.channel.bandwidth_hz);
    e.channel.bits_per_element = p.get_int("channel", "bits_per_element", e.channel.bits_per_element);
    e.channel.snr_db = p.get_double("channel", "snr_db", e.channel.snr_db);
    e.channel.snr_min_db = p.get_double("channel", "snr_min_db", e.channel.snr_min_db);
    e.channel.snr_max_db = p.get_double("channel", "snr_max_db", e.channel.snr_max_db);
    const std::string power = p.get("channel", "signal_power", "auto");
    if (power == "auto") {
        e.auto_signal_power = true;
    } else {
        e.auto_signal_power = false;
        e.channel.signal_power = p.parse_double(power, "channel", "signal_power");
    }
    const std::string clip = p.get("channel", "clip_range", "auto");
    if (clip == "auto") {
        e.auto_clip_range = true;
    } else {
        e.auto_clip_range = false;
        e.channel.clip_range = p.parse_double(clip, "channel", "clip_range");
    }

    e.total_steps = p.get_int("pipeline", "total_steps", e.total_steps);
    e.t_edge = p.get_int("pipeline", "t_edge", e.total_steps / 2);
    e.t_local = p.get_int("pipeline", "t_local", e.total_steps - e.t_edge);
    e.timeout_s = p.get_double("pipeline", "timeout_s", e.timeout_s);
    e.expansion_factor = p.get_int("pipeline", "expansion_factor", e.expansion_factor);
    const std::string form = p.get("pipeline", "coefficient_form", "std_minus_variance");
    if (form == "std_minus_variance") e.form = CoefficientForm::std_minus_variance;
    else if (form == "homogeneous") e.form = CoefficientForm::homogeneous_variance;
    else
        throw ConfigError(origin +
                          ": [pipeline] coefficient_form must be std_minus_variance or homogeneous");

    e.c_edge = p.get_double("latency", "c_edge", e.c_edge);
    e.c_local = p.get_double("latency", "c_local", e.c_local);
    e.link_rate_bps = p.get_double("latency", "link_rate_bps", e.link_rate_bps);

    e.grid_snr_db = p.get_double_list("grid", "snr_db", e.grid_snr_db);
    e.grid_rho_edge = p.get_double_list("grid", "rho_edge", e.grid_rho_edge);
    e.grid_rho_local = p.get_double_list("grid", "rho_local", e.grid_rho_local);

    // Default menu: six evenly spaced splits of the configured budget.
    std::vector<int> default_actions;
    for (int k = 0; k <= 5; ++k) {
        const int te = e.total_steps * k / 5;
        if (default_actions.empty() || default_actions.back() != te) default_actions.push_back(te);
    }
    e.actions_t_edge = p.get_int_list("policy", "actions_t_edge", default_actions);
    e.lambda_q = p.get_double("policy", "lambda_q", e.lambda_q);
    e.penalty = p.get_double("policy", "penalty", e.penalty);
    e.episodes = p.get_int("policy", "episodes", e.episodes);
    e.epsilon_start = p.get_double("policy", "epsilon_start", e.epsilon_start);
    e.epsilon_end = p.get_double("policy", "epsilon_end", e.epsilon_end);
    e.grid_search_evals = p.get_int("policy", "grid_search_evals", e.grid_search_evals);
    e.policy_eval_runs = p.get_int("policy", "eval_runs", e.policy_eval_runs);

    e.trainer.hidden = p.get_int("trainer", "hidden", e.trainer.hidden);
    e.trainer.learning_rate = p.get_double("trainer", "learning_rate", e.trainer.learning_rate);
    e.trainer.batch_size = p.get_int("trainer", "batch", e.trainer.batch_size);
    e.trainer.batches_per_epoch = p.get_int("trainer", "batches_per_epoch", e.trainer.batches_per_epoch);
    e.trainer.grad_clip = p.get_double("trainer", "grad_clip", e.trainer.grad_clip);
    e.trainer_epochs = p.get_int("trainer", "epochs", e.trainer_epochs);
    const std::string mode = p.get("trainer", "mode", "clean");
    if (mode == "clean") e.trainer_mode = NoiseMode::clean;
    else if (mode == "channel") e.trainer_mode = NoiseMode::channel;
    else throw ConfigError(origin + ": [trainer] mode must be clean or channel");

    e.seeds = p.get_int("run", "seeds", e.seeds);
    e.master_seed = p.get_u64("run", "master_seed", e.master_seed);
    if (e.seeds < 1) throw ConfigError(origin + ": [run] seeds must be >= 1");
    const auto variants = p.find("run", "variants");
    if (variants) {
        e.variants.clear();
        std::istringstream is(*variants);
        std::string tok;
        while (std::getline(is, tok, ',')) e.variants.push_back(variant_from_string(trim(tok)));
        if (e.variants.empty()) throw ConfigError(origin + ": [run] variants list is empty");
    }
    e.reference_draws = static_cast<std::size_t>(
        p.get_int("run", "reference_draws", static_cast<int>(e.reference_draws)));
    return e;
}

inline ExperimentConfig load_experiment_config_file(const std::string& path) {
    return load_experiment_config(ParsedConfig::from_file(path));
}

} // namespace semdiff
