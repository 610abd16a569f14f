#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "semdiff/latent.hpp"
#include "semdiff/rng.hpp"
#include "semdiff/source.hpp"

namespace semdiff {

/// Compute/channel availability of one (edge, local, link) situation.
struct ResourceScenario {
    double rho_edge = 1.0;   // available edge compute fraction, (0, 1]
    double rho_local = 1.0;  // available local compute fraction, (0, 1]
    double c_edge = 0.4;     // nominal edge seconds per denoising step
    double c_local = 1.6;    // nominal local seconds per denoising step
    double snr_db = 10.0;
    double bandwidth_hz = 2e7;
    double fixed_rate_bps = 0.0;  // > 0 overrides the Shannon rate model

    void validate() const {
        if (!(rho_edge > 0.0 && rho_edge <= 1.0) || !(rho_local > 0.0 && rho_local <= 1.0))
            throw std::invalid_argument("ResourceScenario: rho must lie in (0,1]");
        if (!(c_edge > 0.0 && c_local > 0.0))
            throw std::invalid_argument("ResourceScenario: per-step costs must be > 0");
        if (!(bandwidth_hz > 0.0))
            throw std::invalid_argument("ResourceScenario: bandwidth must be > 0");
        if (fixed_rate_bps < 0.0)
            throw std::invalid_argument("ResourceScenario: fixed rate must be >= 0");
    }
};

/// Shannon-capacity completion of the link rate: v = B log2(1 + 10^(snr/10)).
inline double shannon_rate_bps(double bandwidth_hz, double snr_db) {
    return bandwidth_hz * std::log2(1.0 + std::pow(10.0, snr_db / 10.0));
}

inline double link_rate_bps(const ResourceScenario& sc) {
    return sc.fixed_rate_bps > 0.0 ? sc.fixed_rate_bps
                                   : shannon_rate_bps(sc.bandwidth_hz, sc.snr_db);
}

/// L1 = O / v.
inline double transmission_latency(double o_bits, const ResourceScenario& sc) {
    if (o_bits < 0.0) throw std::invalid_argument("transmission_latency: negative bit count");
    if (o_bits == 0.0) return 0.0;
    return o_bits / link_rate_bps(sc);
}

/// L2/L3 = steps * per-step cost / available fraction.
inline double compute_latency(int steps, double per_step_cost, double rho) {
    if (steps < 0) throw std::invalid_argument("compute_latency: negative step count");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("compute_latency: rho outside (0,1]");
    return static_cast<double>(steps) * per_step_cost / rho;
}

/// Mean pairwise Euclidean distance between two sample sets (all n*m pairs).
inline double mean_cross_distance(const std::vector<Latent>& x, const std::vector<Latent>& y) {
    if (x.empty() || y.empty()) throw std::invalid_argument("mean_cross_distance: empty set");
    double acc = 0.0;
    for (const auto& a : x)
        for (const auto& b : y) acc += euclidean_distance(a, b);
    return acc / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

/// Mean pairwise distance within one set (V-statistic convention: all n^2
/// ordered pairs, zero diagonal). Zero for singletons.
inline double mean_self_distance(const std::vector<Latent>& x) {
    if (x.empty()) throw std::invalid_argument("mean_self_distance: empty set");
    if (x.size() == 1) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = i + 1; j < x.size(); ++j) acc += euclidean_distance(x[i], x[j]);
    return 2.0 * acc / (static_cast<double>(x.size()) * static_cast<double>(x.size()));
}

/// Energy distance (V-statistic): 2 E|X-Y| - E|X-X'| - E|Y-Y'|.
inline double energy_distance(const std::vector<Latent>& x, const std::vector<Latent>& y) {
    return 2.0 * mean_cross_distance(x, y) - mean_self_distance(x) - mean_self_distance(y);
}

/// Permutation p-value for the two-sample energy test: the fraction of label
/// shuffles whose statistic is at least the observed one.
inline double energy_permutation_pvalue(const std::vector<Latent>& x, const std::vector<Latent>& y,
                                        int n_perm, Rng& rng) {
    if (n_perm < 1) throw std::invalid_argument("energy_permutation_pvalue: n_perm must be >= 1");
    const double observed = energy_distance(x, y);
    std::vector<Latent> pool;
    pool.reserve(x.size() + y.size());
    pool.insert(pool.end(), x.begin(), x.end());
    pool.insert(pool.end(), y.begin(), y.end());
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    int at_least = 0;
    for (int p = 0; p < n_perm; ++p) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.below(i)]);
        std::vector<Latent> px, py;
        px.reserve(x.size());
        py.reserve(y.size());
        for (std::size_t i = 0; i < x.size(); ++i) px.push_back(pool[idx[i]]);
        for (std::size_t i = x.size(); i < idx.size(); ++i) py.push_back(pool[idx[i]]);
        if (energy_distance(px, py) >= observed) ++at_least;
    }
    // Add-one smoothing keeps the p-value away from an exact zero.
    return (static_cast<double>(at_least) + 1.0) / (static_cast<double>(n_perm) + 1.0);
}

/// Reference draws from the true conditional, cached so repeated fidelity
/// evaluations against the same component are cheap.
struct FidelityContext {
    int label = 0;
    Latent conditional_mean;
    std::vector<Latent> refs;
    double ref_self_dist = 0.0;
};

inline FidelityContext make_fidelity_context(const SemanticSource& src, Conditioning c,
                                             std::size_t n_ref, Rng& rng) {
    if (n_ref < 1) throw std::invalid_argument("make_fidelity_context: need at least one draw");
    FidelityContext ctx;
    ctx.label = c.label;
    ctx.conditional_mean = src.component_for(c.label).mean;
    ctx.refs.reserve(n_ref);
    for (std::size_t i = 0; i < n_ref; ++i) ctx.refs.push_back(sample_z0(src, c, rng));
    ctx.ref_self_dist = mean_self_distance(ctx.refs);
    return ctx;
}

struct FidelityReport {
    double mse_to_conditional_mean = 0.0;  // mean ||x - mu_c||^2 over samples
    double component_accuracy = 0.0;       // fraction with argmax responsibility == c
    double energy_dist = 0.0;              // vs the cached reference draws
};

/// Distributional fidelity of a sample set against the conditioned component.
inline FidelityReport fidelity(const std::vector<Latent>& samples, const SemanticSource& src,
                               Conditioning c, const FidelityContext& ctx) {
    if (samples.empty()) throw std::invalid_argument("fidelity: empty sample set");
    if (ctx.label != c.label) throw std::invalid_argument("fidelity: context built for another label");
    FidelityReport rep;
    const Latent& mu = ctx.conditional_mean;
    double acc = 0.0;
    for (const auto& s : samples) {
        rep.mse_to_conditional_mean += squared_distance(s, mu);
        if (max_responsibility_label(src, s) == c.label) acc += 1.0;
    }
    rep.mse_to_conditional_mean /= static_cast<double>(samples.size());
    rep.component_accuracy = acc / static_cast<double>(samples.size());
    rep.energy_dist = 2.0 * mean_cross_distance(samples, ctx.refs) - mean_self_distance(samples) -
                      ctx.ref_self_dist;
    return rep;
}

/// Convenience overload drawing a fresh reference set.
inline FidelityReport fidelity(const std::vector<Latent>& samples, const SemanticSource& src,
                               Conditioning c, std::size_t n_ref, Rng& rng) {
    const FidelityContext ctx = make_fidelity_context(src, c, n_ref, rng);
    return fidelity(samples, src, c, ctx);
}

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace detail

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("spearman: need two equally sized series");
    const auto rx = detail::average_ranks(x);
    const auto ry = detail::average_ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace semdiff
