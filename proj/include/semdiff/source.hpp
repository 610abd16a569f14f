#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdiff/latent.hpp"
#include "semdiff/rng.hpp"
#include "semdiff/schedules.hpp"

namespace semdiff {

/// One labeled isotropic Gaussian component of the semantic source.
/// std == 0 is the degenerate point-mass component.
struct Component {
    double weight = 1.0;
    Latent mean;
    double std = 1.0;
    int label = 0;
};

/// Analytically tractable semantic source: a labeled Gaussian mixture whose
/// labels play the role of text conditioning.
struct SemanticSource {
    int dim = 0;
    std::vector<Component> components;

    void validate() const {
        if (dim < 1) throw std::invalid_argument("SemanticSource: dim must be >= 1");
        if (components.empty()) throw std::invalid_argument("SemanticSource: no components");
        double wsum = 0.0;
        for (const auto& c : components) {
            if (c.mean.size() != static_cast<std::size_t>(dim))
                throw std::invalid_argument("SemanticSource: component mean dimension mismatch");
            if (!(c.weight > 0.0)) throw std::invalid_argument("SemanticSource: weight must be > 0");
            if (c.std < 0.0) throw std::invalid_argument("SemanticSource: std must be >= 0");
            wsum += c.weight;
            for (const auto& other : components)
                if (&other != &c && other.label == c.label)
                    throw std::invalid_argument("SemanticSource: duplicate label " +
                                                std::to_string(c.label));
        }
        if (std::abs(wsum - 1.0) > 1e-12)
            throw std::invalid_argument("SemanticSource: weights must sum to 1 (got " +
                                        std::to_string(wsum) + ")");
    }

    int index_of(int label) const {
        for (std::size_t i = 0; i < components.size(); ++i)
            if (components[i].label == label) return static_cast<int>(i);
        throw std::invalid_argument("SemanticSource: unknown label " + std::to_string(label));
    }

    const Component& component_for(int label) const {
        return components[static_cast<std::size_t>(index_of(label))];
    }

    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(components.size());
        for (const auto& c : components) out.push_back(c.label);
        return out;
    }
};

/// Conditioning stands in for the text guidance: it selects one component.
struct Conditioning {
    int label = 0;
};

/// Mean per-entry second moment of the mixture; the reference signal power
/// used for SNR accounting.
inline double analytic_signal_power(const SemanticSource& src) {
    double p = 0.0;
    for (const auto& c : src.components)
        p += c.weight * (squared_norm(c.mean) / src.dim + c.std * c.std);
    return p;
}

/// Draw z_0 ~ N(mean_c, std_c^2 I). Consumes exactly dim normal draws.
inline Latent sample_z0(const SemanticSource& src, Conditioning c, Rng& rng) {
    const Component& comp = src.component_for(c.label);
    Latent z(static_cast<std::size_t>(src.dim));
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = comp.mean[i] + comp.std * rng.normal();
    return z;
}

/// Unconditional mixture draw (component by weight, then Gaussian).
inline Latent sample_unconditional(const SemanticSource& src, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& comp : src.components) {
        acc += comp.weight;
        if (u < acc || &comp == &src.components.back())
            return sample_z0(src, Conditioning{comp.label}, rng);
    }
    return sample_z0(src, Conditioning{src.components.back().label}, rng);
}

/// Posterior component responsibilities at the source level (softmax of
/// log densities). Point-mass components use a tiny std floor so exact hits
/// dominate every finite-density competitor.
inline std::vector<double> responsibilities(const SemanticSource& src, const Latent& z) {
    constexpr double kStdFloor = 1e-9;
    std::vector<double> logp(src.components.size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < src.components.size(); ++k) {
        const Component& c = src.components[k];
        const double s = std::max(c.std, kStdFloor);
        const double q = squared_distance(z, c.mean) / (s * s);
        logp[k] = std::log(c.weight) - 0.5 * q - src.dim * std::log(s);
        best = std::max(best, logp[k]);
    }
    double denom = 0.0;
    for (double& lp : logp) {
        lp = std::exp(lp - best);
        denom += lp;
    }
    for (double& lp : logp) lp /= denom;
    return logp;
}

inline int max_responsibility_label(const SemanticSource& src, const Latent& z) {
    const auto r = responsibilities(src, z);
    const std::size_t k = static_cast<std::size_t>(
        std::max_element(r.begin(), r.end()) - r.begin());
    return src.components[k].label;
}

enum class NoiseMode { clean, channel };

/// Marginal noise variance of the diffused latent at step t.
inline double marginal_noise_variance(const ChannelNoiseSchedule& cs, int t, NoiseMode mode) {
    const double v = 1.0 - cs.base.alpha_bar_at(t);
    return mode == NoiseMode::channel ? v + cs.sigma_t_sq_at(t) : v;
}

/// Normalizer that maps total injected noise to the predictor's output scale.
inline double noise_normalizer(const ChannelNoiseSchedule& cs, int t, NoiseMode mode,
                               CoefficientForm form) {
    if (mode == NoiseMode::clean) return std::sqrt(1.0 - cs.base.alpha_bar_at(t));
    return channel_residual_scale(cs, t, form);
}

/// Closed-form optimal noise predictor for the labeled component: the
/// conditional expectation of the injected noise given z_t.
///
/// For z_0 ~ N(mu, s^2 I) and z_t = sqrt(abar_t) z_0 + n with n ~ N(0, v_t I),
///   E[z_0 | z_t] = (sqrt(abar_t) s^2 z_t + v_t mu) / (abar_t s^2 + v_t),
/// and the prediction is (z_t - sqrt(abar_t) E[z_0|z_t]) / u_t with u_t the
/// mode-appropriate forward-identity normalizer. This is the stand-in for the
/// trained denoising network, exact for the sources used here.
inline Latent oracle_noise_predict(const SemanticSource& src, const Latent& z_t, int t,
                                   Conditioning c, const ChannelNoiseSchedule& cs, NoiseMode mode,
                                   CoefficientForm form = CoefficientForm::std_minus_variance) {
    if (z_t.size() != static_cast<std::size_t>(src.dim))
        throw std::invalid_argument("oracle_noise_predict: latent dimension mismatch");
    const Component& comp = src.component_for(c.label);
    const double ab = cs.base.alpha_bar_at(t);
    const double sqrt_ab = std::sqrt(ab);
    const double v = marginal_noise_variance(cs, t, mode);
    const double s2 = comp.std * comp.std;
    const double u = noise_normalizer(cs, t, mode, form);
    if (u == 0.0)
        throw std::domain_error("oracle_noise_predict: degenerate noise normalizer at t=" +
                                std::to_string(t));
    const double denom = ab * s2 + v;
    Latent out(z_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double ez0 = (sqrt_ab * s2 * z_t[i] + v * comp.mean[i]) / denom;
        out[i] = (z_t[i] - sqrt_ab * ez0) / u;
    }
    return out;
}

namespace detail {

/// Adaptive Simpson quadrature with interval bisection.
struct AdaptiveSimpson {
    const std::function<double(double)>& f;
    double tol;
    int max_depth = 48;
    int evaluations = 0;

    double integrate(double a, double b) {
        const double fa = eval(a), fb = eval(b), fm = eval(0.5 * (a + b));
        const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        double err = 0.0;
        const double r = recurse(a, b, fa, fm, fb, whole, tol, max_depth, err);
        last_error = err;
        return r;
    }

    double last_error = 0.0;

private:
    double eval(double x) {
        ++evaluations;
        return f(x);
    }
    double recurse(double a, double b, double fa, double fm, double fb, double whole,
                   double eps, int depth, double& err) {
        const double m = 0.5 * (a + b);
        const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
        const double flm = eval(lm), frm = eval(rm);
        const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        const double delta = left + right - whole;
        // Negated comparison so a NaN estimate terminates (and propagates)
        // instead of recursing to full depth.
        if (depth <= 0 || !(std::abs(delta) > 15.0 * eps)) {
            err += std::abs(delta) / 15.0;
            return left + right + delta / 15.0;
        }
        return recurse(a, m, fa, flm, fm, left, 0.5 * eps, depth - 1, err) +
               recurse(m, b, fm, frm, fb, right, 0.5 * eps, depth - 1, err);
    }
};

inline double quadrature(const std::function<double(double)>& f, double a, double b, double tol,
                         double* err_out, int* evals_out) {
    AdaptiveSimpson s{f, tol};
    const double r = s.integrate(a, b);
    if (err_out) *err_out = s.last_error;
    if (evals_out) *evals_out = s.evaluations;
    return r;
}

} // namespace detail

/// Brute-force posterior mean E[z_{t-1} | z_t, z_0] for the scalar (d = 1)
/// case, by adaptive quadrature over the product of the step-t kernel and the
/// step-(t-1) marginal:
///
///   f(x) = N(z_t; sqrt(alpha_t) x, 1 - alpha_t + sigma_{t,t-1}^2)
///        * N(x; sqrt(abar_{t-1}) z_0, 1 - abar_{t-1} + sigma_{t-1}^2).
///
/// z0_dist with std == 0 fixes z_0 = mean (the central use); std > 0
/// additionally marginalizes z_0 over the component weighted by the step-t
/// evidence. Requires t >= 2: at t = 1 the step-0 marginal is degenerate and
/// the closed form applies directly.
inline double posterior_mean_bruteforce(const ChannelNoiseSchedule& cs, double z_t,
                                        const Component& z0_dist, int t, double tol = 1e-10) {
    if (t < 2 || t > cs.T_bar)
        throw std::invalid_argument("posterior_mean_bruteforce: require 2 <= t <= T_bar");
    if (z0_dist.mean.size() != 1)
        throw std::invalid_argument("posterior_mean_bruteforce: scalar case only (d = 1)");

    const double a = cs.base.alpha_at(t);
    const double ab_prev = cs.base.alpha_bar_at(t - 1);
    const double var_step = 1.0 - a + cs.sigma_step_sq_at(t);
    const double var_prev = 1.0 - ab_prev + cs.sigma_t_sq_at(t - 1);
    if (!(var_step > 0.0) || !(var_prev > 0.0))
        throw std::runtime_error(
            "posterior_mean_bruteforce: quadrature non-convergence (degenerate density, "
            "step variance " + format_g17(var_step) + ", marginal variance " +
            format_g17(var_prev) + ")");
    const double sqrt_a = std::sqrt(a);
    const double sqrt_ab_prev = std::sqrt(ab_prev);

    // Product of the step kernel and previous-step marginal in x = z_{t-1}, integrated in a
    // shifted log scale: the log product is scanned for its mode and
    // super-level interval first, so a narrow product spike between two
    // well-separated peaks cannot be missed, and normalizing by the mode
    // value keeps the integrand away from underflow.
    struct InnerResult {
        double mass = 0.0;   // integral of exp(logf - logmax)
        double first = 0.0;  // integral of x * exp(logf - logmax)
        double log_max = 0.0;
    };
    const auto product_moments = [&](double z0) {
        const double mu1 = z_t / sqrt_a;
        const double sd1 = std::sqrt(var_step) / sqrt_a;
        const double mu2 = sqrt_ab_prev * z0;
        const double sd2 = std::sqrt(var_prev);
        const auto log_density = [&](double x) {
            const double r1 = z_t - sqrt_a * x;
            const double r2 = x - mu2;
            return -0.5 * (r1 * r1 / var_step + r2 * r2 / var_prev);
        };
        // The concave-quadratic log density peaks between the two component
        // peaks; scan that bracket plus tails.
        const double scan_lo = std::min(mu1 - 10.0 * sd1, mu2 - 10.0 * sd2);
        const double scan_hi = std::max(mu1 + 10.0 * sd1, mu2 + 10.0 * sd2);
        const int n_scan = 2048;
        const double h = (scan_hi - scan_lo) / n_scan;
        double log_max = -std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int i = 0; i <= n_scan; ++i) {
            const double lf = log_density(scan_lo + h * i);
            if (lf > log_max) {
                log_max = lf;
                arg = i;
            }
        }
        if (!std::isfinite(log_max))
            throw std::runtime_error(
                "posterior_mean_bruteforce: quadrature non-convergence (log density peak " +
                format_g17(log_max) + ")");
        // Super-level interval {logf >= logmax - 80}: an interval, because the
        // log density is concave; everything outside carries ~e^-80 mass.
        int lo_i = arg, hi_i = arg;
        while (lo_i > 0 && log_density(scan_lo + h * (lo_i - 1)) >= log_max - 80.0) --lo_i;
        while (hi_i < n_scan && log_density(scan_lo + h * (hi_i + 1)) >= log_max - 80.0) ++hi_i;
        const double lo = scan_lo + h * std::max(0, lo_i - 1);
        const double hi = scan_lo + h * std::min(n_scan, hi_i + 1);
        InnerResult res;
        res.log_max = log_max;
        const std::function<double(double)> g = [&](double x) {
            return std::exp(log_density(x) - log_max);
        };
        const std::function<double(double)> xg = [&](double x) { return x * g(x); };
        double e0 = 0.0, e1 = 0.0;
        res.mass = detail::quadrature(g, lo, hi, tol * (hi - lo), &e0, nullptr);
        res.first = detail::quadrature(
            xg, lo, hi, tol * (hi - lo) * std::max(1.0, std::max(std::abs(lo), std::abs(hi))), &e1,
            nullptr);
        if (!(res.mass > 0.0) || !std::isfinite(res.mass) || !std::isfinite(res.first))
            throw std::runtime_error(
                "posterior_mean_bruteforce: quadrature non-convergence (mass=" +
                format_g17(res.mass) + ", residual=" + format_g17(e0 + e1) + ")");
        return res;
    };

    if (z0_dist.std == 0.0) {
        const InnerResult r = product_moments(z0_dist.mean[0]);
        return r.first / r.mass;
    }

    // Marginalize z_0 over the component prior. The inner integral already
    // carries the full evidence q(z_t | z_0) through the product of the two
    // kernels, so the outer weight is the prior density alone. The grid still
    // covers the evidence peak because that is where the combined weight
    // concentrates.
    const double ab = cs.base.alpha_bar_at(t);
    const double var_t = 1.0 - ab + cs.sigma_t_sq_at(t);
    const double sqrt_ab = std::sqrt(ab);
    const double mu_ev = z_t / sqrt_ab;
    const double sd_ev = std::sqrt(var_t) / sqrt_ab;
    const double lo = std::min(z0_dist.mean[0] - 10.0 * z0_dist.std, mu_ev - 10.0 * sd_ev);
    const double hi = std::max(z0_dist.mean[0] + 10.0 * z0_dist.std, mu_ev + 10.0 * sd_ev);
    const int n = 801;  // trapezoid grid on the outer variable
    const double h = (hi - lo) / (n - 1);
    std::vector<InnerResult> inner(static_cast<std::size_t>(n));
    std::vector<double> log_w(static_cast<std::size_t>(n));
    double log_scale = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const double z0 = lo + h * i;
        const double rp = (z0 - z0_dist.mean[0]) / z0_dist.std;
        inner[static_cast<std::size_t>(i)] = product_moments(z0);
        log_w[static_cast<std::size_t>(i)] =
            -0.5 * rp * rp + inner[static_cast<std::size_t>(i)].log_max;
        log_scale = std::max(log_scale, log_w[static_cast<std::size_t>(i)]);
    }
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
        const double w = std::exp(log_w[static_cast<std::size_t>(i)] - log_scale) *
                         ((i == 0 || i == n - 1) ? 0.5 : 1.0);
        num += w * inner[static_cast<std::size_t>(i)].first;
        den += w * inner[static_cast<std::size_t>(i)].mass;
    }
    if (!(den > 0.0))
        throw std::runtime_error("posterior_mean_bruteforce: outer marginalization underflow");
    return num / den;
}

} // namespace semdiff
