#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdiff/text.hpp"

namespace semdiff {

enum class BetaKind { linear, cosine, explicit_list };
enum class GammaShape { linear, proportional };

/// Which residual normalizer the modified reverse process uses.
///
/// std_minus_variance:   sqrt(1 - abar_t) - sigma_t^2, the default: the
///                       channel variance is subtracted from the diffusion
///                       noise std directly. Dimensionally mixed, but the
///                       posterior-mean algebra closes for any sigma values.
/// homogeneous_variance: sqrt(1 - abar_t + sigma_t^2), the dimensionally
///                       homogeneous alternative.
///
/// The substitution identity between the (z_t, z_0) posterior mean and the
/// noise-form posterior mean holds under either form as long as the
/// coefficient and the noise predictor share it.
enum class CoefficientForm { std_minus_variance, homogeneous_variance };

inline const char* to_string(BetaKind k) {
    switch (k) {
        case BetaKind::linear: return "linear";
        case BetaKind::cosine: return "cosine";
        case BetaKind::explicit_list: return "explicit";
    }
    return "?";
}
inline const char* to_string(GammaShape s) {
    return s == GammaShape::linear ? "linear" : "proportional";
}

/// Time-indexed constants of the standard diffusion process.
///
/// All accessors are 1-based in the step index t (1..T), matching the
/// process definition; alpha_bar_at(0) == 1 by convention. sigma_bar is the
/// reverse-step sampling std, defaulting to the posterior value
/// sqrt(beta_t * (1 - abar_{t-1}) / (1 - abar_t)), which is 0 at t = 1.
struct VarianceSchedule {
    int T = 0;
    std::vector<double> beta;       // size T
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // cumulative product of alpha
    std::vector<double> sigma_bar;  // reverse sampling std
    BetaKind kind = BetaKind::linear;
    double beta_start = 0.0;  // 0 for explicit schedules
    double beta_end = 0.0;
    bool sigma_bar_zero = false;  // config override: deterministic sampler

    double beta_at(int t) const { check(t); return beta[static_cast<std::size_t>(t) - 1]; }
    double alpha_at(int t) const { check(t); return alpha[static_cast<std::size_t>(t) - 1]; }
    double alpha_bar_at(int t) const {
        if (t == 0) return 1.0;
        check(t);
        return alpha_bar[static_cast<std::size_t>(t) - 1];
    }
    double sigma_bar_at(int t) const { check(t); return sigma_bar[static_cast<std::size_t>(t) - 1]; }

    /// Canonical key=value text; 17 significant digits so parsing the text
    /// rebuilds a bit-identical schedule.
    std::string to_config_text() const {
        std::ostringstream os;
        os << "kind = " << to_string(kind) << "\n";
        os << "steps = " << T << "\n";
        if (kind == BetaKind::explicit_list) {
            os << "betas = ";
            for (int t = 1; t <= T; ++t) {
                if (t > 1) os << ",";
                os << format_g17(beta_at(t));
            }
            os << "\n";
        } else {
            os << "beta_start = " << format_g17(beta_start) << "\n";
            os << "beta_end = " << format_g17(beta_end) << "\n";
        }
        if (sigma_bar_zero) os << "sigma_bar = zero\n";
        return os.str();
    }

    /// FNV-1a over the canonical text; transmitted with every payload so the
    /// receiver can refuse latents produced under a different schedule.
    std::uint64_t digest() const { return fnv1a64(to_config_text()); }

    void validate(bool strict_monotone = true) const {
        if (T < 1) throw std::invalid_argument("VarianceSchedule: T must be >= 1");
        if (beta.size() != static_cast<std::size_t>(T) || alpha.size() != beta.size() ||
            alpha_bar.size() != beta.size() || sigma_bar.size() != beta.size())
            throw std::invalid_argument("VarianceSchedule: inconsistent array sizes");
        for (int t = 1; t <= T; ++t) {
            const double b = beta_at(t);
            if (!(b > 0.0 && b < 1.0))
                throw std::invalid_argument("VarianceSchedule: beta[" + std::to_string(t) +
                                            "] outside (0,1)");
            if (strict_monotone && t > 1 && !(beta_at(t) > beta_at(t - 1)))
                throw std::invalid_argument(
                    "VarianceSchedule: beta must be strictly increasing (violated at t=" +
                    std::to_string(t) + ")");
            if (std::abs(alpha_at(t) - (1.0 - b)) > 1e-15)
                throw std::invalid_argument("VarianceSchedule: alpha != 1 - beta");
            const double expect = alpha_bar_at(t - 1) * alpha_at(t);
            if (std::abs(alpha_bar_at(t) - expect) > 1e-12 * expect)
                throw std::invalid_argument("VarianceSchedule: alpha_bar recursion violated");
            if (t > 1 && !(alpha_bar_at(t) < alpha_bar_at(t - 1)))
                throw std::invalid_argument("VarianceSchedule: alpha_bar must strictly decrease");
            if (sigma_bar_at(t) < 0.0)
                throw std::invalid_argument("VarianceSchedule: sigma_bar must be >= 0");
        }
        if (sigma_bar_at(1) != 0.0)
            throw std::invalid_argument("VarianceSchedule: sigma_bar[1] must be 0");
    }

private:
    void check(int t) const {
        if (t < 1 || t > T)
            throw std::out_of_range("VarianceSchedule: step index " + std::to_string(t) +
                                    " outside [1," + std::to_string(T) + "]");
    }
};

namespace detail {

inline void finish_schedule(VarianceSchedule& vs) {
    const std::size_t n = vs.beta.size();
    vs.alpha.resize(n);
    vs.alpha_bar.resize(n);
    vs.sigma_bar.resize(n);
    double prod = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        vs.alpha[i] = 1.0 - vs.beta[i];
        const double prev = prod;  // abar_{t-1}, abar_0 = 1
        prod *= vs.alpha[i];
        vs.alpha_bar[i] = prod;
        if (vs.sigma_bar_zero) {
            vs.sigma_bar[i] = 0.0;
        } else {
            // Posterior std; the i==0 factor (1 - abar_0) = 0 makes sigma_bar[1] = 0.
            const double denom = 1.0 - prod;
            vs.sigma_bar[i] = denom > 0.0
                                  ? std::sqrt(vs.beta[i] * (1.0 - prev) / denom)
                                  : 0.0;
        }
    }
}

} // namespace detail

/// Construct the standard variance schedule.
///
/// linear: beta interpolates beta_start..beta_end over T steps.
/// cosine: same endpoints traversed along a half-cosine ramp, which keeps the
///         required bounds and strict monotonicity while concentrating small
///         steps early.
inline VarianceSchedule build_variance_schedule(int T, double beta_start, double beta_end,
                                                BetaKind kind = BetaKind::linear,
                                                bool sigma_bar_zero = false) {
    if (T < 1) throw std::invalid_argument("build_variance_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
        throw std::invalid_argument(
            "build_variance_schedule: require 0 < beta_start < beta_end < 1");
    if (kind == BetaKind::explicit_list)
        throw std::invalid_argument("build_variance_schedule: use schedule_from_betas for explicit lists");
    VarianceSchedule vs;
    vs.T = T;
    vs.kind = kind;
    vs.beta_start = beta_start;
    vs.beta_end = beta_end;
    vs.sigma_bar_zero = sigma_bar_zero;
    vs.beta.resize(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        const double u = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        double frac = u;
        if (kind == BetaKind::cosine)
            frac = 0.5 * (1.0 - std::cos(3.14159265358979323846 * u));
        vs.beta[static_cast<std::size_t>(t) - 1] = beta_start + (beta_end - beta_start) * frac;
    }
    detail::finish_schedule(vs);
    vs.validate(true);
    return vs;
}

/// Build from an explicit beta list. strict=false relaxes the monotonicity
/// and range checks to the bare minimum (finite, in [0,1]); used by tests
/// that override beta with constants or limit values.
inline VarianceSchedule schedule_from_betas(std::vector<double> betas, bool strict = true,
                                            bool sigma_bar_zero = false) {
    if (betas.empty()) throw std::invalid_argument("schedule_from_betas: empty beta list");
    VarianceSchedule vs;
    vs.T = static_cast<int>(betas.size());
    vs.kind = BetaKind::explicit_list;
    vs.sigma_bar_zero = sigma_bar_zero;
    vs.beta = std::move(betas);
    for (double b : vs.beta)
        if (!(b >= 0.0 && b <= 1.0))
            throw std::invalid_argument("schedule_from_betas: beta outside [0,1]");
    detail::finish_schedule(vs);
    if (strict) vs.validate(true);
    return vs;
}

/// (1 - alpha_t) / sqrt(1 - abar_t): the standard reverse-process noise
/// coefficient. A beta = 0 override makes the step the identity; the 0/0
/// limit is resolved to 0.
inline double standard_coefficient(const VarianceSchedule& vs, int t) {
    const double num = 1.0 - vs.alpha_at(t);
    if (num == 0.0) return 0.0;
    return num / std::sqrt(1.0 - vs.alpha_bar_at(t));
}

/// Channel-noise extension of a VarianceSchedule for the receiver-side
/// modified process.
///
/// The per-step injected channel variance is sigma^2 * gamma_t with gamma
/// normalized in the variance domain,
///     sum_t gamma_t * prod_{j>t} alpha_j = 1,
/// so the accumulation
///     sigma_t^2 = alpha_t * sigma_{t-1}^2 + sigma^2 * gamma_t
/// starts at 0 and ends at exactly sigma^2: spreading the single-shot channel
/// noise across T_bar steps reproduces its final marginal.
struct ChannelNoiseSchedule {
    VarianceSchedule base;
    int T_bar = 0;
    double sigma = 0.0;  // total channel semantic-noise std at reception
    GammaShape shape = GammaShape::linear;
    std::vector<double> gamma;          // size T_bar
    std::vector<double> sigma_step_sq;  // size T_bar, the per-step injected channel variance
    std::vector<double> sigma_t_sq;     // size T_bar+1, [0] == 0

    double gamma_at(int t) const { check(t); return gamma[static_cast<std::size_t>(t) - 1]; }
    double sigma_step_sq_at(int t) const { check(t); return sigma_step_sq[static_cast<std::size_t>(t) - 1]; }
    double sigma_t_sq_at(int t) const {
        if (t < 0 || t > T_bar)
            throw std::out_of_range("ChannelNoiseSchedule: accumulated index out of range");
        return sigma_t_sq[static_cast<std::size_t>(t)];
    }

    std::string to_config_text() const {
        std::ostringstream os;
        os << base.to_config_text();
        os << "gamma_shape = " << to_string(shape) << "\n";
        os << "t_bar = " << T_bar << "\n";
        os << "sigma = " << format_g17(sigma) << "\n";
        return os.str();
    }

    void validate() const {
        if (T_bar < 1 || T_bar > base.T)
            throw std::invalid_argument("ChannelNoiseSchedule: require 1 <= T_bar <= base.T");
        if (sigma < 0.0) throw std::invalid_argument("ChannelNoiseSchedule: sigma must be >= 0");
        if (T_bar > 1) {
            for (int t = 1; t <= T_bar; ++t) {
                if (!(gamma_at(t) > 0.0 && gamma_at(t) < 1.0))
                    throw std::invalid_argument("ChannelNoiseSchedule: gamma outside (0,1)");
                if (t > 1 && !(gamma_at(t) > gamma_at(t - 1)))
                    throw std::invalid_argument("ChannelNoiseSchedule: gamma must strictly increase");
            }
        }
        if (sigma_t_sq_at(0) != 0.0)
            throw std::invalid_argument("ChannelNoiseSchedule: sigma_0^2 must be 0");
        const double total = sigma * sigma;
        if (std::abs(sigma_t_sq_at(T_bar) - total) > 1e-12 * std::max(total, 1e-300))
            throw std::invalid_argument(
                "ChannelNoiseSchedule: accumulated variance at T_bar must equal sigma^2");
        for (int t = 1; t <= T_bar; ++t) {
            const double expect = base.alpha_at(t) * sigma_t_sq_at(t - 1) + sigma_step_sq_at(t);
            if (std::abs(sigma_t_sq_at(t) - expect) > 1e-12 * std::max(expect, 1e-300))
                throw std::invalid_argument("ChannelNoiseSchedule: accumulation recursion violated");
        }
    }

private:
    void check(int t) const {
        if (t < 1 || t > T_bar)
            throw std::out_of_range("ChannelNoiseSchedule: step index out of range");
    }
};

/// Solve for the normalized gamma schedule and derived variances.
///
/// The construction fixes the accumulated channel-noise fraction f(t) first
/// (f(0) = 0, f(T_bar) = 1, nondecreasing) and derives the per-step fractions
///     gamma_t = f(t) - alpha_t f(t-1),
/// so sigma_t^2 = sigma^2 f(t) satisfies the accumulation recursion exactly
/// and the variance-domain normalization
///     sum_t gamma_t prod_{j>t} alpha_j = f(T_bar) = 1
/// holds by telescoping. shape picks f: linear uses f(t) = t / T_bar,
/// proportional follows the cumulative beta mass of the base schedule. Both
/// give strictly increasing gamma in (0,1) for valid bases. T_bar == 1 is the
/// documented degenerate case: gamma_1 = 1 and the single step carries all of
/// sigma^2.
inline ChannelNoiseSchedule build_channel_schedule(int T_bar, double sigma,
                                                   const VarianceSchedule& base,
                                                   GammaShape shape = GammaShape::linear) {
    if (T_bar < 1) throw std::invalid_argument("build_channel_schedule: T_bar must be >= 1");
    if (T_bar > base.T)
        throw std::invalid_argument("build_channel_schedule: T_bar exceeds base schedule length");
    if (sigma < 0.0) throw std::invalid_argument("build_channel_schedule: sigma must be >= 0");

    ChannelNoiseSchedule cs;
    cs.base = base;
    cs.T_bar = T_bar;
    cs.sigma = sigma;
    cs.shape = shape;
    cs.gamma.resize(static_cast<std::size_t>(T_bar));
    cs.sigma_step_sq.resize(static_cast<std::size_t>(T_bar));
    cs.sigma_t_sq.assign(static_cast<std::size_t>(T_bar) + 1, 0.0);

    std::vector<double> f(static_cast<std::size_t>(T_bar) + 1, 0.0);
    if (shape == GammaShape::linear) {
        for (int t = 1; t <= T_bar; ++t)
            f[static_cast<std::size_t>(t)] = static_cast<double>(t) / T_bar;
    } else {
        double total = 0.0;
        for (int t = 1; t <= T_bar; ++t) {
            if (!(base.beta_at(t) > 0.0))
                throw std::invalid_argument(
                    "build_channel_schedule: proportional shape needs positive base betas");
            total += base.beta_at(t);
            f[static_cast<std::size_t>(t)] = total;
        }
        for (int t = 1; t <= T_bar; ++t) f[static_cast<std::size_t>(t)] /= total;
    }
    f[static_cast<std::size_t>(T_bar)] = 1.0;

    double prev_gamma = 0.0;
    for (int t = 1; t <= T_bar; ++t) {
        const double g = f[static_cast<std::size_t>(t)] -
                         base.alpha_at(t) * f[static_cast<std::size_t>(t) - 1];
        const bool in_range = g > 0.0 && (T_bar == 1 ? g <= 1.0 : g < 1.0);
        if (!in_range || !(g > prev_gamma)) {
            std::ostringstream os;
            os << "build_channel_schedule: infeasible gamma normalization: gamma[" << t
               << "] = " << format_g17(g) << " must lie in (0,1) above gamma[" << (t - 1)
               << "] = " << format_g17(prev_gamma) << " (T_bar=" << T_bar
               << ", sigma=" << format_g17(sigma) << ", shape=" << to_string(shape) << ")";
            throw std::runtime_error(os.str());
        }
        prev_gamma = g;
        cs.gamma[static_cast<std::size_t>(t) - 1] = g;
        cs.sigma_step_sq[static_cast<std::size_t>(t) - 1] = sigma * sigma * g;
        cs.sigma_t_sq[static_cast<std::size_t>(t)] = sigma * sigma * f[static_cast<std::size_t>(t)];
    }
    return cs;
}

/// Residual normalizer of the modified process at step t.
inline double channel_residual_scale(const ChannelNoiseSchedule& cs, int t, CoefficientForm form) {
    const double ab = cs.base.alpha_bar_at(t);
    const double s2 = cs.sigma_t_sq_at(t);
    if (form == CoefficientForm::std_minus_variance) return std::sqrt(1.0 - ab) - s2;
    return std::sqrt(1.0 - ab + s2);
}

/// C(alpha, sigma, t): the noise coefficient of the modified reverse step,
///
///   C = (1 - alpha_t + sigma_{t,t-1}^2) * (sqrt(1 - abar_t) - sigma_t^2)
///       / (1 - abar_t + sigma_{t-1}^2 * alpha_t + sigma_{t,t-1}^2)
///
/// With all channel variances zero this reduces to standard_coefficient.
inline double modified_coefficient(const ChannelNoiseSchedule& cs, int t,
                                   CoefficientForm form = CoefficientForm::std_minus_variance) {
    const double a = cs.base.alpha_at(t);
    const double ab = cs.base.alpha_bar_at(t);
    const double s2_prev = cs.sigma_t_sq_at(t - 1);
    const double s2_step = cs.sigma_step_sq_at(t);
    const double num = 1.0 - a + s2_step;
    if (num == 0.0) return 0.0;  // beta = 0 override with no channel noise
    const double denom = 1.0 - ab + s2_prev * a + s2_step;
    return num * channel_residual_scale(cs, t, form) / denom;
}

/// Convenience: a channel schedule with sigma = 0 over the full base length
/// (all gamma-derived variances vanish; modified ops reduce to standard).
inline ChannelNoiseSchedule noiseless_channel_schedule(const VarianceSchedule& base,
                                                       GammaShape shape = GammaShape::linear) {
    return build_channel_schedule(base.T, 0.0, base, shape);
}

} // namespace semdiff
