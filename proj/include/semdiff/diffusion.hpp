#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "semdiff/latent.hpp"
#include "semdiff/rng.hpp"
#include "semdiff/schedules.hpp"
#include "semdiff/source.hpp"

namespace semdiff {

/// Noise predictor handle: (z_t, t, label) -> predicted noise.
using DenoiserFn = std::function<Latent(const Latent&, int, int)>;

/// One forward diffusion step: z_t = sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) eps.
/// Consumes d normal draws.
inline Latent forward_step(const Latent& z_prev, int t, const VarianceSchedule& vs, Rng& rng) {
    const double b = vs.beta_at(t);
    const double keep = std::sqrt(1.0 - b);
    const double add = std::sqrt(b);
    Latent out(z_prev.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * z_prev[i] + add * rng.normal();
    return out;
}

/// One forward step of the channel-modified process: the standard step plus
/// the per-step channel injection sqrt(sigma^2 gamma_t) eps'. Stepwise
/// accumulation of these reproduces the single-shot channel marginal.
/// Consumes d normal draws, plus d more when the channel term is nonzero.
inline Latent forward_step_channel(const Latent& z_prev, int t, const ChannelNoiseSchedule& cs,
                                   Rng& rng) {
    Latent out = forward_step(z_prev, t, cs.base, rng);
    const double step_sq = cs.sigma_step_sq_at(t);
    if (step_sq > 0.0) {
        const double scale = std::sqrt(step_sq);
        for (double& x : out) x += scale * rng.normal();
    }
    return out;
}

/// Single-shot forward marginal:
///   z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps [+ sigma_t eps^C].
/// Consumes d normal draws, plus d more when the channel term is included
/// and nonzero.
inline Latent forward_marginal(const Latent& z0, int t, const ChannelNoiseSchedule& cs,
                               bool include_channel, Rng& rng) {
    const double ab = cs.base.alpha_bar_at(t);
    const double sig = std::sqrt(std::max(0.0, 1.0 - ab));
    const double sqrt_ab = std::sqrt(ab);
    Latent out(z0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sqrt_ab * z0[i] + sig * rng.normal();
    if (include_channel) {
        const double ch = cs.sigma_t_sq_at(t);
        if (ch > 0.0) {
            const double scale = std::sqrt(ch);
            for (double& x : out) x += scale * rng.normal();
        }
    }
    return out;
}

/// Standard reverse step:
///   z_{t-1} = (z_t - (1-alpha_t)/sqrt(1-abar_t) eps_hat) / sqrt(alpha_t)
///             + sigma_bar_t eps~.
/// Deterministic when sigma_bar_t == 0 (no rng consumed in that case).
inline Latent reverse_step_standard(const Latent& z_t, int t, const Latent& eps_hat,
                                    const VarianceSchedule& vs, Rng& rng) {
    require_same_dim(z_t, eps_hat, "reverse_step_standard");
    const double coef = standard_coefficient(vs, t);
    const double inv_sqrt_a = 1.0 / std::sqrt(vs.alpha_at(t));
    const double noise = vs.sigma_bar_at(t);
    Latent out(z_t.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_a * (z_t[i] - coef * eps_hat[i]);
    if (noise > 0.0)
        for (double& x : out) x += noise * rng.normal();
    return out;
}

/// Modified reverse step of the fine-tuning module: same shape as the
/// standard step with C(alpha, sigma, t) in place of the standard
/// coefficient. With all channel variances zero the two steps agree to
/// floating rounding on a shared rng stream.
inline Latent reverse_step_modified(const Latent& z_t, int t, const Latent& eps_hat,
                                    const ChannelNoiseSchedule& cs, Rng& rng,
                                    CoefficientForm form = CoefficientForm::std_minus_variance) {
    require_same_dim(z_t, eps_hat, "reverse_step_modified");
    const double coef = modified_coefficient(cs, t, form);
    const double inv_sqrt_a = 1.0 / std::sqrt(cs.base.alpha_at(t));
    const double noise = cs.base.sigma_bar_at(t);
    Latent out(z_t.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_a * (z_t[i] - coef * eps_hat[i]);
    if (noise > 0.0)
        for (double& x : out) x += noise * rng.normal();
    return out;
}

/// Posterior mean given (z_t, z_0):
///   mu = sqrt(alpha_t)(1 - abar_{t-1} + sigma_{t-1}^2) / D * z_t
///      + sqrt(abar_{t-1})(1 - alpha_t + sigma_{t,t-1}^2) / D * z_0,
/// D = 1 - abar_t + sigma_{t-1}^2 alpha_t + sigma_{t,t-1}^2.
inline Latent posterior_mean_given_start(const Latent& z_t, const Latent& z0, int t,
                                 const ChannelNoiseSchedule& cs) {
    require_same_dim(z_t, z0, "posterior_mean_given_start");
    const double a = cs.base.alpha_at(t);
    const double ab = cs.base.alpha_bar_at(t);
    const double ab_prev = cs.base.alpha_bar_at(t - 1);
    const double s2_prev = cs.sigma_t_sq_at(t - 1);
    const double s2_step = cs.sigma_step_sq_at(t);
    const double denom = 1.0 - ab + s2_prev * a + s2_step;
    const double w_t = std::sqrt(a) * (1.0 - ab_prev + s2_prev) / denom;
    const double w_0 = std::sqrt(ab_prev) * (1.0 - a + s2_step) / denom;
    Latent out(z_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w_t * z_t[i] + w_0 * z0[i];
    return out;
}

/// Noise-form posterior mean: (z_t - C(alpha, sigma, t) eps_hat) / sqrt(alpha_t).
/// Substituting z_0 = (z_t - u_t eps_hat) / sqrt(abar_t) into the (z_t, z_0)
/// form reproduces this exactly, for either coefficient form.
inline Latent posterior_mean_from_noise(const Latent& z_t, const Latent& eps_hat, int t,
                                 const ChannelNoiseSchedule& cs,
                                 CoefficientForm form = CoefficientForm::std_minus_variance) {
    require_same_dim(z_t, eps_hat, "posterior_mean_from_noise");
    const double coef = modified_coefficient(cs, t, form);
    const double inv_sqrt_a = 1.0 / std::sqrt(cs.base.alpha_at(t));
    Latent out(z_t.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_a * (z_t[i] - coef * eps_hat[i]);
    return out;
}

/// How a partial run (t_steps < T) picks its schedule indices.
///
/// suffix: visit t = t_steps .. 1, dropping the coarse early indices; a
///         transmitter that stops early leaves exactly the remaining suffix
///         for the receiver to resume.
/// subsampled: visit round(k T / t_steps) for k = t_steps .. 1, spreading the
///         visited indices over the whole schedule.
enum class StepIndexing { suffix, subsampled };

/// Schedule indices visited by a partial reverse run, in visit order.
inline std::vector<int> partial_step_indices(int t_steps, int T, StepIndexing indexing) {
    if (t_steps < 0 || t_steps > T)
        throw std::invalid_argument("partial_step_indices: t_steps outside [0, T]");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(t_steps));
    if (indexing == StepIndexing::suffix) {
        for (int t = t_steps; t >= 1; --t) out.push_back(t);
    } else {
        for (int k = t_steps; k >= 1; --k) {
            const int t = static_cast<int>(
                std::lround(static_cast<double>(k) * T / static_cast<double>(t_steps)));
            out.push_back(std::max(1, t));
        }
    }
    return out;
}

/// Multi-step generation F1: draw z ~ N(0, I), then apply the standard
/// reverse step over the chosen index set (suffix convention by default).
/// t_steps == 0 returns the initial draw. Rng use: dim draws for the initial
/// noise, then whatever each reverse step consumes, in visit order.
inline Latent generate(int t_steps, Conditioning c, const DenoiserFn& denoiser,
                       const VarianceSchedule& vs, int dim, Rng& rng,
                       StepIndexing indexing = StepIndexing::suffix) {
    if (t_steps < 0 || t_steps > vs.T)
        throw std::invalid_argument("generate: t_steps outside [0, T]");
    Latent z(static_cast<std::size_t>(dim));
    rng.fill_normal(z);
    for (const int t : partial_step_indices(t_steps, vs.T, indexing))
        z = reverse_step_standard(z, t, denoiser(z, t, c.label), vs, rng);
    return z;
}

/// Receiver-side fine-tuning F2: apply the modified reverse step for
/// t = t_bar .. 1 starting from the received latent, which is treated as
/// z_{T_bar} of the modified process. t_bar == 0 is the identity.
inline Latent finetune(const Latent& z_received, int t_bar, Conditioning c,
                       const DenoiserFn& denoiser, const ChannelNoiseSchedule& cs, Rng& rng,
                       CoefficientForm form = CoefficientForm::std_minus_variance) {
    if (t_bar < 0) throw std::invalid_argument("finetune: t_bar must be >= 0");
    if (t_bar > cs.T_bar)
        throw std::invalid_argument("finetune: t_bar exceeds channel schedule length");
    Latent z = z_received;
    for (int t = t_bar; t >= 1; --t)
        z = reverse_step_modified(z, t, denoiser(z, t, c.label), cs, rng, form);
    return z;
}

/// Bind the closed-form conditional-expectation predictor as a denoiser
/// handle (stands in for a trained denoising network).
inline DenoiserFn make_oracle_denoiser(const SemanticSource& src, const ChannelNoiseSchedule& cs,
                                       NoiseMode mode,
                                       CoefficientForm form = CoefficientForm::std_minus_variance) {
    return [&src, cs, mode, form](const Latent& z_t, int t, int label) {
        return oracle_noise_predict(src, z_t, t, Conditioning{label}, cs, mode, form);
    };
}

} // namespace semdiff
