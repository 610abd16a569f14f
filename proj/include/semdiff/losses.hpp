#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdiff/diffusion.hpp"
#include "semdiff/latent.hpp"
#include "semdiff/rng.hpp"
#include "semdiff/schedules.hpp"
#include "semdiff/source.hpp"

namespace semdiff {

/// VAE encoder-decoder loss:
///   (1/2m) sum_i sum_j (1 + log s_ij^2 - s_ij^2 - mu_ij^2)
///   + (1/m) sum_i ||s_i - sbar_i||^2,  m = M.
/// Evaluator only; no image VAE is trained here.
inline double vae_loss(const std::vector<std::vector<double>>& mu,
                       const std::vector<std::vector<double>>& sigma,
                       const std::vector<std::vector<double>>& originals,
                       const std::vector<std::vector<double>>& reconstructions) {
    const std::size_t m = mu.size();
    if (m == 0) throw std::invalid_argument("vae_loss: empty dataset");
    if (sigma.size() != m || originals.size() != m || reconstructions.size() != m)
        throw std::invalid_argument("vae_loss: set sizes must match");
    double kl = 0.0, rec = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (mu[i].size() != sigma[i].size())
            throw std::invalid_argument("vae_loss: mu/sigma size mismatch at item " +
                                        std::to_string(i));
        if (originals[i].size() != reconstructions[i].size())
            throw std::invalid_argument("vae_loss: original/reconstruction size mismatch at item " +
                                        std::to_string(i));
        for (std::size_t j = 0; j < mu[i].size(); ++j) {
            const double s2 = sigma[i][j] * sigma[i][j];
            if (!(sigma[i][j] > 0.0))
                throw std::invalid_argument("vae_loss: sigma must be > 0");
            kl += 1.0 + std::log(s2) - s2 - mu[i][j] * mu[i][j];
        }
        for (std::size_t j = 0; j < originals[i].size(); ++j) {
            const double d = originals[i][j] - reconstructions[i][j];
            rec += d * d;
        }
    }
    const double dm = static_cast<double>(m);
    return kl / (2.0 * dm) + rec / dm;
}

enum class Activation { tanh_act, identity };

/// Two-layer fully connected noise predictor, the desk-scale stand-in for a
/// full denoising network.
/// Input: z_t | time embedding (t/T plus sin/cos at two frequencies) |
/// conditioning one-hot. Output: predicted noise of dimension d.
struct TinyDenoiser {
    int d = 0;
    int hidden = 0;
    int T = 0;  // schedule length the time embedding is normalized by
    std::vector<int> labels;
    Activation act = Activation::tanh_act;
    std::vector<double> params;  // W1 | b1 | W2 | b2, row-major

    static constexpr int kTimeEmbed = 5;

    int in_dim() const { return d + kTimeEmbed + static_cast<int>(labels.size()); }
    std::size_t n_params() const {
        const std::size_t in = static_cast<std::size_t>(in_dim());
        const std::size_t h = static_cast<std::size_t>(hidden);
        const std::size_t out = static_cast<std::size_t>(d);
        return h * in + h + out * h + out;
    }

    static TinyDenoiser create(int d, int hidden, std::vector<int> labels, int T,
                               Activation act, Rng& rng) {
        TinyDenoiser m;
        m.d = d;
        m.hidden = hidden;
        m.T = T;
        m.labels = std::move(labels);
        m.act = act;
        m.params.resize(m.n_params());
        const double scale = 1.0 / std::sqrt(static_cast<double>(m.in_dim()));
        for (double& p : m.params) p = scale * rng.normal();
        return m;
    }

    void embed_input(const Latent& z, int t, int label, std::vector<double>& x) const {
        if (z.size() != static_cast<std::size_t>(d))
            throw std::invalid_argument("TinyDenoiser: latent dimension mismatch");
        x.assign(static_cast<std::size_t>(in_dim()), 0.0);
        for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(i)];
        const double u = static_cast<double>(t) / static_cast<double>(T);
        const double tau = 6.283185307179586476925286766559;
        x[static_cast<std::size_t>(d) + 0] = u;
        x[static_cast<std::size_t>(d) + 1] = std::sin(tau * u);
        x[static_cast<std::size_t>(d) + 2] = std::cos(tau * u);
        x[static_cast<std::size_t>(d) + 3] = std::sin(2.0 * tau * u);
        x[static_cast<std::size_t>(d) + 4] = std::cos(2.0 * tau * u);
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (labels[k] == label) x[static_cast<std::size_t>(d + kTimeEmbed) + k] = 1.0;
    }

    Latent predict(const Latent& z, int t, int label) const {
        std::vector<double> x, h, hpre;
        forward(z, t, label, x, hpre, h);
        const std::size_t in = static_cast<std::size_t>(in_dim());
        const std::size_t nh = static_cast<std::size_t>(hidden);
        const double* w2 = params.data() + nh * in + nh;
        const double* b2 = w2 + static_cast<std::size_t>(d) * nh;
        Latent out(static_cast<std::size_t>(d));
        for (std::size_t o = 0; o < out.size(); ++o) {
            double acc = b2[o];
            for (std::size_t j = 0; j < nh; ++j) acc += w2[o * nh + j] * h[j];
            out[o] = acc;
        }
        return out;
    }

    /// Snapshot this model as a denoiser handle (copies the parameters).
    DenoiserFn as_denoiser() const {
        return [m = *this](const Latent& z, int t, int label) { return m.predict(z, t, label); };
    }

    void forward(const Latent& z, int t, int label, std::vector<double>& x,
                 std::vector<double>& hpre, std::vector<double>& h) const {
        embed_input(z, t, label, x);
        const std::size_t in = static_cast<std::size_t>(in_dim());
        const std::size_t nh = static_cast<std::size_t>(hidden);
        const double* w1 = params.data();
        const double* b1 = w1 + nh * in;
        hpre.assign(nh, 0.0);
        h.assign(nh, 0.0);
        for (std::size_t j = 0; j < nh; ++j) {
            double acc = b1[j];
            for (std::size_t i = 0; i < in; ++i) acc += w1[j * in + i] * x[i];
            hpre[j] = acc;
            h[j] = (act == Activation::tanh_act) ? std::tanh(acc) : acc;
        }
    }

    /// Accumulate parameter gradients for one sample given dL/d(output).
    void accumulate_grad(const std::vector<double>& x, const std::vector<double>& hpre,
                         const std::vector<double>& h, const std::vector<double>& dout,
                         std::vector<double>& grad) const {
        const std::size_t in = static_cast<std::size_t>(in_dim());
        const std::size_t nh = static_cast<std::size_t>(hidden);
        const std::size_t out = static_cast<std::size_t>(d);
        const double* w2 = params.data() + nh * in + nh;
        double* g_w1 = grad.data();
        double* g_b1 = g_w1 + nh * in;
        double* g_w2 = g_b1 + nh;
        double* g_b2 = g_w2 + out * nh;
        std::vector<double> dh(nh, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            g_b2[o] += dout[o];
            for (std::size_t j = 0; j < nh; ++j) {
                g_w2[o * nh + j] += dout[o] * h[j];
                dh[j] += dout[o] * w2[o * nh + j];
            }
        }
        for (std::size_t j = 0; j < nh; ++j) {
            const double dpre =
                (act == Activation::tanh_act) ? dh[j] * (1.0 - std::tanh(hpre[j]) * std::tanh(hpre[j]))
                                              : dh[j];
            g_b1[j] += dpre;
            for (std::size_t i = 0; i < in; ++i) g_w1[j * in + i] += dpre * x[i];
        }
    }
};

/// One supervised pair for the noise-prediction objective: the diffused
/// latent and the (mode-normalized) total injected noise it carries.
struct NoiseSample {
    Latent z0;
    Latent z_t;
    Latent target;
    int t = 1;
    int label = 0;
};

/// Draw a training batch at the diffused points. Clean mode targets the unit
/// forward noise; channel mode targets the combined diffusion-plus-channel
/// noise scaled by the mode normalizer, so the predictor learns the combined
/// distribution the fine-tuning module denoises.
inline std::vector<NoiseSample> make_noise_batch(const SemanticSource& src,
                                                 const ChannelNoiseSchedule& cs, std::size_t n,
                                                 NoiseMode mode, Rng& rng,
                                                 CoefficientForm form = CoefficientForm::std_minus_variance) {
    std::vector<NoiseSample> batch;
    batch.reserve(n);
    const auto labels = src.labels();
    for (std::size_t k = 0; k < n; ++k) {
        NoiseSample s;
        s.label = labels[rng.below(labels.size())];
        s.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cs.T_bar))) + 1;
        s.z0 = sample_z0(src, Conditioning{s.label}, rng);
        const double ab = cs.base.alpha_bar_at(s.t);
        const double sig = std::sqrt(1.0 - ab);
        const double sqrt_ab = std::sqrt(ab);
        const double ch_sq = cs.sigma_t_sq_at(s.t);
        s.z_t.resize(s.z0.size());
        s.target.resize(s.z0.size());
        if (mode == NoiseMode::clean || ch_sq == 0.0) {
            for (std::size_t i = 0; i < s.z0.size(); ++i) {
                const double eps = rng.normal();
                s.z_t[i] = sqrt_ab * s.z0[i] + sig * eps;
                s.target[i] = eps;
            }
            if (mode == NoiseMode::channel) {
                // Same draws as clean; renormalize the target for the channel
                // identity. With zero accumulated channel variance the factor
                // is exactly 1 and the clean target is kept bitwise.
                const double u = noise_normalizer(cs, s.t, mode, form);
                if (u != sig)
                    for (std::size_t i = 0; i < s.z0.size(); ++i)
                        s.target[i] = sig * s.target[i] / u;
            }
        } else {
            const double ch = std::sqrt(ch_sq);
            const double u = noise_normalizer(cs, s.t, mode, form);
            if (u == 0.0)
                throw std::domain_error("make_noise_batch: degenerate noise normalizer at t=" +
                                        std::to_string(s.t));
            for (std::size_t i = 0; i < s.z0.size(); ++i) {
                const double eps = rng.normal();
                const double eps_c = rng.normal();
                const double total = sig * eps + ch * eps_c;
                s.z_t[i] = sqrt_ab * s.z0[i] + total;
                s.target[i] = total / u;
            }
        }
        batch.push_back(std::move(s));
    }
    return batch;
}

/// Mean squared prediction error over the batch (summed over dimensions,
/// averaged over samples): the empirical noise-prediction objective.
inline double noise_prediction_loss(const DenoiserFn& denoiser,
                                    const std::vector<NoiseSample>& batch) {
    if (batch.empty()) throw std::invalid_argument("noise_prediction_loss: empty batch");
    double acc = 0.0;
    for (const auto& s : batch) {
        const Latent pred = denoiser(s.z_t, s.t, s.label);
        require_same_dim(pred, s.target, "noise_prediction_loss");
        acc += squared_distance(pred, s.target);
    }
    return acc / static_cast<double>(batch.size());
}

/// Analytic parameter gradient of noise_prediction_loss for a TinyDenoiser.
inline std::vector<double> noise_loss_gradient(const TinyDenoiser& model,
                                               const std::vector<NoiseSample>& batch) {
    if (batch.empty()) throw std::invalid_argument("noise_loss_gradient: empty batch");
    std::vector<double> grad(model.n_params(), 0.0);
    std::vector<double> x, hpre, h, dout;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& s : batch) {
        model.forward(s.z_t, s.t, s.label, x, hpre, h);
        const std::size_t in = static_cast<std::size_t>(model.in_dim());
        const std::size_t nh = static_cast<std::size_t>(model.hidden);
        const double* w2 = model.params.data() + nh * in + nh;
        const double* b2 = w2 + static_cast<std::size_t>(model.d) * nh;
        dout.assign(static_cast<std::size_t>(model.d), 0.0);
        for (std::size_t o = 0; o < dout.size(); ++o) {
            double pred = b2[o];
            for (std::size_t j = 0; j < nh; ++j) pred += w2[o * nh + j] * h[j];
            dout[o] = 2.0 * (pred - s.target[o]) * inv_n;
        }
        model.accumulate_grad(x, hpre, h, dout, grad);
    }
    return grad;
}

/// Compare analytic gradients against central finite differences with step
/// 1e-5 scaled to each parameter. Returns the maximum relative error,
/// normalized by max(1, |analytic|, |numeric|).
inline double grad_check(TinyDenoiser model, const std::vector<NoiseSample>& batch) {
    const std::vector<double> analytic = noise_loss_gradient(model, batch);
    const DenoiserFn fn = [&model](const Latent& z, int t, int label) {
        return model.predict(z, t, label);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const double theta = model.params[i];
        const double h = 1e-5 * std::max(1.0, std::abs(theta));
        model.params[i] = theta + h;
        const double fp = noise_prediction_loss(fn, batch);
        model.params[i] = theta - h;
        const double fm = noise_prediction_loss(fn, batch);
        model.params[i] = theta;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

struct TrainOptions {
    int hidden = 48;
    double learning_rate = 0.05;
    int batch_size = 64;
    int batches_per_epoch = 16;
    double grad_clip = 5.0;
    int eval_batch_size = 2048;
    CoefficientForm form = CoefficientForm::std_minus_variance;
};

struct TrainResult {
    TinyDenoiser model;
    std::vector<std::pair<int, double>> curve;  // (epoch, eval loss); epoch 0 = initial
};

/// Plain SGD with gradient clipping on the noise-prediction objective.
/// Single-threaded and fully determined by the rng; aborts if the evaluation
/// loss exceeds 10x its initial value.
inline TrainResult train_tiny_denoiser(const SemanticSource& src, const ChannelNoiseSchedule& cs,
                                       NoiseMode mode, int epochs, Rng& rng,
                                       const TrainOptions& opts = {}) {
    if (epochs < 1) throw std::invalid_argument("train_tiny_denoiser: epochs must be >= 1");
    TrainResult res;
    res.model = TinyDenoiser::create(src.dim, opts.hidden, src.labels(), cs.T_bar,
                                     Activation::tanh_act, rng);
    const auto eval_batch = make_noise_batch(src, cs, static_cast<std::size_t>(opts.eval_batch_size),
                                             mode, rng, opts.form);
    // Live view of the model being trained (not a snapshot).
    const DenoiserFn fn = [&model = res.model](const Latent& z, int t, int label) {
        return model.predict(z, t, label);
    };
    const double initial = noise_prediction_loss(fn, eval_batch);
    res.curve.emplace_back(0, initial);
    for (int e = 1; e <= epochs; ++e) {
        for (int b = 0; b < opts.batches_per_epoch; ++b) {
            const auto batch = make_noise_batch(src, cs, static_cast<std::size_t>(opts.batch_size),
                                                mode, rng, opts.form);
            std::vector<double> grad = noise_loss_gradient(res.model, batch);
            double norm_sq = 0.0;
            for (double g : grad) norm_sq += g * g;
            const double norm = std::sqrt(norm_sq);
            const double scale =
                (norm > opts.grad_clip) ? opts.grad_clip / norm : 1.0;
            for (std::size_t i = 0; i < grad.size(); ++i)
                res.model.params[i] -= opts.learning_rate * scale * grad[i];
        }
        const double loss = noise_prediction_loss(fn, eval_batch);
        res.curve.emplace_back(e, loss);
        if (!(loss < 10.0 * initial) || !std::isfinite(loss))
            throw std::runtime_error("train_tiny_denoiser: divergence at epoch " +
                                     std::to_string(e) + " (loss " + format_g17(loss) +
                                     " vs initial " + format_g17(initial) + ")");
    }
    return res;
}

/// Versioned binary blob: magic "SDND" | version u8 | schedule digest u64 BE |
/// d, hidden, T, n_labels u32 BE | activation u8 | labels i32 BE |
/// params f64 bit patterns BE.
inline std::vector<std::uint8_t> serialize_denoiser(const TinyDenoiser& m,
                                                    std::uint64_t schedule_digest) {
    std::vector<std::uint8_t> out;
    const char* magic = "SDND";
    out.insert(out.end(), magic, magic + 4);
    out.push_back(1);
    const auto push32 = [&out](std::uint32_t v) {
        for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    };
    const auto push64 = [&out](std::uint64_t v) {
        for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    };
    push64(schedule_digest);
    push32(static_cast<std::uint32_t>(m.d));
    push32(static_cast<std::uint32_t>(m.hidden));
    push32(static_cast<std::uint32_t>(m.T));
    push32(static_cast<std::uint32_t>(m.labels.size()));
    out.push_back(m.act == Activation::tanh_act ? 0 : 1);
    for (int l : m.labels) push32(static_cast<std::uint32_t>(l));
    for (double p : m.params) {
        std::uint64_t bits;
        std::memcpy(&bits, &p, sizeof(bits));
        push64(bits);
    }
    return out;
}

inline TinyDenoiser parse_denoiser(const std::vector<std::uint8_t>& bytes,
                                   std::uint64_t* digest_out = nullptr) {
    if (bytes.size() < 30 || std::memcmp(bytes.data(), "SDND", 4) != 0 || bytes[4] != 1)
        throw std::invalid_argument("parse_denoiser: bad header");
    std::size_t off = 5;
    const auto rd32 = [&bytes, &off]() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes.at(off++);
        return v;
    };
    const auto rd64 = [&bytes, &off]() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | bytes.at(off++);
        return v;
    };
    const std::uint64_t digest = rd64();
    if (digest_out) *digest_out = digest;
    TinyDenoiser m;
    m.d = static_cast<int>(rd32());
    m.hidden = static_cast<int>(rd32());
    m.T = static_cast<int>(rd32());
    const std::uint32_t n_labels = rd32();
    m.act = bytes.at(off++) == 0 ? Activation::tanh_act : Activation::identity;
    for (std::uint32_t i = 0; i < n_labels; ++i) m.labels.push_back(static_cast<int>(rd32()));
    m.params.resize(m.n_params());
    for (double& p : m.params) {
        const std::uint64_t bits = rd64();
        std::memcpy(&p, &bits, sizeof(p));
    }
    return m;
}

} // namespace semdiff
