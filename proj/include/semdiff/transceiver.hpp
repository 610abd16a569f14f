#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include "semdiff/channel.hpp"
#include "semdiff/diffusion.hpp"
#include "semdiff/metrics.hpp"
#include "semdiff/schedules.hpp"
#include "semdiff/source.hpp"

namespace semdiff {

enum class Variant { ROUTE, NonFineTuning, EdgeAIGC, LocalAIGC };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::ROUTE: return "ROUTE";
        case Variant::NonFineTuning: return "NonFineTuning";
        case Variant::EdgeAIGC: return "EdgeAIGC";
        case Variant::LocalAIGC: return "LocalAIGC";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "ROUTE") return Variant::ROUTE;
    if (s == "NonFineTuning") return Variant::NonFineTuning;
    if (s == "EdgeAIGC") return Variant::EdgeAIGC;
    if (s == "LocalAIGC") return Variant::LocalAIGC;
    throw std::invalid_argument("unknown variant: " + s);
}

/// End-to-end pipeline wiring. The step budget is shared across compared
/// variants; only ROUTE splits it between tiers.
struct PipelineConfig {
    Variant variant = Variant::ROUTE;
    int t_edge = 10;
    int t_local = 10;
    int total_steps = 20;
    ChannelConfig channel;
    double timeout_s = 60.0;
    int expansion_factor = 48;  // full-content vs latent element ratio
    GammaShape gamma_shape = GammaShape::linear;
    CoefficientForm form = CoefficientForm::std_minus_variance;

    void validate() const {
        if (total_steps < 1) throw std::invalid_argument("PipelineConfig: total_steps must be >= 1");
        if (t_edge < 0 || t_local < 0 || t_edge + t_local != total_steps)
            throw std::invalid_argument("PipelineConfig: t_edge + t_local must equal total_steps");
        switch (variant) {
            case Variant::ROUTE:
                break;
            case Variant::NonFineTuning:
            case Variant::EdgeAIGC:
                if (t_local != 0)
                    throw std::invalid_argument("PipelineConfig: this variant has t_local = 0");
                break;
            case Variant::LocalAIGC:
                if (t_edge != 0)
                    throw std::invalid_argument("PipelineConfig: LocalAIGC has t_edge = 0");
                break;
        }
        if (expansion_factor < 1)
            throw std::invalid_argument("PipelineConfig: expansion_factor must be >= 1");
        channel.validate();
    }
};

/// One pipeline run, fully described.
struct TranscriptRecord {
    Variant variant = Variant::ROUTE;
    int label = 0;
    double snr_db = 0.0;
    double rho_edge = 1.0;
    double rho_local = 1.0;
    int t_edge = 0;
    int t_local = 0;
    double o_bits = 0.0;  // transmitted content bits (metadata excluded)
    double l1_s = 0.0;
    double l2_s = 0.0;
    double l3_s = 0.0;
    double l_s = 0.0;
    bool failed = false;
    double mse = 0.0;
    double component_acc = 0.0;
    double energy_dist = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
    Latent final_latent;
};

/// Edge-side generation: run the first t_edge reverse indices of the shared
/// trajectory (t = total_steps .. total_steps - t_edge + 1) from fresh noise
/// and package the intermediate latent. residual_step tells the receiver how
/// many indices remain.
inline SemanticPayload edge_encode(Conditioning c, int t_edge, const DenoiserFn& denoiser,
                                   const VarianceSchedule& vs, int total_steps, int dim, Rng& rng) {
    if (total_steps < 0 || total_steps > vs.T)
        throw std::invalid_argument("edge_encode: total_steps outside [0, T]");
    if (t_edge < 0 || t_edge > total_steps)
        throw std::invalid_argument("edge_encode: t_edge outside [0, total_steps]");
    Latent z(static_cast<std::size_t>(dim));
    rng.fill_normal(z);
    for (int t = total_steps; t > total_steps - t_edge; --t)
        z = reverse_step_standard(z, t, denoiser(z, t, c.label), vs, rng);
    SemanticPayload p;
    p.latent = std::move(z);
    p.conditioning_label = c.label;
    p.residual_step = total_steps - t_edge;
    p.schedule_digest = vs.digest();
    return p;
}

/// Receiver side: verify the schedule digest, then fine-tune for
/// residual_step modified steps. Non-fine-tuning variants (or a zero
/// residual) pass the latent through unchanged.
inline Latent local_decode(const SemanticPayload& received, const DenoiserFn& denoiser_ft,
                           const VarianceSchedule& base, const ChannelNoiseSchedule* cs,
                           Variant variant, Rng& rng,
                           CoefficientForm form = CoefficientForm::std_minus_variance) {
    if (received.schedule_digest != base.digest())
        throw std::runtime_error("local_decode: schedule digest mismatch, refusing to decode");
    const bool passthrough = variant == Variant::NonFineTuning || variant == Variant::EdgeAIGC ||
                             received.residual_step == 0;
    if (passthrough) return received.latent;
    if (cs == nullptr)
        throw std::invalid_argument("local_decode: fine-tuning requires a channel schedule");
    if (cs->T_bar != received.residual_step)
        throw std::invalid_argument("local_decode: channel schedule not built for residual_step");
    if (cs->base.digest() != base.digest())
        throw std::invalid_argument("local_decode: channel schedule base mismatch");
    return finetune(received.latent, received.residual_step,
                    Conditioning{received.conditioning_label}, denoiser_ft, *cs, rng, form);
}

/// Long-lived evaluation state shared across pipeline runs.
struct PipelineContext {
    const SemanticSource* source = nullptr;
    const VarianceSchedule* schedule = nullptr;
    ChannelNoiseSchedule clean_cs;  // sigma = 0 companion for clean-mode oracles
    const FidelityContext* fid = nullptr;  // null: skip the energy metric
};

inline PipelineContext make_pipeline_context(const SemanticSource& src,
                                             const VarianceSchedule& vs,
                                             GammaShape shape = GammaShape::linear,
                                             const FidelityContext* fid = nullptr) {
    PipelineContext ctx;
    ctx.source = &src;
    ctx.schedule = &vs;
    ctx.clean_cs = noiseless_channel_schedule(vs, shape);
    ctx.fid = fid;
    return ctx;
}

/// Execute one variant end to end and fill the transcript.
///
/// The rng stream derived from `seed` is threaded through edge generation,
/// transmission, and local fine-tuning in that order, so paired-seed
/// comparisons across variants share the trajectory prefix.
inline TranscriptRecord run_pipeline(const PipelineConfig& cfg, Conditioning c,
                                     const ResourceScenario& sc, const PipelineContext& ctx,
                                     std::uint64_t seed) {
    cfg.validate();
    sc.validate();
    if (!ctx.source || !ctx.schedule) throw std::invalid_argument("run_pipeline: incomplete context");
    const SemanticSource& src = *ctx.source;
    const VarianceSchedule& vs = *ctx.schedule;
    if (cfg.total_steps > vs.T)
        throw std::invalid_argument("run_pipeline: total_steps exceeds schedule length");

    Rng rng(seed);
    ChannelConfig ch = cfg.channel;
    ch.snr_db = sc.snr_db;
    ch.bandwidth_hz = sc.bandwidth_hz;

    TranscriptRecord tr;
    tr.variant = cfg.variant;
    tr.label = c.label;
    tr.snr_db = sc.snr_db;
    tr.rho_edge = sc.rho_edge;
    tr.rho_local = sc.rho_local;
    tr.seed = seed;

    const DenoiserFn clean_denoiser = make_oracle_denoiser(src, ctx.clean_cs, NoiseMode::clean);

    if (cfg.variant == Variant::LocalAIGC) {
        tr.t_edge = 0;
        tr.t_local = cfg.total_steps;
        tr.final_latent = generate(cfg.total_steps, c, clean_denoiser, vs, src.dim, rng);
        tr.o_bits = 0.0;
        tr.l1_s = 0.0;
        tr.l2_s = 0.0;
        tr.l3_s = compute_latency(cfg.total_steps, sc.c_local, sc.rho_local);
    } else {
        tr.t_edge = cfg.t_edge;
        tr.t_local = cfg.t_local;
        SemanticPayload payload =
            edge_encode(c, cfg.t_edge, clean_denoiser, vs, cfg.total_steps, src.dim, rng);
        const SemanticPayload received = transmit(payload, ch, rng);
        const double sigma = snr_to_noise_std(ch.signal_power, ch.snr_db);
        Latent out;
        if (cfg.variant == Variant::ROUTE && received.residual_step > 0) {
            const ChannelNoiseSchedule cs_rx =
                build_channel_schedule(received.residual_step, sigma, vs, cfg.gamma_shape);
            const DenoiserFn ft_denoiser =
                make_oracle_denoiser(src, cs_rx, NoiseMode::channel, cfg.form);
            out = local_decode(received, ft_denoiser, vs, &cs_rx, cfg.variant, rng, cfg.form);
        } else {
            out = local_decode(received, DenoiserFn{}, vs, nullptr, cfg.variant, rng, cfg.form);
        }
        tr.final_latent = std::move(out);
        tr.o_bits = content_size_bits(
            static_cast<std::size_t>(src.dim), ch.bits_per_element,
            cfg.variant == Variant::EdgeAIGC ? cfg.expansion_factor : 1);
        tr.l1_s = transmission_latency(tr.o_bits, sc);
        tr.l2_s = compute_latency(cfg.t_edge, sc.c_edge, sc.rho_edge);
        tr.l3_s = compute_latency(cfg.t_local, sc.c_local, sc.rho_local);
    }

    tr.l_s = tr.l1_s + tr.l2_s + tr.l3_s;
    tr.failed = tr.l_s > cfg.timeout_s;

    const Latent& mu = src.component_for(c.label).mean;
    tr.mse = squared_distance(tr.final_latent, mu);
    tr.component_acc = (max_responsibility_label(src, tr.final_latent) == c.label) ? 1.0 : 0.0;
    if (ctx.fid) {
        const std::vector<Latent> one{tr.final_latent};
        tr.energy_dist = 2.0 * mean_cross_distance(one, ctx.fid->refs) - ctx.fid->ref_self_dist;
    }
    return tr;
}

} // namespace semdiff
