#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdiff/latent.hpp"
#include "semdiff/rng.hpp"
#include "semdiff/source.hpp"

namespace semdiff {

/// AWGN link parameters. H = I; the channel only adds white Gaussian noise.
struct ChannelConfig {
    double snr_db = 10.0;
    double bandwidth_hz = 2e7;
    int bits_per_element = 32;  // quantizer depth, one of {8, 16, 32}
    double signal_power = 1.0;  // reference power (latent-units^2 per entry)
    double clip_range = 4.0;    // quantizer range [-R, R]
    double snr_min_db = 0.0;    // configured sweep range
    double snr_max_db = 15.0;

    void validate() const {
        if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("ChannelConfig: bandwidth must be > 0");
        if (bits_per_element != 8 && bits_per_element != 16 && bits_per_element != 32)
            throw std::invalid_argument("ChannelConfig: bits_per_element must be 8, 16 or 32");
        if (!(signal_power > 0.0)) throw std::invalid_argument("ChannelConfig: signal_power must be > 0");
        if (!(clip_range > 0.0)) throw std::invalid_argument("ChannelConfig: clip_range must be > 0");
        if (snr_db < snr_min_db - 1e-12 || snr_db > snr_max_db + 1e-12)
            throw std::invalid_argument("ChannelConfig: snr_db outside configured sweep range");
    }
};

/// Semantic-noise std implied by an SNR: sigma = sqrt(P / 10^(snr/10)).
inline double snr_to_noise_std(double signal_power, double snr_db) {
    if (!(signal_power > 0.0))
        throw std::invalid_argument("snr_to_noise_std: signal_power must be > 0");
    return std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));
}

/// Default quantizer range: 4x the largest component std plus the largest
/// mean coordinate magnitude, which keeps Gaussian clipping below 0.01%.
inline double default_clip_range(const SemanticSource& src) {
    double max_std = 0.0, max_mean = 0.0;
    for (const auto& c : src.components) {
        max_std = std::max(max_std, c.std);
        for (double m : c.mean) max_mean = std::max(max_mean, std::abs(m));
    }
    return 4.0 * max_std + max_mean;
}

namespace detail {

struct BitWriter {
    std::vector<std::uint8_t> bytes;
    int fill = 0;  // bits used in the last byte

    void put(std::uint32_t value, int nbits) {
        for (int i = nbits - 1; i >= 0; --i) {
            if (fill == 0) bytes.push_back(0);
            const std::uint8_t bit = static_cast<std::uint8_t>((value >> i) & 1u);
            bytes.back() = static_cast<std::uint8_t>(bytes.back() | (bit << (7 - fill)));
            fill = (fill + 1) % 8;
        }
    }
};

struct BitReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos = 0;  // bit position

    std::uint32_t get(int nbits) {
        std::uint32_t v = 0;
        for (int i = 0; i < nbits; ++i) {
            const std::size_t byte = pos >> 3;
            if (byte >= size) throw std::invalid_argument("decode: bit stream truncated");
            const int off = static_cast<int>(pos & 7);
            v = (v << 1) | ((data[byte] >> (7 - off)) & 1u);
            ++pos;
        }
        return v;
    }
};

inline std::uint32_t float_bits(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, sizeof(u));
    return u;
}
inline float bits_float(std::uint32_t u) {
    float f;
    std::memcpy(&f, &u, sizeof(f));
    return f;
}

} // namespace detail

struct EncodeResult {
    std::vector<std::uint8_t> bytes;  // payload bits, MSB-first, index order
    std::size_t clipped = 0;          // entries outside the quantizer range
};

/// Channel encoder C: uniform mid-rise quantization over [-R, R] at 8 or 16
/// bits; at 32 bits the element is transmitted as its IEEE-754 binary32
/// pattern (lossless for binary32-representable values). Out-of-range values
/// are clipped and counted.
inline EncodeResult encode(const Latent& z, const ChannelConfig& cfg) {
    cfg.validate();
    EncodeResult res;
    res.bytes.reserve(z.size() * static_cast<std::size_t>(cfg.bits_per_element) / 8 + 1);
    detail::BitWriter w;
    if (cfg.bits_per_element == 32) {
        for (double x : z) {
            if (!std::isfinite(x)) throw std::invalid_argument("encode: non-finite latent entry");
            w.put(detail::float_bits(static_cast<float>(x)), 32);
        }
    } else {
        const double r = cfg.clip_range;
        const int b = cfg.bits_per_element;
        const std::uint32_t levels = 1u << b;
        const double step = 2.0 * r / static_cast<double>(levels);
        for (double x : z) {
            if (!std::isfinite(x)) throw std::invalid_argument("encode: non-finite latent entry");
            double v = x;
            if (v < -r || v > r) {
                ++res.clipped;
                v = std::min(std::max(v, -r), r);
            }
            auto q = static_cast<std::int64_t>(std::floor((v + r) / step));
            q = std::min<std::int64_t>(std::max<std::int64_t>(q, 0), levels - 1);
            w.put(static_cast<std::uint32_t>(q), b);
        }
    }
    res.bytes = std::move(w.bytes);
    return res;
}

/// Channel decoder C^{-1}: inverse of encode for `count` elements.
inline Latent decode(const std::vector<std::uint8_t>& bytes, std::size_t count,
                     const ChannelConfig& cfg) {
    cfg.validate();
    const std::size_t need_bits = count * static_cast<std::size_t>(cfg.bits_per_element);
    if (bytes.size() * 8 < need_bits)
        throw std::invalid_argument("decode: byte buffer shorter than element count requires");
    detail::BitReader rd{bytes.data(), bytes.size()};
    Latent z(count);
    if (cfg.bits_per_element == 32) {
        for (std::size_t i = 0; i < count; ++i)
            z[i] = static_cast<double>(detail::bits_float(rd.get(32)));
    } else {
        const double r = cfg.clip_range;
        const int b = cfg.bits_per_element;
        const double step = 2.0 * r / static_cast<double>(1u << b);
        for (std::size_t i = 0; i < count; ++i)
            z[i] = -r + (static_cast<double>(rd.get(b)) + 0.5) * step;
    }
    return z;
}

/// The unit of transmission: a latent plus the metadata the receiver needs to
/// resume denoising. Metadata is assumed error-free (tiny payload under heavy
/// coding); the AWGN acts on the latent only.
struct SemanticPayload {
    Latent latent;
    int conditioning_label = 0;
    int residual_step = 0;  // T_bar the receiver should assume
    std::uint64_t schedule_digest = 0;
};

/// Pass the payload through the AWGN channel: latent' = latent + eps^C with
/// eps^C ~ N(0, sigma^2 I), sigma from the config SNR and signal power.
/// Consumes d normal draws when sigma > 0, none otherwise.
inline SemanticPayload transmit(const SemanticPayload& p, const ChannelConfig& cfg, Rng& rng) {
    cfg.validate();
    const double sigma = snr_to_noise_std(cfg.signal_power, cfg.snr_db);
    SemanticPayload out = p;
    if (sigma > 0.0)
        for (double& x : out.latent) x += sigma * rng.normal();
    return out;
}

/// Fixed wire-format metadata overhead: magic(4) + version(1) + label(2) +
/// residual_step(2) + d(4) + bits_per_element(1) + digest(8) bytes.
inline constexpr std::size_t kPayloadHeaderBits = 176;

/// Total serialized size: d * bits_per_element payload bits plus the fixed
/// header overhead.
inline std::size_t payload_size_bits(const SemanticPayload& p, const ChannelConfig& cfg) {
    return p.latent.size() * static_cast<std::size_t>(cfg.bits_per_element) + kPayloadHeaderBits;
}

/// Transmitted content bits (no metadata). Full-content delivery scales the
/// element count by the latent-to-content expansion factor.
inline double content_size_bits(std::size_t d, int bits_per_element, int expansion_factor = 1) {
    return static_cast<double>(d) * bits_per_element * expansion_factor;
}

/// Wire format (bit-exact):
///   magic "SDRP" | version u8 | label u16 BE | residual_step u16 BE |
///   d u32 BE | bits_per_element u8 | schedule_digest 8 bytes BE |
///   payload bits packed MSB-first, elements in index order.
inline std::vector<std::uint8_t> serialize_payload(const SemanticPayload& p,
                                                   const ChannelConfig& cfg) {
    if (p.conditioning_label < 0 || p.conditioning_label > 0xffff)
        throw std::invalid_argument("serialize_payload: label does not fit u16");
    if (p.residual_step < 0 || p.residual_step > 0xffff)
        throw std::invalid_argument("serialize_payload: residual_step does not fit u16");
    std::vector<std::uint8_t> out;
    out.reserve(22 + p.latent.size() * static_cast<std::size_t>(cfg.bits_per_element) / 8);
    const char* magic = "SDRP";
    out.insert(out.end(), magic, magic + 4);
    out.push_back(1);  // version
    const auto push16 = [&out](std::uint32_t v) {
        out.push_back(static_cast<std::uint8_t>(v >> 8));
        out.push_back(static_cast<std::uint8_t>(v & 0xff));
    };
    const auto push32 = [&out](std::uint32_t v) {
        for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    };
    push16(static_cast<std::uint32_t>(p.conditioning_label));
    push16(static_cast<std::uint32_t>(p.residual_step));
    push32(static_cast<std::uint32_t>(p.latent.size()));
    out.push_back(static_cast<std::uint8_t>(cfg.bits_per_element));
    for (int i = 7; i >= 0; --i)
        out.push_back(static_cast<std::uint8_t>((p.schedule_digest >> (8 * i)) & 0xff));
    const EncodeResult enc = encode(p.latent, cfg);
    out.insert(out.end(), enc.bytes.begin(), enc.bytes.end());
    return out;
}

/// Parse a wire payload. The quantizer range and depth come from the shared
/// receiver config; the depth recorded in the header must agree with it.
/// expected_digest != 0 enforces schedule agreement before decoding.
inline SemanticPayload parse_payload(const std::vector<std::uint8_t>& bytes,
                                     const ChannelConfig& cfg,
                                     std::uint64_t expected_digest = 0) {
    if (bytes.size() < 22) throw std::invalid_argument("parse_payload: truncated header");
    if (std::memcmp(bytes.data(), "SDRP", 4) != 0)
        throw std::invalid_argument("parse_payload: bad magic");
    if (bytes[4] != 1) throw std::invalid_argument("parse_payload: unsupported version");
    const auto rd16 = [&bytes](std::size_t off) {
        return (static_cast<std::uint32_t>(bytes[off]) << 8) | bytes[off + 1];
    };
    const auto rd32 = [&bytes](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes[off + static_cast<std::size_t>(i)];
        return v;
    };
    SemanticPayload p;
    p.conditioning_label = static_cast<int>(rd16(5));
    p.residual_step = static_cast<int>(rd16(7));
    const std::uint32_t d = rd32(9);
    const int bpe = bytes[13];
    if (bpe != cfg.bits_per_element)
        throw std::invalid_argument("parse_payload: bit depth mismatch with receiver config");
    std::uint64_t digest = 0;
    for (int i = 0; i < 8; ++i) digest = (digest << 8) | bytes[14 + static_cast<std::size_t>(i)];
    p.schedule_digest = digest;
    if (expected_digest != 0 && digest != expected_digest)
        throw std::runtime_error("parse_payload: schedule digest mismatch, refusing to decode");
    const std::vector<std::uint8_t> body(bytes.begin() + 22, bytes.end());
    p.latent = decode(body, d, cfg);
    return p;
}

} // namespace semdiff
