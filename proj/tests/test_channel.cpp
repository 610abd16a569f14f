#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "semdiff/channel.hpp"
#include "semdiff/schedules.hpp"
#include "test_support.hpp"

using namespace semdiff;

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

ChannelConfig config_with(int bits, double clip = 4.0) {
    ChannelConfig cfg;
    cfg.bits_per_element = bits;
    cfg.clip_range = clip;
    cfg.snr_db = 10.0;
    return cfg;
}

} // namespace

TEST_CASE("snr to noise std") {
    CHECK(snr_to_noise_std(1.0, 0.0) == 1.0);
    CHECK(snr_to_noise_std(1.0, 20.0) == Catch::Approx(0.1).epsilon(1e-12));
    CHECK_THROWS_AS(snr_to_noise_std(0.0, 10.0), std::invalid_argument);
    CHECK_THROWS_AS(snr_to_noise_std(-1.0, 10.0), std::invalid_argument);
}

TEST_CASE("measured signal power predicts the post-transmission residual") {
    const auto src = test::two_component_source(16, 2.0, 0.2);
    Rng rng(61);
    double power = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        power += squared_norm(sample_unconditional(src, rng)) / src.dim;
    power /= n;
    const double snr = 5.0;
    const double sigma = snr_to_noise_std(power, snr);
    ChannelConfig cfg = config_with(32);
    cfg.signal_power = power;
    cfg.snr_db = snr;
    std::vector<double> residuals;
    for (int i = 0; i < 5000; ++i) {
        SemanticPayload p;
        p.latent = sample_unconditional(src, rng);
        const SemanticPayload q = transmit(p, cfg, rng);
        for (std::size_t k = 0; k < p.latent.size(); ++k)
            residuals.push_back(q.latent[k] - p.latent[k]);
    }
    const double want = sigma * sigma;
    const double tol = 3.0 * want * std::sqrt(2.0 / static_cast<double>(residuals.size()));
    CHECK(test::variance(residuals) == Catch::Approx(want).margin(tol));
}

TEST_CASE("32-bit codec is lossless on binary32-representable values") {
    ChannelConfig cfg = config_with(32);
    Rng rng(71);
    Latent z(1000);
    for (double& x : z) x = static_cast<double>(static_cast<float>(3.0 * rng.normal()));
    const EncodeResult enc = encode(z, cfg);
    CHECK(enc.clipped == 0);
    CHECK(enc.bytes.size() == z.size() * 4);
    const Latent back = decode(enc.bytes, z.size(), cfg);
    for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(back[i] == z[i]);
}

TEST_CASE("8-bit codec respects the quantizer step bound") {
    ChannelConfig cfg = config_with(8, 4.0);
    const double step = 8.0 / 256.0;
    Rng rng(73);
    Latent z(20000);
    for (double& x : z) x = 7.9 * (rng.uniform() - 0.5);  // within [-3.95, 3.95]
    const Latent back = decode(encode(z, cfg).bytes, z.size(), cfg);
    for (std::size_t i = 0; i < z.size(); ++i)
        REQUIRE(std::abs(back[i] - z[i]) <= step);  // spec bound: 4 / 2^7
}

TEST_CASE("16-bit round-trip error matches the uniform quantization noise") {
    ChannelConfig cfg = config_with(16, 4.0);
    const double step = 8.0 / 65536.0;
    Rng rng(79);
    double acc = 0.0;
    const long n = 1000000;
    Latent z(static_cast<std::size_t>(n));
    // In-range draws: clipping would otherwise dominate the tiny 16-bit MSE.
    for (double& x : z) x = 7.9 * (rng.uniform() - 0.5);
    const Latent back = decode(encode(z, cfg).bytes, z.size(), cfg);
    for (long i = 0; i < n; ++i) {
        const double e = back[static_cast<std::size_t>(i)] - z[static_cast<std::size_t>(i)];
        acc += e * e;
    }
    const double mse = acc / static_cast<double>(n);
    CHECK(mse == Catch::Approx(step * step / 12.0).epsilon(0.10));
}

TEST_CASE("out-of-range entries are clipped and counted") {
    ChannelConfig cfg = config_with(8, 1.0);
    const Latent z{0.5, 3.0, -2.0, 0.9};
    const EncodeResult enc = encode(z, cfg);
    CHECK(enc.clipped == 2);
    const Latent back = decode(enc.bytes, z.size(), cfg);
    CHECK(back[1] <= 1.0);
    CHECK(back[2] >= -1.0);
    CHECK_THROWS_AS(encode({std::numeric_limits<double>::infinity()}, cfg),
                    std::invalid_argument);
}

TEST_CASE("transmission is additive white Gaussian noise") {
    ChannelConfig cfg = config_with(32);
    cfg.signal_power = 1.0;
    SECTION("sigma = 0 is the identity and consumes no draws") {
        cfg.snr_db = std::numeric_limits<double>::infinity();
        cfg.snr_max_db = cfg.snr_db;
        Rng rng(83);
        SemanticPayload p;
        p.latent = {1.0, -2.0};
        const std::uint64_t before = Rng(83).next_u64();
        const SemanticPayload q = transmit(p, cfg, rng);
        CHECK(q.latent[0] == 1.0);
        CHECK(q.latent[1] == -2.0);
        CHECK(rng.next_u64() == before);  // stream untouched
    }
    SECTION("0 dB noise variance is 1 per entry") {
        cfg.snr_db = 0.0;
        Rng rng(89);
        std::vector<double> err;
        for (int i = 0; i < 10000; ++i) {
            SemanticPayload p;
            p.latent.assign(64, 0.0);
            const SemanticPayload q = transmit(p, cfg, rng);
            for (double x : q.latent) err.push_back(x);
        }
        const double tol = 3.0 * std::sqrt(2.0 / static_cast<double>(err.size()));
        CHECK(test::variance(err) == Catch::Approx(1.0).margin(tol));
        CHECK(std::abs(test::mean(err)) < 4.0 / std::sqrt(static_cast<double>(err.size())));
    }
    SECTION("same seed, same corruption") {
        cfg.snr_db = 5.0;
        Rng a(91), b(91);
        SemanticPayload p;
        p.latent = {0.3, 0.7, -1.1};
        const auto x = transmit(p, cfg, a);
        const auto y = transmit(p, cfg, b);
        for (std::size_t i = 0; i < 3; ++i) CHECK(x.latent[i] == y.latent[i]);
    }
}

TEST_CASE("payload sizes include the documented header overhead") {
    CHECK(kPayloadHeaderBits == 176);
    SemanticPayload p;
    p.latent.assign(16384, 0.0);
    CHECK(payload_size_bits(p, config_with(32)) == 524288 + 176);
    SemanticPayload q;
    q.latent.assign(16, 0.0);
    CHECK(payload_size_bits(q, config_with(8)) == 128 + 176);
    // Full-content delivery scales the element count by the expansion factor
    // (512*512*3 raw vs 4*64*64 latent elements -> 48).
    CHECK(content_size_bits(16384, 32) == 524288.0);
    CHECK(content_size_bits(16384, 32, 48) == 48.0 * 524288.0);
    CHECK(content_size_bits(16, 8) == 128.0);
}

TEST_CASE("wire format round-trips the golden payload byte-exactly") {
    const auto vs = build_variance_schedule(8, 0.05, 0.30, BetaKind::linear);
    SemanticPayload p;
    p.latent = {0.5, -1.25, 2.0, -0.0078125};
    p.conditioning_label = 3;
    p.residual_step = 7;
    p.schedule_digest = vs.digest();
    CHECK(p.schedule_digest == 0x862bb1665ca3a7aeULL);

    SECTION("binary32 body") {
        const ChannelConfig cfg = config_with(32);
        const auto bytes = serialize_payload(p, cfg);
        const auto golden = read_file(std::string(SEMDIFF_GOLDEN_DIR) + "/payload_v1.bin");
        REQUIRE(bytes == golden);
        const SemanticPayload back = parse_payload(golden, cfg, vs.digest());
        CHECK(back.conditioning_label == 3);
        CHECK(back.residual_step == 7);
        CHECK(back.schedule_digest == vs.digest());
        REQUIRE(back.latent.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) CHECK(back.latent[i] == p.latent[i]);
    }
    SECTION("8-bit quantized body") {
        const ChannelConfig cfg = config_with(8, 4.0);
        const auto bytes = serialize_payload(p, cfg);
        const auto golden = read_file(std::string(SEMDIFF_GOLDEN_DIR) + "/payload_q8.bin");
        REQUIRE(bytes == golden);
        const SemanticPayload back = parse_payload(golden, cfg);
        const double step = 8.0 / 256.0;
        for (std::size_t i = 0; i < 4; ++i) REQUIRE(std::abs(back.latent[i] - p.latent[i]) <= step);
    }
    SECTION("digest mismatch refuses decode") {
        const ChannelConfig cfg = config_with(32);
        const auto bytes = serialize_payload(p, cfg);
        CHECK_THROWS_WITH(parse_payload(bytes, cfg, 0xdeadbeefULL),
                          Catch::Matchers::ContainsSubstring("digest mismatch"));
    }
}

TEST_CASE("wire round trip is exact for random payloads at 32 bits") {
    Rng rng(101);
    const ChannelConfig cfg = config_with(32);
    for (int k = 0; k < 50; ++k) {
        SemanticPayload p;
        p.latent.resize(1 + rng.below(40));
        for (double& x : p.latent) x = static_cast<double>(static_cast<float>(2.0 * rng.normal()));
        p.conditioning_label = static_cast<int>(rng.below(100));
        p.residual_step = static_cast<int>(rng.below(30));
        p.schedule_digest = rng.next_u64();
        const SemanticPayload back = parse_payload(serialize_payload(p, cfg), cfg);
        REQUIRE(back.latent == p.latent);
        REQUIRE(back.conditioning_label == p.conditioning_label);
        REQUIRE(back.residual_step == p.residual_step);
        REQUIRE(back.schedule_digest == p.schedule_digest);
    }
}

TEST_CASE("malformed wire payloads raise errors instead of crashing") {
    const ChannelConfig cfg = config_with(32);
    SemanticPayload p;
    p.latent = {1.0, -2.0, 0.5};
    p.conditioning_label = 7;
    p.residual_step = 3;
    p.schedule_digest = 0xabcdef0123456789ULL;
    const auto bytes = serialize_payload(p, cfg);
    // Every strict truncation must be rejected.
    for (std::size_t len = 0; len < bytes.size(); ++len) {
        const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + len);
        REQUIRE_THROWS_AS(parse_payload(cut, cfg), std::invalid_argument);
    }
    // Corrupted magic and version are rejected.
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH(parse_payload(bad, cfg), Catch::Matchers::ContainsSubstring("magic"));
    bad = bytes;
    bad[4] = 99;
    CHECK_THROWS_WITH(parse_payload(bad, cfg), Catch::Matchers::ContainsSubstring("version"));
    // Depth disagreement with the receiver config is rejected.
    CHECK_THROWS_WITH(parse_payload(bytes, config_with(8)),
                      Catch::Matchers::ContainsSubstring("depth"));
    // Labels and steps that overflow the wire fields are rejected on write.
    SemanticPayload wide = p;
    wide.conditioning_label = 1 << 17;
    CHECK_THROWS_AS(serialize_payload(wide, cfg), std::invalid_argument);
}

TEST_CASE("codec-channel composition adds quantization noise on top of AWGN") {
    // decode . transmit . encode: total distortion ~ sigma^2 + step^2 / 12.
    ChannelConfig cfg = config_with(8, 4.0);
    cfg.signal_power = 1.0;
    cfg.snr_db = 10.0;
    const double sigma2 = 0.1;
    const double step = 8.0 / 256.0;
    Rng rng(103);
    std::vector<double> err;
    for (int i = 0; i < 3000; ++i) {
        SemanticPayload p;
        p.latent.resize(64);
        for (double& x : p.latent) x = rng.normal();
        SemanticPayload quantized = p;
        quantized.latent = decode(encode(p.latent, cfg).bytes, p.latent.size(), cfg);
        const SemanticPayload received = transmit(quantized, cfg, rng);
        for (std::size_t k = 0; k < p.latent.size(); ++k)
            err.push_back(received.latent[k] - p.latent[k]);
    }
    CHECK(test::variance(err) == Catch::Approx(sigma2 + step * step / 12.0).epsilon(0.10));
}

TEST_CASE("post-transmission error strictly decreases with SNR") {
    ChannelConfig cfg = config_with(32);
    cfg.signal_power = 2.0;
    double prev = std::numeric_limits<double>::infinity();
    for (const double snr : {0.0, 5.0, 10.0, 15.0}) {
        cfg.snr_db = snr;
        Rng rng(mix_seed(107, static_cast<std::uint64_t>(snr)));
        double acc = 0.0;
        int n = 0;
        for (int i = 0; i < 4000; ++i) {
            SemanticPayload p;
            p.latent.assign(16, 0.5);
            const SemanticPayload q = transmit(p, cfg, rng);
            acc += squared_distance(q.latent, p.latent);
            n += 16;
        }
        const double mse = acc / n;
        CHECK(mse < prev);
        prev = mse;
    }
}
