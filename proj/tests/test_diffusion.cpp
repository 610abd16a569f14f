#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "semdiff/diffusion.hpp"
#include "semdiff/metrics.hpp"
#include "test_support.hpp"

using namespace semdiff;

TEST_CASE("forward step limits") {
    Rng rng(1);
    const Latent z{1.0, -2.0};
    SECTION("beta = 0 is the identity") {
        const auto vs = schedule_from_betas({0.0}, /*strict=*/false);
        const Latent out = forward_step(z, 1, vs, rng);
        CHECK(out[0] == 1.0);
        CHECK(out[1] == -2.0);
    }
    SECTION("beta = 1 is pure noise with unit variance") {
        const auto vs = schedule_from_betas({1.0}, /*strict=*/false);
        std::vector<double> draws;
        for (int i = 0; i < 100000; ++i) draws.push_back(forward_step({0.0}, 1, vs, rng)[0]);
        CHECK(std::abs(test::mean(draws)) < 4.0 / std::sqrt(100000.0));
        // Var(s^2) ~ 2/n for unit normals: accept 3 sigma.
        CHECK(test::variance(draws) == Catch::Approx(1.0).margin(3.0 * std::sqrt(2.0 / 100000.0)));
    }
}

TEST_CASE("composed forward steps match the single-shot marginal") {
    const auto vs = build_variance_schedule(10, 0.02, 0.3);
    const Latent z0{1.7};
    Rng rng(7);
    std::vector<double> composed;
    for (int i = 0; i < 100000; ++i) {
        Latent z = z0;
        for (int t = 1; t <= 10; ++t) z = forward_step(z, t, vs, rng);
        composed.push_back(z[0]);
    }
    const double ab = vs.alpha_bar_at(10);
    const double want_mean = std::sqrt(ab) * 1.7;
    const double want_var = 1.0 - ab;
    CHECK(test::mean(composed) ==
          Catch::Approx(want_mean).margin(3.0 * std::sqrt(want_var / 100000.0)));
    CHECK(test::variance(composed) ==
          Catch::Approx(want_var).margin(3.0 * want_var * std::sqrt(2.0 / 100000.0)));
}

TEST_CASE("forward marginal boundary cases") {
    SECTION("no diffusion and no channel returns z0") {
        auto vs = schedule_from_betas({0.0}, /*strict=*/false);  // abar_1 = 1
        const auto cs = build_channel_schedule(1, 0.5, vs);
        Rng local(3);
        const Latent out = forward_marginal({2.5}, 1, cs, /*include_channel=*/false, local);
        CHECK(out[0] == 2.5);
    }
    SECTION("channel variance at T_bar equals sigma^2 exactly") {
        const auto vs = build_variance_schedule(12, 0.02, 0.3);
        const auto cs = build_channel_schedule(12, 0.8, vs);
        CHECK(cs.sigma_t_sq_at(12) == 0.8 * 0.8);
        std::vector<double> with, without;
        Rng a(5), b(5);
        for (int i = 0; i < 100000; ++i) {
            with.push_back(forward_marginal({0.0}, 12, cs, true, a)[0]);
            without.push_back(forward_marginal({0.0}, 12, cs, false, b)[0]);
        }
        const double extra = test::variance(with) - test::variance(without);
        // Difference of two independent sample variances: var ~ 2(v1^2+v2^2)/n.
        const double tol = 3.0 * std::sqrt(2.0 * (1.7 * 1.7 + 1.0) / 100000.0);
        CHECK(extra == Catch::Approx(0.64).margin(tol));
    }
}

TEST_CASE("stepwise channel accumulation reproduces the single-shot marginal") {
    const auto vs = build_variance_schedule(20, 0.02, 0.35);
    for (const double sigma : {0.1, 0.5, 1.0}) {
        for (const int t_bar : {1, 5, 20}) {
            const auto cs = build_channel_schedule(t_bar, sigma, vs);
            Rng rng(mix_seed(17, static_cast<std::uint64_t>(t_bar),
                             static_cast<std::uint64_t>(sigma * 1000)));
            const Latent z0{1.3};
            std::vector<double> stepwise, single;
            const int n = 100000;
            for (int i = 0; i < n; ++i) {
                Latent z = z0;
                for (int t = 1; t <= t_bar; ++t) z = forward_step_channel(z, t, cs, rng);
                stepwise.push_back(z[0]);
                single.push_back(forward_marginal(z0, t_bar, cs, true, rng)[0]);
            }
            const double want_mean = std::sqrt(vs.alpha_bar_at(t_bar)) * 1.3;
            const double want_var = 1.0 - vs.alpha_bar_at(t_bar) + sigma * sigma;
            const double mean_tol = 3.0 * std::sqrt(want_var / n);
            const double var_tol = 3.0 * want_var * std::sqrt(2.0 / n);
            REQUIRE(test::mean(stepwise) == Catch::Approx(want_mean).margin(mean_tol));
            REQUIRE(test::mean(single) == Catch::Approx(want_mean).margin(mean_tol));
            REQUIRE(test::variance(stepwise) == Catch::Approx(want_var).margin(var_tol));
            REQUIRE(test::variance(single) == Catch::Approx(want_var).margin(var_tol));
        }
    }
}

TEST_CASE("standard reverse step limit cases") {
    Rng rng(1);
    SECTION("zero prediction, deterministic step") {
        const auto vs = build_variance_schedule(4, 0.05, 0.3, BetaKind::linear, true);
        const Latent out = reverse_step_standard({1.0, 2.0}, 3, {0.0, 0.0}, vs, rng);
        const double inv = 1.0 / std::sqrt(vs.alpha_at(3));
        CHECK(out[0] == Catch::Approx(inv).epsilon(1e-15));
        CHECK(out[1] == Catch::Approx(2.0 * inv).epsilon(1e-15));
    }
    SECTION("alpha = 1 override is the identity") {
        const auto vs = schedule_from_betas({0.0}, /*strict=*/false);
        const Latent out = reverse_step_standard({1.5}, 1, {0.0}, vs, rng);
        CHECK(out[0] == 1.5);
    }
}

TEST_CASE("reversing with the true noise recovers the posterior mean") {
    const auto vs = build_variance_schedule(10, 0.02, 0.3, BetaKind::linear, true);
    const auto cs = build_channel_schedule(10, 0.0, vs);
    Rng rng(13);
    for (int k = 0; k < 100; ++k) {
        const int t = 1 + static_cast<int>(rng.below(10));
        const double z0 = 1.1 * rng.normal();
        const double eps = rng.normal();
        const double ab = vs.alpha_bar_at(t);
        const double z_t = std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
        Rng nil(0);
        const double stepped = reverse_step_standard({z_t}, t, {eps}, vs, nil)[0];
        const double posterior = posterior_mean_given_start({z_t}, {z0}, t, cs)[0];
        REQUIRE(std::abs(stepped - posterior) < 1e-10);
    }
}

TEST_CASE("modified reverse step reduces to the standard one at sigma = 0") {
    Rng rng(19);
    for (int k = 0; k < 1000; ++k) {
        const auto vs = test::random_schedule(rng);
        const auto cs = build_channel_schedule(vs.T, 0.0, vs);
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vs.T)));
        Latent z(2), eps(2);
        rng.fill_normal(z);
        rng.fill_normal(eps);
        Rng a(k), b(k);  // shared stream
        const Latent std_out = reverse_step_standard(z, t, eps, vs, a);
        const Latent mod_out = reverse_step_modified(z, t, eps, cs, b);
        for (std::size_t i = 0; i < z.size(); ++i)
            REQUIRE(std::abs(std_out[i] - mod_out[i]) <
                    1e-12 * std::max(1.0, std::abs(std_out[i])));
    }
}

TEST_CASE("modified reverse step mean equals the noise-form posterior mean") {
    Rng rng(23);
    for (int k = 0; k < 300; ++k) {
        const auto vs = test::random_schedule(rng);
        const auto cs = build_channel_schedule(vs.T, 1.5 * rng.uniform(), vs);
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vs.T)));
        Latent z(3), eps(3);
        rng.fill_normal(z);
        rng.fill_normal(eps);
        // Strip the injected noise by zeroing sigma_bar.
        auto quiet = cs;
        for (double& s : quiet.base.sigma_bar) s = 0.0;
        Rng nil(0);
        const Latent stepped = reverse_step_modified(z, t, eps, quiet, nil);
        const Latent mean = posterior_mean_from_noise(z, eps, t, cs);
        for (std::size_t i = 0; i < z.size(); ++i)
            REQUIRE(std::abs(stepped[i] - mean[i]) < 1e-12 * std::max(1.0, std::abs(mean[i])));
        // eps_hat = 0 collapses to z / sqrt(alpha) regardless of C.
        const Latent zero_eps = posterior_mean_from_noise(z, {0.0, 0.0, 0.0}, t, cs);
        for (std::size_t i = 0; i < z.size(); ++i)
            REQUIRE(zero_eps[i] ==
                    Catch::Approx(z[i] / std::sqrt(cs.base.alpha_at(t))).epsilon(1e-14));
    }
}

TEST_CASE("posterior mean given start reduces to the standard weights at sigma = 0") {
    Rng rng(29);
    for (int k = 0; k < 200; ++k) {
        const auto vs = test::random_schedule(rng);
        const auto cs = build_channel_schedule(vs.T, 0.0, vs);
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vs.T)));
        const double z_t = 2.0 * rng.normal();
        const double z0 = 1.5 * rng.normal();
        const double a = vs.alpha_at(t), ab = vs.alpha_bar_at(t), abp = vs.alpha_bar_at(t - 1);
        const double closed =
            (std::sqrt(a) * (1.0 - abp) * z_t + std::sqrt(abp) * (1.0 - a) * z0) / (1.0 - ab);
        REQUIRE(posterior_mean_given_start({z_t}, {z0}, t, cs)[0] ==
                Catch::Approx(closed).epsilon(1e-12));
    }
    SECTION("positive weights keep the mean on the segment") {
        const auto vs = build_variance_schedule(6, 0.05, 0.3);
        const auto cs = build_channel_schedule(6, 0.0, vs);
        const int t = 4;
        const double z0 = 1.4;
        const double z_t = std::sqrt(vs.alpha_at(t)) * std::sqrt(vs.alpha_bar_at(t - 1)) * z0;
        const double m = posterior_mean_given_start({z_t}, {z0}, t, cs)[0];
        const double lo = std::min(std::sqrt(vs.alpha_bar_at(t - 1)) * z0,
                                   z_t / std::sqrt(vs.alpha_at(t)));
        const double hi = std::max(std::sqrt(vs.alpha_bar_at(t - 1)) * z0,
                                   z_t / std::sqrt(vs.alpha_at(t)));
        CHECK(m >= lo - 1e-12);
        CHECK(m <= hi + 1e-12);
    }
}

TEST_CASE("generation determinism and limits") {
    const auto src = test::two_component_source(4);
    const auto vs = build_variance_schedule(12, 0.02, 0.3);
    const auto cs = build_channel_schedule(12, 0.0, vs);
    const DenoiserFn oracle = make_oracle_denoiser(src, cs, NoiseMode::clean);
    SECTION("zero steps returns the initial draw") {
        Rng a(100), b(100);
        Latent init(4);
        b.fill_normal(init);
        const Latent out = generate(0, Conditioning{1}, oracle, vs, 4, a);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == init[i]);
    }
    SECTION("same seed, same output") {
        Rng a(555), b(555);
        const Latent x = generate(12, Conditioning{1}, oracle, vs, 4, a);
        const Latent y = generate(12, Conditioning{1}, oracle, vs, 4, b);
        for (std::size_t i = 0; i < 4; ++i) CHECK(x[i] == y[i]);
    }
}

TEST_CASE("partial-run step indexing conventions") {
    SECTION("suffix keeps the final indices") {
        CHECK(partial_step_indices(3, 10, StepIndexing::suffix) == std::vector<int>{3, 2, 1});
    }
    SECTION("subsampled spreads indices over the whole schedule") {
        const auto idx = partial_step_indices(4, 20, StepIndexing::subsampled);
        CHECK(idx == std::vector<int>{20, 15, 10, 5});
    }
    SECTION("full-length runs coincide") {
        CHECK(partial_step_indices(8, 8, StepIndexing::suffix) ==
              partial_step_indices(8, 8, StepIndexing::subsampled));
    }
    SECTION("generate honors the convention") {
        const auto src = test::two_component_source(2);
        const auto vs = build_variance_schedule(20, 0.02, 0.35);
        const auto cs = build_channel_schedule(20, 0.0, vs);
        const DenoiserFn oracle = make_oracle_denoiser(src, cs, NoiseMode::clean);
        Rng a(9), b(9);
        const Latent suffix = generate(5, Conditioning{1}, oracle, vs, 2, a);
        const Latent spread = generate(5, Conditioning{1}, oracle, vs, 2, b,
                                       StepIndexing::subsampled);
        CHECK(suffix != spread);  // different index sets, same draws
    }
}

TEST_CASE("oracle generation converges to a point-mass component") {
    const auto src = test::point_mass_source(2, 1.8);
    const auto vs = build_variance_schedule(20, 0.02, 0.35);
    const auto cs = build_channel_schedule(20, 0.0, vs);
    const DenoiserFn oracle = make_oracle_denoiser(src, cs, NoiseMode::clean);
    const Latent& mu = src.components[0].mean;
    const double radius = 0.05 * std::sqrt(squared_norm(mu)) + 0.05;
    int hits = 0;
    for (int i = 0; i < 1000; ++i) {
        Rng rng(mix_seed(808, static_cast<std::uint64_t>(i)));
        const Latent out = generate(20, Conditioning{1}, oracle, vs, 2, rng);
        if (euclidean_distance(out, mu) <= radius) ++hits;
    }
    CHECK(hits >= 950);
}

TEST_CASE("finetune is the identity at zero steps") {
    const auto src = test::two_component_source(3);
    const auto vs = build_variance_schedule(10, 0.02, 0.3);
    const auto cs = build_channel_schedule(10, 0.5, vs);
    const DenoiserFn oracle = make_oracle_denoiser(src, cs, NoiseMode::channel);
    Rng rng(9);
    const Latent z{0.4, -0.2, 1.0};
    const Latent out = finetune(z, 0, Conditioning{1}, oracle, cs, rng);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(out[i] == z[i]);
}

TEST_CASE("noiseless finetune output is distributionally standard") {
    // With sigma = 0 the modified chain is the standard chain; its outputs
    // from marginal-consistent inputs must match fresh standard-chain outputs
    // distributionally (two-sample energy test, 5% level).
    const auto src = test::two_component_source(2, 1.5, 0.3);
    const auto vs = build_variance_schedule(12, 0.02, 0.35);
    const int t_bar = 6;
    const auto cs = build_channel_schedule(t_bar, 0.0, vs);
    const DenoiserFn den_channel = make_oracle_denoiser(src, cs, NoiseMode::channel);
    const DenoiserFn den_clean = make_oracle_denoiser(src, cs, NoiseMode::clean);
    std::vector<Latent> fine, standard;
    Rng rng(313);
    for (int i = 0; i < 400; ++i) {
        const Latent z0 = sample_z0(src, Conditioning{1}, rng);
        const Latent received = forward_marginal(z0, t_bar, cs, true, rng);
        fine.push_back(finetune(received, t_bar, Conditioning{1}, den_channel, cs, rng));
        const Latent z0b = sample_z0(src, Conditioning{1}, rng);
        Latent z = forward_marginal(z0b, t_bar, cs, false, rng);
        for (int t = t_bar; t >= 1; --t)
            z = reverse_step_standard(z, t, den_clean(z, t, 1), vs, rng);
        standard.push_back(z);
    }
    Rng perm(99);
    const double p = energy_permutation_pvalue(fine, standard, 200, perm);
    CHECK(p > 0.05);
}

TEST_CASE("finetune at 0 dB reduces the error on nearly every paired trial") {
    const auto src = test::two_component_source(8, 2.0, 0.2);
    const auto vs = build_variance_schedule(20, 0.02, 0.35);
    const int t_bar = 10;
    const double power = analytic_signal_power(src);
    const double sigma = snr_to_noise_std(power, 0.0);
    const auto cs = build_channel_schedule(t_bar, sigma, vs);
    const DenoiserFn oracle = make_oracle_denoiser(src, cs, NoiseMode::channel);
    const Latent& mu = src.components[0].mean;
    int improved = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(2718, static_cast<std::uint64_t>(i)));
        const Latent z0 = sample_z0(src, Conditioning{1}, rng);
        const Latent received = forward_marginal(z0, t_bar, cs, true, rng);
        const Latent tuned = finetune(received, t_bar, Conditioning{1}, oracle, cs, rng);
        if (squared_distance(tuned, mu) < squared_distance(received, mu)) ++improved;
    }
    CHECK(improved >= static_cast<int>(0.95 * n));
}
