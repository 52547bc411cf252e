#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "betaspec/diffusion_math.hpp"
#include "betaspec/rng.hpp"
#include "betaspec/schedule.hpp"
#include "support/oracles.hpp"

using namespace betaspec;
using betaspec::testing::grid_bayes_oracle;
using betaspec::testing::grid_bayes_oracle_linear;
using betaspec::testing::mc_bayes_oracle;

namespace {
Schedule two_point(double s_prev, double s_cur) {
    return Schedule(1, 1.0, {s_prev, s_cur}, ScheduleTag::learned);
}
}  // namespace

TEST_CASE("linear posterior: hand-evaluated 1-D case") {
    auto s = two_point(0.6, 1.0);
    auto post = linear_posterior({2.0}, {1.0}, s, 1);
    CHECK(post.mean[0] == Catch::Approx(1.36).epsilon(1e-12));
    CHECK(post.variance == Catch::Approx(0.2304).epsilon(1e-12));
}

TEST_CASE("linear posterior collapses to the clean point when sigma_prev = 0") {
    auto s = two_point(0.0, 1.0);
    auto post = linear_posterior({2.0}, {1.0}, s, 1);
    CHECK(post.mean[0] == 1.0);
    CHECK(post.variance == 0.0);
}

TEST_CASE("linear posterior rejects zero sigma_t and mismatched dims") {
    CHECK_THROWS(linear_posterior({1.0}, {1.0}, two_point(0.0, 1.0), 0));
    CHECK_THROWS(linear_posterior({1.0, 2.0}, {1.0}, two_point(0.5, 1.0), 1));
}

TEST_CASE("posterior coefficients of z_t and x sum to 1") {
    RngStream rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(20));
        std::vector<double> sig(static_cast<std::size_t>(n) + 1);
        sig[0] = rng.next_uniform() * 0.2;
        for (int i = 1; i <= n; ++i) sig[i] = sig[i - 1] + 1e-3 + rng.next_uniform();
        Schedule s(n, 1.0, sig, ScheduleTag::learned);
        const int i = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
        // mean is linear in (z_t, x); evaluating at z_t = x = 1 recovers a + b
        auto post = linear_posterior({1.0}, {1.0}, s, i);
        CHECK(post.mean[0] == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("nonlinear posterior: hand-evaluated 1-D case and linear reduction") {
    auto s = two_point(0.6, 1.0);
    auto post = nonlinear_posterior({2.0}, {1.0}, {0.5}, {0.7}, s, 1);
    CHECK(post.mean[0] == Catch::Approx(1.16).epsilon(1e-12));
    CHECK(post.variance == Catch::Approx(0.2304).epsilon(1e-12));

    // time-constant encoder: bitwise equal to the linear kernel
    RngStream rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> z{rng.next_gaussian(), rng.next_gaussian()};
        std::vector<double> x{rng.next_gaussian(), rng.next_gaussian()};
        std::vector<double> f{rng.next_gaussian(), rng.next_gaussian()};
        auto lin = linear_posterior(z, x, s, 1);
        auto non = nonlinear_posterior(z, x, f, f, s, 1);
        CHECK(non.mean[0] == lin.mean[0]);
        CHECK(non.mean[1] == lin.mean[1]);
        CHECK(non.variance == lin.variance);
    }

    CHECK_THROWS(nonlinear_posterior({1.0}, {1.0}, {0.1, 0.2}, {0.1}, s, 1));
}

TEST_CASE("forward marginal sample") {
    CHECK(forward_marginal_sample({1.0, 2.0}, 0.0, {9.0, -9.0}) ==
          std::vector<double>{1.0, 2.0});
    CHECK(forward_marginal_sample({1.0, 2.0}, 2.0, {1.0, -1.0}) ==
          std::vector<double>{3.0, 0.0});
    CHECK_THROWS(forward_marginal_sample({1.0}, -0.5, {1.0}));
    CHECK_THROWS(forward_marginal_sample({1.0}, 1.0, {1.0, 2.0}));

    // mean 0, sigma 1: empirical second moments close to identity
    RngStream rng(5);
    const std::size_t n = 20000;
    double var0 = 0.0, var1 = 0.0, cov = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        auto z = forward_marginal_sample({0.0, 0.0}, 1.0,
                                         {rng.next_gaussian(), rng.next_gaussian()});
        var0 += z[0] * z[0];
        var1 += z[1] * z[1];
        cov += z[0] * z[1];
    }
    CHECK(var0 / n == Catch::Approx(1.0).margin(0.05));
    CHECK(var1 / n == Catch::Approx(1.0).margin(0.05));
    CHECK(cov / n == Catch::Approx(0.0).margin(0.05));
}

TEST_CASE("model mean: exact predictions recover the linear posterior mean") {
    auto s = two_point(0.6, 1.0);
    RngStream rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const std::vector<double> x{rng.next_gaussian(), rng.next_gaussian()};
        const std::vector<double> eps{rng.next_gaussian(), rng.next_gaussian()};
        const auto z = forward_marginal_sample(x, s.sigma(1), eps);
        const auto mu = model_mean_nonlinear(z, eps, {0.0, 0.0}, s, 1);
        const auto post = linear_posterior(z, x, s, 1);
        CHECK(mu[0] == Catch::Approx(post.mean[0]).margin(1e-12));
        CHECK(mu[1] == Catch::Approx(post.mean[1]).margin(1e-12));
    }
}

TEST_CASE("model mean: zero eps_hat leaves z_t + delta_hat") {
    auto s = two_point(0.6, 1.0);
    const auto mu = model_mean_nonlinear({2.0, -1.0}, {0.0, 0.0}, {0.1, 0.2}, s, 1);
    CHECK(mu[0] == Catch::Approx(2.1).margin(1e-12));
    CHECK(mu[1] == Catch::Approx(-0.8).margin(1e-12));
}

TEST_CASE("model mean: hand-evaluated 1-D case") {
    auto s = two_point(0.6, 1.0);
    const auto mu = model_mean_nonlinear({2.0}, {1.0}, {0.1}, s, 1);
    CHECK(mu[0] == Catch::Approx(1.46).epsilon(1e-12));
}

TEST_CASE("model mean with exact eps and exact delta equals the true posterior mean") {
    RngStream rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(10));
        std::vector<double> sig(static_cast<std::size_t>(n) + 1);
        sig[0] = rng.next_uniform() * 0.2;
        for (int k = 1; k <= n; ++k) sig[k] = sig[k - 1] + 1e-3 + rng.next_uniform();
        Schedule s(n, 1.0, sig, ScheduleTag::learned);
        const int i = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));

        const std::vector<double> f_cur{rng.next_gaussian(), rng.next_gaussian()};
        const std::vector<double> f_prev{rng.next_gaussian(), rng.next_gaussian()};
        const std::vector<double> eps{rng.next_gaussian(), rng.next_gaussian()};
        const auto z = forward_marginal_sample(f_cur, s.sigma(i), eps);

        std::vector<double> delta{f_prev[0] - f_cur[0], f_prev[1] - f_cur[1]};
        const auto mu = model_mean_nonlinear(z, eps, delta, s, i);
        const auto post = nonlinear_posterior(z, f_cur, f_prev, f_cur, s, i);
        CHECK(mu[0] == Catch::Approx(post.mean[0]).margin(1e-10));
        CHECK(mu[1] == Catch::Approx(post.mean[1]).margin(1e-10));
    }
}

TEST_CASE("grid Bayes oracle: self-consistency on a single prior point") {
    auto s = two_point(0.6, 1.0);
    const double z_t = 1.3;
    auto oracle = grid_bayes_oracle_linear(s, 1, {0.4}, z_t);
    auto post = linear_posterior({z_t}, {0.4}, s, 1);
    CHECK(oracle.mean == Catch::Approx(post.mean[0]).margin(1e-6));
    CHECK(oracle.variance == Catch::Approx(post.variance).margin(1e-6));
}

TEST_CASE("grid Bayes oracle: symmetric two-point prior gives zero posterior mean") {
    auto s = two_point(0.5, 0.9);
    auto oracle = grid_bayes_oracle_linear(s, 1, {-1.3, 1.3}, 0.0);
    CHECK(oracle.mean == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("linear posterior matches the grid oracle on random instances") {
    RngStream rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const double s0 = 0.05 + 0.5 * rng.next_uniform();
        const double s1 = s0 + 0.05 + 0.8 * rng.next_uniform();
        Schedule s(1, 1.0, {s0, s1}, ScheduleTag::learned);
        const double x = 2.0 * rng.next_gaussian();
        const double z_t = x + s1 * rng.next_gaussian();
        auto oracle = grid_bayes_oracle_linear(s, 1, {x}, z_t);
        auto post = linear_posterior({z_t}, {x}, s, 1);
        CHECK(oracle.mean == Catch::Approx(post.mean[0]).margin(1e-4));
        CHECK(oracle.variance == Catch::Approx(post.variance).margin(1e-4));
    }
}

TEST_CASE("conditioning on z_t does not inflate variance beyond sigma_prev^2") {
    // Pointwise bound; holds exactly for a known clean point, where the
    // posterior is Gaussian with variance sigma_step^2 sigma_prev^2 / sigma_t^2.
    RngStream rng(37);
    for (int trial = 0; trial < 50; ++trial) {
        const double s0 = 0.1 + 0.4 * rng.next_uniform();
        const double s1 = s0 + 0.05 + 0.5 * rng.next_uniform();
        Schedule s(1, 1.0, {s0, s1}, ScheduleTag::learned);
        const double x = rng.next_gaussian();
        const double z_t = x + s1 * rng.next_gaussian();
        auto oracle = grid_bayes_oracle_linear(s, 1, {x}, z_t);
        CHECK(oracle.variance <= s0 * s0 + 1e-9);
    }
}

TEST_CASE("on average, conditioning reduces variance below the marginal") {
    // Multi-point priors can have locally multi-modal posteriors, so the
    // pointwise sigma_prev^2 bound does not apply; the total-variance law
    // bounds the z_t-averaged posterior variance by Var(z_prev).
    RngStream rng(38);
    const double s0 = 0.3, s1 = 0.8;
    Schedule s(1, 1.0, {s0, s1}, ScheduleTag::learned);
    std::vector<double> prior{-1.1, -0.2, 0.5, 1.4};
    double prior_m1 = 0.0, prior_m2 = 0.0;
    for (double p : prior) {
        prior_m1 += p / prior.size();
        prior_m2 += p * p / prior.size();
    }
    const double marginal_var = (prior_m2 - prior_m1 * prior_m1) + s0 * s0;

    double avg_post_var = 0.0;
    const int n = 200;
    for (int k = 0; k < n; ++k) {
        const double x = prior[rng.next_below(prior.size())];
        const double z_t = x + s1 * rng.next_gaussian();
        avg_post_var += grid_bayes_oracle_linear(s, 1, prior, z_t, 8001).variance / n;
    }
    CHECK(avg_post_var <= marginal_var);
}

TEST_CASE("nonlinear posterior matches the Monte-Carlo Bayes oracle") {
    RngStream rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        const double s0 = 0.3 + 0.3 * rng.next_uniform();
        const double s1 = s0 + 0.2 + 0.3 * rng.next_uniform();
        Schedule s(1, 1.0, {s0, s1}, ScheduleTag::learned);
        const double f_cur = rng.next_gaussian();
        const double f_prev = f_cur + 0.3 * rng.next_gaussian();
        const double z_t = f_cur + s1 * rng.next_gaussian();

        auto mc = mc_bayes_oracle(s, 1, f_prev, f_cur, z_t, 0.01, 4'000'000,
                                  1000 + static_cast<std::uint64_t>(trial));
        auto post = nonlinear_posterior({z_t}, {f_cur}, {f_prev}, {f_cur}, s, 1);

        const double se_mean = std::sqrt(mc.variance / static_cast<double>(mc.n_samples));
        const double se_var =
            mc.variance * std::sqrt(2.0 / static_cast<double>(mc.n_samples - 1));
        CHECK(std::abs(mc.mean - post.mean[0]) <= 3.0 * se_mean + 1e-4);
        CHECK(std::abs(mc.variance - post.variance) <= 3.0 * se_var + 1e-4);
    }
}

TEST_CASE("reverse step: posterior mean parameterization matches model_mean_nonlinear") {
    auto s = two_point(0.6, 1.0);
    RngStream rng(43);
    std::vector<double> z{rng.next_gaussian()}, eps{rng.next_gaussian()},
        delta{rng.next_gaussian()}, noise{0.0};
    ReverseStepOptions opt;
    opt.mean_param = ReverseStepOptions::MeanParam::posterior;
    opt.noise_scale = ReverseStepOptions::NoiseScale::posterior_std;
    auto stepped = reverse_step(z, eps, delta, noise, s, 1, opt);
    auto mu = model_mean_nonlinear(z, eps, delta, s, 1);
    CHECK(stepped[0] == Catch::Approx(mu[0]).margin(1e-12));
}

TEST_CASE("reverse step: clean-estimate mean and delta sign") {
    auto s = two_point(0.6, 1.0);
    std::vector<double> z{2.0}, eps{1.0}, delta{0.25}, noise{1.0};
    // mu = (2 - 1*1) + 0.25 = 1.25; plus sigma_prev * noise = 0.6
    auto plus = reverse_step(z, eps, delta, noise, s, 1);
    CHECK(plus[0] == Catch::Approx(1.85).margin(1e-12));
    ReverseStepOptions opt;
    opt.delta_sign = -1.0;
    auto minus = reverse_step(z, eps, delta, noise, s, 1, opt);
    CHECK(minus[0] == Catch::Approx(1.35).margin(1e-12));
}
