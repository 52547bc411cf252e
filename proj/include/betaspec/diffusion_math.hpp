#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "betaspec/schedule.hpp"

namespace betaspec {

// Isotropic Gaussian posterior over the previous-step latent: N(mean, variance*I).
struct GaussianPosterior {
    std::vector<double> mean;
    double variance = 0.0;
};

namespace detail {
inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}
}  // namespace detail

// Reverse posterior q(z_{t-tau} | z_t, x) of the linear process:
//   mean     = (s2_prev/s2_cur) z_t + (s2_step/s2_cur) x
//   variance = s2_step * s2_prev / s2_cur
inline GaussianPosterior linear_posterior(const std::vector<double>& z_t,
                                          const std::vector<double>& x,
                                          const Schedule& schedule, int i) {
    detail::require_same_dim(z_t.size(), x.size(), "linear_posterior");
    const double s_cur = schedule.sigma(i);
    if (!(s_cur > 0.0)) throw std::invalid_argument("linear_posterior: sigma_t must be > 0");
    const double s_prev = schedule.sigma(i - 1);
    const double s2_cur = s_cur * s_cur;
    const double s2_prev = s_prev * s_prev;
    const double s2_step = schedule.step_variance(i);
    GaussianPosterior post;
    post.mean.resize(z_t.size());
    const double a = s2_prev / s2_cur;
    const double b = s2_step / s2_cur;
    for (std::size_t k = 0; k < z_t.size(); ++k) post.mean[k] = a * z_t[k] + b * x[k];
    post.variance = s2_step * s2_prev / s2_cur;
    return post;
}

// Reverse posterior of the non-linear process: same variance, mean shifted by
// the encoder difference f(x, t-tau) - f(x, t). Reduces bitwise to
// linear_posterior when f_prev == f_cur (the shift contributes exact zeros).
inline GaussianPosterior nonlinear_posterior(const std::vector<double>& z_t,
                                             const std::vector<double>& x,
                                             const std::vector<double>& f_prev,
                                             const std::vector<double>& f_cur,
                                             const Schedule& schedule, int i) {
    detail::require_same_dim(z_t.size(), x.size(), "nonlinear_posterior");
    detail::require_same_dim(z_t.size(), f_prev.size(), "nonlinear_posterior");
    detail::require_same_dim(z_t.size(), f_cur.size(), "nonlinear_posterior");
    GaussianPosterior post = linear_posterior(z_t, x, schedule, i);
    for (std::size_t k = 0; k < z_t.size(); ++k) post.mean[k] += f_prev[k] - f_cur[k];
    return post;
}

// z = mean + sigma * noise
inline std::vector<double> forward_marginal_sample(const std::vector<double>& mean, double sigma,
                                                   const std::vector<double>& noise) {
    detail::require_same_dim(mean.size(), noise.size(), "forward_marginal_sample");
    if (sigma < 0.0) throw std::invalid_argument("forward_marginal_sample: sigma must be >= 0");
    std::vector<double> z(mean.size());
    for (std::size_t k = 0; k < mean.size(); ++k) z[k] = mean[k] + sigma * noise[k];
    return z;
}

// Model-side posterior mean with x_hat = z_t - sigma_t * eps_hat:
//   mu = (s2_prev/s2_cur) z_t + (s2_step/s2_cur) (z_t - sigma_t eps_hat) + delta_hat
inline std::vector<double> model_mean_nonlinear(const std::vector<double>& z_t,
                                                const std::vector<double>& eps_hat,
                                                const std::vector<double>& delta_hat,
                                                const Schedule& schedule, int i) {
    detail::require_same_dim(z_t.size(), eps_hat.size(), "model_mean_nonlinear");
    detail::require_same_dim(z_t.size(), delta_hat.size(), "model_mean_nonlinear");
    const double s_cur = schedule.sigma(i);
    if (!(s_cur > 0.0)) throw std::invalid_argument("model_mean_nonlinear: sigma_t must be > 0");
    const double s_prev = schedule.sigma(i - 1);
    const double s2_cur = s_cur * s_cur;
    const double a = (s_prev * s_prev) / s2_cur;
    const double b = schedule.step_variance(i) / s2_cur;
    std::vector<double> mu(z_t.size());
    for (std::size_t k = 0; k < z_t.size(); ++k)
        mu[k] = a * z_t[k] + b * (z_t[k] - s_cur * eps_hat[k]) + delta_hat[k];
    return mu;
}

// How a reverse step turns head outputs into z_{t-tau}. The defaults follow
// the stated sampling loop: clean-estimate mean, + delta, previous-sigma noise.
// The posterior variants follow the closed-form reverse conditional instead.
struct ReverseStepOptions {
    enum class MeanParam { clean_estimate, posterior };
    enum class NoiseScale { sigma_prev, posterior_std };
    MeanParam mean_param = MeanParam::clean_estimate;
    NoiseScale noise_scale = NoiseScale::sigma_prev;
    double delta_sign = +1.0;  // +1 composes with the loss target; -1 is the literal loop
};

// One reverse step: z_{t-tau} = mu_{t-tau} + scale * noise, with
//   clean_estimate: mu_{t-tau} = (z_t - sigma_t eps_hat) +/- delta_hat
//   posterior:      mu_{t-tau} = model_mean_nonlinear(...) with signed delta
inline std::vector<double> reverse_step(const std::vector<double>& z_t,
                                        const std::vector<double>& eps_hat,
                                        const std::vector<double>& delta_hat,
                                        const std::vector<double>& noise, const Schedule& schedule,
                                        int i, const ReverseStepOptions& opt = {}) {
    detail::require_same_dim(z_t.size(), eps_hat.size(), "reverse_step");
    detail::require_same_dim(z_t.size(), delta_hat.size(), "reverse_step");
    detail::require_same_dim(z_t.size(), noise.size(), "reverse_step");
    const double s_cur = schedule.sigma(i);
    if (!(s_cur > 0.0)) throw std::invalid_argument("reverse_step: sigma_t must be > 0");
    const double s_prev = schedule.sigma(i - 1);

    std::vector<double> mu(z_t.size());
    if (opt.mean_param == ReverseStepOptions::MeanParam::clean_estimate) {
        for (std::size_t k = 0; k < z_t.size(); ++k)
            mu[k] = (z_t[k] - s_cur * eps_hat[k]) + opt.delta_sign * delta_hat[k];
    } else {
        const double s2_cur = s_cur * s_cur;
        const double a = (s_prev * s_prev) / s2_cur;
        const double b = schedule.step_variance(i) / s2_cur;
        for (std::size_t k = 0; k < z_t.size(); ++k)
            mu[k] = a * z_t[k] + b * (z_t[k] - s_cur * eps_hat[k]) +
                    opt.delta_sign * delta_hat[k];
    }

    double scale = s_prev;
    if (opt.noise_scale == ReverseStepOptions::NoiseScale::posterior_std)
        scale = std::sqrt(schedule.step_variance(i) * s_prev * s_prev / (s_cur * s_cur));

    for (std::size_t k = 0; k < z_t.size(); ++k) mu[k] += scale * noise[k];
    return mu;
}

}  // namespace betaspec
