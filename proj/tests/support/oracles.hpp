#pragma once

// Brute-force verification oracles. Test-only: these must stay independent of
// the closed-form kernels they check, so they integrate/sample the forward
// densities directly.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "betaspec/rng.hpp"
#include "betaspec/schedule.hpp"

namespace betaspec::testing {

struct OracleMoments {
    double mean = 0.0;
    double variance = 0.0;
    std::size_t n_samples = 0;  // MC only
};

// Posterior moments of z_{t-tau} given z_t by exhaustive 1-D quadrature over a
// fine z_prev grid, marginalizing x over equally weighted prior points.
// Forward densities only:
//   z_prev | x_j ~ N(f_prev_j, sigma_prev^2)
//   z_t | z_prev, x_j ~ N(z_prev + f_cur_j - f_prev_j, sigma_step^2)
// The linear process is the special case f_prev_j = f_cur_j = x_j.
inline OracleMoments grid_bayes_oracle(const Schedule& schedule, int i,
                                       const std::vector<double>& f_prev_points,
                                       const std::vector<double>& f_cur_points, double z_t,
                                       std::size_t grid_points = 40001) {
    if (f_prev_points.empty()) throw std::invalid_argument("grid_bayes_oracle: empty prior");
    if (f_prev_points.size() != f_cur_points.size())
        throw std::invalid_argument("grid_bayes_oracle: prior point lists differ in size");
    const double s_prev = schedule.sigma(i - 1);
    const double s2_prev = s_prev * s_prev;
    const double s2_step = schedule.step_variance(i);

    // Degenerate sigma_prev = 0: z_prev is exactly f_prev_j; weight by the
    // z_t likelihood of each point.
    if (s2_prev == 0.0) {
        double wsum = 0.0, m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < f_prev_points.size(); ++j) {
            const double mu_t = f_prev_points[j] + f_cur_points[j] - f_prev_points[j];
            const double r = z_t - mu_t;
            const double w = std::exp(-0.5 * r * r / s2_step);
            wsum += w;
            m1 += w * f_prev_points[j];
            m2 += w * f_prev_points[j] * f_prev_points[j];
        }
        OracleMoments out;
        out.mean = m1 / wsum;
        out.variance = m2 / wsum - out.mean * out.mean;
        return out;
    }

    double lo = f_prev_points[0], hi = f_prev_points[0];
    for (std::size_t j = 0; j < f_prev_points.size(); ++j) {
        const double delta = f_cur_points[j] - f_prev_points[j];
        lo = std::min({lo, f_prev_points[j], z_t - delta});
        hi = std::max({hi, f_prev_points[j], z_t - delta});
    }
    const double pad = 10.0 * (s_prev + std::sqrt(s2_step));
    lo -= pad;
    hi += pad;

    const double dz = (hi - lo) / static_cast<double>(grid_points - 1);
    double wsum = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t g = 0; g < grid_points; ++g) {
        const double zp = lo + dz * static_cast<double>(g);
        double density = 0.0;
        for (std::size_t j = 0; j < f_prev_points.size(); ++j) {
            const double r1 = zp - f_prev_points[j];
            const double r2 = z_t - (zp + f_cur_points[j] - f_prev_points[j]);
            density += std::exp(-0.5 * (r1 * r1 / s2_prev + r2 * r2 / s2_step));
        }
        wsum += density;
        m1 += density * zp;
        m2 += density * zp * zp;
    }
    OracleMoments out;
    out.mean = m1 / wsum;
    out.variance = m2 / wsum - out.mean * out.mean;
    return out;
}

inline OracleMoments grid_bayes_oracle_linear(const Schedule& schedule, int i,
                                              const std::vector<double>& prior_points,
                                              double z_t, std::size_t grid_points = 40001) {
    return grid_bayes_oracle(schedule, i, prior_points, prior_points, z_t, grid_points);
}

// Monte-Carlo posterior for a single known x: simulate the forward chain
// x -> z_prev -> z_t, keep draws with z_t inside a +-half_width bin around the
// target, return moments of the kept z_prev values plus their count.
inline OracleMoments mc_bayes_oracle(const Schedule& schedule, int i, double f_prev, double f_cur,
                                     double z_t_target, double half_width, std::size_t n_draws,
                                     std::uint64_t seed) {
    const double s_prev = schedule.sigma(i - 1);
    const double s_step = std::sqrt(schedule.step_variance(i));
    RngStream rng(seed);
    double m1 = 0.0, m2 = 0.0;
    std::size_t kept = 0;
    for (std::size_t n = 0; n < n_draws; ++n) {
        const double z_prev = f_prev + s_prev * rng.next_gaussian();
        const double z_t = z_prev + (f_cur - f_prev) + s_step * rng.next_gaussian();
        if (std::abs(z_t - z_t_target) <= half_width) {
            ++kept;
            m1 += z_prev;
            m2 += z_prev * z_prev;
        }
    }
    if (kept < 100) throw std::runtime_error("mc_bayes_oracle: too few samples in bin");
    OracleMoments out;
    out.mean = m1 / static_cast<double>(kept);
    out.variance = m2 / static_cast<double>(kept) - out.mean * out.mean;
    out.n_samples = kept;
    return out;
}

}  // namespace betaspec::testing
