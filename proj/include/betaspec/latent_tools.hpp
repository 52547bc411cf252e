#pragma once

// Latent-space exploration on top of the trained models: PCA direction
// discovery over encoded datasets, single-direction manipulation, and
// (sub-coordinate) spherical interpolation, each routed through the denoiser
// before decoding. Pure composition; models are never mutated.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/diffusion.hpp"
#include "betaspec/vae.hpp"

namespace betaspec {

struct DirectionBasis {
    std::vector<std::vector<double>> directions;  // unit vectors, descending variance
    std::vector<double> explained_variance;
};

namespace detail_pca {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Fine for the
// latent dimensions used here.
inline void jacobi_eigen(std::vector<double>& a, std::size_t d, std::vector<double>& eigvals,
                         std::vector<double>& eigvecs) {
    eigvecs.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eigvecs[i * d + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    const double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double vkp = eigvecs[k * d + p], vkq = eigvecs[k * d + q];
                    eigvecs[k * d + p] = c * vkp - s * vkq;
                    eigvecs[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(d);
    for (std::size_t i = 0; i < d; ++i) eigvals[i] = a[i * d + i];
}

}  // namespace detail_pca

// Eigen-decomposition of the centered covariance of an n x d latent table.
// Deterministic sign: first coordinate of magnitude > 1e-12 made positive.
// Rank-deficient inputs truncate the basis with a warning.
inline DirectionBasis pca_directions(const std::vector<double>& latents, std::size_t n,
                                     std::size_t d, std::string* warning = nullptr) {
    if (latents.size() != n * d) throw std::invalid_argument("pca: latents size mismatch");
    if (n <= d) throw std::invalid_argument("pca: need more samples than dimensions");

    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) mean[j] += latents[r * d + j];
    for (auto& v : mean) v /= static_cast<double>(n);

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            const double ci = latents[r * d + i] - mean[i];
            for (std::size_t j = i; j < d; ++j)
                cov[i * d + j] += ci * (latents[r * d + j] - mean[j]);
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            cov[i * d + j] /= static_cast<double>(n - 1);
            cov[j * d + i] = cov[i * d + j];
        }

    std::vector<double> eigvals, eigvecs;
    detail_pca::jacobi_eigen(cov, d, eigvals, eigvecs);

    std::vector<std::size_t> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });

    double max_eig = 0.0;
    for (double v : eigvals) max_eig = std::max(max_eig, v);
    const double cutoff = max_eig * 1e-12;

    DirectionBasis basis;
    for (std::size_t rank = 0; rank < d; ++rank) {
        const std::size_t col = order[rank];
        if (eigvals[col] <= cutoff) break;  // rank deficiency: truncate
        std::vector<double> dir(d);
        for (std::size_t k = 0; k < d; ++k) dir[k] = eigvecs[k * d + col];
        double norm = 0.0;
        for (double v : dir) norm += v * v;
        norm = std::sqrt(norm);
        for (auto& v : dir) v /= norm;
        for (std::size_t k = 0; k < d; ++k) {
            if (std::abs(dir[k]) > 1e-12) {
                if (dir[k] < 0.0)
                    for (auto& v : dir) v = -v;
                break;
            }
        }
        basis.directions.push_back(std::move(dir));
        basis.explained_variance.push_back(eigvals[col]);
    }
    if (basis.directions.size() < d && warning)
        *warning = "pca: rank-deficient input; basis truncated to " +
                   std::to_string(basis.directions.size()) + " directions";
    return basis;
}

// Spherical linear interpolation; falls back to linear interpolation for
// nearly parallel inputs.
inline std::vector<double> slerp(const std::vector<double>& z1, const std::vector<double>& z2,
                                 double alpha) {
    if (z1.size() != z2.size()) throw std::invalid_argument("slerp: dimension mismatch");
    double n1 = 0.0, n2 = 0.0, dot = 0.0;
    for (std::size_t k = 0; k < z1.size(); ++k) {
        n1 += z1[k] * z1[k];
        n2 += z2[k] * z2[k];
        dot += z1[k] * z2[k];
    }
    n1 = std::sqrt(n1);
    n2 = std::sqrt(n2);
    if (n1 == 0.0 || n2 == 0.0) throw std::invalid_argument("slerp: zero vector");
    double cosw = dot / (n1 * n2);
    cosw = std::min(1.0, std::max(-1.0, cosw));
    const double omega = std::acos(cosw);

    std::vector<double> out(z1.size());
    if (omega < 1e-6) {
        for (std::size_t k = 0; k < z1.size(); ++k)
            out[k] = (1.0 - alpha) * z1[k] + alpha * z2[k];
        return out;
    }
    const double denom = std::sin(omega);
    const double w1 = std::sin((1.0 - alpha) * omega) / denom;
    const double w2 = std::sin(alpha * omega) / denom;
    for (std::size_t k = 0; k < z1.size(); ++k) out[k] = w1 * z1[k] + w2 * z2[k];
    return out;
}

// Encode at beta, push along a unit direction, denoise to beta = 0, decode.
// Non-unit directions are normalized (warning reported when requested).
inline std::vector<double> manipulate(const VaeModel& vae, const DenoiserModel& denoiser,
                                      const std::vector<double>& x,
                                      const std::vector<double>& direction, double alpha,
                                      int i_beta, std::uint64_t seed,
                                      std::string* warning = nullptr) {
    if (direction.size() != vae.config().latent_dim)
        throw std::invalid_argument("manipulate: direction dimension mismatch");
    double norm = 0.0;
    for (double v : direction) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::invalid_argument("manipulate: zero direction");
    std::vector<double> unit = direction;
    if (std::abs(norm - 1.0) > 1e-9) {
        if (warning) *warning = "manipulate: direction was not unit-norm; normalized";
        for (auto& v : unit) v /= norm;
    }

    const double beta = denoiser.schedule().time_of(i_beta);
    auto z = vae.encode(x, beta);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += alpha * unit[k];
    const auto z0 = denoise_from(denoiser, z, i_beta, seed);
    return vae.decode(z0, 0.0);
}

// Alpha in units of the direction's dataset standard deviation.
inline double scaled_alpha(const DirectionBasis& basis, std::size_t direction_index,
                           double alpha_in_std_units) {
    return alpha_in_std_units * std::sqrt(basis.explained_variance.at(direction_index));
}

// Encode both images at beta, slerp the coordinates listed in dims (the rest
// stay x1's), denoise to beta = 0, decode. Empty dims degrade to x1's
// reconstruction path with a warning.
inline std::vector<double> interpolate(const VaeModel& vae, const DenoiserModel& denoiser,
                                       const std::vector<double>& x1,
                                       const std::vector<double>& x2, double alpha,
                                       const std::vector<std::size_t>& dims, int i_beta,
                                       std::uint64_t seed, std::string* warning = nullptr) {
    const std::size_t d = vae.config().latent_dim;
    for (std::size_t j : dims)
        if (j >= d) throw std::out_of_range("interpolate: dim index out of range");

    const double beta = denoiser.schedule().time_of(i_beta);
    auto z1 = vae.encode(x1, beta);
    if (dims.empty()) {
        if (warning) *warning = "interpolate: empty dim subset; returning x1's reconstruction";
    } else {
        const auto z2 = vae.encode(x2, beta);
        std::vector<double> sub1, sub2;
        sub1.reserve(dims.size());
        sub2.reserve(dims.size());
        for (std::size_t j : dims) {
            sub1.push_back(z1[j]);
            sub2.push_back(z2[j]);
        }
        const auto mixed = slerp(sub1, sub2, alpha);
        for (std::size_t q = 0; q < dims.size(); ++q) z1[dims[q]] = mixed[q];
    }
    const auto z0 = denoise_from(denoiser, z1, i_beta, seed);
    return vae.decode(z0, 0.0);
}

// --- "dirs v1" text container --------------------------------------------------

inline void save_directions(const std::string& path, const DirectionBasis& basis) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dirs: cannot open " + path);
    const std::size_t d = basis.directions.empty() ? 0 : basis.directions[0].size();
    out << "dirs v1 count=" << basis.directions.size() << " dim=" << d << "\n";
    char buf[64];
    for (std::size_t i = 0; i < basis.directions.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", basis.explained_variance[i]);
        out << buf;
        for (double v : basis.directions[i]) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << " " << buf;
        }
        out << "\n";
    }
}

inline DirectionBasis load_directions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("dirs: cannot open " + path);
    std::string line;
    std::getline(in, line);
    std::istringstream hdr(line);
    std::string word, version, countf, dimf;
    hdr >> word >> version >> countf >> dimf;
    if (word != "dirs" || version != "v1" || countf.rfind("count=", 0) != 0 ||
        dimf.rfind("dim=", 0) != 0)
        throw std::runtime_error("dirs: bad header: " + line);
    const auto count = static_cast<std::size_t>(std::stoul(countf.substr(6)));
    const auto dim = static_cast<std::size_t>(std::stoul(dimf.substr(4)));
    DirectionBasis basis;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("dirs: truncated");
        std::istringstream row(line);
        double var;
        row >> var;
        std::vector<double> dir(dim);
        for (auto& v : dir) row >> v;
        if (!row) throw std::runtime_error("dirs: short row");
        basis.explained_variance.push_back(var);
        basis.directions.push_back(std::move(dir));
    }
    return basis;
}

}  // namespace betaspec
