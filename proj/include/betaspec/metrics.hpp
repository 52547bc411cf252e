#pragma once

// Disentanglement and information metrics over a table of latent codes,
// ground-truth factors, and binary attributes: discrete MI / MIG, the
// entropy-based DCI disentanglement score with an L1 linear importance
// matrix, AUROC / TAD, the aggregate-posterior KL decomposition, and
// reconstruction error. Everything is a pure function of its inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/rng.hpp"

namespace betaspec {

struct RepresentationTable {
    std::size_t n = 0;  // rows
    std::size_t d = 0;  // code dimensions
    std::vector<double> codes;        // n x d row-major
    std::vector<int> factors;         // n x K row-major
    std::vector<int> factor_cards;    // K
    std::vector<std::uint8_t> attributes;  // n x A row-major, 0/1
    std::vector<std::string> attribute_names;

    std::size_t n_factors() const { return factor_cards.size(); }
    std::size_t n_attributes() const { return attribute_names.size(); }

    double code(std::size_t row, std::size_t j) const { return codes[row * d + j]; }
    int factor(std::size_t row, std::size_t k) const {
        return factors[row * n_factors() + k];
    }
    bool attribute(std::size_t row, std::size_t a) const {
        return attributes[row * n_attributes() + a] != 0;
    }

    void validate() const {
        if (n == 0 || d == 0) throw std::invalid_argument("representation table: empty");
        if (codes.size() != n * d) throw std::invalid_argument("representation table: codes size");
        if (factors.size() != n * n_factors())
            throw std::invalid_argument("representation table: factors size");
        if (attributes.size() != n * n_attributes())
            throw std::invalid_argument("representation table: attributes size");
        for (std::size_t k = 0; k < n_factors(); ++k)
            for (std::size_t r = 0; r < n; ++r)
                if (factor(r, k) < 0 || factor(r, k) >= factor_cards[k])
                    throw std::invalid_argument("representation table: factor out of range");
    }
};

// Plug-in entropy of an integer column, nats.
inline double discrete_entropy(const std::vector<int>& values, int cardinality) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(cardinality), 0);
    for (int v : values) ++counts[static_cast<std::size_t>(v)];
    double h = 0.0;
    const double n = static_cast<double>(values.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) continue;
        const double p = static_cast<double>(counts[c]) / n;
        h -= p * std::log(p);
    }
    return h;
}

// Equal-frequency bin assignment of a real column. Ties broken by original
// index so the binning is deterministic.
inline std::vector<int> equal_frequency_bins(const std::vector<double>& column, int n_bins) {
    const std::size_t n = column.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (column[a] != column[b]) return column[a] < column[b];
        return a < b;
    });
    std::vector<int> bins(n);
    for (std::size_t rank = 0; rank < n; ++rank)
        bins[order[rank]] = static_cast<int>((rank * static_cast<std::size_t>(n_bins)) / n);
    return bins;
}

// Plug-in mutual information (nats) between a real code column (binned by
// equal-frequency quantiles) and an integer factor column.
inline double discrete_mutual_information(const std::vector<double>& code_column,
                                          const std::vector<int>& factor_column,
                                          int factor_cardinality, int n_bins = 20) {
    if (n_bins < 2) throw std::invalid_argument("mutual information: n_bins must be >= 2");
    if (code_column.size() != factor_column.size())
        throw std::invalid_argument("mutual information: column length mismatch");
    if (factor_cardinality < 2 ||
        discrete_entropy(factor_column, factor_cardinality) == 0.0)
        throw std::invalid_argument("mutual information: factor must take at least two values");

    const auto [mn, mx] = std::minmax_element(code_column.begin(), code_column.end());
    if (*mn == *mx) return 0.0;  // constant code carries no information

    const auto bins = equal_frequency_bins(code_column, n_bins);
    const auto nb = static_cast<std::size_t>(n_bins);
    const auto nf = static_cast<std::size_t>(factor_cardinality);
    std::vector<double> joint(nb * nf, 0.0), pb(nb, 0.0), pf(nf, 0.0);
    const double inv_n = 1.0 / static_cast<double>(code_column.size());
    for (std::size_t r = 0; r < code_column.size(); ++r) {
        const auto b = static_cast<std::size_t>(bins[r]);
        const auto f = static_cast<std::size_t>(factor_column[r]);
        joint[b * nf + f] += inv_n;
        pb[b] += inv_n;
        pf[f] += inv_n;
    }
    double mi = 0.0;
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t f = 0; f < nf; ++f) {
            const double pj = joint[b * nf + f];
            if (pj > 0.0) mi += pj * std::log(pj / (pb[b] * pf[f]));
        }
    return std::max(0.0, mi);
}

// Mutual Information Gap: mean over factors of the normalized gap between
// the two largest code-factor MIs.
inline double mig(const RepresentationTable& table, int n_bins = 20) {
    table.validate();
    if (table.d < 2) throw std::invalid_argument("mig: need at least two code dimensions");
    if (table.n_factors() < 1) throw std::invalid_argument("mig: need at least one factor");

    double total = 0.0;
    for (std::size_t k = 0; k < table.n_factors(); ++k) {
        std::vector<int> factor_col(table.n);
        for (std::size_t r = 0; r < table.n; ++r) factor_col[r] = table.factor(r, k);
        const double h = discrete_entropy(factor_col, table.factor_cards[k]);
        double best = 0.0, second = 0.0;
        for (std::size_t j = 0; j < table.d; ++j) {
            std::vector<double> code_col(table.n);
            for (std::size_t r = 0; r < table.n; ++r) code_col[r] = table.code(r, j);
            const double mi =
                discrete_mutual_information(code_col, factor_col, table.factor_cards[k], n_bins);
            if (mi > best) {
                second = best;
                best = mi;
            } else if (mi > second) {
                second = mi;
            }
        }
        total += (best - second) / h;
    }
    return total / static_cast<double>(table.n_factors());
}

namespace detail_dci {

// Cyclic coordinate-descent lasso on standardized features:
//   min 0.5/n |y - X w|^2 + lambda |w|_1
// Fixed iteration budget and warm-started lambda path; deterministic.
inline std::vector<double> lasso_fit(const std::vector<double>& x, std::size_t n, std::size_t d,
                                     const std::vector<double>& y, double lambda_ratio = 0.01,
                                     int path_points = 3, int iters_per_lambda = 60) {
    std::vector<double> w(d, 0.0);
    std::vector<double> residual = y;  // y - Xw with w = 0
    // column squared norms / n (standardized columns make these ~1)
    std::vector<double> col_sq(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) col_sq[j] += x[r * d + j] * x[r * d + j];
    for (auto& v : col_sq) v /= static_cast<double>(n);

    double lambda_max = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double dot = 0.0;
        for (std::size_t r = 0; r < n; ++r) dot += x[r * d + j] * y[r];
        lambda_max = std::max(lambda_max, std::abs(dot) / static_cast<double>(n));
    }
    if (lambda_max == 0.0) return w;

    for (int p = 1; p <= path_points; ++p) {
        const double frac = static_cast<double>(p) / path_points;
        const double lambda = lambda_max * std::pow(lambda_ratio, frac);
        for (int it = 0; it < iters_per_lambda; ++it) {
            for (std::size_t j = 0; j < d; ++j) {
                if (col_sq[j] == 0.0) continue;
                double rho = 0.0;
                for (std::size_t r = 0; r < n; ++r) rho += x[r * d + j] * residual[r];
                rho = rho / static_cast<double>(n) + col_sq[j] * w[j];
                const double wj_new =
                    (rho > lambda ? rho - lambda : (rho < -lambda ? rho + lambda : 0.0)) /
                    col_sq[j];
                const double delta = wj_new - w[j];
                if (delta != 0.0) {
                    for (std::size_t r = 0; r < n; ++r) residual[r] -= delta * x[r * d + j];
                    w[j] = wj_new;
                }
            }
        }
    }
    return w;
}

}  // namespace detail_dci

// DCI disentanglement: per-factor L1 linear probes give an importance matrix
// R[j, k]; code j scores 1 - H_K(R[j, .] normalized) and codes are weighted
// by their share of total importance.
inline double dci_disentanglement(const RepresentationTable& table,
                                  std::vector<double>* code_weights = nullptr,
                                  std::string* warning = nullptr) {
    table.validate();
    const std::size_t K = table.n_factors();
    if (K < 2) throw std::invalid_argument("dci: need at least two factors");
    const std::size_t n = table.n, d = table.d;

    // standardize codes column-wise
    std::vector<double> x(table.codes);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += x[r * d + j];
        mean /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
            const double c = x[r * d + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(n);
        const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
        for (std::size_t r = 0; r < n; ++r) x[r * d + j] = (x[r * d + j] - mean) * scale;
    }

    std::vector<double> importance(d * K, 0.0);
    std::vector<double> y(n);
    for (std::size_t k = 0; k < K; ++k) {
        for (int cls = 0; cls < table.factor_cards[k]; ++cls) {
            double mean_y = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                y[r] = table.factor(r, k) == cls ? 1.0 : 0.0;
                mean_y += y[r];
            }
            mean_y /= static_cast<double>(n);
            for (auto& v : y) v -= mean_y;  // centered one-hot column
            const auto w = detail_dci::lasso_fit(x, n, d, y);
            for (std::size_t j = 0; j < d; ++j) importance[j * K + k] += std::abs(w[j]);
        }
    }

    double total = 0.0;
    for (double v : importance) total += v;
    if (total == 0.0) {
        if (warning) *warning = "dci: all-zero importance matrix; score is 0";
        if (code_weights) code_weights->assign(d, 0.0);
        return 0.0;
    }

    const double logK = std::log(static_cast<double>(K));
    double score = 0.0;
    if (code_weights) code_weights->assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double row_sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) row_sum += importance[j * K + k];
        if (row_sum == 0.0) continue;
        double h = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const double p = importance[j * K + k] / row_sum;
            if (p > 0.0) h -= p * std::log(p);
        }
        const double dj = 1.0 - h / logK;
        const double rho = row_sum / total;
        if (code_weights) (*code_weights)[j] = rho;
        score += rho * dj;
    }
    return score;
}

// Mann-Whitney AUROC with average ranks for ties.
inline double auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auroc: size mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (auto l : labels) n_pos += (l != 0);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auroc: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        if (labels[r] != 0) rank_sum_pos += rank[r];
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct TadResult {
    double tad = 0.0;
    int captured = 0;
};

// Total AUROC Difference: per attribute, orientation-corrected per-code
// AUROCs; captured attributes (best >= threshold) contribute best - second.
inline TadResult tad(const RepresentationTable& table, double capture_threshold = 0.75) {
    table.validate();
    const std::size_t A = table.n_attributes();
    if (A == 0) throw std::invalid_argument("tad: no attributes");
    TadResult out;
    std::vector<double> code_col(table.n);
    std::vector<std::uint8_t> labels(table.n);
    for (std::size_t a = 0; a < A; ++a) {
        for (std::size_t r = 0; r < table.n; ++r) labels[r] = table.attribute(r, a) ? 1 : 0;
        double best = 0.0, second = 0.0;
        for (std::size_t j = 0; j < table.d; ++j) {
            for (std::size_t r = 0; r < table.n; ++r) code_col[r] = table.code(r, j);
            const double roc = auroc(code_col, labels);
            const double oriented = std::max(roc, 1.0 - roc);
            if (oriented > best) {
                second = best;
                best = oriented;
            } else if (oriented > second) {
                second = oriented;
            }
        }
        if (best >= capture_threshold) {
            ++out.captured;
            out.tad += best - second;
        }
    }
    return out;
}

struct KlDecomposition {
    double mean_kl = 0.0;      // E_x KL(q(z|x) || p(z)), closed form
    double mi_estimate = 0.0;  // I(z; x) via minibatch-weighted sampling
    double marginal_kl_estimate = 0.0;  // KL(q(z) || p(z))
    double residual() const { return mean_kl - mi_estimate - marginal_kl_estimate; }
};

// Decomposition of the averaged KL into mutual information and aggregate-
// posterior KL, estimated from precomputed encoder means at one beta with a
// shared isotropic sigma. The two MC terms share the same aggregate density
// estimate, so their sum is an unbiased one-sample estimate of the mean KL
// and the residual measures Monte-Carlo error only.
inline KlDecomposition kl_decomposition_estimate(const std::vector<double>& encodings,
                                                 std::size_t n_rows, std::size_t d, double sigma,
                                                 std::size_t n_mc, std::uint64_t seed = 0) {
    if (n_mc < 1000) throw std::invalid_argument("kl decomposition: n_mc must be >= 1000");
    if (!(sigma > 0.0)) throw std::invalid_argument("kl decomposition: sigma must be > 0");
    if (encodings.size() != n_rows * d)
        throw std::invalid_argument("kl decomposition: encodings size mismatch");

    KlDecomposition out;
    const double dd = static_cast<double>(d);
    const double s2 = sigma * sigma;
    for (std::size_t r = 0; r < n_rows; ++r) {
        double norm2 = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double v = encodings[r * d + k];
            norm2 += v * v;
        }
        out.mean_kl += 0.5 * (norm2 + dd * s2 - dd - dd * std::log(s2));
    }
    out.mean_kl /= static_cast<double>(n_rows);

    constexpr double log_two_pi = 1.8378770664093454835606594728112;
    const double log_norm_q = -0.5 * dd * (log_two_pi + std::log(s2));
    const double log_norm_p = -0.5 * dd * log_two_pi;
    const double log_m = std::log(static_cast<double>(n_rows));

    RngStream rng(seed, 0x3c1du);
    std::vector<double> z(d);
    double mi_acc = 0.0, mkl_acc = 0.0;
    for (std::size_t s = 0; s < n_mc; ++s) {
        const std::size_t pick = rng.next_below(n_rows);
        for (std::size_t k = 0; k < d; ++k)
            z[k] = encodings[pick * d + k] + sigma * rng.next_gaussian();

        // log q(z | x_pick), log q(z) over the sample, log p(z)
        double q_cond = 0.0, p_sq = 0.0;
        double max_exponent = -1e300;
        std::vector<double> exponents(n_rows);
        for (std::size_t r = 0; r < n_rows; ++r) {
            double dist2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = z[k] - encodings[r * d + k];
                dist2 += diff * diff;
            }
            exponents[r] = -0.5 * dist2 / s2;
            max_exponent = std::max(max_exponent, exponents[r]);
            if (r == pick) q_cond = log_norm_q + exponents[r];
        }
        double sum_exp = 0.0;
        for (std::size_t r = 0; r < n_rows; ++r) sum_exp += std::exp(exponents[r] - max_exponent);
        const double q_marg = log_norm_q + max_exponent + std::log(sum_exp) - log_m;
        for (std::size_t k = 0; k < d; ++k) p_sq += z[k] * z[k];
        const double p_log = log_norm_p - 0.5 * p_sq;

        mi_acc += q_cond - q_marg;
        mkl_acc += q_marg - p_log;
    }
    out.mi_estimate = mi_acc / static_cast<double>(n_mc);
    out.marginal_kl_estimate = mkl_acc / static_cast<double>(n_mc);
    return out;
}

// Mean per-pixel squared error of the noiseless round trip x -> f -> g.
inline double recon_mse(const std::function<std::vector<double>(const std::vector<double>&)>& encode,
                        const std::function<std::vector<double>(const std::vector<double>&)>& decode,
                        const std::vector<std::vector<double>>& images) {
    if (images.empty()) throw std::invalid_argument("recon_mse: no images");
    double acc = 0.0;
    for (const auto& x : images) {
        const auto xhat = decode(encode(x));
        if (xhat.size() != x.size()) throw std::invalid_argument("recon_mse: size mismatch");
        double err = 0.0;
        for (std::size_t p = 0; p < x.size(); ++p) err += (x[p] - xhat[p]) * (x[p] - xhat[p]);
        acc += err / static_cast<double>(x.size());
    }
    return acc / static_cast<double>(images.size());
}

// Spearman rank correlation (average ranks for ties).
inline double spearman_rank_correlation(const std::vector<double>& a,
                                        const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length sequences");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

// Kendall tau-a over all pairs.
inline double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("kendall: need two equal-length sequences");
    long concordant = 0, discordant = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j], db = b[i] - b[j];
            const double prod = da * db;
            if (prod > 0) ++concordant;
            else if (prod < 0) ++discordant;
        }
    }
    const double n = static_cast<double>(a.size());
    return static_cast<double>(concordant - discordant) / (0.5 * n * (n - 1.0));
}

struct MetricsReport {
    double beta = 0.0;
    double mig = 0.0;
    double dci_disentanglement = 0.0;
    double tad = 0.0;
    int captured_attributes = 0;
    double recon_mse = 0.0;
    double kl_mean = 0.0;
    double mi_xz_estimate = 0.0;
    double kl_marginal_estimate = 0.0;
};

}  // namespace betaspec
