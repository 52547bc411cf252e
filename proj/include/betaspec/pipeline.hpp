#pragma once

// Shared stage logic between the CLI and the acceptance suite: building
// representation tables from a trained VAE, per-beta evaluation into a
// MetricsReport, the beta sweep, and report aggregation with the
// monotonicity / collapse verdicts.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "betaspec/config.hpp"
#include "betaspec/diffusion.hpp"
#include "betaspec/metrics.hpp"
#include "betaspec/toy_data.hpp"
#include "betaspec/vae.hpp"

namespace betaspec {

// Encoder means at a fixed beta plus ground-truth factors and attributes.
inline RepresentationTable build_representation_table(const VaeModel& vae,
                                                      const FactorDataset& dataset,
                                                      const std::vector<std::size_t>& indices,
                                                      double beta) {
    RepresentationTable t;
    t.n = indices.size();
    t.d = vae.config().latent_dim;
    const auto& spec = dataset.spec();
    for (const auto& f : spec.factors) t.factor_cards.push_back(f.cardinality);
    t.attribute_names = derive_attributes(spec, index_to_tuple(spec, 0)).names;
    t.codes.resize(t.n * t.d);
    t.factors.resize(t.n * t.factor_cards.size());
    t.attributes.resize(t.n * t.attribute_names.size());

    const std::size_t chunk = 256;
    const std::size_t D = spec.pixels();
    std::vector<double> xs;
    for (std::size_t at = 0; at < t.n; at += chunk) {
        const std::size_t rows = std::min(chunk, t.n - at);
        xs.assign(rows * D, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& img = dataset.image(indices[at + r]);
            std::copy(img.begin(), img.end(), xs.begin() + static_cast<long>(r * D));
        }
        const auto codes = vae.encode_batch(xs, rows, beta);
        std::copy(codes.begin(), codes.end(), t.codes.begin() + static_cast<long>(at * t.d));
    }
    for (std::size_t r = 0; r < t.n; ++r) {
        const auto tuple = dataset.tuple(indices[r]);
        for (std::size_t k = 0; k < tuple.size(); ++k)
            t.factors[r * t.factor_cards.size() + k] = tuple[k];
        const auto attrs = derive_attributes(spec, tuple);
        for (std::size_t a = 0; a < attrs.values.size(); ++a)
            t.attributes[r * t.attribute_names.size() + a] = attrs.values[a] ? 1 : 0;
    }
    return t;
}

inline double batched_recon_mse(const VaeModel& vae, const FactorDataset& dataset,
                                const std::vector<std::size_t>& indices, double beta) {
    const std::size_t D = dataset.spec().pixels();
    const std::size_t chunk = 256;
    double acc = 0.0;
    std::vector<double> xs;
    for (std::size_t at = 0; at < indices.size(); at += chunk) {
        const std::size_t rows = std::min(chunk, indices.size() - at);
        xs.assign(rows * D, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& img = dataset.image(indices[at + r]);
            std::copy(img.begin(), img.end(), xs.begin() + static_cast<long>(r * D));
        }
        const auto codes = vae.encode_batch(xs, rows, beta);
        const auto recon = vae.decode_batch(codes, rows, beta);
        for (std::size_t p = 0; p < rows * D; ++p) {
            const double diff = xs[p] - recon[p];
            acc += diff * diff;
        }
    }
    return acc / (static_cast<double>(indices.size()) * static_cast<double>(D));
}

// Baseline: error of always predicting the dataset mean image.
inline double mean_image_mse(const FactorDataset& dataset,
                             const std::vector<std::size_t>& indices) {
    const auto mean = dataset.mean_image();
    double acc = 0.0;
    for (std::size_t idx : indices) {
        const auto& img = dataset.image(idx);
        for (std::size_t p = 0; p < img.size(); ++p) {
            const double diff = img[p] - mean[p];
            acc += diff * diff;
        }
    }
    return acc / (static_cast<double>(indices.size()) * static_cast<double>(mean.size()));
}

inline MetricsReport evaluate_beta(const VaeModel& vae, const FactorDataset& dataset,
                                   const std::vector<std::size_t>& eval_indices, double beta,
                                   const RunConfig& cfg) {
    MetricsReport rep;
    rep.beta = beta;
    std::vector<std::size_t> sample = eval_indices;
    if (sample.size() > cfg.eval_sample) sample.resize(cfg.eval_sample);

    auto table = build_representation_table(vae, dataset, sample, beta);
    rep.mig = mig(table, cfg.n_bins);
    rep.dci_disentanglement = dci_disentanglement(table);
    const auto tad_result = tad(table, cfg.tad_threshold);
    rep.tad = tad_result.tad;
    rep.captured_attributes = tad_result.captured;
    rep.recon_mse = batched_recon_mse(vae, dataset, sample, beta);

    const auto dec = kl_decomposition_estimate(table.codes, table.n, table.d, vae.sigma_at(beta),
                                               cfg.kl_mc_samples, cfg.seed);
    rep.kl_mean = dec.mean_kl;
    rep.mi_xz_estimate = dec.mi_estimate;
    rep.kl_marginal_estimate = dec.marginal_kl_estimate;
    return rep;
}

inline nlohmann::json report_to_json(const MetricsReport& rep, const std::string& config_hash) {
    nlohmann::json j;
    j["beta"] = rep.beta;
    j["mig"] = rep.mig;
    j["dci_disentanglement"] = rep.dci_disentanglement;
    j["tad"] = rep.tad;
    j["captured_attributes"] = rep.captured_attributes;
    j["recon_mse"] = rep.recon_mse;
    j["kl_mean"] = rep.kl_mean;
    j["mi_xz_estimate"] = rep.mi_xz_estimate;
    j["kl_marginal_estimate"] = rep.kl_marginal_estimate;
    j["config_hash"] = config_hash;
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport rep;
    rep.beta = j.at("beta").get<double>();
    rep.mig = j.at("mig").get<double>();
    rep.dci_disentanglement = j.at("dci_disentanglement").get<double>();
    rep.tad = j.at("tad").get<double>();
    rep.captured_attributes = j.at("captured_attributes").get<int>();
    rep.recon_mse = j.at("recon_mse").get<double>();
    rep.kl_mean = j.at("kl_mean").get<double>();
    rep.mi_xz_estimate = j.at("mi_xz_estimate").get<double>();
    rep.kl_marginal_estimate = j.at("kl_marginal_estimate").get<double>();
    return rep;
}

struct AggregateSummary {
    nlohmann::json json;
};

// Summary over a set of per-beta reports: metric curves on the grid (null
// where a grid point was not evaluated), per-metric best beta over available
// points, the sigma table snapshot, and the monotonicity/collapse verdicts.
inline AggregateSummary aggregate_report(std::vector<MetricsReport> reports,
                                         const std::vector<double>& sigma_grid, double horizon,
                                         std::optional<double> mean_image_baseline,
                                         const std::string& config_hash) {
    if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
    std::sort(reports.begin(), reports.end(),
              [](const MetricsReport& a, const MetricsReport& b) { return a.beta < b.beta; });

    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["horizon"] = horizon;
    j["sigma_grid"] = sigma_grid;

    const int n_grid = static_cast<int>(sigma_grid.size()) - 1;
    auto grid_index_of = [&](double beta) -> std::optional<int> {
        const double u = beta / horizon * n_grid;
        const int i = static_cast<int>(std::lround(u));
        if (i < 0 || i > n_grid) return std::nullopt;
        if (std::abs(u - i) > 1e-9) return std::nullopt;
        return i;
    };

    // curves on the grid, explicit nulls at unevaluated points
    std::vector<nlohmann::json> curve_slots(static_cast<std::size_t>(n_grid) + 1, nullptr);
    for (const auto& metric : {"mig", "dci_disentanglement", "tad", "recon_mse", "kl_mean",
                               "mi_xz_estimate"}) {
        std::fill(curve_slots.begin(), curve_slots.end(), nullptr);
        for (const auto& rep : reports) {
            const auto gi = grid_index_of(rep.beta);
            if (!gi) continue;
            double v = 0.0;
            const std::string m = metric;
            if (m == "mig") v = rep.mig;
            else if (m == "dci_disentanglement") v = rep.dci_disentanglement;
            else if (m == "tad") v = rep.tad;
            else if (m == "recon_mse") v = rep.recon_mse;
            else if (m == "kl_mean") v = rep.kl_mean;
            else v = rep.mi_xz_estimate;
            curve_slots[static_cast<std::size_t>(*gi)] = v;
        }
        j["curves"][metric] = curve_slots;
    }

    auto argbest = [&](auto getter, bool maximize) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < reports.size(); ++i) {
            const bool better = maximize ? getter(reports[i]) > getter(reports[best])
                                         : getter(reports[i]) < getter(reports[best]);
            if (better) best = i;
        }
        return reports[best].beta;
    };
    j["best_beta"]["mig"] = argbest([](const MetricsReport& r) { return r.mig; }, true);
    j["best_beta"]["dci_disentanglement"] =
        argbest([](const MetricsReport& r) { return r.dci_disentanglement; }, true);
    j["best_beta"]["tad"] = argbest([](const MetricsReport& r) { return r.tad; }, true);
    j["best_beta"]["recon_mse"] =
        argbest([](const MetricsReport& r) { return r.recon_mse; }, false);

    // verdicts
    std::vector<double> betas, sig_at_beta;
    for (const auto& rep : reports) {
        betas.push_back(rep.beta);
        const double u = rep.beta / horizon * n_grid;
        const auto lo = std::min(static_cast<std::size_t>(u), sigma_grid.size() - 2);
        const double w = u - static_cast<double>(lo);
        sig_at_beta.push_back(sigma_grid[lo] * (1.0 - w) + sigma_grid[lo + 1] * w);
    }
    nlohmann::json verdicts;
    if (reports.size() >= 3) {
        const double rho = spearman_rank_correlation(betas, sig_at_beta);
        verdicts["sigma_monotone_spearman"] = rho;
        verdicts["sigma_monotone_pass"] = rho > 0.9;
    } else {
        verdicts["sigma_monotone_spearman"] = nullptr;
        verdicts["sigma_monotone_pass"] = nullptr;
    }
    const auto& first = reports.front();
    const auto& last = reports.back();
    bool recon_min_at_zero = true;
    for (const auto& rep : reports)
        if (rep.recon_mse < first.recon_mse - 1e-12) recon_min_at_zero = false;
    const bool have_endpoints = first.beta == 0.0 && std::abs(last.beta - horizon) < 1e-9;
    verdicts["recon_min_at_beta0"] = have_endpoints ? nlohmann::json(recon_min_at_zero)
                                                    : nlohmann::json(nullptr);
    if (have_endpoints && mean_image_baseline) {
        const double rel = std::abs(last.recon_mse - *mean_image_baseline) / *mean_image_baseline;
        verdicts["terminal_collapse_rel_gap"] = rel;
        verdicts["terminal_collapse_pass"] = rel <= 0.10;
        verdicts["mean_image_mse"] = *mean_image_baseline;
    } else {
        verdicts["terminal_collapse_rel_gap"] = nullptr;
        verdicts["terminal_collapse_pass"] = nullptr;
    }
    if (have_endpoints && first.mi_xz_estimate > 0.0) {
        const double ratio = last.mi_xz_estimate / first.mi_xz_estimate;
        verdicts["terminal_mi_ratio"] = ratio;
        verdicts["terminal_mi_pass"] = ratio < 0.10;
    } else {
        verdicts["terminal_mi_ratio"] = nullptr;
        verdicts["terminal_mi_pass"] = nullptr;
    }
    j["verdicts"] = verdicts;
    return {j};
}

}  // namespace betaspec
