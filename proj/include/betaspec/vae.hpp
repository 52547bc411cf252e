#pragma once

// Beta-conditioned VAE trained across the full range of beta in [0, B]:
// encoder f(x, beta), decoder g(z, beta), and learnable per-grid-point noise
// tables sigma_beta (latent) and s_beta (observation), log-parameterized and
// linearly interpolated off-grid. The objective weighs reconstruction and KL
// by (B - beta) and beta.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/autodiff.hpp"
#include "betaspec/checkpoint.hpp"
#include "betaspec/nn.hpp"
#include "betaspec/optim.hpp"
#include "betaspec/rng.hpp"
#include "betaspec/schedule.hpp"
#include "betaspec/toy_data.hpp"

namespace betaspec {

struct VaeConfig {
    std::size_t latent_dim = 10;
    std::size_t data_dim = 1024;
    double horizon = 1.0;  // B
    int grid_size = 100;   // N
    std::uint64_t seed = 0;
    std::size_t batch_size = 16;
    std::uint64_t steps = 30000;
    bool beta_prior_discrete = false;  // continuous uniform on [0, B] by default

    std::vector<std::size_t> enc_hidden{96, 96};
    std::vector<std::size_t> dec_hidden{96, 96};
    std::size_t temb_dim = 16;
    bool use_norm = true;
    std::size_t norm_groups = 8;
    Activation activation = Activation::sigmoid;

    AdamConfig adam{};
    double sigma_init_floor = 1e-3;
    double s_init = 0.1;
    double monotonicity_weight = 10.0;  // soft penalty on decreasing sigma
    double anchor_weight = 0.05;        // small pull of sigma_N toward 1
    double log_table_min = -7.0;        // clamp after each update
    double log_table_max = 2.0;

    void validate() const {
        if (grid_size < 2) throw std::invalid_argument("vae config: grid_size must be >= 2");
        if (!(horizon > 0.0)) throw std::invalid_argument("vae config: horizon must be > 0");
        if (latent_dim == 0 || data_dim == 0 || latent_dim >= data_dim)
            throw std::invalid_argument("vae config: need 0 < latent_dim < data_dim");
    }
};

// Closed-form KL(N(f, sigma^2 I) || N(0, I)) for isotropic sigma.
inline double gaussian_kl(const std::vector<double>& f, double sigma, std::size_t d) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kl: sigma must be > 0");
    if (f.size() != d) throw std::invalid_argument("gaussian_kl: dimension mismatch");
    double norm2 = 0.0;
    for (double v : f) norm2 += v * v;
    const double s2 = sigma * sigma;
    const double dd = static_cast<double>(d);
    return 0.5 * (norm2 + dd * s2 - dd - dd * std::log(s2));
}

struct VaeLossBreakdown {
    double total = 0.0;
    double recon = 0.0;  // batch-mean negative log-likelihood term
    double kl = 0.0;     // batch-mean KL term
    double recon_weight = 0.0;
    double kl_weight = 0.0;
    std::vector<double> per_sample_recon;
    std::vector<double> per_sample_kl;
};

class VaeModel {
public:
    VaeModel() = default;

    explicit VaeModel(VaeConfig config) : config_(std::move(config)) {
        config_.validate();
        NetworkConfig enc_cfg;
        enc_cfg.input_dim = config_.data_dim;
        enc_cfg.output_dim = config_.latent_dim;
        enc_cfg.hidden_dims = config_.enc_hidden;
        enc_cfg.temb_dim = config_.temb_dim;
        enc_cfg.use_norm = config_.use_norm;
        enc_cfg.norm_groups = config_.norm_groups;
        enc_cfg.activation = config_.activation;
        encoder_ = ConditionedNetwork(enc_cfg, config_.seed + 1, "enc");

        NetworkConfig dec_cfg = enc_cfg;
        dec_cfg.input_dim = config_.latent_dim;
        dec_cfg.output_dim = config_.data_dim;
        dec_cfg.hidden_dims = config_.dec_hidden;
        decoder_ = ConditionedNetwork(dec_cfg, config_.seed + 2, "dec");

        // sigma table starts at the linear schedule (floored away from zero),
        // s table at a constant
        const int n = config_.grid_size;
        std::vector<double> log_sigma(static_cast<std::size_t>(n) + 1);
        for (int i = 0; i <= n; ++i) {
            const double lin = std::max(static_cast<double>(i) / n, config_.sigma_init_floor);
            log_sigma[static_cast<std::size_t>(i)] = std::log(lin);
        }
        std::vector<double> log_s(static_cast<std::size_t>(n) + 1, std::log(config_.s_init));
        log_sigma_table_ = ad::leaf({static_cast<std::size_t>(n) + 1}, std::move(log_sigma));
        log_s_table_ = ad::leaf({static_cast<std::size_t>(n) + 1}, std::move(log_s));

        for (const auto& [name, var] : encoder_.params().items()) params_.add(name, var);
        for (const auto& [name, var] : decoder_.params().items()) params_.add(name, var);
        params_.add("sigma_log_table", log_sigma_table_);
        params_.add("s_log_table", log_s_table_);
    }

    const VaeConfig& config() const { return config_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    const ConditionedNetwork& encoder() const { return encoder_; }
    const ConditionedNetwork& decoder() const { return decoder_; }

    // --- tables ---------------------------------------------------------------

    double sigma_at(double beta) const { return std::exp(log_table_at(*log_sigma_table_, beta)); }
    double s_at(double beta) const { return std::exp(log_table_at(*log_s_table_, beta)); }

    std::vector<double> sigma_grid() const {
        std::vector<double> out(log_sigma_table_->size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = std::exp(log_sigma_table_->values[i]);
        return out;
    }

    // Learned noise schedule on the training grid (clamped to be usable by
    // the diffusion stage: see Schedule invariants).
    Schedule learned_schedule() const {
        auto sig = sigma_grid();
        // the table is trained with a soft monotonicity penalty; tiny
        // violations are flattened rather than rejected
        for (std::size_t i = 1; i < sig.size(); ++i) sig[i] = std::max(sig[i], sig[i - 1]);
        return Schedule(config_.grid_size, config_.horizon, std::move(sig), ScheduleTag::learned,
                        "learned sigma table");
    }

    // --- inference ------------------------------------------------------------

    std::vector<double> encode(const std::vector<double>& x, double beta) const {
        check_beta(beta);
        return encoder_.forward_one(x, beta);
    }

    std::vector<double> decode(const std::vector<double>& z, double beta) const {
        check_beta(beta);
        return decoder_.forward_one(z, beta);
    }

    // batched inference; one beta for all rows
    std::vector<double> encode_batch(const std::vector<double>& xs, std::size_t rows,
                                     double beta) const {
        check_beta(beta);
        Var in = ad::constant({rows, config_.data_dim}, xs);
        return encoder_.forward(in, std::vector<double>(rows, beta))->values;
    }

    std::vector<double> decode_batch(const std::vector<double>& zs, std::size_t rows,
                                     double beta) const {
        check_beta(beta);
        Var in = ad::constant({rows, config_.latent_dim}, zs);
        return decoder_.forward(in, std::vector<double>(rows, beta))->values;
    }

    // z_beta = f(x, beta) + sigma_beta * noise
    std::vector<double> reparameterized_sample(const std::vector<double>& x, double beta,
                                               const std::vector<double>& noise) const {
        if (noise.size() != config_.latent_dim)
            throw std::invalid_argument("reparameterized_sample: noise dimension mismatch");
        auto z = encode(x, beta);
        const double sigma = sigma_at(beta);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += sigma * noise[k];
        return z;
    }

    // --- training objective -----------------------------------------------------

    // Builds the minimization objective for a batch with per-sample betas:
    //   (B - beta) * [D/2 ln(2 pi) + D ln s_beta + |x - g|^2 / (2 s_beta^2)]
    //   + beta * KL(N(f, sigma_beta^2 I) || N(0, I))
    // plus the table penalties. Returns the loss node; breakdown reports the
    // batch-mean unweighted terms.
    Var build_loss(const std::vector<double>& x_batch, const std::vector<double>& betas,
                   const std::vector<double>& noise_batch, VaeLossBreakdown* breakdown = nullptr) {
        const std::size_t m = betas.size();
        if (x_batch.size() != m * config_.data_dim)
            throw std::invalid_argument("vae loss: batch size mismatch");
        if (noise_batch.size() != m * config_.latent_dim)
            throw std::invalid_argument("vae loss: noise size mismatch");
        for (double b : betas) check_beta(b);

        const double D = static_cast<double>(config_.data_dim);
        const double d = static_cast<double>(config_.latent_dim);

        std::vector<std::size_t> idx(m);
        std::vector<double> w(m);
        for (std::size_t i = 0; i < m; ++i) table_pos(betas[i], idx[i], w[i]);

        Var x = ad::constant({m, config_.data_dim}, x_batch);
        Var noise = ad::constant({m, config_.latent_dim}, noise_batch);

        Var f = encoder_.forward(x, betas);
        Var log_sigma = ad::table_lerp(log_sigma_table_, idx, w);  // [m]
        Var sigma = ad::exp_op(log_sigma);
        Var z = ad::add(f, ad::row_scale(noise, sigma));
        Var xhat = decoder_.forward(z, betas);

        // negative log-likelihood per sample
        constexpr double two_pi = 6.283185307179586476925286766559;
        Var log_s = ad::table_lerp(log_s_table_, idx, w);  // [m]
        Var rss = ad::row_sum_squares(ad::sub(x, xhat));
        Var inv_2s2 = ad::scale(ad::exp_op(ad::scale(log_s, -2.0)), 0.5);
        Var nll = ad::add(ad::add_const(ad::scale(log_s, D), 0.5 * D * std::log(two_pi)),
                          ad::mul(rss, inv_2s2));

        // KL per sample: 0.5 |f|^2 + 0.5 d sigma^2 - 0.5 d - d log sigma
        Var kl = ad::add(
            ad::add_const(ad::scale(ad::row_sum_squares(f), 0.5), -0.5 * d),
            ad::sub(ad::scale(ad::exp_op(ad::scale(log_sigma, 2.0)), 0.5 * d),
                    ad::scale(log_sigma, d)));

        std::vector<double> w_rec(m), w_kl(m);
        for (std::size_t i = 0; i < m; ++i) {
            w_rec[i] = config_.horizon - betas[i];
            w_kl[i] = betas[i];
        }
        Var weighted = ad::add(ad::mul(nll, ad::constant({m}, w_rec)),
                               ad::mul(kl, ad::constant({m}, w_kl)));
        Var loss = ad::mean(weighted);

        if (config_.monotonicity_weight > 0.0) loss = ad::add(loss, monotonicity_penalty());
        if (config_.anchor_weight > 0.0) loss = ad::add(loss, anchor_penalty());

        if (breakdown) {
            breakdown->total = loss->values[0];
            breakdown->recon = 0.0;
            breakdown->kl = 0.0;
            breakdown->per_sample_recon = nll->values;
            breakdown->per_sample_kl = kl->values;
            for (std::size_t i = 0; i < m; ++i) {
                breakdown->recon += nll->values[i] / static_cast<double>(m);
                breakdown->kl += kl->values[i] / static_cast<double>(m);
            }
            breakdown->recon_weight = w_rec.empty() ? 0.0 : w_rec[0];
            breakdown->kl_weight = w_kl.empty() ? 0.0 : w_kl[0];
        }
        return loss;
    }

    // single-sample objective (Alg. 1 with batch of one)
    VaeLossBreakdown loss_beta(const std::vector<double>& x, double beta,
                               const std::vector<double>& noise) {
        VaeLossBreakdown bd;
        build_loss(x, {beta}, noise, &bd);
        return bd;
    }

    void clamp_tables() {
        for (Var table : {log_sigma_table_, log_s_table_}) {
            for (auto& v : table->values)
                v = std::min(config_.log_table_max, std::max(config_.log_table_min, v));
        }
    }

    void save(const std::string& path) const { save_checkpoint_file(path, snapshot(params_)); }

    void load(const std::string& path) { restore(params_, load_checkpoint_file(path)); }

private:
    friend class VaeTrainer;

    void check_beta(double beta) const {
        if (beta < 0.0 || beta > config_.horizon * (1.0 + 1e-12))
            throw std::out_of_range("vae: beta out of [0, B]");
    }

    void table_pos(double beta, std::size_t& idx, double& w) const {
        const double u = beta / config_.horizon * config_.grid_size;
        auto i0 = static_cast<std::size_t>(u);
        if (i0 >= static_cast<std::size_t>(config_.grid_size)) {
            idx = static_cast<std::size_t>(config_.grid_size);
            w = 0.0;
        } else {
            idx = i0;
            w = u - static_cast<double>(i0);
        }
    }

    double log_table_at(const Tensor& table, double beta) const {
        check_beta(beta);
        std::size_t idx;
        double w;
        table_pos(beta, idx, w);
        const double lo = table.values[idx];
        const double hi = (w == 0.0) ? 0.0 : table.values[idx + 1];
        return (1.0 - w) * lo + w * hi;
    }

    Var monotonicity_penalty() {
        const auto n = static_cast<std::size_t>(config_.grid_size);
        std::vector<std::size_t> lo_idx(n), hi_idx(n);
        std::vector<double> zero_w(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            lo_idx[i] = i;
            hi_idx[i] = i + 1;
        }
        Var lo = ad::exp_op(ad::table_lerp(log_sigma_table_, lo_idx, zero_w));
        Var hi = ad::exp_op(ad::table_lerp(log_sigma_table_, hi_idx, zero_w));
        Var viol = ad::relu(ad::sub(lo, hi));
        return ad::scale(ad::sum(ad::square(viol)), config_.monotonicity_weight);
    }

    Var anchor_penalty() {
        Var sN = ad::exp_op(ad::table_lerp(
            log_sigma_table_, {static_cast<std::size_t>(config_.grid_size)}, {0.0}));
        return ad::scale(ad::sum(ad::square(ad::add_const(sN, -1.0))), config_.anchor_weight);
    }

    VaeConfig config_;
    ConditionedNetwork encoder_;
    ConditionedNetwork decoder_;
    Var log_sigma_table_;
    Var log_s_table_;
    ParameterSet params_;
};

struct TrainLogRow {
    std::uint64_t step = 0;
    int beta_bucket = 0;
    double recon = 0.0;
    double kl = 0.0;
    std::uint64_t sigma_hash = 0;
};

inline std::uint64_t hash_doubles(const std::vector<double>& v) {
    std::uint64_t h = 1469598103934665603ULL;
    for (double x : v) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(x));
        std::memcpy(&bits, &x, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

// Alg.-1 style training loop: per step, sample a batch of (x, beta, eps),
// build the rescaled-ELBO objective, update {theta, phi, tables}.
class VaeTrainer {
public:
    VaeTrainer(VaeModel& model, const FactorDataset& dataset, std::vector<std::size_t> train_indices)
        : model_(&model),
          dataset_(&dataset),
          train_indices_(std::move(train_indices)),
          optimizer_(model.params(), model.config().adam) {
        if (train_indices_.empty()) throw std::invalid_argument("vae trainer: empty dataset");
        if (dataset.spec().pixels() != model.config().data_dim)
            throw std::invalid_argument("vae trainer: dataset pixels != model data_dim");
    }

    // Runs `steps` training steps (config steps if 0 is passed through the
    // caller). Returns the log rows collected every `log_every` steps.
    std::vector<TrainLogRow> train(std::uint64_t steps, std::uint64_t log_every = 500,
                                   const std::string& divergence_checkpoint = "") {
        const auto& cfg = model_->config();
        const std::size_t m = cfg.batch_size;
        const std::size_t D = cfg.data_dim;
        const std::size_t d = cfg.latent_dim;
        constexpr int n_buckets = 10;
        std::vector<double> bucket_recon(n_buckets, 0.0), bucket_kl(n_buckets, 0.0);
        std::vector<std::size_t> bucket_count(n_buckets, 0);
        std::vector<TrainLogRow> log;

        std::vector<NamedTensor> last_good = snapshot(model_->params());
        std::vector<double> x_batch(m * D), noise_batch(m * d), betas(m);

        for (std::uint64_t step = 0; step < steps; ++step) {
            RngStream rng(cfg.seed, 0x7ea1u, step);
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t pick = train_indices_[rng.next_below(train_indices_.size())];
                const auto& img = dataset_->image(pick);
                std::copy(img.begin(), img.end(), x_batch.begin() + static_cast<long>(i * D));
                if (cfg.beta_prior_discrete) {
                    const auto g = rng.next_below(static_cast<std::uint64_t>(cfg.grid_size) + 1);
                    betas[i] = cfg.horizon * static_cast<double>(g) / cfg.grid_size;
                } else {
                    betas[i] = rng.next_uniform(0.0, cfg.horizon);
                }
                for (std::size_t k = 0; k < d; ++k) noise_batch[i * d + k] = rng.next_gaussian();
            }

            VaeLossBreakdown bd;
            Var loss = model_->build_loss(x_batch, betas, noise_batch, &bd);
            if (!std::isfinite(bd.total)) {
                handle_divergence(last_good, divergence_checkpoint, step);
            }
            model_->params().zero_grad();
            ad::backward(loss);
            try {
                optimizer_.step();
            } catch (const std::runtime_error& err) {
                handle_divergence(last_good, divergence_checkpoint, step, err.what());
            }
            model_->clamp_tables();

            for (std::size_t i = 0; i < m; ++i) {
                const int bucket = std::min(n_buckets - 1,
                                            static_cast<int>(betas[i] / cfg.horizon * n_buckets));
                bucket_recon[bucket] += bd.per_sample_recon[i];
                bucket_kl[bucket] += bd.per_sample_kl[i];
                ++bucket_count[bucket];
            }

            if ((step + 1) % log_every == 0 || step + 1 == steps) {
                const std::uint64_t shash = hash_doubles(model_->sigma_grid());
                for (int bkt = 0; bkt < n_buckets; ++bkt) {
                    if (bucket_count[bkt] == 0) continue;
                    log.push_back({step + 1, bkt,
                                   bucket_recon[bkt] / static_cast<double>(bucket_count[bkt]),
                                   bucket_kl[bkt] / static_cast<double>(bucket_count[bkt]), shash});
                    bucket_recon[bkt] = bucket_kl[bkt] = 0.0;
                    bucket_count[bkt] = 0;
                }
                last_good = snapshot(model_->params());
            }
        }
        return log;
    }

    static void write_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("train log: cannot open " + path);
        out << "step,beta_bucket,recon,kl,sigma_hash\n";
        for (const auto& r : rows)
            out << r.step << "," << r.beta_bucket << "," << r.recon << "," << r.kl << ","
                << r.sigma_hash << "\n";
    }

private:
    [[noreturn]] void handle_divergence(const std::vector<NamedTensor>& last_good,
                                        const std::string& checkpoint_path, std::uint64_t step,
                                        const std::string& detail = "non-finite loss") {
        restore(model_->params(), last_good);
        if (!checkpoint_path.empty()) save_checkpoint_file(checkpoint_path, last_good);
        throw TrainingDiverged("vae training diverged at step " + std::to_string(step) + ": " +
                               detail + (checkpoint_path.empty()
                                             ? ""
                                             : "; last good checkpoint written to " + checkpoint_path));
    }

    VaeModel* model_;
    const FactorDataset* dataset_;
    std::vector<std::size_t> train_indices_;
    Adam optimizer_;
};

}  // namespace betaspec
