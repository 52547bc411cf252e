#pragma once

// Non-linear latent diffusion: a two-head denoiser (noise prediction eps_hat
// and one-step encoding difference Delta_hat) trained on top of a frozen VAE,
// an ancestral sampler over the learned sigma grid, and the linear DDPM
// reference used as the constant-encoder oracle.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/autodiff.hpp"
#include "betaspec/checkpoint.hpp"
#include "betaspec/diffusion_math.hpp"
#include "betaspec/nn.hpp"
#include "betaspec/optim.hpp"
#include "betaspec/parallel.hpp"
#include "betaspec/rng.hpp"
#include "betaspec/schedule.hpp"
#include "betaspec/toy_data.hpp"
#include "betaspec/vae.hpp"

namespace betaspec {

struct DiffusionConfig {
    std::size_t latent_dim = 10;
    double loss_weight = 1.0;   // constant w(t)
    double delta_weight = 1.0;  // weight of the Delta term
    std::uint64_t seed = 0;
    std::size_t batch_size = 16;
    std::uint64_t steps = 30000;

    std::vector<std::size_t> hidden{96, 96};
    std::size_t temb_dim = 16;
    bool use_norm = true;
    std::size_t norm_groups = 8;
    Activation activation = Activation::sigmoid;
    bool input_scaling = true;  // trunk sees z / sqrt(1 + sigma_t^2)

    AdamConfig adam{};
    ReverseStepOptions sampler{};  // stated-loop defaults; posterior variants opt-in
    bool unit_init = true;         // z_B ~ N(0, I); false: N(0, sigma_B^2 I)
};

struct DiffusionLossBreakdown {
    double total = 0.0;
    double eps_term = 0.0;
    double delta_term = 0.0;
};

// What diffusion training needs from stage 1: a frozen time-conditioned
// encoder. The VAE provides the real one; tests may plug in analytic maps.
class LatentEncoder {
public:
    virtual ~LatentEncoder() = default;
    virtual std::vector<double> encode(const std::vector<double>& x, double t) const = 0;
    virtual std::size_t data_dim() const = 0;
    virtual std::size_t latent_dim() const = 0;
};

class VaeEncoderAdapter final : public LatentEncoder {
public:
    explicit VaeEncoderAdapter(const VaeModel& vae) : vae_(&vae) {}
    std::vector<double> encode(const std::vector<double>& x, double t) const override {
        return vae_->encode(x, t);
    }
    std::size_t data_dim() const override { return vae_->config().data_dim; }
    std::size_t latent_dim() const override { return vae_->config().latent_dim; }

private:
    const VaeModel* vae_;
};

// Random-access view over training samples.
struct SampleSource {
    std::function<const std::vector<double>&(std::size_t)> get;
    std::size_t size = 0;
};

inline SampleSource dataset_source(const FactorDataset& dataset) {
    return {[&dataset](std::size_t i) -> const std::vector<double>& { return dataset.image(i); },
            dataset.size()};
}

inline SampleSource vector_source(const std::vector<std::vector<double>>& rows) {
    return {[&rows](std::size_t i) -> const std::vector<double>& { return rows[i]; }, rows.size()};
}

class DenoiserModel {
public:
    DenoiserModel() = default;

    DenoiserModel(DiffusionConfig config, Schedule schedule)
        : config_(std::move(config)), schedule_(std::move(schedule)) {
        schedule_.validate_for_sampling();
        NetworkConfig net;
        net.input_dim = config_.latent_dim;
        net.output_dim = config_.latent_dim;         // eps head
        net.second_output_dim = config_.latent_dim;  // Delta head
        net.hidden_dims = config_.hidden;
        net.temb_dim = config_.temb_dim;
        net.use_norm = config_.use_norm;
        net.norm_groups = config_.norm_groups;
        net.activation = config_.activation;
        trunk_ = ConditionedNetwork(net, config_.seed + 3, "den");
    }

    const DiffusionConfig& config() const { return config_; }
    const Schedule& schedule() const { return schedule_; }
    ParameterSet& params() { return trunk_.params(); }
    const ParameterSet& params() const { return trunk_.params(); }

    // Graph-building heads for a batch of latents at per-row grid steps.
    // The Delta head output is scaled by tau internally (the head learns
    // Delta / tau, keeping its output O(1) on fine grids).
    std::pair<Var, Var> heads(const Var& z, const std::vector<int>& steps) const {
        std::vector<double> ts(steps.size());
        for (std::size_t r = 0; r < steps.size(); ++r) {
            check_step(steps[r], 1);
            ts[r] = schedule_.time_of(steps[r]);
        }
        Var in = z;
        if (config_.input_scaling) {
            std::vector<double> cin(steps.size());
            for (std::size_t r = 0; r < steps.size(); ++r) {
                const double s = schedule_.sigma(steps[r]);
                cin[r] = 1.0 / std::sqrt(1.0 + s * s);
            }
            in = ad::row_scale(z, ad::constant({steps.size()}, cin));
        }
        Var features = trunk_.trunk(in, ts);
        Var eps_hat = trunk_.head(features);
        Var delta_hat = ad::scale(trunk_.head2(features), schedule_.tau());
        return {eps_hat, delta_hat};
    }

    // Inference heads for one latent at grid step i.
    std::pair<std::vector<double>, std::vector<double>> heads_one(const std::vector<double>& z,
                                                                  int i) const {
        Var in = ad::constant({1, z.size()}, z);
        auto [e, d] = heads(in, {i});
        return {e->values, d->values};
    }

    void save(const std::string& path) const {
        save_checkpoint_file(path, snapshot(trunk_.params()));
    }
    void load(const std::string& path) {
        restore(trunk_.params(), load_checkpoint_file(path));
    }

    void check_step(int i, int lo) const {
        if (i < lo || i > schedule_.n_steps())
            throw std::out_of_range("denoiser: step index out of range");
    }

private:
    DiffusionConfig config_;
    Schedule schedule_{1, 1.0, {0.0, 1.0}, ScheduleTag::linear};
    ConditionedNetwork trunk_;
};

// Combined training loss on a batch: per sample, with t = i B/N,
//   z_t = f(x, t) + sigma_t eps
//   (1/w) |eps_hat(z_t, t) - eps|^2
//   + delta_weight |(f(x, t-tau) - f(x, t)) - Delta_hat(z_t, t)|^2
// The encoder enters only through constants, so stage 1 receives no gradient.
inline Var build_diffusion_loss(DenoiserModel& denoiser, const LatentEncoder& encoder,
                                const std::vector<double>& x_batch,
                                const std::vector<int>& steps,
                                const std::vector<double>& noise_batch,
                                DiffusionLossBreakdown* breakdown = nullptr) {
    const auto& cfg = denoiser.config();
    const auto& sched = denoiser.schedule();
    const std::size_t m = steps.size();
    const std::size_t d = cfg.latent_dim;
    const std::size_t D = encoder.data_dim();
    if (encoder.latent_dim() != d)
        throw std::invalid_argument("diffusion loss: encoder latent dim mismatch");
    if (x_batch.size() != m * D) throw std::invalid_argument("diffusion loss: batch mismatch");
    if (noise_batch.size() != m * d) throw std::invalid_argument("diffusion loss: noise mismatch");
    for (int i : steps) denoiser.check_step(i, 1);  // i = 0 has no Delta target

    // frozen encodings at t and t - tau
    std::vector<double> z_vals(m * d), delta_target(m * d);
    for (std::size_t r = 0; r < m; ++r) {
        const double t = sched.time_of(steps[r]);
        const double t_prev = sched.time_of(steps[r] - 1);
        const std::vector<double> x(x_batch.begin() + static_cast<long>(r * D),
                                    x_batch.begin() + static_cast<long>((r + 1) * D));
        const auto fc = encoder.encode(x, t);
        const auto fp = encoder.encode(x, t_prev);
        const double sigma = sched.sigma(steps[r]);
        for (std::size_t k = 0; k < d; ++k) {
            z_vals[r * d + k] = fc[k] + sigma * noise_batch[r * d + k];
            delta_target[r * d + k] = fp[k] - fc[k];
        }
    }

    Var z = ad::constant({m, d}, z_vals);
    auto [eps_hat, delta_hat] = denoiser.heads(z, steps);

    Var eps_err = ad::row_sum_squares(ad::sub(eps_hat, ad::constant({m, d}, noise_batch)));
    Var delta_err = ad::row_sum_squares(ad::sub(delta_hat, ad::constant({m, d}, delta_target)));
    Var loss = ad::add(ad::mean(ad::scale(eps_err, 1.0 / cfg.loss_weight)),
                       ad::mean(ad::scale(delta_err, cfg.delta_weight)));

    if (breakdown) {
        breakdown->total = loss->values[0];
        breakdown->eps_term = 0.0;
        breakdown->delta_term = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            breakdown->eps_term += eps_err->values[r] / (cfg.loss_weight * static_cast<double>(m));
            breakdown->delta_term +=
                cfg.delta_weight * delta_err->values[r] / static_cast<double>(m);
        }
    }
    return loss;
}

// single-sample loss (the per-operation contract)
inline DiffusionLossBreakdown diffusion_loss(DenoiserModel& denoiser, const LatentEncoder& encoder,
                                             const std::vector<double>& x, int i,
                                             const std::vector<double>& noise) {
    DiffusionLossBreakdown bd;
    build_diffusion_loss(denoiser, encoder, x, {i}, noise, &bd);
    return bd;
}

struct DiffusionLogRow {
    std::uint64_t step = 0;
    double eps_term = 0.0;
    double delta_term = 0.0;
};

// Before diffusion training, the z_B ~ N(0, I) initialization only matches
// the learned marginal if the encoder collapsed and sigma_B is near 1.
struct MismatchReport {
    double mean_f_norm_at_B = 0.0;
    double sigma_B = 0.0;
    bool consistent = true;
    std::string message;
};

inline MismatchReport check_terminal_consistency(const VaeModel& vae,
                                                 const FactorDataset& dataset,
                                                 const std::vector<std::size_t>& eval_indices,
                                                 double f_norm_limit = 0.25,
                                                 double sigma_tol = 0.25) {
    MismatchReport rep;
    const double B = vae.config().horizon;
    const auto d = static_cast<double>(vae.config().latent_dim);
    double acc = 0.0;
    for (std::size_t idx : eval_indices) {
        const auto f = vae.encode(dataset.image(idx), B);
        double norm = 0.0;
        for (double v : f) norm += v * v;
        acc += std::sqrt(norm / d);
    }
    rep.mean_f_norm_at_B = acc / static_cast<double>(eval_indices.size());
    rep.sigma_B = vae.sigma_at(B);
    if (rep.mean_f_norm_at_B >= f_norm_limit || std::abs(rep.sigma_B - 1.0) >= sigma_tol) {
        rep.consistent = false;
        rep.message = "warning: z_B ~ N(0, I) initialization is inconsistent with the learned "
                      "marginal (mean per-dim |f(x,B)| = " +
                      std::to_string(rep.mean_f_norm_at_B) +
                      ", sigma_B = " + std::to_string(rep.sigma_B) + ")";
    }
    return rep;
}

class DiffusionTrainer {
public:
    DiffusionTrainer(DenoiserModel& denoiser, const LatentEncoder& encoder, SampleSource source,
                     std::vector<std::size_t> train_indices)
        : denoiser_(&denoiser),
          encoder_(&encoder),
          source_(std::move(source)),
          train_indices_(std::move(train_indices)),
          optimizer_(denoiser.params(), denoiser.config().adam) {
        if (train_indices_.empty()) throw std::invalid_argument("diffusion trainer: empty dataset");
        if (encoder.latent_dim() != denoiser.config().latent_dim)
            throw std::invalid_argument("diffusion trainer: latent dims differ");
    }

    std::vector<DiffusionLogRow> train(std::uint64_t steps, std::uint64_t log_every = 500,
                                       const std::string& divergence_checkpoint = "") {
        const auto& cfg = denoiser_->config();
        const std::size_t m = cfg.batch_size;
        const std::size_t D = encoder_->data_dim();
        const std::size_t d = cfg.latent_dim;
        const int N = denoiser_->schedule().n_steps();

        std::vector<DiffusionLogRow> log;
        std::vector<NamedTensor> last_good = snapshot(denoiser_->params());
        std::vector<double> x_batch(m * D), noise_batch(m * d);
        std::vector<int> step_idx(m);
        double acc_eps = 0.0, acc_delta = 0.0;
        std::size_t acc_n = 0;

        for (std::uint64_t step = 0; step < steps; ++step) {
            RngStream rng(cfg.seed, 0xd1ffu, step);
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t pick = train_indices_[rng.next_below(train_indices_.size())];
                const auto& img = source_.get(pick);
                std::copy(img.begin(), img.end(), x_batch.begin() + static_cast<long>(r * D));
                step_idx[r] = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(N)));
                for (std::size_t k = 0; k < d; ++k) noise_batch[r * d + k] = rng.next_gaussian();
            }
            DiffusionLossBreakdown bd;
            Var loss =
                build_diffusion_loss(*denoiser_, *encoder_, x_batch, step_idx, noise_batch, &bd);
            if (!std::isfinite(bd.total)) diverge(last_good, divergence_checkpoint, step);
            denoiser_->params().zero_grad();
            ad::backward(loss);
            try {
                optimizer_.step();
            } catch (const std::runtime_error& err) {
                diverge(last_good, divergence_checkpoint, step, err.what());
            }
            acc_eps += bd.eps_term;
            acc_delta += bd.delta_term;
            ++acc_n;
            if ((step + 1) % log_every == 0 || step + 1 == steps) {
                log.push_back({step + 1, acc_eps / static_cast<double>(acc_n),
                               acc_delta / static_cast<double>(acc_n)});
                acc_eps = acc_delta = 0.0;
                acc_n = 0;
                last_good = snapshot(denoiser_->params());
            }
        }
        return log;
    }

    static void write_log_csv(const std::string& path, const std::vector<DiffusionLogRow>& rows) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("diffusion log: cannot open " + path);
        out << "step,eps_term,delta_term\n";
        for (const auto& r : rows)
            out << r.step << "," << r.eps_term << "," << r.delta_term << "\n";
    }

private:
    [[noreturn]] void diverge(const std::vector<NamedTensor>& last_good,
                              const std::string& checkpoint_path, std::uint64_t step,
                              const std::string& detail = "non-finite loss") {
        restore(denoiser_->params(), last_good);
        if (!checkpoint_path.empty()) save_checkpoint_file(checkpoint_path, last_good);
        throw TrainingDiverged("diffusion training diverged at step " + std::to_string(step) +
                               ": " + detail);
    }

    DenoiserModel* denoiser_;
    const LatentEncoder* encoder_;
    SampleSource source_;
    std::vector<std::size_t> train_indices_;
    Adam optimizer_;
};

// --- sampling ----------------------------------------------------------------

// All chains advance in lockstep so the denoiser evaluates one batch per
// step. Every row-level operation (dense layers, per-row group norm, the
// reverse step) is independent across rows, and each chain consumes its own
// RNG stream, so results are identical to running chains one at a time.
namespace detail_sampling {

inline std::vector<std::vector<double>> reverse_loop(
    const DenoiserModel& denoiser, std::vector<std::vector<double>> chains, int i_start,
    std::vector<RngStream>& streams, const ReverseStepOptions& opt, bool force_zero_delta,
    std::vector<std::vector<double>>* trace0 = nullptr) {
    denoiser.check_step(i_start, 0);
    const auto& sched = denoiser.schedule();
    const std::size_t n = chains.size();
    const std::size_t d = denoiser.config().latent_dim;
    if (trace0 && !chains.empty()) trace0->push_back(chains[0]);

    std::vector<double> z_flat(n * d);
    std::vector<double> noise(d);
    const std::vector<double> zero_delta(d, 0.0);
    for (int i = i_start; i >= 1; --i) {
        for (std::size_t c = 0; c < n; ++c)
            std::copy(chains[c].begin(), chains[c].end(),
                      z_flat.begin() + static_cast<long>(c * d));
        Var z = ad::constant({n, d}, z_flat);
        auto [eps_hat, delta_hat] = denoiser.heads(z, std::vector<int>(n, i));
        for (std::size_t c = 0; c < n; ++c) {
            std::vector<double> eps_row(eps_hat->values.begin() + static_cast<long>(c * d),
                                        eps_hat->values.begin() + static_cast<long>((c + 1) * d));
            std::vector<double> delta_row;
            if (force_zero_delta) {
                delta_row = zero_delta;
            } else {
                delta_row.assign(delta_hat->values.begin() + static_cast<long>(c * d),
                                 delta_hat->values.begin() + static_cast<long>((c + 1) * d));
            }
            streams[c].fill_gaussian(noise);
            chains[c] = reverse_step(chains[c], eps_row, delta_row, noise, sched, i, opt);
        }
        if (trace0 && !chains.empty()) trace0->push_back(chains[0]);
    }
    return chains;
}

}  // namespace detail_sampling

// Ancestral sampling: z_B from the prior, N reverse steps per chain.
// Deterministic per (seed, chain index). Optionally records chain 0's
// trajectory.
inline std::vector<std::vector<double>> sample_latents(
    const DenoiserModel& denoiser, std::size_t n_samples, std::uint64_t seed,
    std::vector<std::vector<double>>* trace0 = nullptr) {
    const auto& sched = denoiser.schedule();
    sched.validate_for_sampling();
    const std::size_t d = denoiser.config().latent_dim;
    const double init_scale = denoiser.config().unit_init ? 1.0 : sched.sigma(sched.n_steps());
    std::vector<RngStream> streams;
    streams.reserve(n_samples);
    std::vector<std::vector<double>> chains(n_samples, std::vector<double>(d));
    for (std::size_t c = 0; c < n_samples; ++c) {
        streams.emplace_back(seed, 0x5a3fu, c);
        for (auto& v : chains[c]) v = init_scale * streams[c].next_gaussian();
    }
    return detail_sampling::reverse_loop(denoiser, std::move(chains), sched.n_steps(), streams,
                                         denoiser.config().sampler, false, trace0);
}

inline std::vector<std::vector<double>> sample_images(const DenoiserModel& denoiser,
                                                      const VaeModel& vae, std::size_t n_samples,
                                                      std::uint64_t seed) {
    auto latents = sample_latents(denoiser, n_samples, seed);
    std::vector<std::vector<double>> images(latents.size());
    parallel_for(latents.size(), [&](std::size_t c) { images[c] = vae.decode(latents[c], 0.0); });
    return images;
}

// Latents at grid time i_start denoised back to beta = 0. i_start = 0 is the
// identity (no loop iterations).
inline std::vector<std::vector<double>> denoise_from_batch(
    const DenoiserModel& denoiser, std::vector<std::vector<double>> z_betas, int i_start,
    std::uint64_t seed) {
    std::vector<RngStream> streams;
    streams.reserve(z_betas.size());
    for (std::size_t c = 0; c < z_betas.size(); ++c) streams.emplace_back(seed, 0xdc0deu, c);
    return detail_sampling::reverse_loop(denoiser, std::move(z_betas), i_start, streams,
                                         denoiser.config().sampler, false);
}

inline std::vector<double> denoise_from(const DenoiserModel& denoiser,
                                        const std::vector<double>& z_beta, int i_start,
                                        std::uint64_t seed) {
    return denoise_from_batch(denoiser, {z_beta}, i_start, seed)[0];
}

// Linear DDPM reference: the same reverse loop with the Delta head forced to
// zero. Defaults to the closed-form posterior parameterization; pass options
// explicitly to mirror the non-linear sampler step for step.
inline std::vector<std::vector<double>> linear_ddpm_reference(
    const DenoiserModel& denoiser, std::size_t n_samples, std::uint64_t seed,
    ReverseStepOptions opt =
        {ReverseStepOptions::MeanParam::posterior, ReverseStepOptions::NoiseScale::posterior_std,
         +1.0},
    bool unit_init = false) {
    const auto& sched = denoiser.schedule();
    sched.validate_for_sampling();
    const std::size_t d = denoiser.config().latent_dim;
    const double init_scale = unit_init ? 1.0 : sched.sigma(sched.n_steps());
    std::vector<RngStream> streams;
    streams.reserve(n_samples);
    std::vector<std::vector<double>> chains(n_samples, std::vector<double>(d));
    for (std::size_t c = 0; c < n_samples; ++c) {
        streams.emplace_back(seed, 0x5a3fu, c);
        for (auto& v : chains[c]) v = init_scale * streams[c].next_gaussian();
    }
    return detail_sampling::reverse_loop(denoiser, std::move(chains), sched.n_steps(), streams,
                                         opt, true);
}

// --- per-step latent trace container ("trace v1") -----------------------------

inline void save_trace(const std::string& path, const std::vector<std::vector<double>>& states) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("trace: cannot open " + path);
    out << "trace v1\n";
    char buf[64];
    for (const auto& z : states) {
        for (std::size_t k = 0; k < z.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", z[k]);
            out << (k ? " " : "") << buf;
        }
        out << "\n";
    }
}

inline std::vector<std::vector<double>> load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("trace: cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line != "trace v1") throw std::runtime_error("trace: bad header");
    std::vector<std::vector<double>> states;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::vector<double> z;
        double v;
        while (row >> v) z.push_back(v);
        states.push_back(std::move(z));
    }
    return states;
}

}  // namespace betaspec
