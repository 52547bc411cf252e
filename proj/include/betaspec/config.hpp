#pragma once

// Run configuration: flat "[section]" + "key = value" text. The schema below
// is the single source of truth; unknown sections or keys are rejected so a
// run is reproducible from its emitted config copy alone.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/diffusion.hpp"
#include "betaspec/toy_data.hpp"
#include "betaspec/vae.hpp"

namespace betaspec {

namespace detail_config {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(std::stoul(trim(item)));
    return out;
}

inline std::string join_size_list(const std::vector<std::size_t>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
    return out.str();
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("config: bad boolean: " + s);
}

}  // namespace detail_config

struct RunConfig {
    // [run]
    std::uint64_t seed = 7;
    std::string version = "dev";
    // [data]
    int image_side = 32;
    std::string factors = "shape:3,scale:4,orientation:6,pos_x:8,pos_y:8";
    double train_fraction = 0.9;
    // [vae]
    std::size_t latent_dim = 10;
    int grid_size = 100;
    double horizon = 1.0;
    std::size_t vae_batch = 16;
    std::uint64_t vae_steps = 30000;
    std::vector<std::size_t> vae_hidden{96, 96};
    std::size_t vae_temb = 16;
    bool vae_norm = true;
    std::size_t vae_groups = 8;
    std::string vae_activation = "sigmoid";
    double vae_lr = 1e-3;
    double monotonicity_weight = 10.0;
    double anchor_weight = 0.05;
    std::string beta_prior = "uniform";  // or "grid"
    // [diffusion]
    std::size_t diff_batch = 16;
    std::uint64_t diff_steps = 30000;
    std::vector<std::size_t> diff_hidden{96, 96};
    std::size_t diff_temb = 16;
    bool diff_norm = true;
    std::size_t diff_groups = 8;
    std::string diff_activation = "sigmoid";
    double diff_lr = 1e-3;
    double loss_weight = 1.0;
    std::string delta_weight = "auto";  // "auto" = (N/B)^2, else a number
    std::string sampler_mean = "clean_estimate";  // or "posterior"
    std::string sampler_noise = "sigma_prev";     // or "posterior_std"
    std::string delta_sign = "plus";              // or "minus"
    bool unit_init = true;
    bool input_scaling = true;
    // [metrics]
    int n_bins = 20;
    double tad_threshold = 0.75;
    std::size_t kl_mc_samples = 10000;
    std::size_t eval_sample = 512;
    // [sweep]
    int sweep_stride = 5;

    // ---- text form -----------------------------------------------------------

    std::string serialize() const {
        std::ostringstream out;
        out.precision(17);
        out << "[run]\n";
        out << "seed = " << seed << "\n";
        out << "version = " << version << "\n";
        out << "[data]\n";
        out << "image_side = " << image_side << "\n";
        out << "factors = " << factors << "\n";
        out << "train_fraction = " << train_fraction << "\n";
        out << "[vae]\n";
        out << "latent_dim = " << latent_dim << "\n";
        out << "grid_size = " << grid_size << "\n";
        out << "horizon = " << horizon << "\n";
        out << "batch_size = " << vae_batch << "\n";
        out << "steps = " << vae_steps << "\n";
        out << "hidden = " << detail_config::join_size_list(vae_hidden) << "\n";
        out << "temb_dim = " << vae_temb << "\n";
        out << "use_norm = " << (vae_norm ? "true" : "false") << "\n";
        out << "norm_groups = " << vae_groups << "\n";
        out << "activation = " << vae_activation << "\n";
        out << "learning_rate = " << vae_lr << "\n";
        out << "monotonicity_weight = " << monotonicity_weight << "\n";
        out << "anchor_weight = " << anchor_weight << "\n";
        out << "beta_prior = " << beta_prior << "\n";
        out << "[diffusion]\n";
        out << "batch_size = " << diff_batch << "\n";
        out << "steps = " << diff_steps << "\n";
        out << "hidden = " << detail_config::join_size_list(diff_hidden) << "\n";
        out << "temb_dim = " << diff_temb << "\n";
        out << "use_norm = " << (diff_norm ? "true" : "false") << "\n";
        out << "norm_groups = " << diff_groups << "\n";
        out << "activation = " << diff_activation << "\n";
        out << "learning_rate = " << diff_lr << "\n";
        out << "loss_weight = " << loss_weight << "\n";
        out << "delta_weight = " << delta_weight << "\n";
        out << "sampler_mean = " << sampler_mean << "\n";
        out << "sampler_noise = " << sampler_noise << "\n";
        out << "delta_sign = " << delta_sign << "\n";
        out << "unit_init = " << (unit_init ? "true" : "false") << "\n";
        out << "input_scaling = " << (input_scaling ? "true" : "false") << "\n";
        out << "[metrics]\n";
        out << "n_bins = " << n_bins << "\n";
        out << "tad_threshold = " << tad_threshold << "\n";
        out << "kl_mc_samples = " << kl_mc_samples << "\n";
        out << "eval_sample = " << eval_sample << "\n";
        out << "[sweep]\n";
        out << "stride = " << sweep_stride << "\n";
        return out.str();
    }

    static RunConfig parse(const std::string& text) {
        RunConfig cfg;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = detail_config::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw std::invalid_argument("config: bad section at line " +
                                                std::to_string(lineno));
                section = line.substr(1, line.size() - 2);
                if (section != "run" && section != "data" && section != "vae" &&
                    section != "diffusion" && section != "metrics" && section != "sweep")
                    throw std::invalid_argument("config: unknown section [" + section + "]");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config: expected key = value at line " +
                                            std::to_string(lineno));
            const std::string key = detail_config::trim(line.substr(0, eq));
            const std::string value = detail_config::trim(line.substr(eq + 1));
            cfg.apply(section, key, value);
        }
        cfg.validate();
        return cfg;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("config: cannot open " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("config: cannot open " + path);
        out << serialize();
    }

    // FNV-1a of the canonical serialization, hex
    std::string hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        for (char c : serialize()) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    // ---- module config views ---------------------------------------------------

    FactorSpec factor_spec() const {
        FactorSpec spec;
        spec.image_side = image_side;
        spec.factors.clear();
        std::istringstream in(factors);
        std::string item;
        while (std::getline(in, item, ',')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos)
                throw std::invalid_argument("config: bad factor item: " + item);
            spec.factors.push_back({detail_config::trim(item.substr(0, colon)),
                                    std::stoi(item.substr(colon + 1))});
        }
        spec.validate();
        return spec;
    }

    VaeConfig vae_config() const {
        VaeConfig cfg;
        cfg.latent_dim = latent_dim;
        cfg.data_dim = factor_spec().pixels();
        cfg.horizon = horizon;
        cfg.grid_size = grid_size;
        cfg.seed = seed;
        cfg.batch_size = vae_batch;
        cfg.steps = vae_steps;
        cfg.beta_prior_discrete = (beta_prior == "grid");
        cfg.enc_hidden = vae_hidden;
        cfg.dec_hidden = vae_hidden;
        cfg.temb_dim = vae_temb;
        cfg.use_norm = vae_norm;
        cfg.norm_groups = vae_groups;
        cfg.activation = activation_from_string(vae_activation);
        cfg.adam.learning_rate = vae_lr;
        cfg.monotonicity_weight = monotonicity_weight;
        cfg.anchor_weight = anchor_weight;
        cfg.validate();
        return cfg;
    }

    DiffusionConfig diffusion_config() const {
        DiffusionConfig cfg;
        cfg.latent_dim = latent_dim;
        cfg.seed = seed;
        cfg.batch_size = diff_batch;
        cfg.steps = diff_steps;
        cfg.hidden = diff_hidden;
        cfg.temb_dim = diff_temb;
        cfg.use_norm = diff_norm;
        cfg.norm_groups = diff_groups;
        cfg.activation = activation_from_string(diff_activation);
        cfg.adam.learning_rate = diff_lr;
        cfg.loss_weight = loss_weight;
        if (delta_weight == "auto") {
            const double ratio = static_cast<double>(grid_size) / horizon;
            cfg.delta_weight = ratio * ratio;
        } else {
            cfg.delta_weight = std::stod(delta_weight);
        }
        cfg.sampler.mean_param = sampler_mean == "posterior"
                                     ? ReverseStepOptions::MeanParam::posterior
                                     : ReverseStepOptions::MeanParam::clean_estimate;
        cfg.sampler.noise_scale = sampler_noise == "posterior_std"
                                      ? ReverseStepOptions::NoiseScale::posterior_std
                                      : ReverseStepOptions::NoiseScale::sigma_prev;
        cfg.sampler.delta_sign = delta_sign == "minus" ? -1.0 : +1.0;
        cfg.unit_init = unit_init;
        cfg.input_scaling = input_scaling;
        return cfg;
    }

    void validate() const {
        if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
            throw std::invalid_argument("config: train_fraction out of (0, 1)");
        if (sweep_stride < 1) throw std::invalid_argument("config: stride must be >= 1");
        if (sampler_mean != "clean_estimate" && sampler_mean != "posterior")
            throw std::invalid_argument("config: bad sampler_mean: " + sampler_mean);
        if (sampler_noise != "sigma_prev" && sampler_noise != "posterior_std")
            throw std::invalid_argument("config: bad sampler_noise: " + sampler_noise);
        if (delta_sign != "plus" && delta_sign != "minus")
            throw std::invalid_argument("config: bad delta_sign: " + delta_sign);
        if (beta_prior != "uniform" && beta_prior != "grid")
            throw std::invalid_argument("config: bad beta_prior: " + beta_prior);
        if (delta_weight != "auto") std::stod(delta_weight);  // must parse
        factor_spec();
        vae_config();
    }

private:
    void apply(const std::string& section, const std::string& key, const std::string& value) {
        using detail_config::parse_bool;
        using detail_config::parse_size_list;
        const std::string full = section + "." + key;
        if (full == "run.seed") seed = std::stoull(value);
        else if (full == "run.version") version = value;
        else if (full == "data.image_side") image_side = std::stoi(value);
        else if (full == "data.factors") factors = value;
        else if (full == "data.train_fraction") train_fraction = std::stod(value);
        else if (full == "vae.latent_dim") latent_dim = std::stoul(value);
        else if (full == "vae.grid_size") grid_size = std::stoi(value);
        else if (full == "vae.horizon") horizon = std::stod(value);
        else if (full == "vae.batch_size") vae_batch = std::stoul(value);
        else if (full == "vae.steps") vae_steps = std::stoull(value);
        else if (full == "vae.hidden") vae_hidden = parse_size_list(value);
        else if (full == "vae.temb_dim") vae_temb = std::stoul(value);
        else if (full == "vae.use_norm") vae_norm = parse_bool(value);
        else if (full == "vae.norm_groups") vae_groups = std::stoul(value);
        else if (full == "vae.activation") vae_activation = value;
        else if (full == "vae.learning_rate") vae_lr = std::stod(value);
        else if (full == "vae.monotonicity_weight") monotonicity_weight = std::stod(value);
        else if (full == "vae.anchor_weight") anchor_weight = std::stod(value);
        else if (full == "vae.beta_prior") beta_prior = value;
        else if (full == "diffusion.batch_size") diff_batch = std::stoul(value);
        else if (full == "diffusion.steps") diff_steps = std::stoull(value);
        else if (full == "diffusion.hidden") diff_hidden = parse_size_list(value);
        else if (full == "diffusion.temb_dim") diff_temb = std::stoul(value);
        else if (full == "diffusion.use_norm") diff_norm = parse_bool(value);
        else if (full == "diffusion.norm_groups") diff_groups = std::stoul(value);
        else if (full == "diffusion.activation") diff_activation = value;
        else if (full == "diffusion.learning_rate") diff_lr = std::stod(value);
        else if (full == "diffusion.loss_weight") loss_weight = std::stod(value);
        else if (full == "diffusion.delta_weight") delta_weight = value;
        else if (full == "diffusion.sampler_mean") sampler_mean = value;
        else if (full == "diffusion.sampler_noise") sampler_noise = value;
        else if (full == "diffusion.delta_sign") delta_sign = value;
        else if (full == "diffusion.unit_init") unit_init = parse_bool(value);
        else if (full == "diffusion.input_scaling") input_scaling = parse_bool(value);
        else if (full == "metrics.n_bins") n_bins = std::stoi(value);
        else if (full == "metrics.tad_threshold") tad_threshold = std::stod(value);
        else if (full == "metrics.kl_mc_samples") kl_mc_samples = std::stoul(value);
        else if (full == "metrics.eval_sample") eval_sample = std::stoul(value);
        else if (full == "sweep.stride") sweep_stride = std::stoi(value);
        else throw std::invalid_argument("config: unknown key " + full);
    }
};

}  // namespace betaspec
