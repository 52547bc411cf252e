#pragma once

// Conditioned dense networks on top of the autodiff tape. A network is a
// stack of blocks
//     h <- Dense(h); h <- GroupNorm(h) [optional]
//     h <- h + Proj(Sigmoid(temb)); h <- act(h)
// followed by one or two linear heads. The condition (beta or diffusion time)
// enters every block through a sinusoidal embedding.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/autodiff.hpp"
#include "betaspec/rng.hpp"

namespace betaspec {

// Sinusoidal embedding [sin(w_k t), cos(w_k t)]_k with geometrically spaced
// frequencies in [omega_min, omega_max]. Smooth in t: per-component change is
// bounded by omega_max * dt.
inline std::vector<double> time_embed(double t, std::size_t dim, double omega_min = 1.0,
                                      double omega_max = 10.0) {
    if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("time_embed: dim must be even");
    const std::size_t half = dim / 2;
    std::vector<double> out(dim);
    for (std::size_t k = 0; k < half; ++k) {
        const double frac = (half == 1) ? 0.0 : static_cast<double>(k) / (half - 1);
        const double omega = omega_min * std::pow(omega_max / omega_min, frac);
        out[2 * k] = std::sin(omega * t);
        out[2 * k + 1] = std::cos(omega * t);
    }
    return out;
}

// Batched embedding matrix, one row per condition value.
inline Var time_embed_batch(const std::vector<double>& ts, std::size_t dim) {
    std::vector<double> rows;
    rows.reserve(ts.size() * dim);
    for (double t : ts) {
        auto e = time_embed(t, dim);
        rows.insert(rows.end(), e.begin(), e.end());
    }
    return ad::constant({ts.size(), dim}, std::move(rows));
}

// Named parameter registry shared by optimizer and checkpoints. Order of
// registration is the canonical iteration order.
class ParameterSet {
public:
    Var add(const std::string& name, Var v) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        index_[name] = params_.size();
        params_.push_back({name, v});
        return v;
    }

    Var get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
        return params_[it->second].second;
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return params_.size(); }
    const std::vector<std::pair<std::string, Var>>& items() const { return params_; }

    void zero_grad() {
        for (auto& [name, v] : params_) v->grad.assign(v->values.size(), 0.0);
    }

    std::size_t count_values() const {
        std::size_t n = 0;
        for (const auto& [name, v] : params_) n += v->size();
        return n;
    }

private:
    std::vector<std::pair<std::string, Var>> params_;
    std::map<std::string, std::size_t> index_;
};

enum class Activation { sigmoid, relu, silu };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::sigmoid: return "sigmoid";
        case Activation::relu: return "relu";
        case Activation::silu: return "silu";
    }
    return "unknown";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "relu") return Activation::relu;
    if (s == "silu") return Activation::silu;
    throw std::invalid_argument("unknown activation: " + s);
}

inline Var apply_activation(const Var& x, Activation a) {
    switch (a) {
        case Activation::sigmoid: return ad::sigmoid(x);
        case Activation::relu: return ad::relu(x);
        case Activation::silu: return ad::silu(x);
    }
    throw std::logic_error("bad activation");
}

struct NetworkConfig {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::size_t second_output_dim = 0;  // 0: single head
    std::vector<std::size_t> hidden_dims;
    std::size_t temb_dim = 16;
    bool use_norm = true;
    std::size_t norm_groups = 8;
    Activation activation = Activation::sigmoid;
};

// beta/time-conditioned dense network f(x, t). Forward builds a fresh graph;
// parameters persist in the ParameterSet. Weights use fan-in scaled uniform
// init, deterministic per (seed, parameter index); biases start at zero.
class ConditionedNetwork {
public:
    ConditionedNetwork() = default;

    ConditionedNetwork(NetworkConfig config, std::uint64_t seed, const std::string& prefix = "net")
        : config_(std::move(config)), prefix_(prefix) {
        if (config_.input_dim == 0 || config_.output_dim == 0)
            throw std::invalid_argument("network: zero input/output dim");
        std::uint64_t pidx = 0;
        std::size_t in = config_.input_dim;
        for (std::size_t b = 0; b < config_.hidden_dims.size(); ++b) {
            const std::size_t out = config_.hidden_dims[b];
            const std::string base = prefix_ + ".block" + std::to_string(b);
            params_.add(base + ".W", ad::leaf({in, out}, init_w(in, out, seed, pidx++)));
            params_.add(base + ".b", ad::leaf({out}, std::vector<double>(out, 0.0)));
            if (config_.use_norm) {
                params_.add(base + ".gamma", ad::leaf({out}, std::vector<double>(out, 1.0)));
                params_.add(base + ".beta", ad::leaf({out}, std::vector<double>(out, 0.0)));
            }
            params_.add(base + ".Wt",
                        ad::leaf({config_.temb_dim, out}, init_w(config_.temb_dim, out, seed, pidx++)));
            params_.add(base + ".bt", ad::leaf({out}, std::vector<double>(out, 0.0)));
            in = out;
        }
        params_.add(prefix_ + ".head.W", ad::leaf({in, config_.output_dim},
                                                  init_w(in, config_.output_dim, seed, pidx++)));
        params_.add(prefix_ + ".head.b",
                    ad::leaf({config_.output_dim}, std::vector<double>(config_.output_dim, 0.0)));
        if (config_.second_output_dim > 0) {
            params_.add(prefix_ + ".head2.W",
                        ad::leaf({in, config_.second_output_dim},
                                 init_w(in, config_.second_output_dim, seed, pidx++)));
            params_.add(prefix_ + ".head2.b",
                        ad::leaf({config_.second_output_dim},
                                 std::vector<double>(config_.second_output_dim, 0.0)));
        }
    }

    const NetworkConfig& config() const { return config_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    // Trunk features for a batch x [m x input_dim] under conditions ts [m].
    Var trunk(const Var& x, const std::vector<double>& ts) const {
        if (x->cols() != config_.input_dim)
            throw std::invalid_argument("network: input width mismatch");
        if (x->rows() != ts.size())
            throw std::invalid_argument("network: one condition per row required");
        Var temb = time_embed_batch(ts, config_.temb_dim);
        Var temb_act = ad::sigmoid(temb);
        Var h = x;
        for (std::size_t b = 0; b < config_.hidden_dims.size(); ++b) {
            const std::string base = prefix_ + ".block" + std::to_string(b);
            h = ad::add_row(ad::matmul(h, params_.get(base + ".W")), params_.get(base + ".b"));
            if (config_.use_norm) {
                h = ad::group_norm(h, params_.get(base + ".gamma"), params_.get(base + ".beta"),
                                   pick_groups(config_.hidden_dims[b], config_.norm_groups));
            }
            Var proj = ad::add_row(ad::matmul(temb_act, params_.get(base + ".Wt")),
                                   params_.get(base + ".bt"));
            h = ad::add(h, proj);
            h = apply_activation(h, config_.activation);
        }
        return h;
    }

    Var head(const Var& trunk_features) const {
        return ad::add_row(ad::matmul(trunk_features, params_.get(prefix_ + ".head.W")),
                           params_.get(prefix_ + ".head.b"));
    }

    Var head2(const Var& trunk_features) const {
        if (config_.second_output_dim == 0)
            throw std::logic_error("network: no second head configured");
        return ad::add_row(ad::matmul(trunk_features, params_.get(prefix_ + ".head2.W")),
                           params_.get(prefix_ + ".head2.b"));
    }

    Var forward(const Var& x, const std::vector<double>& ts) const {
        return head(trunk(x, ts));
    }

    // single-sample convenience
    std::vector<double> forward_one(const std::vector<double>& x, double t) const {
        Var in = ad::constant({1, x.size()}, x);
        Var out = forward(in, {t});
        return out->values;
    }

private:
    static std::vector<double> init_w(std::size_t fan_in, std::size_t fan_out,
                                      std::uint64_t seed, std::uint64_t pidx) {
        std::vector<double> w(fan_in * fan_out);
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        RngStream rng(seed, 0xb5u, pidx);
        for (auto& v : w) v = rng.next_uniform(-bound, bound);
        return w;
    }

    // Largest divisor of channels that is <= want and keeps group size >= 2;
    // size-1 groups would normalize every value to zero.
    static std::size_t pick_groups(std::size_t channels, std::size_t want) {
        std::size_t g = std::min(want, channels / 2 == 0 ? 1 : channels / 2);
        while (g > 1 && channels % g != 0) --g;
        return g;
    }

    NetworkConfig config_;
    std::string prefix_ = "net";
    ParameterSet params_;
};

}  // namespace betaspec
