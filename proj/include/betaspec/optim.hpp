#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/nn.hpp"

namespace betaspec {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction over a ParameterSet. A NaN/Inf gradient aborts
// the step before touching any parameter.
class Adam {
public:
    explicit Adam(ParameterSet& params, AdamConfig config = {})
        : params_(&params), config_(config) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            const auto& var = params.items()[p].second;
            m_[p].assign(var->size(), 0.0);
            v_[p].assign(var->size(), 0.0);
        }
    }

    std::uint64_t step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }

    void step() {
        // validate all gradients first so a bad one leaves parameters intact
        for (const auto& [name, var] : params_->items()) {
            if (var->grad.size() != var->values.size())
                throw std::runtime_error("optimizer: missing gradient for " + name);
            for (double g : var->grad)
                if (!std::isfinite(g))
                    throw std::runtime_error("optimizer: non-finite gradient in " + name);
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
        for (std::size_t p = 0; p < params_->size(); ++p) {
            auto& var = params_->items()[p].second;
            auto& m = m_[p];
            auto& v = v_[p];
            for (std::size_t i = 0; i < var->size(); ++i) {
                const double g = var->grad[i];
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                var->values[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
            }
        }
    }

private:
    ParameterSet* params_;
    AdamConfig config_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace betaspec
