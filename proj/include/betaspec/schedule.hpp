#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace betaspec {

enum class ScheduleTag { linear, sched1, sched2, learned };

inline const char* to_string(ScheduleTag tag) {
    switch (tag) {
        case ScheduleTag::linear: return "linear";
        case ScheduleTag::sched1: return "sched1";
        case ScheduleTag::sched2: return "sched2";
        case ScheduleTag::learned: return "learned";
    }
    return "unknown";
}

inline ScheduleTag schedule_tag_from_string(const std::string& s) {
    if (s == "linear") return ScheduleTag::linear;
    if (s == "sched1") return ScheduleTag::sched1;
    if (s == "sched2") return ScheduleTag::sched2;
    if (s == "learned") return ScheduleTag::learned;
    throw std::invalid_argument("unknown schedule tag: " + s);
}

// Discretized noise schedule on the grid t_i = i*B/N, i = 0..N.
// sigmas[i] is the noise level at t_i. Construction enforces:
//   - sigmas has N+1 entries, all finite and >= 0
//   - non-decreasing (zero increments allowed)
//   - sigmas[N] > 0
// Sampling additionally needs validate_for_sampling(): strictly increasing
// past the first step, so every reverse step removes some noise.
class Schedule {
public:
    Schedule(int n_steps, double horizon, std::vector<double> sigmas, ScheduleTag tag,
             std::string formula = "")
        : n_steps_(n_steps),
          horizon_(horizon),
          sigmas_(std::move(sigmas)),
          tag_(tag),
          formula_(std::move(formula)) {
        if (n_steps_ < 1) throw std::invalid_argument("schedule: n_steps must be >= 1");
        if (!(horizon_ > 0.0)) throw std::invalid_argument("schedule: horizon must be > 0");
        if (sigmas_.size() != static_cast<std::size_t>(n_steps_) + 1)
            throw std::invalid_argument("schedule: need N+1 sigma values");
        for (double s : sigmas_) {
            if (!std::isfinite(s) || s < 0.0)
                throw std::invalid_argument("schedule: sigmas must be finite and >= 0");
        }
        for (int i = 1; i <= n_steps_; ++i) {
            if (sigmas_[i] < sigmas_[i - 1])
                throw std::invalid_argument("schedule: sigmas must be non-decreasing");
        }
        if (!(sigmas_.back() > 0.0))
            throw std::invalid_argument("schedule: terminal sigma must be > 0");
    }

    int n_steps() const { return n_steps_; }
    double horizon() const { return horizon_; }
    double tau() const { return horizon_ / n_steps_; }
    ScheduleTag tag() const { return tag_; }
    const std::string& formula() const { return formula_; }
    const std::vector<double>& sigmas() const { return sigmas_; }

    double sigma(int i) const {
        check_index(i, 0);
        return sigmas_[static_cast<std::size_t>(i)];
    }

    double time_of(int i) const { return static_cast<double>(i) * horizon_ / n_steps_; }

    // sigma at arbitrary beta in [0, B], linear interpolation between grid points
    double sigma_at(double beta) const {
        if (beta < 0.0 || beta > horizon_ * (1.0 + 1e-12))
            throw std::out_of_range("schedule: beta out of [0, B]");
        const double u = beta / horizon_ * n_steps_;
        const int lo = std::min(static_cast<int>(u), n_steps_ - 1);
        const double w = u - lo;
        return sigmas_[lo] * (1.0 - w) + sigmas_[lo + 1] * w;
    }

    // sigma^2_{t|t-tau} = sigma^2_t - sigma^2_{t-tau}, 1 <= i <= N.
    // Factored form stays exactly zero for equal sigmas under FMA contraction.
    double step_variance(int i) const {
        check_index(i, 1);
        const double cur = sigmas_[static_cast<std::size_t>(i)];
        const double prev = sigmas_[static_cast<std::size_t>(i) - 1];
        return (cur - prev) * (cur + prev);
    }

    // Sampling needs each reverse step to remove noise: sigma_1 > 0 and
    // strict increase on i >= 1. Throws on the degenerate flat-tail case.
    void validate_for_sampling() const {
        if (!(sigmas_[1] > 0.0))
            throw std::invalid_argument("schedule: sigma_1 must be > 0 for sampling");
        for (int i = 2; i <= n_steps_; ++i) {
            if (!(sigmas_[i] > sigmas_[i - 1]))
                throw std::invalid_argument(
                    "schedule: sigmas must strictly increase past step 1 for sampling");
        }
    }

    // Training fails empirically on schedules that grow sub-linearly early on.
    // Warn (do not reject) when most grid points before B/2 sit below the chord.
    std::vector<std::string> lint() const {
        std::vector<std::string> warnings;
        int below = 0, counted = 0;
        for (int i = 1; i <= n_steps_; ++i) {
            const double t = time_of(i);
            if (t >= 0.5 * horizon_) break;
            ++counted;
            const double chord = sigmas_.back() * t / horizon_;
            if (sigmas_[i] < chord - 1e-12) ++below;
        }
        if (counted > 0 && below * 2 > counted)
            warnings.push_back("schedule grows sub-linearly for t < B/2; "
                               "this shape is known to train poorly");
        return warnings;
    }

    // --- text container: "schedule v1 N=<n> B=<b> tag=<tag>" + N+1 sigma lines ---

    void save(std::ostream& out) const {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", horizon_);
        out << "schedule v1 N=" << n_steps_ << " B=" << buf << " tag=" << to_string(tag_) << "\n";
        for (double s : sigmas_) {
            std::snprintf(buf, sizeof(buf), "%.17g", s);
            out << buf << "\n";
        }
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("schedule: cannot open for write: " + path);
        save(out);
    }

    static Schedule load(std::istream& in) {
        std::string line;
        if (!std::getline(in, line)) throw std::runtime_error("schedule: empty stream");
        std::istringstream hdr(line);
        std::string word, version, nfield, bfield, tfield;
        hdr >> word >> version >> nfield >> bfield >> tfield;
        if (word != "schedule" || version != "v1" || nfield.rfind("N=", 0) != 0 ||
            bfield.rfind("B=", 0) != 0 || tfield.rfind("tag=", 0) != 0)
            throw std::runtime_error("schedule: bad header: " + line);
        const int n = std::stoi(nfield.substr(2));
        const double b = std::stod(bfield.substr(2));
        const ScheduleTag tag = schedule_tag_from_string(tfield.substr(4));
        std::vector<double> sig;
        sig.reserve(static_cast<std::size_t>(n) + 1);
        for (int i = 0; i <= n; ++i) {
            if (!std::getline(in, line)) throw std::runtime_error("schedule: truncated sigma list");
            sig.push_back(std::stod(line));
        }
        return Schedule(n, b, std::move(sig), tag);
    }

    static Schedule load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("schedule: cannot open: " + path);
        return load(in);
    }

private:
    void check_index(int i, int lo) const {
        if (i < lo || i > n_steps_) throw std::out_of_range("schedule: step index out of range");
    }

    int n_steps_;
    double horizon_;
    std::vector<double> sigmas_;
    ScheduleTag tag_;
    std::string formula_;
};

// sigma(t) = sigma_max * t / B
inline Schedule make_linear_schedule(int n_steps, double horizon = 1.0, double sigma_max = 1.0) {
    std::vector<double> sig(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i)
        sig[static_cast<std::size_t>(i)] = sigma_max * static_cast<double>(i) / n_steps;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "sigma(t)=%.6g*t/B", sigma_max);
    return Schedule(n_steps, horizon, std::move(sig), ScheduleTag::linear, buf);
}

// sigma(t) = sigma_max * (t/B)^p, p < 1: steep near t=0, concave after
inline Schedule make_sched1(int n_steps, double horizon = 1.0, double p = 0.7,
                            double sigma_max = 1.0) {
    if (!(p > 0.0)) throw std::invalid_argument("sched1: p must be > 0");
    std::vector<double> sig(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i)
        sig[static_cast<std::size_t>(i)] =
            sigma_max * std::pow(static_cast<double>(i) / n_steps, p);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "sigma(t)=%.6g*(t/B)^%.6g", sigma_max, p);
    return Schedule(n_steps, horizon, std::move(sig), ScheduleTag::sched1, buf);
}

// sigma(t) = sigma_max * sin(pi*t/(2B))^p, the sinusoidal-beta induced shape
inline Schedule make_sched2(int n_steps, double horizon = 1.0, double p = 1.0,
                            double sigma_max = 1.0) {
    if (!(p > 0.0)) throw std::invalid_argument("sched2: p must be > 0");
    std::vector<double> sig(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i) {
        const double u = static_cast<double>(i) / n_steps;
        sig[static_cast<std::size_t>(i)] =
            sigma_max * std::pow(std::sin(1.5707963267948966 * u), p);
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "sigma(t)=%.6g*sin(pi*t/(2B))^%.6g", sigma_max, p);
    return Schedule(n_steps, horizon, std::move(sig), ScheduleTag::sched2, buf);
}

// Schedule from a learned sigma table (e.g. the VAE's sigma_beta grid).
inline Schedule make_learned_schedule(std::vector<double> sigmas, double horizon = 1.0) {
    const int n = static_cast<int>(sigmas.size()) - 1;
    return Schedule(n, horizon, std::move(sigmas), ScheduleTag::learned, "learned sigma table");
}

}  // namespace betaspec
