#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mrovseg/params.hpp"

namespace mrovseg {

// lr(t) = base * (1 - t/T)^power, evaluated in double so the schedule
// endpoints are exact.
inline double poly_lr(double base_lr, int64_t step, int64_t total_steps, double power = 0.9) {
    if (total_steps <= 0) throw ContractError("poly_lr: total_steps must be > 0");
    if (step < 0) throw ContractError("poly_lr: negative step");
    if (step > total_steps) throw ContractError("poly_lr: step beyond schedule");
    double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    if (frac <= 0.0) return 0.0;
    return base_lr * std::pow(frac, power);
}

struct AdamWConfig {
    double base_lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double poly_power = 0.9;
    int64_t total_steps = 1000;
    double clip_norm = 1.0;  // global grad-norm clip; <= 0 disables
};

// AdamW with decoupled weight decay and the poly schedule. Moments exist only
// for trainable parameters; frozen ones never enter the state.
template <class S>
class AdamWT {
public:
    explicit AdamWT(AdamWConfig cfg) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    int64_t step_count() const { return step_; }
    double current_lr() const { return poly_lr(cfg_.base_lr, step_, cfg_.total_steps, cfg_.poly_power); }

    bool has_state(const std::string& name) const { return m_.count(name) > 0; }

    // Scales gradients in place to global norm <= clip_norm; returns the
    // pre-clip norm.
    double clip_gradients(std::map<std::string, TensorT<S>>& grads) const {
        double ss = 0;
        for (auto& [name, g] : grads)
            for (int64_t i = 0; i < g.numel(); ++i) {
                double v = static_cast<double>(g[i]);
                ss += v * v;
            }
        double norm = std::sqrt(ss);
        if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) {
            S f = static_cast<S>(cfg_.clip_norm / norm);
            for (auto& [name, g] : grads)
                for (int64_t i = 0; i < g.numel(); ++i) g[i] *= f;
        }
        return norm;
    }

    // One update. Throws NumericError on NaN/inf gradients, naming the tensor.
    void step(ParameterStoreT<S>& store, const std::map<std::string, TensorT<S>>& grads) {
        double lr = poly_lr(cfg_.base_lr, step_, cfg_.total_steps, cfg_.poly_power);
        for (const auto& name : store.names()) {
            if (store.is_frozen(name)) continue;
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const auto& g = git->second;
            auto& p = store.at(name);
            if (g.shape != p.shape)
                throw DimensionError("adamw: grad shape " + shape_str(g.shape) +
                                     " does not match parameter " + name);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (!std::isfinite(static_cast<double>(g[i])))
                    throw NumericError("adamw: non-finite gradient in " + name);
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.empty()) {
                m.assign(static_cast<size_t>(g.numel()), 0.0);
                v.assign(static_cast<size_t>(g.numel()), 0.0);
            }
            double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_ + 1));
            double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_ + 1));
            for (int64_t i = 0; i < g.numel(); ++i) {
                double gi = static_cast<double>(g[i]);
                double& mi = m[static_cast<size_t>(i)];
                double& vi = v[static_cast<size_t>(i)];
                mi = cfg_.beta1 * mi + (1.0 - cfg_.beta1) * gi;
                vi = cfg_.beta2 * vi + (1.0 - cfg_.beta2) * gi * gi;
                double mhat = mi / bc1;
                double vhat = vi / bc2;
                double w = static_cast<double>(p[i]);
                w -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w);
                p[i] = static_cast<S>(w);
            }
        }
        ++step_;
    }

private:
    AdamWConfig cfg_;
    int64_t step_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

using AdamW = AdamWT<float>;

}  // namespace mrovseg
