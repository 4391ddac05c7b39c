#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "mrovseg/params.hpp"

namespace mrovseg {

struct GradCheckOptions {
    double h = 1e-4;
    double tol = 1e-4;
    int max_coords_per_tensor = 24;  // sampled coordinates for large tensors
    uint64_t seed = 7;
};

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    int checked_coords = 0;
    bool pass = true;
    std::string worst_param;
};

// |a - n| / max(1, |a|, |n|): relative for large gradients, absolute near zero.
inline double grad_rel_err(double analytic, double numeric) {
    double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / denom;
}

// Central finite differences in double against the tape gradient. `forward`
// must be a pure function of the store's parameters. `grad_scale` multiplies
// the analytic gradient before comparison (test hook for demonstrating that a
// broken gradient is caught; 1.0 in normal use).
inline GradCheckReport check_gradients(const std::string& name, ParameterStoreT<double>& store,
                                       const std::function<TensorT<double>()>& forward,
                                       GradCheckOptions opt = {}, double grad_scale = 1.0) {
    GradCheckReport rep;
    rep.name = name;

    Tape64 tape;
    std::map<std::string, TensorT<double>> grads;
    {
        Tape64::Scope scope(tape);
        store.watch_trainable(tape);
        TensorT<double> loss = forward();
        tape.backward(loss);
        grads = store.pull_grads(tape);
    }

    Rng rng(opt.seed);
    for (const auto& pname : store.names()) {
        if (store.is_frozen(pname)) continue;
        auto& p = store.at(pname);
        const auto& g = grads.at(pname);
        int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (n <= opt.max_coords_per_tensor) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < opt.max_coords_per_tensor; ++i)
                coords.push_back(static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(n)));
        }
        for (int64_t c : coords) {
            double saved = p[c];
            p[c] = saved + opt.h;
            double lp = forward().item();
            p[c] = saved - opt.h;
            double lm = forward().item();
            p[c] = saved;
            double numeric = (lp - lm) / (2.0 * opt.h);
            double analytic = g[c] * grad_scale;
            double err = grad_rel_err(analytic, numeric);
            ++rep.checked_coords;
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = pname;
            }
        }
    }
    rep.pass = rep.max_rel_err < opt.tol;
    return rep;
}

}  // namespace mrovseg
