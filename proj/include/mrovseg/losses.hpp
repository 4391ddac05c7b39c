#pragma once

#include "mrovseg/conv_ops.hpp"
#include "mrovseg/hungarian.hpp"
#include "mrovseg/ops.hpp"

namespace mrovseg {

struct LossWeights {
    double cls = 2.0;
    double bce = 5.0;
    double dice = 5.0;
    double no_object = 0.1;  // CE weight of unmatched queries
    // Optional mask supervision of unmatched queries toward the empty mask,
    // as a fraction of the BCE weight. Off by default; the toy recipe enables
    // it so that residual class mass on unmatched queries cannot flood the
    // composed map through unconstrained masks.
    double empty_mask = 0.0;
};

// Ground truth for one sample, masks already at prediction resolution.
template <class S>
struct SampleTargets {
    std::vector<int> classes;          // G class ids (< K)
    std::vector<TensorT<S>> masks;     // G x [h,w], values in {0,1}
};

namespace detail {

template <class S>
double pair_bce(const TensorT<S>& logits, const TensorT<S>& target) {
    double acc = 0;
    for (int64_t i = 0; i < logits.numel(); ++i) {
        double x = logits[i], t = target[i];
        acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::fabs(x)));
    }
    return acc / static_cast<double>(logits.numel());
}

template <class S>
double pair_dice(const TensorT<S>& logits, const TensorT<S>& target) {
    double inter = 0, psum = 0, tsum = 0;
    for (int64_t i = 0; i < logits.numel(); ++i) {
        double x = logits[i];
        double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        inter += p * target[i];
        psum += p;
        tsum += target[i];
    }
    return 1.0 - (2.0 * inter + 1.0) / (psum + tsum + 1.0);
}

}  // namespace detail

// Matching cost [G,N] mirroring the loss terms; computed on detached values.
// Class term is -p(class_g) under softmax over K+1 (with no-object).
template <class S>
std::vector<double> matching_cost(const TensorT<S>& logits_full, const TensorT<S>& mask_logits,
                                  const SampleTargets<S>& targets, const LossWeights& w) {
    int N = logits_full.dim(0), C = logits_full.dim(1);
    int G = static_cast<int>(targets.classes.size());
    std::vector<double> probs(static_cast<size_t>(N) * C);
    for (int n = 0; n < N; ++n) {
        double mx = logits_full[static_cast<int64_t>(n) * C];
        for (int c = 1; c < C; ++c)
            mx = std::max(mx, static_cast<double>(logits_full[static_cast<int64_t>(n) * C + c]));
        double sum = 0;
        for (int c = 0; c < C; ++c)
            sum += std::exp(static_cast<double>(logits_full[static_cast<int64_t>(n) * C + c]) - mx);
        for (int c = 0; c < C; ++c)
            probs[static_cast<size_t>(n) * C + c] =
                std::exp(static_cast<double>(logits_full[static_cast<int64_t>(n) * C + c]) - mx) / sum;
    }
    std::vector<double> cost(static_cast<size_t>(G) * N);
    int h = mask_logits.dim(1), wpx = mask_logits.dim(2);
    for (int g = 0; g < G; ++g) {
        if (targets.masks[static_cast<size_t>(g)].shape != std::vector<int>{h, wpx})
            throw DimensionError("matching_cost: target mask resolution mismatch");
        for (int n = 0; n < N; ++n) {
            TensorT<S> m;
            m.shape = {h, wpx};
            m.data = std::make_shared<std::vector<S>>(
                mask_logits.ptr() + static_cast<int64_t>(n) * h * wpx,
                mask_logits.ptr() + static_cast<int64_t>(n + 1) * h * wpx);
            double c = -w.cls * probs[static_cast<size_t>(n) * C + targets.classes[static_cast<size_t>(g)]];
            c += w.bce * detail::pair_bce(m, targets.masks[static_cast<size_t>(g)]);
            c += w.dice * detail::pair_dice(m, targets.masks[static_cast<size_t>(g)]);
            cost[static_cast<size_t>(g) * N + n] = c;
        }
    }
    return cost;
}

// Hungarian assignment of ground-truth instances to queries from the
// matching cost. Returns the query index per instance.
template <class S>
std::vector<int> match_targets(const TensorT<S>& logits_full, const TensorT<S>& mask_logits,
                               const SampleTargets<S>& targets, const LossWeights& w) {
    int G = static_cast<int>(targets.classes.size());
    if (G == 0) return {};
    int N = logits_full.dim(0);
    if (G > N)
        throw ContractError("match_targets: more instances (" + std::to_string(G) +
                            ") than queries (" + std::to_string(N) + ")");
    return hungarian_match(matching_cost(logits_full, mask_logits, targets, w), G, N);
}

struct LossBreakdown {
    double ce = 0.0, bce = 0.0, dice = 0.0;  // unweighted term values
};

// L = w.cls * CE(classes incl. no-object) + w.bce * BCE + w.dice * Dice over
// matched masks. Unmatched queries are supervised toward the no-object class
// (index K) with reduced CE weight.
template <class S>
TensorT<S> set_loss(const TensorT<S>& logits_full, const TensorT<S>& mask_logits,
                    const SampleTargets<S>& targets, const std::vector<int>& assignment,
                    const LossWeights& w, LossBreakdown* breakdown = nullptr) {
    int N = logits_full.dim(0), C = logits_full.dim(1);
    int K = C - 1;
    int G = static_cast<int>(targets.classes.size());
    if (static_cast<int>(assignment.size()) != G)
        throw ContractError("set_loss: assignment does not match target count");
    int h = mask_logits.dim(1), wpx = mask_logits.dim(2);

    std::vector<int> ce_targets(static_cast<size_t>(N), K);
    std::vector<double> ce_weights(static_cast<size_t>(N), w.no_object);
    for (int g = 0; g < G; ++g) {
        int q = assignment[static_cast<size_t>(g)];
        if (q < 0 || q >= N) throw ContractError("set_loss: assignment index out of range");
        if (targets.classes[static_cast<size_t>(g)] < 0 || targets.classes[static_cast<size_t>(g)] >= K)
            throw ContractError("set_loss: target class out of range");
        ce_targets[static_cast<size_t>(q)] = targets.classes[static_cast<size_t>(g)];
        ce_weights[static_cast<size_t>(q)] = 1.0;
    }
    auto ce = weighted_cross_entropy(logits_full, ce_targets, ce_weights);
    if (breakdown) breakdown->ce = static_cast<double>(ce.item());
    auto loss = scale(ce, w.cls);

    if (G > 0) {
        std::vector<TensorT<S>> bce_terms, dice_terms;
        for (int g = 0; g < G; ++g) {
            int q = assignment[static_cast<size_t>(g)];
            auto m = reshape(narrow(mask_logits, 0, q, 1), {h, wpx});
            const auto& t = targets.masks[static_cast<size_t>(g)];
            bce_terms.push_back(bce_with_logits_mean(m, t));
            auto p = sigmoid(m);
            auto inter = sum_all(mul(p, t));
            auto denom = add_scalar(add(sum_all(p), sum_all(t)), 1.0);
            auto dice = add_scalar(neg(divide(add_scalar(scale(inter, 2.0), 1.0), denom)), 1.0);
            dice_terms.push_back(dice);
        }
        auto mean_of = [&](std::vector<TensorT<S>>& v) {
            return scale(sum_all(concat(v, 0)), 1.0 / static_cast<double>(v.size()));
        };
        auto bce_mean = mean_of(bce_terms);
        auto dice_mean = mean_of(dice_terms);
        if (breakdown) {
            breakdown->bce = static_cast<double>(bce_mean.item());
            breakdown->dice = static_cast<double>(dice_mean.item());
        }
        loss = add(loss, scale(bce_mean, w.bce));
        loss = add(loss, scale(dice_mean, w.dice));
    }
    if (w.empty_mask > 0.0) {
        std::vector<bool> matched(static_cast<size_t>(N), false);
        for (int q : assignment) matched[static_cast<size_t>(q)] = true;
        std::vector<TensorT<S>> empty_terms;
        TensorT<S> zeros({h, wpx}, S(0));
        for (int n = 0; n < N; ++n) {
            if (matched[static_cast<size_t>(n)]) continue;
            auto m = reshape(narrow(mask_logits, 0, n, 1), {h, wpx});
            empty_terms.push_back(bce_with_logits_mean(m, zeros));
        }
        if (!empty_terms.empty()) {
            auto empty_mean = scale(sum_all(concat(empty_terms, 0)),
                                    1.0 / static_cast<double>(empty_terms.size()));
            loss = add(loss, scale(empty_mean, w.bce * w.empty_mask));
        }
    }
    return loss;
}

}  // namespace mrovseg
