#pragma once

#include "mrovseg/backbone.hpp"
#include "mrovseg/conv_ops.hpp"
#include "mrovseg/geometry.hpp"
#include "mrovseg/vit_common.hpp"

namespace mrovseg {

enum class FusionMode {
    kOn,      // normal operation
    kZeroed,  // compute then inject zeros (injection-identity checks)
    kOff,     // skip fusion entirely; fused outputs are zero
};

struct AdapterConfig {
    int blocks = 6;
    int heads = 12;
    int dim = 768;
    int queries = 100;
    int mlp_ratio = 4;
    std::vector<int> fusion_layers = {0, 3, 6, 9, 12};  // backbone tap subset
    bool fusion_at_high_res = false;  // blend at the restored grid instead of the low-res grid
    FusionMode fusion_mode = FusionMode::kOn;
    uint64_t seed = 2;

    void validate(const BackboneConfig& bb) const {
        if (blocks < 1) throw ConfigError("adapter: blocks must be >= 1");
        if (dim % heads != 0) throw ConfigError("adapter: dim must be divisible by heads");
        if (queries < 1) throw ConfigError("adapter: need at least one query token");
        std::set<int> taps(bb.tap_layers.begin(), bb.tap_layers.end());
        for (int l : fusion_layers)
            if (!taps.count(l))
                throw ConfigError("adapter: fusion layer " + std::to_string(l) +
                                  " is not a backbone tap layer");
        if (!taps.count(0))
            throw ConfigError("adapter: backbone must tap the stem (layer 0) for the token stream");
    }

    // Fusion layers spread evenly over the blocks, in tap order; the fused
    // feature of fusion_layers[j] is injected after block (this index).
    int block_for_fusion(int j) const {
        int n = static_cast<int>(fusion_layers.size());
        return static_cast<int>(static_cast<int64_t>(j) * blocks / n) + 1;
    }
};

template <class S>
struct FusedFeatureT {
    TensorT<S> feature;    // [h,w,dim] (low-res grid) or [mh,nw,dim] when high-res
    TensorT<S> scale_attn; // same spatial grid, values in [0,1]
    int tap = 0;
    bool high_res = false;
};

template <class S>
struct AdapterOutT {
    TensorT<S> query_features;             // Q_f [N,dim]
    std::vector<FusedFeatureT<S>> fused;   // fusion_layers order
    TensorT<S> visual_grid;                // H [Th,Tw,dim]
};

// Trainable Multi-Res Adapter: learnable queries run with slice tokens
// through vanilla ViT blocks; Multi-Res Fusion restores slice geometry,
// blends it with the global view under a sigmoid scale gate, and injects the
// result back into the token stream.
template <class S>
class MultiResAdapterT {
public:
    MultiResAdapterT(ParameterStoreT<S>& store, AdapterConfig cfg, const BackboneConfig& bb)
        : store_(store), cfg_(cfg), backbone_dim_(bb.dim) {
        cfg_.validate(bb);
        Rng rng(cfg_.seed);
        store_.add("adapter/query", randn<S>({cfg_.queries, cfg_.dim}, rng, 0.02));
        if (backbone_dim_ != cfg_.dim)
            store_.add("adapter/entry_w", randn<S>({backbone_dim_, cfg_.dim}, rng, 0.02));
        for (int b = 1; b <= cfg_.blocks; ++b)
            VitBlock<S>::register_params(store_, "adapter/blk" + std::to_string(b), cfg_.dim,
                                         cfg_.dim * cfg_.mlp_ratio, rng, false);
        // Near-identity start: the pointwise mixes are zero so DConv(H) is 0,
        // and the scale-gate bias saturates a toward the (zeroed) high-res
        // branch. The first injections are then ~0 and fusion fades in as the
        // convs train; the depthwise kernels stay random so gradients flow.
        for (int tap : cfg_.fusion_layers) {
            std::string p = mrf_prefix(tap);
            store_.add(p + "/dw", randn<S>({backbone_dim_, 3, 3}, rng, 0.02));
            store_.add(p + "/pw", TensorT<S>({cfg_.dim, backbone_dim_}, S(0)));
            store_.add(p + "/fa_dw", randn<S>({backbone_dim_, 3, 3}, rng, 0.02));
            store_.add(p + "/fa_pw", TensorT<S>({cfg_.dim, backbone_dim_}, S(0)));
            store_.add(p + "/fa_b", TensorT<S>({cfg_.dim, 1, 1}, S(4)));
        }
        Mlp2<S>::register_params(store_, "adapter/qproj", cfg_.dim, cfg_.dim, cfg_.dim, rng);
    }

    const AdapterConfig& config() const { return cfg_; }
    void set_fusion_mode(FusionMode m) { cfg_.fusion_mode = m; }
    static std::string mrf_prefix(int tap) { return "adapter/mrf" + std::to_string(tap); }

    // Q_f = MLP(Q): two-layer gelu MLP, output width = dim.
    TensorT<S> project_queries(const TensorT<S>& q) {
        return Mlp2<S>::forward(store_, "adapter/qproj", q);
    }

    // Multi-Res Fusion at one tap layer. Slice tokens are restored to the
    // full grid, passed through a depthwise-separable conv, and blended with
    // the global feature under the sigmoid scale gate. The default evaluates
    // the blend at the low-res grid (the convolved high-res branch is
    // average-pooled down); fusion_at_high_res instead upsamples the global
    // branch and keeps the restored grid.
    FusedFeatureT<S> mrf_fuse(const std::vector<TensorT<S>>& slice_feats,
                              const TensorT<S>& global_feat, const SliceLayout& layout, int tap,
                              int tokens_h, int tokens_w) {
        std::string p = mrf_prefix(tap);
        auto grid = restore_grid(slice_feats, layout);                     // [mh,nw,Db]
        int mh = grid.dim(0), nw = grid.dim(1);
        auto grid_cf = permute(grid, {2, 0, 1});                           // [Db,mh,nw]
        auto dconv = pointwise_conv2d(depthwise_conv2d(grid_cf, store_.at(p + "/dw"), 1, 1),
                                      store_.at(p + "/pw"));               // [dim,mh,nw]
        auto fa = add(pointwise_conv2d(depthwise_conv2d(grid_cf, store_.at(p + "/fa_dw"), 1, 1),
                                       store_.at(p + "/fa_pw")),
                      store_.at(p + "/fa_b"));                             // [dim,mh,nw]
        auto hbar = reshape(entry_project(global_feat), {tokens_h, tokens_w, cfg_.dim});
        auto hbar_cf = permute(hbar, {2, 0, 1});                           // [dim,h,w]

        FusedFeatureT<S> out;
        out.tap = tap;
        out.high_res = cfg_.fusion_at_high_res;
        if (cfg_.fusion_at_high_res) {
            auto a = sigmoid(fa);
            auto up_bar = resize_bilinear(hbar_cf, mh, nw);
            auto one_minus = add_scalar(neg(a), 1.0);
            auto blend = add(mul(a, dconv), mul(one_minus, up_bar));
            out.feature = permute(blend, {1, 2, 0});
            out.scale_attn = permute(a, {1, 2, 0});
        } else {
            auto pooled_logits = adaptive_avg_pool2d(fa, tokens_h, tokens_w);
            auto a = sigmoid(pooled_logits);                               // [dim,h,w]
            auto pooled_high = adaptive_avg_pool2d(dconv, tokens_h, tokens_w);
            auto one_minus = add_scalar(neg(a), 1.0);
            auto blend = add(mul(a, pooled_high), mul(one_minus, hbar_cf));
            out.feature = permute(blend, {1, 2, 0});
            out.scale_attn = permute(a, {1, 2, 0});
        }
        return out;
    }

    AdapterOutT<S> forward(const MultiResFeaturesT<S>& feats) {
        if (!feats.slices.count(0))
            throw ConfigError("adapter_forward: stem slice features missing");
        const auto& lo = feats.layout;
        int S_count = lo.slices();
        int L = feats.token_count();
        int N = cfg_.queries;

        std::vector<TensorT<S>> stem;
        stem.reserve(static_cast<size_t>(S_count));
        for (const auto& t : feats.slices.at(0)) stem.push_back(entry_project(t));
        auto vis = concat(stem, 0);                                        // [S*L, dim]
        auto stream = concat<S>({store_.at("adapter/query"), vis}, 0);

        AdapterOutT<S> out;
        // fusion schedule: taps in config order, mapped onto blocks
        std::map<int, std::vector<int>> by_block;
        for (size_t j = 0; j < cfg_.fusion_layers.size(); ++j)
            by_block[cfg_.block_for_fusion(static_cast<int>(j))].push_back(cfg_.fusion_layers[static_cast<size_t>(j)]);

        std::map<int, FusedFeatureT<S>> fused_by_tap;
        for (int b = 1; b <= cfg_.blocks; ++b) {
            stream = VitBlock<S>::forward(store_, "adapter/blk" + std::to_string(b), stream,
                                          cfg_.heads);
            auto it = by_block.find(b);
            if (it == by_block.end()) continue;
            for (int tap : it->second) {
                FusedFeatureT<S> f = fuse_or_zero(feats, tap);
                fused_by_tap[tap] = f;
                if (cfg_.fusion_mode == FusionMode::kOff) continue;
                TensorT<S> inj = f.high_res ? gather_states(f.feature, lo)
                                            : reshape(f.feature, {L, cfg_.dim});
                if (cfg_.fusion_mode == FusionMode::kZeroed) inj = zeros_like(inj);
                auto q_rows = narrow(stream, 0, 0, N);
                auto v_rows = narrow(stream, 0, N, S_count * L);
                TensorT<S> updated;
                if (f.high_res) {
                    updated = add(v_rows, inj);  // one row per restored-grid cell occurrence
                } else {
                    auto v3 = reshape(v_rows, {S_count, L, cfg_.dim});
                    updated = reshape(add(v3, inj), {S_count * L, cfg_.dim});
                }
                stream = concat<S>({q_rows, updated}, 0);
            }
        }

        for (int tap : cfg_.fusion_layers) out.fused.push_back(fused_by_tap.at(tap));

        auto q_rows = narrow(stream, 0, 0, N);
        out.query_features = project_queries(q_rows);

        std::vector<TensorT<S>> final_slices;
        for (int s = 0; s < S_count; ++s) final_slices.push_back(narrow(stream, 0, N + s * L, L));
        out.visual_grid = restore_grid(final_slices, lo);
        return out;
    }

private:
    TensorT<S> entry_project(const TensorT<S>& x) {
        if (backbone_dim_ == cfg_.dim) return x;
        return matmul(x, store_.at("adapter/entry_w"));
    }

    FusedFeatureT<S> fuse_or_zero(const MultiResFeaturesT<S>& feats, int tap) {
        if (cfg_.fusion_mode == FusionMode::kOff) {
            FusedFeatureT<S> f;
            f.tap = tap;
            f.high_res = cfg_.fusion_at_high_res;
            int h = f.high_res ? feats.layout.grid_tokens_h() : feats.tokens_h;
            int w = f.high_res ? feats.layout.grid_tokens_w() : feats.tokens_w;
            f.feature = TensorT<S>({h, w, cfg_.dim}, S(0));
            f.scale_attn = TensorT<S>({h, w, cfg_.dim}, S(0));
            return f;
        }
        if (!feats.slices.count(tap) || !feats.global.count(tap))
            throw ConfigError("adapter_forward: fusion tap " + std::to_string(tap) +
                              " missing from features");
        auto f = mrf_fuse(feats.slices.at(tap), feats.global.at(tap), feats.layout, tap,
                          feats.tokens_h, feats.tokens_w);
        if (cfg_.fusion_mode == FusionMode::kZeroed) f.feature = zeros_like(f.feature);
        return f;
    }

    // Per-slice view of a restored-grid feature: each slice token row gets the
    // grid cell it restores to (the scatter inverse of restore_grid).
    TensorT<S> gather_states(const TensorT<S>& grid, const SliceLayout& lo) {
        std::vector<TensorT<S>> parts;
        int lh = lo.slice_tokens_h(), lw = lo.slice_tokens_w();
        for (auto [oy, ox] : lo.origins()) {
            int ty = oy / lo.patch, tx = ox / lo.patch;
            auto crop = narrow(narrow(grid, 0, ty, lh), 1, tx, lw);
            parts.push_back(reshape(crop, {lh * lw, cfg_.dim}));
        }
        return concat(parts, 0);
    }

    ParameterStoreT<S>& store_;
    AdapterConfig cfg_;
    int backbone_dim_;
};

using MultiResAdapter = MultiResAdapterT<float>;

}  // namespace mrovseg
