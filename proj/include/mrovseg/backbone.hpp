#pragma once

#include <map>
#include <set>

#include "mrovseg/geometry.hpp"
#include "mrovseg/vit_common.hpp"

namespace mrovseg {

// Toy frozen vision-language visual encoder: a seeded-random pre-norm ViT
// standing in for pretrained CLIP. Weights never train; only the structure is
// exercised.
struct BackboneConfig {
    int patch = 16;
    int dim = 768;
    int heads = 12;
    int depth = 12;
    int mlp_ratio = 4;
    std::vector<int> tap_layers = {0, 3, 6, 9, 12};  // 0 = stem (post patch embed)
    int cls_tap = 9;
    int native_window = 320;
    int embed_dim = 512;  // shared vision-language space
    // Experimental: mask tokens of the global view that fall entirely inside
    // the zero-padded region (after aspect-preserving downscale) as attention
    // keys. Off by default; padded positions then participate normally.
    bool mask_padding = false;
    uint64_t seed = 1;

    void validate() const {
        if (dim % heads != 0) throw ConfigError("backbone: dim must be divisible by heads");
        if (cls_tap < 1 || cls_tap > depth)
            throw ConfigError("backbone: cls_tap must be in [1,depth]");
        if (native_window % patch != 0)
            throw ConfigError("backbone: native_window must be patch-divisible");
        for (int t : tap_layers)
            if (t < 0 || t > depth) throw ConfigError("backbone: tap layer out of range");
        bool has_cls_tap = false;
        for (int t : tap_layers) has_cls_tap = has_cls_tap || t == cls_tap;
        if (!has_cls_tap)
            throw ConfigError("backbone: cls_tap must be one of the tap layers");
    }

    int native_tokens_per_side() const { return native_window / patch; }
};

// Per-tap features of one multi-resolution encode.
template <class S>
struct MultiResFeaturesT {
    SliceLayout layout;
    int tokens_h = 0, tokens_w = 0;                       // per-view token grid
    std::map<int, TensorT<S>> global;                     // tap -> [L,D]
    std::map<int, std::vector<TensorT<S>>> slices;        // tap -> S x [L,D]
    TensorT<S> cls;                                       // [1,D] at cls_tap, global view

    int token_count() const { return tokens_h * tokens_w; }
};

template <class S>
class VitBackboneT {
public:
    VitBackboneT(ParameterStoreT<S>& store, BackboneConfig cfg) : store_(store), cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        int n = cfg_.native_tokens_per_side();
        int patch_in = 3 * cfg_.patch * cfg_.patch;
        store_.add("backbone/patch_w", randn<S>({patch_in, cfg_.dim}, rng, 0.02), true);
        store_.add("backbone/cls_token", randn<S>({1, cfg_.dim}, rng, 0.02), true);
        store_.add("backbone/pos", randn<S>({1 + n * n, cfg_.dim}, rng, 0.02), true);
        store_.add("backbone/ln_pre_g", TensorT<S>({cfg_.dim}, S(1)), true);
        store_.add("backbone/ln_pre_b", TensorT<S>({cfg_.dim}, S(0)), true);
        for (int b = 1; b <= cfg_.depth; ++b)
            VitBlock<S>::register_params(store_, block_prefix(b), cfg_.dim,
                                         cfg_.dim * cfg_.mlp_ratio, rng, true);
        store_.add("backbone/proj", randn<S>({cfg_.dim, cfg_.embed_dim}, rng, 0.02), true);
    }

    const BackboneConfig& config() const { return cfg_; }
    static std::string block_prefix(int layer) { return "backbone/blk" + std::to_string(layer); }

    // Frozen projection weights of block `layer`; the mask classifier reuses
    // the blocks after cls_tap for its cross-attention.
    std::string frozen_block(int layer) const {
        if (layer <= cfg_.cls_tap || layer > cfg_.depth)
            throw ContractError("frozen_block: layer " + std::to_string(layer) +
                                " not in (cls_tap, depth]");
        return block_prefix(layer);
    }

    std::vector<std::string> masked_attention_blocks() const {
        std::vector<std::string> out;
        for (int b = cfg_.cls_tap + 1; b <= cfg_.depth; ++b) out.push_back(frozen_block(b));
        return out;
    }

    // Linear map into the shared vision-language space (no bias).
    TensorT<S> visual_projection(const TensorT<S>& x) {
        return matmul(x, store_.at("backbone/proj"));
    }

    // Encodes one [3,H,W] view. Returns patch tokens per tap layer and the
    // CLS token at cls_tap.
    struct ViewEncoding {
        std::map<int, TensorT<S>> taps;  // tap -> [L,D]
        TensorT<S> cls;                  // [1,D]
        int tokens_h = 0, tokens_w = 0;
    };

    // `valid_hw`: pixel extent of real (unpadded) content, for the
    // mask_padding experiment; (0,0) or full size means no padding.
    ViewEncoding encode_view(const TensorT<S>& img, std::pair<int, int> valid_hw = {0, 0}) {
        if (img.rank() != 3 || img.dim(0) != 3)
            throw DimensionError("encode_view: expected [3,H,W], got " + shape_str(img.shape));
        if (img.dim(1) % cfg_.patch != 0 || img.dim(2) % cfg_.patch != 0)
            throw DimensionError("encode_view: image size " + shape_str(img.shape) +
                                 " not divisible by patch " + std::to_string(cfg_.patch));
        int gh = img.dim(1) / cfg_.patch, gw = img.dim(2) / cfg_.patch;
        int L = gh * gw;
        auto tokens = patch_embed(img, gh, gw);                      // [L,D]
        auto pos = positional_embedding(gh, gw);                     // [1+L,D]
        auto seq = concat<S>({store_.at("backbone/cls_token"), tokens}, 0);
        seq = add(seq, pos);
        seq = layer_norm(seq, store_.at("backbone/ln_pre_g"), store_.at("backbone/ln_pre_b"));

        TensorT<S> bias;
        bool use_bias = false;
        if (cfg_.mask_padding && valid_hw.first > 0 && valid_hw.second > 0 &&
            (valid_hw.first < img.dim(1) || valid_hw.second < img.dim(2))) {
            // additive key mask: a token is padded when its patch window lies
            // entirely in the zero-padded band
            bias = TensorT<S>({cfg_.heads, 1 + L, 1 + L}, S(0));
            for (int ty = 0; ty < gh; ++ty)
                for (int tx = 0; tx < gw; ++tx) {
                    bool padded = ty * cfg_.patch >= valid_hw.first ||
                                  tx * cfg_.patch >= valid_hw.second;
                    if (!padded) continue;
                    int key = 1 + ty * gw + tx;
                    for (int h = 0; h < cfg_.heads; ++h)
                        for (int q = 0; q < 1 + L; ++q)
                            bias[(static_cast<int64_t>(h) * (1 + L) + q) * (1 + L) + key] =
                                static_cast<S>(kMaskSentinel);
                }
            use_bias = true;
        }

        ViewEncoding out;
        out.tokens_h = gh;
        out.tokens_w = gw;
        std::set<int> taps(cfg_.tap_layers.begin(), cfg_.tap_layers.end());
        if (taps.count(0)) out.taps[0] = narrow(seq, 0, 1, L);
        for (int b = 1; b <= cfg_.depth; ++b) {
            seq = VitBlock<S>::forward(store_, block_prefix(b), seq, cfg_.heads,
                                       use_bias ? &bias : nullptr);
            if (taps.count(b)) out.taps[b] = narrow(seq, 0, 1, L);
            if (b == cfg_.cls_tap) out.cls = narrow(seq, 0, 0, 1);
        }
        return out;
    }

    // Runs the shared frozen encoder over the downsampled global view and
    // every slice; the CLS token comes from the global view at cls_tap
    // (per-slice CLS tokens are computed in-sequence but not exported).
    MultiResFeaturesT<S> encode_multires(const TensorT<S>& img, const SliceLayout& layout) {
        MultiResFeaturesT<S> out;
        out.layout = layout;
        auto global_img = downsample_pad(img, layout.window_h, layout.window_w);
        auto valid = downscaled_extent(img.dim(1), img.dim(2), layout.window_h, layout.window_w);
        auto g = encode_view(global_img, valid);
        out.tokens_h = g.tokens_h;
        out.tokens_w = g.tokens_w;
        for (auto& [tap, t] : g.taps) out.global[tap] = t;
        out.cls = g.cls;
        for (auto& slice : slice_image(img, layout)) {
            auto e = encode_view(slice);
            for (auto& [tap, t] : e.taps) out.slices[tap].push_back(t);
        }
        return out;
    }

private:
    // Non-overlapping patch unfold + linear embed: [L, 3*patch*patch] @ W.
    TensorT<S> patch_embed(const TensorT<S>& img, int gh, int gw) {
        int P = cfg_.patch;
        int H = img.dim(1), W = img.dim(2);
        TensorT<S> patches({gh * gw, 3 * P * P});
        const S* pi = img.ptr();
        S* pp = patches.ptr();
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px) {
                S* dst = pp + static_cast<int64_t>(py * gw + px) * 3 * P * P;
                for (int c = 0; c < 3; ++c)
                    for (int dy = 0; dy < P; ++dy)
                        for (int dx = 0; dx < P; ++dx)
                            dst[(c * P + dy) * P + dx] =
                                pi[(static_cast<int64_t>(c) * H + py * P + dy) * W + px * P + dx];
            }
        return matmul(patches, store_.at("backbone/patch_w"));
    }

    // Bilinear interpolation of the frozen positional grid when the view's
    // token grid differs from the native one; the CLS position is kept as is.
    TensorT<S> positional_embedding(int gh, int gw) {
        const auto& pos = store_.at("backbone/pos");
        int n = cfg_.native_tokens_per_side();
        if (gh == n && gw == n) return pos;
        auto cls_pos = narrow(pos, 0, 0, 1);
        auto grid = narrow(pos, 0, 1, n * n);                       // [n*n, D]
        auto chw = permute(reshape(grid, {n, n, cfg_.dim}), {2, 0, 1});
        auto resized = resize_bilinear(chw, gh, gw);
        auto back = reshape(permute(resized, {1, 2, 0}), {gh * gw, cfg_.dim});
        return concat<S>({cls_pos, back}, 0);
    }

    ParameterStoreT<S>& store_;
    BackboneConfig cfg_;
};

using VitBackbone = VitBackboneT<float>;

}  // namespace mrovseg
