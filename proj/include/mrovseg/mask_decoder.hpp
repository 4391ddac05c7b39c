#pragma once

#include "mrovseg/adapter.hpp"
#include "mrovseg/conv_ops.hpp"

namespace mrovseg {

struct DecoderConfig {
    int ladder = 3;           // concat+transposed-conv steps; masks at grid * 2^ladder
    int pyramid_width = 256;  // 1x1 reconciliation width for pyramid levels
    int decoder_width = 256;
    int pix_hidden = 256;     // hidden width of the pixel MLP; output width = query dim
    uint64_t seed = 3;
};

template <class S>
struct MaskPredictionT {
    TensorT<S> mask_logits;  // [N, H_out, W_out]; sigmoid deferred
    TensorT<S> pixel_features;  // H_pix [H_out*W_out, d_q]
    int height = 0, width = 0;
};

// Hierarchical mask decoding: pyramid levels from the fused features are
// concatenated with the visual grid channel-wise and upsampled by 2x
// transposed convolutions; a pixel MLP maps into query space and masks are
// the per-pixel inner product with Q_f.
template <class S>
class MaskDecoderT {
public:
    MaskDecoderT(ParameterStoreT<S>& store, DecoderConfig cfg, int query_dim)
        : store_(store), cfg_(cfg), dim_(query_dim) {
        if (cfg_.ladder < 1) throw ConfigError("decoder: ladder must be >= 1");
        Rng rng(cfg_.seed);
        for (int j = 0; j < cfg_.ladder; ++j) {
            store_.add("decoder/pyr" + std::to_string(j) + "_pw",
                       randn<S>({cfg_.pyramid_width, dim_}, rng, 0.02));
            int in_ch = (j == 0 ? dim_ : cfg_.decoder_width) + cfg_.pyramid_width;
            store_.add("decoder/tconv" + std::to_string(j),
                       randn<S>({in_ch, cfg_.decoder_width, 2, 2}, rng, 0.02));
        }
        Mlp2<S>::register_params(store_, "decoder/pix", cfg_.decoder_width, cfg_.pix_hidden, dim_,
                                 rng);
    }

    const DecoderConfig& config() const { return cfg_; }

    // Channel-first pyramid levels sized to match each ladder step:
    // level j covers base * 2^j per side (at the default 640^2 / p=0.5
    // geometry this is the fused grid upsampled by {2,4,8}). Fewer fused
    // features than ladder steps reuse the last one.
    std::vector<TensorT<S>> build_pyramid(const std::vector<FusedFeatureT<S>>& fused, int base_h,
                                          int base_w) {
        if (fused.empty()) throw ContractError("build_pyramid: no fused features");
        std::vector<TensorT<S>> levels;
        for (int j = 0; j < cfg_.ladder; ++j) {
            const auto& f = fused[static_cast<size_t>(std::min<int>(j, static_cast<int>(fused.size()) - 1))];
            auto cf = permute(f.feature, {2, 0, 1});  // [dim,h,w]
            auto mixed = pointwise_conv2d(cf, store_.at("decoder/pyr" + std::to_string(j) + "_pw"));
            levels.push_back(resize_bilinear(mixed, base_h << j, base_w << j));
        }
        return levels;
    }

    MaskPredictionT<S> decode(const TensorT<S>& visual_grid, const std::vector<TensorT<S>>& pyramid,
                              const TensorT<S>& query_features) {
        if (visual_grid.rank() != 3 || visual_grid.dim(2) != dim_)
            throw DimensionError("decode: visual grid " + shape_str(visual_grid.shape) +
                                 " does not match decoder dim " + std::to_string(dim_));
        if (static_cast<int>(pyramid.size()) != cfg_.ladder)
            throw DimensionError("decode: expected " + std::to_string(cfg_.ladder) +
                                 " pyramid levels");
        auto cur = permute(visual_grid, {2, 0, 1});  // [dim,Th,Tw]
        for (int j = 0; j < cfg_.ladder; ++j) {
            const auto& lvl = pyramid[static_cast<size_t>(j)];
            if (lvl.dim(1) != cur.dim(1) || lvl.dim(2) != cur.dim(2))
                throw DimensionError("decode: pyramid level " + std::to_string(j) + " is " +
                                     shape_str(lvl.shape) + ", current grid is " +
                                     shape_str(cur.shape));
            auto cat = concat<S>({cur, lvl}, 0);
            cur = transposed_conv2d(cat, store_.at("decoder/tconv" + std::to_string(j)), 2);
        }
        int H = cur.dim(1), W = cur.dim(2);
        auto flat = reshape(permute(cur, {1, 2, 0}), {H * W, cfg_.decoder_width});
        auto pix = Mlp2<S>::forward(store_, "decoder/pix", flat);  // [HW, dim]
        auto masks = matmul(query_features, transpose(pix));       // [N, HW]
        MaskPredictionT<S> out;
        out.height = H;
        out.width = W;
        out.pixel_features = pix;
        out.mask_logits = reshape(masks, {query_features.dim(0), H, W});
        return out;
    }

private:
    ParameterStoreT<S>& store_;
    DecoderConfig cfg_;
    int dim_;
};

// Eq.-level helper: raw mask logits to [0,1] probabilities.
template <class S>
TensorT<S> masks_to_probability(const TensorT<S>& mask_logits) {
    return sigmoid(mask_logits);
}

using MaskDecoder = MaskDecoderT<float>;

}  // namespace mrovseg
