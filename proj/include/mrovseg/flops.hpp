#pragma once

#include <json.hpp>

#include "mrovseg/classifier.hpp"
#include "mrovseg/model.hpp"

namespace mrovseg {

// Multiply-accumulate accounting. Only contractions count (matmul and conv
// kernels); normalizations, softmax and elementwise work are excluded, which
// matches what the runtime counter in the kernels measures.

struct MaskedAttentionMacs {
    uint64_t q_proj = 0, kv_proj = 0, scores = 0, values = 0, out_proj = 0, mlp = 0;
    uint64_t total() const { return q_proj + kv_proj + scores + values + out_proj + mlp; }
};

// Closed form for ONE masked cross-attention layer over `keys` tokens:
//   N*D^2 (Q) + 2*keys*D^2 (K,V) + N*keys*D (scores) + N*keys*D (values)
//   + N*D^2 (out) + 2*N*D*hidden (block MLP)
inline MaskedAttentionMacs masked_attention_layer_macs(int n_queries, int keys, int dim,
                                                       int mlp_hidden) {
    MaskedAttentionMacs m;
    uint64_t N = static_cast<uint64_t>(n_queries), K = static_cast<uint64_t>(keys);
    uint64_t D = static_cast<uint64_t>(dim), H = static_cast<uint64_t>(mlp_hidden);
    m.q_proj = N * D * D;
    m.kv_proj = 2 * K * D * D;
    m.scores = N * K * D;
    m.values = N * K * D;
    m.out_proj = N * D * D;
    m.mlp = 2 * N * D * H;
    return m;
}

// Runs the production masked-attention stack (one frozen block) on random
// inputs with the MAC counter enabled.
inline uint64_t measure_masked_attention_macs(int n_queries, int low_tokens, int high_tokens,
                                              int dim, int heads, int mlp_ratio, uint64_t seed) {
    ParameterStoreT<float> store;
    Rng rng(seed);
    VitBlock<float>::register_params(store, "probe/blk", dim, dim * mlp_ratio, rng, true);
    auto x = randn<float>({n_queries, dim}, rng);
    auto kv = randn<float>({low_tokens + high_tokens, dim}, rng);
    auto bias = randn<float>({heads, n_queries, low_tokens + high_tokens}, rng);
    auto& counter = MacCounter::tls();
    counter.reset();
    {
        MacScope scope;
        (void)masked_cross_attention_stack<float>(store, {"probe/blk"}, heads, x, kv, bias);
    }
    return counter.macs;
}

struct PipelineMacs {
    uint64_t backbone_per_view = 0;
    int views = 0;
    uint64_t backbone_total = 0;
    uint64_t adapter_blocks = 0;
    uint64_t mrf = 0;
    uint64_t query_proj = 0;
    uint64_t decoder = 0;
    uint64_t attention_mask_decode = 0;
    uint64_t masked_attention = 0;
    uint64_t classification = 0;
    uint64_t text_conditioning = 0;
    uint64_t total() const {
        return backbone_total + adapter_blocks + mrf + query_proj + decoder +
               attention_mask_decode + masked_attention + classification + text_conditioning;
    }
};

namespace flops_detail {

inline uint64_t vit_block_macs(int tokens, int dim, int hidden) {
    uint64_t T = static_cast<uint64_t>(tokens), D = static_cast<uint64_t>(dim);
    uint64_t H = static_cast<uint64_t>(hidden);
    return 4 * T * D * D      // q,k,v,out projections
           + 2 * T * T * D    // scores + values across heads
           + 2 * T * D * H;   // mlp
}

}  // namespace flops_detail

// Analytic inference cost for one image at crop ratio p. p == 0 models the
// single-resolution baseline: only the global view at the native window, no
// slice branch, no high-resolution key stream.
inline PipelineMacs analytic_pipeline_macs(const RunConfig& cfg, double p, int n_classes) {
    PipelineMacs out;
    const auto& bb = cfg.backbone;
    int window = (p == 0.0) ? bb.native_window
                            : static_cast<int>(std::lround(p * cfg.image_hw));
    int slices;
    int grid_tokens;
    if (p == 0.0) {
        slices = 0;
        grid_tokens = window / bb.patch;  // the "restored" grid is the global grid
    } else {
        auto lo = plan_layout(cfg.image_hw, cfg.image_hw, p, bb.patch);
        slices = lo.slices();
        grid_tokens = lo.grid_tokens_h();
    }
    int lt = window / bb.patch;  // per-view tokens per side
    int L = lt * lt;
    int T = L + 1;  // with CLS
    int R = grid_tokens * grid_tokens;
    int hidden_bb = bb.dim * bb.mlp_ratio;

    out.backbone_per_view = static_cast<uint64_t>(L) * (3 * bb.patch * bb.patch) * bb.dim;
    for (int b = 0; b < bb.depth; ++b)
        out.backbone_per_view += flops_detail::vit_block_macs(T, bb.dim, hidden_bb);
    out.views = slices + 1;
    out.backbone_total = out.backbone_per_view * static_cast<uint64_t>(out.views);

    const auto& ad = cfg.adapter;
    int stream = ad.queries + std::max(1, slices) * L;  // p=0: queries + global tokens
    int hidden_ad = ad.dim * ad.mlp_ratio;
    for (int b = 0; b < ad.blocks; ++b)
        out.adapter_blocks += flops_detail::vit_block_macs(stream, ad.dim, hidden_ad);
    if (bb.dim != ad.dim)
        out.adapter_blocks +=
            static_cast<uint64_t>(std::max(1, slices)) * L * bb.dim * ad.dim;  // entry projection
    if (p > 0.0) {
        uint64_t cells = static_cast<uint64_t>(R);
        uint64_t per_layer = cells * bb.dim * 9 * 2                      // two depthwise 3x3
                             + cells * bb.dim * ad.dim * 2;              // two pointwise mixes
        out.mrf = per_layer * static_cast<uint64_t>(ad.fusion_layers.size());
    }
    out.query_proj = 2ULL * ad.queries * ad.dim * ad.dim;

    const auto& dc = cfg.decoder;
    int base = grid_tokens;
    for (int j = 0; j < dc.ladder; ++j) {
        int fh = (p > 0.0) ? lt : grid_tokens;  // fused features live on the low-res grid
        out.decoder += static_cast<uint64_t>(dc.pyramid_width) * ad.dim * fh * fh;  // 1x1 mix
        int in_ch = (j == 0 ? ad.dim : dc.decoder_width) + dc.pyramid_width;
        uint64_t hw = static_cast<uint64_t>(base << j) * static_cast<uint64_t>(base << j);
        out.decoder += static_cast<uint64_t>(in_ch) * dc.decoder_width * 4 * hw;  // 2x2 tconv
    }
    uint64_t hw_out = static_cast<uint64_t>(base << dc.ladder) * static_cast<uint64_t>(base << dc.ladder);
    out.decoder += hw_out * (static_cast<uint64_t>(dc.decoder_width) * dc.pix_hidden +
                             static_cast<uint64_t>(dc.pix_hidden) * ad.dim);
    out.decoder += static_cast<uint64_t>(ad.queries) * ad.dim * hw_out;  // Eq. 5 inner product

    // attention-mask decoding: two 2-layer MLPs + per-head inner products
    out.attention_mask_decode = 2ULL * R * ad.dim * ad.dim + 2ULL * L * ad.dim * ad.dim +
                                static_cast<uint64_t>(ad.queries) * ad.dim * (R + L);

    int attn_layers = bb.depth - bb.cls_tap;
    int keys = (p == 0.0) ? L : (L + R);
    out.masked_attention =
        masked_attention_layer_macs(ad.queries, keys, bb.dim, hidden_bb).total() *
        static_cast<uint64_t>(attn_layers);

    out.classification = static_cast<uint64_t>(ad.queries) * bb.dim * bb.embed_dim +
                         static_cast<uint64_t>(ad.queries) * bb.embed_dim * n_classes;
    uint64_t E = static_cast<uint64_t>(bb.embed_dim), K = static_cast<uint64_t>(n_classes);
    out.text_conditioning = K * E * E                       // query proj
                            + 2ULL * L * ad.dim * E        // key/value proj
                            + 2ULL * K * L * E             // scores + values
                            + K * E * E;                   // out proj
    return out;
}

inline nlohmann::json pipeline_macs_json(const PipelineMacs& m) {
    return {{"backbone_per_view", m.backbone_per_view},
            {"views", m.views},
            {"backbone_total", m.backbone_total},
            {"adapter_blocks", m.adapter_blocks},
            {"mrf", m.mrf},
            {"query_projection", m.query_proj},
            {"mask_decoder", m.decoder},
            {"attention_mask_decode", m.attention_mask_decode},
            {"masked_attention", m.masked_attention},
            {"classification", m.classification},
            {"text_conditioning", m.text_conditioning},
            {"total", m.total()}};
}

}  // namespace mrovseg
