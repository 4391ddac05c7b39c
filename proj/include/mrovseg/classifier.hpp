#pragma once

#include "mrovseg/adapter.hpp"
#include "mrovseg/backbone.hpp"
#include "mrovseg/metrics.hpp"

namespace mrovseg {

struct ClassifierConfig {
    double logit_scale_init = 1.0 / 0.07;  // CLIP-style temperature, stored as log
    double min_class_prob = 0.5;           // panoptic query filter
    int min_mask_area = 32;                // pixels
    uint64_t seed = 4;
};

template <class S>
struct DecoupledMasksT {
    TensorT<S> local;   // [heads, N, R] additive bias over the restored grid
    TensorT<S> global;  // [heads, N, L] additive bias over the low-res grid
};

struct QueryResult {
    int class_id = 0;
    double score = 0.0;
    int64_t area = 0;
};

template <class S>
struct SegmentationOutputT {
    TensorT<S> class_logits;     // C [N,K]
    TensorT<S> mask_logits;      // [N,h,w]
    TensorT<S> semantic_scores;  // [K,h,w] composed map
    std::vector<int> label_map;  // h*w per-pixel argmax
    int height = 0, width = 0;
    std::vector<QueryResult> queries;
    std::vector<Segment> panoptic_segments;  // populated in panoptic mode
};

// Masked cross-attention over a pre-norm block stack: queries from `x`, keys
// and values from the fixed token stream, additive per-head bias inside the
// softmax, residual adds, and the block MLP after each attention.
template <class S>
TensorT<S> masked_cross_attention_stack(ParameterStoreT<S>& store,
                                        const std::vector<std::string>& block_prefixes, int heads,
                                        TensorT<S> x, const TensorT<S>& kv,
                                        const TensorT<S>& bias) {
    for (const auto& prefix : block_prefixes) {
        auto qn = layer_norm(x, store.at(prefix + "/ln1_g"), store.at(prefix + "/ln1_b"));
        auto kvn = layer_norm(kv, store.at(prefix + "/ln1_g"), store.at(prefix + "/ln1_b"));
        x = add(x, VitBlock<S>::attention(store, prefix, qn, kvn, heads, &bias));
        auto n2 = layer_norm(x, store.at(prefix + "/ln2_g"), store.at(prefix + "/ln2_b"));
        x = add(x, VitBlock<S>::mlp(store, prefix, n2));
    }
    return x;
}

// Mask classification: proposal tokens from the duplicated CLS, decoupled
// local/global attention-mask decoding, masked cross-attention through frozen
// backbone blocks, cosine class logits against text embeddings, and final
// map composition.
template <class S>
class MaskClassifierT {
public:
    MaskClassifierT(ParameterStoreT<S>& store, ClassifierConfig cfg, const BackboneConfig& bb,
                    int query_dim, int n_queries)
        : store_(store), cfg_(cfg), bb_(bb), qdim_(query_dim), n_queries_(n_queries) {
        if (qdim_ % bb_.heads != 0)
            throw ConfigError("classifier: query dim must split across backbone heads");
        if (n_queries_ < 1) throw ConfigError("classifier: need at least one query");
        Rng rng(cfg_.seed);
        store_.add("cls/prop_pos", randn<S>({n_queries_, bb_.dim}, rng, 0.02));
        Mlp2<S>::register_params(store_, "cls/mlp_local", qdim_, qdim_, qdim_, rng);
        Mlp2<S>::register_params(store_, "cls/mlp_global", qdim_, qdim_, qdim_, rng);
        store_.add("cls/logit_scale",
                   TensorT<S>({1}, static_cast<S>(std::log(cfg_.logit_scale_init))));
        store_.add("cls/no_object", TensorT<S>({1}, S(0)));
        int E = bb_.embed_dim;
        store_.add("cls/txt_wq", randn<S>({E, E}, rng, 0.02));
        store_.add("cls/txt_wk", randn<S>({qdim_, E}, rng, 0.02));
        store_.add("cls/txt_wv", randn<S>({qdim_, E}, rng, 0.02));
        store_.add("cls/txt_wo", TensorT<S>({E, E}, S(0)));  // zero init: identity at start
    }

    // X_prop: CLS duplicated N times plus the learnable positional embedding
    // (added once, at initialization).
    TensorT<S> make_prop_tokens(const TensorT<S>& cls) {
        if (cls.rank() != 2 || cls.dim(0) != 1 || cls.dim(1) != bb_.dim)
            throw DimensionError("make_prop_tokens: expected CLS [1," + std::to_string(bb_.dim) +
                                 "], got " + shape_str(cls.shape));
        return add(store_.at("cls/prop_pos"), cls);  // [N,D] + [1,D] broadcast
    }

    // Eq. 6-7: A_local from the full visual grid, A_global from its
    // max-pooled low-res view; per-head inner products with Q_f give the
    // additive attention masks.
    DecoupledMasksT<S> decode_attention_masks(const TensorT<S>& visual_grid,
                                              const TensorT<S>& query_features, int low_h,
                                              int low_w) {
        int Th = visual_grid.dim(0), Tw = visual_grid.dim(1);
        int R = Th * Tw, L = low_h * low_w, N = query_features.dim(0);
        auto flat = reshape(visual_grid, {R, qdim_});
        auto a_local = Mlp2<S>::forward(store_, "cls/mlp_local", flat);  // [R,D']
        auto pooled = adaptive_max_pool2d(permute(visual_grid, {2, 0, 1}), low_h, low_w);
        auto pooled_flat = reshape(permute(pooled, {1, 2, 0}), {L, qdim_});
        auto a_global = Mlp2<S>::forward(store_, "cls/mlp_global", pooled_flat);  // [L,D']

        int heads = bb_.heads, dh = qdim_ / heads;
        auto split = [&](const TensorT<S>& x, int n) {
            return permute(reshape(x, {n, heads, dh}), {1, 0, 2});
        };
        auto qf = split(query_features, N);
        DecoupledMasksT<S> out;
        out.local = matmul(qf, transpose(split(a_local, R)));    // [heads,N,R]
        out.global = matmul(qf, transpose(split(a_global, L)));  // [heads,N,L]
        return out;
    }

    // Eq. 8 / the masked-attention pseudocode: frozen blocks after cls_tap
    // run as cross-attention from X_prop onto the fixed concatenated
    // [low-res; high-res] token stream; the decoupled masks enter the softmax
    // as additive per-head biases, constant across layers. The frozen MLP
    // sublayer applies after each attention (full block reuse).
    TensorT<S> multigrained_masked_attention(const TensorT<S>& prop_tokens,
                                             const TensorT<S>& tokens_lr,
                                             const TensorT<S>& tokens_hr,
                                             const DecoupledMasksT<S>& masks,
                                             const std::vector<std::string>& block_prefixes) {
        int L = tokens_lr.dim(0), R = tokens_hr.dim(0);
        if (masks.global.dim(2) != L || masks.local.dim(2) != R)
            throw DimensionError("masked attention: mask key axes [" +
                                 std::to_string(masks.global.dim(2)) + "," +
                                 std::to_string(masks.local.dim(2)) + "] do not match tokens [" +
                                 std::to_string(L) + "," + std::to_string(R) + "]");
        auto kv = concat<S>({tokens_lr, tokens_hr}, 0);          // [L+R, D]
        auto bias = concat<S>({masks.global, masks.local}, 2);   // [heads, N, L+R]
        return masked_cross_attention_stack(store_, block_prefixes, bb_.heads, prop_tokens, kv,
                                            bias);
    }

    // Cosine similarity in the shared space, scaled by the learned
    // temperature. Text embeddings are expected row-normalized.
    TensorT<S> class_logits(const TensorT<S>& prop_tokens, const TensorT<S>& text_embeds) {
        if (text_embeds.rank() != 2 || text_embeds.dim(0) < 1)
            throw ContractError("class_logits: empty vocabulary");
        auto v = l2_normalize(matmul(prop_tokens, store_.at("backbone/proj")));
        auto sims = matmul(v, transpose(text_embeds));
        return mul(sims, exp_op(store_.at("cls/logit_scale")));
    }

    // One trainable cross-attention layer conditioning the text embeddings on
    // max-pooled visual features; zero-initialized output projection makes it
    // the identity at the start of training. Rows are re-normalized.
    TensorT<S> condition_text(const TensorT<S>& text_ori, const TensorT<S>& visual_grid, int low_h,
                              int low_w) {
        int E = bb_.embed_dim;
        auto pooled = adaptive_max_pool2d(permute(visual_grid, {2, 0, 1}), low_h, low_w);
        auto keys = reshape(permute(pooled, {1, 2, 0}), {low_h * low_w, qdim_});
        auto q = matmul(text_ori, store_.at("cls/txt_wq"));
        auto k = matmul(keys, store_.at("cls/txt_wk"));
        auto v = matmul(keys, store_.at("cls/txt_wv"));
        auto attn = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(E))), -1);
        auto ctx = matmul(matmul(attn, v), store_.at("cls/txt_wo"));
        return l2_normalize(add(text_ori, ctx));
    }

    // Training logits with the appended no-object column (index K).
    TensorT<S> logits_with_no_object(const TensorT<S>& logits) {
        int N = logits.dim(0);
        auto col = mul(TensorT<S>({N, 1}, S(1)), store_.at("cls/no_object"));
        return concat<S>({logits, col}, 1);
    }

private:
    ParameterStoreT<S>& store_;
    ClassifierConfig cfg_;
    BackboneConfig bb_;
    int qdim_;
    int n_queries_;
};

// Eq. 9 composition. Semantic mode: S[k] = sum_n softmax(C)[n,k] *
// sigmoid(M)[n]; the label map is the per-pixel argmax. Panoptic mode drops
// weak queries and resolves overlaps by the highest per-pixel query score.
// When `real_classes` is set, the logits carry trailing auxiliary columns
// (the no-object class): the softmax runs over all columns and only the
// leading real-class probabilities enter the map, which suppresses
// no-object queries.
template <class S>
SegmentationOutputT<S> compose_segmentation(const TensorT<S>& class_logits,
                                            const TensorT<S>& mask_logits, bool panoptic,
                                            const ClassifierConfig& cfg = {},
                                            int real_classes = -1) {
    if (class_logits.rank() != 2 || mask_logits.rank() != 3 ||
        class_logits.dim(0) != mask_logits.dim(0))
        throw DimensionError("compose_segmentation: expected [N,K] and [N,h,w]");
    int N = class_logits.dim(0), K_cols = class_logits.dim(1);
    int K = (real_classes > 0 && real_classes < K_cols) ? real_classes : K_cols;
    int h = mask_logits.dim(1), w = mask_logits.dim(2);
    SegmentationOutputT<S> out;
    out.class_logits = class_logits;
    out.mask_logits = mask_logits;
    out.height = h;
    out.width = w;

    auto probs_full = softmax(class_logits, 1);            // [N,K_cols]
    auto probs = K == K_cols ? probs_full : narrow(probs_full, 1, 0, K);
    auto mp = sigmoid(mask_logits);                        // [N,h,w]
    auto mp_flat = reshape(mp, {N, h * w});
    out.semantic_scores = reshape(matmul(transpose(probs), mp_flat), {K, h, w});

    out.label_map.assign(static_cast<size_t>(h) * w, 0);
    for (int64_t pix = 0; pix < static_cast<int64_t>(h) * w; ++pix) {
        S best = out.semantic_scores[pix];
        int best_k = 0;
        for (int k = 1; k < K; ++k) {
            S v = out.semantic_scores[static_cast<int64_t>(k) * h * w + pix];
            if (v > best) {
                best = v;
                best_k = k;
            }
        }
        out.label_map[static_cast<size_t>(pix)] = best_k;
    }

    out.queries.reserve(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n) {
        QueryResult q;
        q.class_id = 0;
        double best = probs[static_cast<int64_t>(n) * K];
        for (int k = 1; k < K; ++k)
            if (probs[static_cast<int64_t>(n) * K + k] > best) {
                best = probs[static_cast<int64_t>(n) * K + k];
                q.class_id = k;
            }
        q.score = best;
        for (int64_t pix = 0; pix < static_cast<int64_t>(h) * w; ++pix)
            if (mp[static_cast<int64_t>(n) * h * w + pix] > S(0.5)) ++q.area;
        out.queries.push_back(q);
    }

    if (panoptic) {
        std::vector<int> owner(static_cast<size_t>(h) * w, -1);
        std::vector<double> best_score(static_cast<size_t>(h) * w, 0.0);
        for (int n = 0; n < N; ++n) {
            const auto& q = out.queries[static_cast<size_t>(n)];
            if (q.score < cfg.min_class_prob || q.area < cfg.min_mask_area) continue;
            for (int64_t pix = 0; pix < static_cast<int64_t>(h) * w; ++pix) {
                double mprob = mp[static_cast<int64_t>(n) * h * w + pix];
                if (mprob <= 0.5) continue;
                double score = q.score * mprob;
                if (score > best_score[static_cast<size_t>(pix)]) {
                    best_score[static_cast<size_t>(pix)] = score;
                    owner[static_cast<size_t>(pix)] = n;
                }
            }
        }
        for (int n = 0; n < N; ++n) {
            Segment seg;
            seg.class_id = out.queries[static_cast<size_t>(n)].class_id;
            seg.mask.assign(static_cast<size_t>(h) * w, 0);
            int64_t area = 0;
            for (size_t pix = 0; pix < owner.size(); ++pix)
                if (owner[pix] == n) {
                    seg.mask[pix] = 1;
                    ++area;
                }
            if (area > 0) out.panoptic_segments.push_back(std::move(seg));
        }
    }
    return out;
}

using MaskClassifier = MaskClassifierT<float>;

}  // namespace mrovseg
