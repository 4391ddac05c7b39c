#include <doctest.h>

#include "mrovseg/gradcheck.hpp"
#include "mrovseg/model.hpp"
#include "oracles.hpp"

using namespace mrovseg;

namespace {

BackboneConfig tiny_bb() {
    BackboneConfig cfg;
    cfg.patch = 16;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.depth = 3;
    cfg.tap_layers = {0, 1, 3};
    cfg.cls_tap = 1;
    cfg.native_window = 32;
    cfg.embed_dim = 6;
    cfg.seed = 31;
    return cfg;
}

}  // namespace

TEST_CASE("decode_attention_masks: zero MLPs give zero masks; Eq.8 reduces to unmasked") {
    auto bb = tiny_bb();
    ParameterStoreT<float> store;
    VitBackboneT<float> backbone(store, bb);
    MaskClassifierT<float> cls(store, {}, bb, /*query_dim=*/8, /*n_queries=*/2);
    for (const char* n : {"cls/mlp_local/w1", "cls/mlp_local/b1", "cls/mlp_local/w2",
                          "cls/mlp_local/b2", "cls/mlp_global/w1", "cls/mlp_global/b1",
                          "cls/mlp_global/w2", "cls/mlp_global/b2"}) {
        auto& t = store.at(n);
        std::fill(t.ptr(), t.ptr() + t.numel(), 0.0f);
    }
    Rng rng(1);
    auto H = randn<float>({4, 4, 8}, rng);
    auto qf = randn<float>({2, 8}, rng);
    auto dm = cls.decode_attention_masks(H, qf, 2, 2);
    for (int64_t i = 0; i < dm.local.numel(); ++i) CHECK(dm.local[i] == 0.0f);
    for (int64_t i = 0; i < dm.global.numel(); ++i) CHECK(dm.global[i] == 0.0f);

    // with zero masks the masked attention equals the same stack without bias
    auto tokens_lr = randn<float>({4, 8}, rng);
    auto tokens_hr = randn<float>({16, 8}, rng);
    auto x0 = randn<float>({2, 8}, rng);
    auto prefixes = backbone.masked_attention_blocks();
    auto out = cls.multigrained_masked_attention(x0, tokens_lr, tokens_hr, dm, prefixes);

    auto kv = concat<float>({tokens_lr, tokens_hr}, 0);
    auto ref = x0;
    for (const auto& p : prefixes) {
        auto qn = layer_norm(ref, store.at(p + "/ln1_g"), store.at(p + "/ln1_b"));
        auto kvn = layer_norm(kv, store.at(p + "/ln1_g"), store.at(p + "/ln1_b"));
        ref = add(ref, VitBlock<float>::attention(store, p, qn, kvn, bb.heads, nullptr));
        auto n2 = layer_norm(ref, store.at(p + "/ln2_g"), store.at(p + "/ln2_b"));
        ref = add(ref, VitBlock<float>::mlp(store, p, n2));
    }
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-6));
}

TEST_CASE("decode_attention_masks: constant grid gives masks constant over tokens") {
    auto bb = tiny_bb();
    ParameterStoreT<float> store;
    MaskClassifierT<float> cls(store, {}, bb, 8, 3);
    TensorT<float> H({4, 4, 8}, 0.31f);
    Rng rng(2);
    auto qf = randn<float>({3, 8}, rng);
    auto dm = cls.decode_attention_masks(H, qf, 2, 2);
    // every token cell sees the same value per (head, query)
    for (int h = 0; h < 2; ++h)
        for (int q = 0; q < 3; ++q) {
            float v0 = dm.local[(static_cast<int64_t>(h) * 3 + q) * 16];
            for (int t = 1; t < 16; ++t)
                CHECK(dm.local[(static_cast<int64_t>(h) * 3 + q) * 16 + t] == doctest::Approx(v0));
        }
}

TEST_CASE("decode_attention_masks matches an Eq.6-7 loop oracle") {
    auto bb = tiny_bb();
    ParameterStoreT<float> store;
    MaskClassifierT<float> cls(store, {}, bb, 8, 2);
    Rng rng(3);
    auto H = randn<float>({4, 4, 8}, rng);
    auto qf = randn<float>({2, 8}, rng);
    auto dm = cls.decode_attention_masks(H, qf, 2, 2);

    // oracle: A_local = MLP_L(H) rows, A_global = MLP_G(maxpool(H)) rows,
    // M[h,q,t] = dot(qf[q, h-slice], A[t, h-slice])
    auto mlp_ref = [&](const std::string& prefix, const std::vector<double>& x, int n) {
        auto w1 = oracle::to_vec(store.at(prefix + "/w1"));
        auto b1 = oracle::to_vec(store.at(prefix + "/b1"));
        auto w2 = oracle::to_vec(store.at(prefix + "/w2"));
        auto b2 = oracle::to_vec(store.at(prefix + "/b2"));
        auto h1 = oracle::linear_ref(x, n, 8, w1, 8, b1);
        for (double& v : h1) v = oracle::gelu_ref(v);
        return oracle::linear_ref(h1, n, 8, w2, 8, b2);
    };
    auto a_local = mlp_ref("cls/mlp_local", oracle::to_vec(reshape(H, {16, 8})), 16);
    // adaptive max pool 4x4 -> 2x2 with 2x2 windows
    std::vector<double> pooled(2 * 2 * 8, -1e30);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int d = 0; d < 8; ++d) {
                size_t dst = (static_cast<size_t>(y / 2) * 2 + (x / 2)) * 8 + d;
                pooled[dst] = std::max(pooled[dst], static_cast<double>(H[(y * 4 + x) * 8 + d]));
            }
    auto a_global = mlp_ref("cls/mlp_global", pooled, 4);
    int dh = 8 / 2;
    for (int h = 0; h < 2; ++h)
        for (int q = 0; q < 2; ++q) {
            for (int t = 0; t < 16; ++t) {
                double want = 0;
                for (int d = 0; d < dh; ++d)
                    want += qf[q * 8 + h * dh + d] * a_local[static_cast<size_t>(t) * 8 + h * dh + d];
                CHECK(std::fabs(dm.local[(static_cast<int64_t>(h) * 2 + q) * 16 + t] - want) < 1e-5);
            }
            for (int t = 0; t < 4; ++t) {
                double want = 0;
                for (int d = 0; d < dh; ++d)
                    want += qf[q * 8 + h * dh + d] * a_global[static_cast<size_t>(t) * 8 + h * dh + d];
                CHECK(std::fabs(dm.global[(static_cast<int64_t>(h) * 2 + q) * 4 + t] - want) < 1e-5);
            }
        }
}

TEST_CASE("multigrained masked attention matches the dense loop oracle") {
    for (int heads : {1, 2}) {
        for (int Lkeys : {3, 6}) {
            BackboneConfig bb = tiny_bb();
            bb.dim = 4 * heads;
            bb.heads = heads;
            ParameterStoreT<float> store;
            VitBackboneT<float> backbone(store, bb);
            MaskClassifierT<float> cls(store, {}, bb, bb.dim, 2);
            Rng rng(100 + heads * 10 + Lkeys);
            int N = 2, R = 2 * Lkeys;
            auto x0 = randn<float>({N, bb.dim}, rng);
            auto lr = randn<float>({Lkeys, bb.dim}, rng);
            auto hr = randn<float>({R, bb.dim}, rng);
            DecoupledMasksT<float> dm;
            dm.global = randn<float>({heads, N, Lkeys}, rng);
            dm.local = randn<float>({heads, N, R}, rng);
            auto prefixes = backbone.masked_attention_blocks();
            auto got = cls.multigrained_masked_attention(x0, lr, hr, dm, prefixes);

            auto kv = concat<float>({lr, hr}, 0);
            std::vector<double> bias;
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < N; ++i) {
                    for (int j = 0; j < Lkeys; ++j)
                        bias.push_back(dm.global[(static_cast<int64_t>(h) * N + i) * Lkeys + j]);
                    for (int j = 0; j < R; ++j)
                        bias.push_back(dm.local[(static_cast<int64_t>(h) * N + i) * R + j]);
                }
            std::vector<double> row_sums;
            auto want = oracle::masked_attention_reference(store, prefixes, oracle::to_vec(x0), N,
                                                           bb.dim, oracle::to_vec(kv), Lkeys + R,
                                                           bias, heads, &row_sums);
            for (int64_t i = 0; i < got.numel(); ++i)
                CHECK(std::fabs(got[i] - want[static_cast<size_t>(i)]) < 1e-5);
            for (double s : row_sums) CHECK(std::fabs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("masking limits: local fully masked equals attention over LR alone") {
    auto bb = tiny_bb();
    ParameterStoreT<float> store;
    VitBackboneT<float> backbone(store, bb);
    MaskClassifierT<float> cls(store, {}, bb, 8, 2);
    Rng rng(4);
    int N = 2, L = 4, R = 16;
    auto x0 = randn<float>({N, 8}, rng);
    auto lr = randn<float>({L, 8}, rng);
    auto hr = randn<float>({R, 8}, rng);
    DecoupledMasksT<float> dm;
    dm.global = TensorT<float>({bb.heads, N, L}, 0.0f);
    dm.local = TensorT<float>({bb.heads, N, R}, static_cast<float>(kMaskSentinel));
    auto prefixes = backbone.masked_attention_blocks();
    auto got = cls.multigrained_masked_attention(x0, lr, hr, dm, prefixes);

    // reference: same frozen stack with keys = LR only, no bias
    auto ref = x0;
    for (const auto& p : prefixes) {
        auto qn = layer_norm(ref, store.at(p + "/ln1_g"), store.at(p + "/ln1_b"));
        auto kvn = layer_norm(lr, store.at(p + "/ln1_g"), store.at(p + "/ln1_b"));
        ref = add(ref, VitBlock<float>::attention(store, p, qn, kvn, bb.heads, nullptr));
        auto n2 = layer_norm(ref, store.at(p + "/ln2_g"), store.at(p + "/ln2_b"));
        ref = add(ref, VitBlock<float>::mlp(store, p, n2));
    }
    for (int64_t i = 0; i < got.numel(); ++i)
        CHECK(std::fabs(got[i] - ref[i]) < 1e-6);
}

TEST_CASE("class logits: cosine self-similarity, orthogonality, scale invariance") {
    auto bb = tiny_bb();
    ParameterStoreT<float> store;
    VitBackboneT<float> backbone(store, bb);
    MaskClassifierT<float> cls(store, {}, bb, 8, 3);

    // identity-like projection for a controlled test: set proj = I (dim 8 -> 6 top rows)
    auto& proj = store.at("backbone/proj");
    std::fill(proj.ptr(), proj.ptr() + proj.numel(), 0.0f);
    for (int i = 0; i < 6; ++i) proj[i * 6 + i] = 1.0f;

    TensorT<float> text({3, 6}, 0.0f);
    text[0 * 6 + 0] = 1.0f;  // e0
    text[1 * 6 + 1] = 1.0f;  // e1
    text[2 * 6 + 2] = 1.0f;  // e2
    TensorT<float> prop({2, 8}, 0.0f);
    prop[0 * 8 + 1] = 2.0f;  // projects onto e1
    prop[1 * 8 + 2] = 0.5f;  // projects onto e2
    auto logits = cls.class_logits(prop, text);
    CHECK(logits.shape == std::vector<int>{2, 3});
    // argmax rows
    CHECK(logits[0 * 3 + 1] > logits[0 * 3 + 0]);
    CHECK(logits[0 * 3 + 1] > logits[0 * 3 + 2]);
    CHECK(logits[1 * 3 + 2] > logits[1 * 3 + 0]);
    // orthogonal -> zero cosine
    CHECK(logits[0 * 3 + 0] == doctest::Approx(0.0));
    // scaling the proposal leaves cosine logits unchanged
    auto prop3 = scale(prop, 3.0);
    auto logits3 = cls.class_logits(prop3, text);
    for (int64_t i = 0; i < logits.numel(); ++i)
        CHECK(logits3[i] == doctest::Approx(logits[i]).epsilon(1e-5));
}

TEST_CASE("compose_segmentation saturation and two-region exact map") {
    // single query, single class, saturated left half
    TensorT<float> c1({1, 1}, {5.0f});
    TensorT<float> m1({1, 2, 4}, static_cast<float>(-1e9));
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) m1[y * 4 + x] = 1e9f;
    auto out1 = compose_segmentation(c1, m1, false);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) CHECK(out1.label_map[static_cast<size_t>(y) * 4 + x] == 0);
    CHECK(out1.semantic_scores[0] == doctest::Approx(1.0));      // saturated on
    CHECK(out1.semantic_scores[3] == doctest::Approx(0.0));      // saturated off

    // two queries, disjoint saturated masks, one-hot classes
    TensorT<float> c2({2, 2}, {20.0f, -20.0f, -20.0f, 20.0f});
    TensorT<float> m2({2, 1, 4}, static_cast<float>(-1e9));
    m2[0 * 4 + 0] = 1e9f;
    m2[0 * 4 + 1] = 1e9f;
    m2[1 * 4 + 2] = 1e9f;
    m2[1 * 4 + 3] = 1e9f;
    auto out2 = compose_segmentation(c2, m2, false);
    CHECK(out2.label_map == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("compose_segmentation matches an Eq.-9 loop oracle on random input") {
    Rng rng(5);
    auto C = randn<float>({3, 4}, rng);
    auto M = randn<float>({3, 2, 2}, rng);
    auto out = compose_segmentation(C, M, false);
    // oracle: softmax rows of C, sigmoid of M, S[k,p] = sum_n probs[n,k]*mp[n,p]
    for (int k = 0; k < 4; ++k)
        for (int p = 0; p < 4; ++p) {
            double acc = 0;
            for (int n = 0; n < 3; ++n) {
                double mx = -1e30;
                for (int kk = 0; kk < 4; ++kk) mx = std::max(mx, static_cast<double>(C[n * 4 + kk]));
                double denom = 0;
                for (int kk = 0; kk < 4; ++kk) denom += std::exp(C[n * 4 + kk] - mx);
                double prob = std::exp(C[n * 4 + k] - mx) / denom;
                double mp = 1.0 / (1.0 + std::exp(-static_cast<double>(M[n * 4 + p])));
                acc += prob * mp;
            }
            CHECK(std::fabs(out.semantic_scores[k * 4 + p] - acc) < 1e-6);
        }
}

TEST_CASE("panoptic composition drops weak queries and resolves overlaps") {
    ClassifierConfig cc;
    cc.min_mask_area = 2;
    TensorT<float> c({2, 2}, {20.0f, -20.0f, -20.0f, 20.0f});
    TensorT<float> m({2, 2, 4}, static_cast<float>(-1e9));
    // query 0 covers columns 0..2 strongly; query 1 covers columns 2..3 weakly-overlapping
    for (int y = 0; y < 2; ++y) {
        m[(0 * 2 + y) * 4 + 0] = 1e9f;
        m[(0 * 2 + y) * 4 + 1] = 1e9f;
        m[(0 * 2 + y) * 4 + 2] = 1.0f;   // prob ~0.73
        m[(1 * 2 + y) * 4 + 2] = 3.0f;   // prob ~0.95 wins pixel 2
        m[(1 * 2 + y) * 4 + 3] = 1e9f;
    }
    auto out = compose_segmentation(c, m, true, cc);
    REQUIRE(out.panoptic_segments.size() == 2);
    // no overlapping pixels
    for (size_t i = 0; i < out.panoptic_segments[0].mask.size(); ++i)
        CHECK(out.panoptic_segments[0].mask[i] + out.panoptic_segments[1].mask[i] <= 1);
    CHECK(out.panoptic_segments[1].mask[2] == 1);  // pixel 2 resolved to query 1
}

TEST_CASE("condition_text is the identity at zero init and keeps unit rows") {
    auto bb = tiny_bb();
    ParameterStoreT<float> store;
    MaskClassifierT<float> cls(store, {}, bb, 8, 2);
    Rng rng(6);
    auto H = randn<float>({4, 4, 8}, rng);
    auto text = l2_normalize(randn<float>({3, 6}, rng));
    auto out = cls.condition_text(text, H, 2, 2);
    for (int64_t i = 0; i < out.numel(); ++i)
        CHECK(out[i] == doctest::Approx(text[i]).epsilon(1e-6));
    for (int r = 0; r < 3; ++r) {
        double n = 0;
        for (int j = 0; j < 6; ++j) n += out[r * 6 + j] * out[r * 6 + j];
        CHECK(std::fabs(std::sqrt(n) - 1.0) < 1e-6);
    }
}

TEST_CASE("condition_text gradient check (64-bit)") {
    auto bb = tiny_bb();
    ParameterStoreT<double> store;
    MaskClassifierT<double> cls(store, {}, bb, 8, 2);
    // move off the zero init so gradients are informative
    Rng rng(7);
    auto& wo = store.at("cls/txt_wo");
    auto wr = randn<double>({6, 6}, rng, 0.1);
    std::copy(wr.ptr(), wr.ptr() + wr.numel(), wo.ptr());
    auto H = randn<double>({4, 4, 8}, rng);
    auto text = l2_normalize(randn<double>({3, 6}, rng));
    GradCheckOptions opt;
    opt.max_coords_per_tensor = 8;
    auto rep = check_gradients("condition_text", store, [&] {
        auto out = cls.condition_text(text, H, 2, 2);
        Rng wrng(3);
        auto w = randn<double>(out.shape, wrng);
        return sum_all(mul(out, w));
    }, opt);
    INFO("max_rel_err=", rep.max_rel_err, " worst=", rep.worst_param);
    CHECK(rep.pass);
}

TEST_CASE("class_logits rejects an empty vocabulary shape") {
    auto bb = tiny_bb();
    ParameterStoreT<float> store;
    VitBackboneT<float> backbone(store, bb);
    MaskClassifierT<float> cls(store, {}, bb, 8, 2);
    TensorT<float> prop({2, 8}, 0.1f);
    TensorT<float> bad({4}, 0.0f);  // rank-1, no class rows
    CHECK_THROWS_AS(cls.class_logits(prop, bad), ContractError);
}
