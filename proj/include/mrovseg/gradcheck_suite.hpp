#pragma once

#include "mrovseg/adapter.hpp"
#include "mrovseg/classifier.hpp"
#include "mrovseg/gradcheck.hpp"
#include "mrovseg/losses.hpp"
#include "mrovseg/mask_decoder.hpp"
#include "mrovseg/model.hpp"

namespace mrovseg {

// Finite-difference verification of every differentiable operation and each
// composite module, in double precision. `flip_softmax_grad` negates the
// analytic softmax gradient before comparison; it exists to demonstrate that
// the suite catches a broken gradient.
inline std::vector<GradCheckReport> run_gradcheck_suite(int n_seeds = 5,
                                                        bool flip_softmax_grad = false) {
    std::vector<GradCheckReport> reports;
    GradCheckOptions opt;

    auto weighted = [](const TensorT<double>& x, uint64_t seed) {
        Rng rng(seed);
        auto w = randn<double>(x.shape, rng);
        return sum_all(mul(x, w));
    };

    for (int si = 0; si < n_seeds; ++si) {
        uint64_t seed = 1000 + static_cast<uint64_t>(si);
        opt.seed = seed;
        Rng rng(seed);

        {  // elementwise / matmul / normalization ops
            ParameterStoreT<double> store;
            auto& a = store.add("a", randn<double>({3, 4}, rng));
            auto& b = store.add("b", randn<double>({4, 5}, rng));
            auto& bias = store.add("bias", randn<double>({4}, rng));
            auto& d = store.add("d", rand_uniform<double>({3, 4}, rng, 0.7, 1.9));
            auto& g = store.add("g", rand_uniform<double>({4}, rng, 0.5, 1.5));
            auto& be = store.add("be", randn<double>({4}, rng));

            auto named = [&](const std::string& n, std::function<TensorT<double>()> f) {
                reports.push_back(check_gradients(n + "#" + std::to_string(si), store, f, opt));
            };
            named("add", [&] { return weighted(add(a, bias), seed); });
            named("sub", [&] { return weighted(sub(a, bias), seed); });
            named("mul", [&] { return weighted(mul(a, d), seed); });
            named("div", [&] { return weighted(divide(a, d), seed); });
            named("matmul", [&] { return weighted(matmul(a, b), seed); });
            named("sigmoid", [&] { return weighted(sigmoid(a), seed); });
            named("gelu", [&] { return weighted(gelu(a), seed); });
            named("exp", [&] { return weighted(exp_op(scale(a, 0.4)), seed); });
            named("layer_norm", [&] { return weighted(layer_norm(a, g, be), seed); });
            named("l2_normalize", [&] { return weighted(l2_normalize(a), seed); });
            named("log_softmax", [&] { return weighted(log_softmax(a, 1), seed); });
            reports.push_back(check_gradients(
                "softmax#" + std::to_string(si), store,
                [&] { return weighted(softmax(a, 1), seed); }, opt,
                flip_softmax_grad ? -1.0 : 1.0));
        }
        {  // spatial ops
            ParameterStoreT<double> store;
            auto& x = store.add("x", randn<double>({2, 6, 5}, rng));
            auto& kd = store.add("kd", randn<double>({2, 3, 3}, rng));
            auto& kp = store.add("kp", randn<double>({3, 2}, rng));
            auto& kt = store.add("kt", randn<double>({2, 3, 2, 2}, rng));
            auto named = [&](const std::string& n, std::function<TensorT<double>()> f) {
                reports.push_back(check_gradients(n + "#" + std::to_string(si), store, f, opt));
            };
            named("depthwise_conv2d", [&] { return weighted(depthwise_conv2d(x, kd, 1, 1), seed); });
            named("pointwise_conv2d", [&] { return weighted(pointwise_conv2d(x, kp), seed); });
            named("transposed_conv2d", [&] { return weighted(transposed_conv2d(x, kt, 2), seed); });
            named("max_pool2d", [&] { return weighted(max_pool2d(x, 2, 2, 2, 2), seed); });
            named("adaptive_avg_pool2d",
                  [&] { return weighted(adaptive_avg_pool2d(x, 3, 2), seed); });
            named("resize_bilinear", [&] { return weighted(resize_bilinear(x, 9, 7), seed); });
        }

        // composite modules at tiny dims
        RunConfig cfg;
        cfg.image_hw = 64;
        cfg.p = 0.5;
        cfg.backbone.patch = 16;
        cfg.backbone.dim = 16;
        cfg.backbone.heads = 2;
        cfg.backbone.depth = 2;
        cfg.backbone.tap_layers = {0, 1, 2};
        cfg.backbone.cls_tap = 1;
        cfg.backbone.native_window = 32;
        cfg.backbone.embed_dim = 8;
        cfg.adapter.dim = 16;
        cfg.adapter.heads = 2;
        cfg.adapter.blocks = 1;
        cfg.adapter.queries = 2;
        cfg.adapter.fusion_layers = {0, 2};
        cfg.decoder.pyramid_width = 8;
        cfg.decoder.decoder_width = 8;
        cfg.decoder.pix_hidden = 8;
        cfg.seed = seed;
        cfg.derive_seeds();
        auto lo = cfg.layout();
        int L = lo.slice_tokens();
        int D = cfg.backbone.dim;
        GradCheckOptions copt = opt;
        copt.max_coords_per_tensor = 5;

        // the MRF pointwise mixes are zero-initialized; randomize them so the
        // checked gradients are informative
        auto randomize_mrf = [&rng](ParameterStoreT<double>& store, const AdapterConfig& acfg) {
            for (int tap : acfg.fusion_layers)
                for (const char* suffix : {"/pw", "/fa_pw", "/fa_b"}) {
                    auto& t = store.at(MultiResAdapterT<double>::mrf_prefix(tap) + suffix);
                    auto r = randn<double>(t.shape, rng, 0.3);
                    std::copy(r.ptr(), r.ptr() + r.numel(), t.ptr());
                }
        };

        {  // MRF fusion
            ParameterStoreT<double> store;
            MultiResAdapterT<double> adapter(store, cfg.adapter, cfg.backbone);
            randomize_mrf(store, cfg.adapter);
            std::vector<TensorT<double>> slices;
            for (int s = 0; s < lo.slices(); ++s) slices.push_back(randn<double>({L, D}, rng));
            auto global = randn<double>({L, D}, rng);
            reports.push_back(check_gradients(
                "mrf_fuse#" + std::to_string(si), store,
                [&] {
                    auto f = adapter.mrf_fuse(slices, global, lo, 0, lo.slice_tokens_h(),
                                              lo.slice_tokens_w());
                    return weighted(f.feature, seed);
                },
                copt));
        }
        {  // adapter forward
            ParameterStoreT<double> store;
            MultiResAdapterT<double> adapter(store, cfg.adapter, cfg.backbone);
            randomize_mrf(store, cfg.adapter);
            MultiResFeaturesT<double> feats;
            feats.layout = lo;
            feats.tokens_h = lo.slice_tokens_h();
            feats.tokens_w = lo.slice_tokens_w();
            for (int tap : cfg.backbone.tap_layers) {
                feats.global[tap] = randn<double>({L, D}, rng);
                for (int s = 0; s < lo.slices(); ++s)
                    feats.slices[tap].push_back(randn<double>({L, D}, rng));
            }
            feats.cls = randn<double>({1, D}, rng);
            reports.push_back(check_gradients(
                "adapter_forward#" + std::to_string(si), store,
                [&] {
                    auto out = adapter.forward(feats);
                    return add(weighted(out.visual_grid, seed),
                               weighted(out.query_features, seed + 1));
                },
                copt));
        }
        {  // mask decoder
            ParameterStoreT<double> store;
            MaskDecoderT<double> dec(store, cfg.decoder, cfg.adapter.dim);
            std::vector<FusedFeatureT<double>> fused(3);
            for (auto& f : fused) f.feature = randn<double>({2, 2, cfg.adapter.dim}, rng);
            auto& H = store.add("probe/H", randn<double>({4, 4, cfg.adapter.dim}, rng));
            auto& qf = store.add("probe/qf", randn<double>({2, cfg.adapter.dim}, rng));
            reports.push_back(check_gradients(
                "mask_decoder#" + std::to_string(si), store,
                [&] {
                    auto pyr = dec.build_pyramid(fused, 4, 4);
                    auto pred = dec.decode(H, pyr, qf);
                    return weighted(pred.mask_logits, seed);
                },
                copt));
        }
        {  // masked attention + decoupled mask decode
            ParameterStoreT<double> store;
            VitBackboneT<double> backbone(store, cfg.backbone);
            MaskClassifierT<double> cls(store, cfg.classifier, cfg.backbone, cfg.adapter.dim, 2);
            auto Hgrid = randn<double>({4, 4, cfg.adapter.dim}, rng);
            auto qf = randn<double>({2, cfg.adapter.dim}, rng);
            auto lr = randn<double>({L, D}, rng);
            auto hr = randn<double>({16, D}, rng);
            auto cls_tok = randn<double>({1, D}, rng);
            reports.push_back(check_gradients(
                "masked_attention#" + std::to_string(si), store,
                [&] {
                    auto dm = cls.decode_attention_masks(Hgrid, qf, 2, 2);
                    auto prop = cls.make_prop_tokens(cls_tok);
                    auto out = cls.multigrained_masked_attention(
                        prop, lr, hr, dm, backbone.masked_attention_blocks());
                    return weighted(out, seed);
                },
                copt));
            auto text = l2_normalize(randn<double>({3, cfg.backbone.embed_dim}, rng));
            reports.push_back(check_gradients(
                "condition_text#" + std::to_string(si), store,
                [&] { return weighted(cls.condition_text(text, Hgrid, 2, 2), seed); }, copt));
        }
        {  // losses
            ParameterStoreT<double> store;
            auto& logits = store.add("logits", randn<double>({3, 3}, rng));
            auto& masks = store.add("masks", randn<double>({3, 4, 4}, rng));
            SampleTargets<double> t;
            t.classes = {1};
            TensorT<double> gt({4, 4}, 0.0);
            for (int i = 0; i < 6; ++i) gt[i] = 1.0;
            t.masks = {gt};
            auto assignment = match_targets(logits, masks, t, {});
            reports.push_back(check_gradients(
                "set_loss#" + std::to_string(si), store,
                [&] { return set_loss(logits, masks, t, assignment, {}); }, opt));
        }
    }
    return reports;
}

}  // namespace mrovseg
