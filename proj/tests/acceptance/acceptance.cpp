// Acceptance suite: one line per criterion, nonzero exit when any fails.
#include <chrono>
#include <cstring>
#include <iostream>
#include <thread>

#include "mrovseg/flops.hpp"
#include "mrovseg/gradcheck_suite.hpp"
#include "mrovseg/hungarian.hpp"
#include "mrovseg/metrics.hpp"
#include "mrovseg/model.hpp"
#include "mrovseg/prompt_templates.hpp"
#include "mrovseg/text_embed.hpp"
#include "mrovseg/trainer.hpp"
#include "../oracles.hpp"

using namespace mrovseg;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
    std::string name;
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
Criterion gradient_suite() {
    Criterion c{"gradient-suite"};
    auto t0 = Clock::now();
    auto reports = run_gradcheck_suite(/*n_seeds=*/5);
    double worst = 0;
    std::string worst_name;
    bool all = true;
    for (const auto& r : reports) {
        all = all && r.pass;
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.name;
        }
    }
    double secs = seconds_since(t0);
    c.pass = all && secs < 300.0;
    c.detail = std::to_string(reports.size()) + " checks, worst rel err " + std::to_string(worst) +
               " (" + worst_name + "), " + std::to_string(secs) + "s";
    return c;
}

// ---------------------------------------------------------------------------
Criterion attention_oracle() {
    Criterion c{"attention-oracle"};
    double worst = 0;
    for (int heads : {1, 2}) {
        for (int L : {3, 4, 5, 6}) {
            for (int N : {2, 3, 4}) {
                BackboneConfig bb;
                bb.dim = 4 * heads;
                bb.heads = heads;
                bb.depth = 3;
                bb.tap_layers = {0, 1, 3};
                bb.cls_tap = 1;
                bb.patch = 16;
                bb.native_window = 32;
                bb.embed_dim = 6;
                bb.seed = 100 + static_cast<uint64_t>(heads * 100 + L * 10 + N);
                ParameterStoreT<float> store;
                VitBackboneT<float> backbone(store, bb);
                MaskClassifierT<float> cls(store, {}, bb, bb.dim, N);
                Rng rng(bb.seed);
                int R = 2 * L;
                auto x0 = randn<float>({N, bb.dim}, rng);
                auto lr = randn<float>({L, bb.dim}, rng);
                auto hr = randn<float>({R, bb.dim}, rng);
                DecoupledMasksT<float> dm;
                dm.global = randn<float>({heads, N, L}, rng);
                dm.local = randn<float>({heads, N, R}, rng);
                auto prefixes = backbone.masked_attention_blocks();
                auto got = cls.multigrained_masked_attention(x0, lr, hr, dm, prefixes);

                auto kv = concat<float>({lr, hr}, 0);
                std::vector<double> bias;
                for (int h = 0; h < heads; ++h)
                    for (int i = 0; i < N; ++i) {
                        for (int j = 0; j < L; ++j)
                            bias.push_back(dm.global[(static_cast<int64_t>(h) * N + i) * L + j]);
                        for (int j = 0; j < R; ++j)
                            bias.push_back(dm.local[(static_cast<int64_t>(h) * N + i) * R + j]);
                    }
                std::vector<double> row_sums;
                auto want = oracle::masked_attention_reference(
                    store, prefixes, oracle::to_vec(x0), N, bb.dim, oracle::to_vec(kv), L + R,
                    bias, heads, &row_sums);
                for (int64_t i = 0; i < got.numel(); ++i)
                    worst = std::max(worst,
                                     std::fabs(got[i] - want[static_cast<size_t>(i)]));
                for (double s : row_sums) worst = std::max(worst, std::fabs(s - 1.0));

                // masking limits vs reference runs
                DecoupledMasksT<float> local_only;
                local_only.global = TensorT<float>({heads, N, L}, static_cast<float>(kMaskSentinel));
                local_only.local = TensorT<float>({heads, N, R}, 0.0f);
                auto got_local = cls.multigrained_masked_attention(x0, lr, hr, local_only, prefixes);
                auto ref_local = masked_cross_attention_stack(
                    store, prefixes, heads, x0, hr, TensorT<float>({heads, N, R}, 0.0f));
                for (int64_t i = 0; i < got_local.numel(); ++i)
                    worst = std::max(worst, std::fabs(static_cast<double>(got_local[i]) - ref_local[i]));

                DecoupledMasksT<float> global_only;
                global_only.global = TensorT<float>({heads, N, L}, 0.0f);
                global_only.local = TensorT<float>({heads, N, R}, static_cast<float>(kMaskSentinel));
                auto got_global = cls.multigrained_masked_attention(x0, lr, hr, global_only, prefixes);
                auto ref_global = masked_cross_attention_stack(
                    store, prefixes, heads, x0, lr, TensorT<float>({heads, N, L}, 0.0f));
                for (int64_t i = 0; i < got_global.numel(); ++i)
                    worst = std::max(worst, std::fabs(static_cast<double>(got_global[i]) - ref_global[i]));

                DecoupledMasksT<float> zero_mask;
                zero_mask.global = TensorT<float>({heads, N, L}, 0.0f);
                zero_mask.local = TensorT<float>({heads, N, R}, 0.0f);
                auto got_zero = cls.multigrained_masked_attention(x0, lr, hr, zero_mask, prefixes);
                auto ref_zero = masked_cross_attention_stack(
                    store, prefixes, heads, x0, kv, TensorT<float>({heads, N, L + R}, 0.0f));
                for (int64_t i = 0; i < got_zero.numel(); ++i)
                    worst = std::max(worst, std::fabs(static_cast<double>(got_zero[i]) - ref_zero[i]));
            }
        }
    }
    c.pass = worst < 1e-6;
    c.detail = "max abs deviation " + std::to_string(worst) + " over N=2..4, L=3..6, heads=1..2";
    return c;
}

// ---------------------------------------------------------------------------
Criterion geometry() {
    Criterion c{"geometry"};
    std::string why;
    bool ok = true;

    // regimes at 640^2
    for (double p : {0.25, 0.5, 0.625, 0.75, 1.0}) {
        auto lo = plan_layout(640, 640, p, 16);
        bool want_overlap = p > 0.5;
        if (lo.overlapped != want_overlap) {
            ok = false;
            why += "overlap flag wrong at p=" + std::to_string(p) + "; ";
        }
        if (p == 0.5 && (lo.grid_m != 2 || lo.stride_h != 320)) ok = false;
        if (p == 0.625 && (lo.grid_m != 2 || lo.stride_h != 240 || lo.window_h != 400)) ok = false;
        if (p == 0.25 && (lo.grid_m != 4 || lo.stride_h != 160)) ok = false;
        if (p == 0.75 && (lo.grid_m != 2 || lo.stride_h != 160 || lo.window_h != 480)) ok = false;
        if (p == 1.0 && lo.slices() != 1) ok = false;
        auto org = lo.origins();
        if (org.back().first + lo.window_h != 640) ok = false;
    }

    // slice -> restore round trip, exact for p = 0.5 at 640^2 token grids
    {
        auto lo = plan_layout(640, 640, 0.5, 16);
        Rng rng(71);
        std::vector<TensorT<float>> slices;
        for (int s = 0; s < lo.slices(); ++s)
            slices.push_back(randn<float>({lo.slice_tokens(), 8}, rng));
        auto grid = restore_grid(slices, lo);
        auto origins = lo.origins();
        int lh = lo.slice_tokens_h(), lw = lo.slice_tokens_w(), TW = lo.grid_tokens_w();
        for (size_t s = 0; s < slices.size() && ok; ++s) {
            int ty = origins[s].first / 16, tx = origins[s].second / 16;
            for (int i = 0; i < lh && ok; ++i)
                for (int j = 0; j < lw && ok; ++j)
                    for (int d = 0; d < 8; ++d)
                        if (grid[((static_cast<int64_t>(ty + i) * TW) + tx + j) * 8 + d] !=
                            slices[s][(static_cast<int64_t>(i) * lw + j) * 8 + d]) {
                            ok = false;
                            why += "p=0.5 round trip not bit-exact; ";
                            break;
                        }
        }
    }

    // overlapped restore vs accumulate/average oracle at p = 0.625, 640^2
    {
        auto lo = plan_layout(640, 640, 0.625, 16);
        Rng rng(72);
        int L = lo.slice_tokens(), D = 4;
        std::vector<TensorT<float>> slices;
        for (int s = 0; s < lo.slices(); ++s) slices.push_back(randn<float>({L, D}, rng));
        auto grid = restore_grid(slices, lo);
        int TH = lo.grid_tokens_h(), TW = lo.grid_tokens_w();
        std::vector<double> acc(static_cast<size_t>(TH) * TW * D, 0.0);
        std::vector<int> cnt(static_cast<size_t>(TH) * TW, 0);
        auto origins = lo.origins();
        int lh = lo.slice_tokens_h(), lw = lo.slice_tokens_w();
        for (size_t s = 0; s < slices.size(); ++s) {
            int ty = origins[s].first / 16, tx = origins[s].second / 16;
            for (int i = 0; i < lh; ++i)
                for (int j = 0; j < lw; ++j) {
                    ++cnt[static_cast<size_t>((ty + i) * TW + tx + j)];
                    for (int d = 0; d < D; ++d)
                        acc[(static_cast<size_t>(ty + i) * TW + tx + j) * D + d] +=
                            slices[s][(static_cast<int64_t>(i) * lw + j) * D + d];
                }
        }
        double worst = 0;
        for (int cell = 0; cell < TH * TW; ++cell) {
            if (cnt[static_cast<size_t>(cell)] < 1) ok = false;  // coverage
            for (int d = 0; d < D; ++d)
                worst = std::max(worst, std::fabs(grid[static_cast<int64_t>(cell) * D + d] -
                                                  acc[static_cast<size_t>(cell) * D + d] /
                                                      cnt[static_cast<size_t>(cell)]));
        }
        if (worst >= 1e-6) {
            ok = false;
            why += "overlapped restore off by " + std::to_string(worst) + "; ";
        }
    }

    c.pass = ok;
    c.detail = ok ? "regimes p in {0.25,0.5,0.625,0.75,1.0}; round trip exact; overlap averaged"
                  : why;
    return c;
}

// ---------------------------------------------------------------------------
Criterion equation_oracles() {
    Criterion c{"equation-oracles"};
    double worst = 0;

    // Eq. 2: scale-aware fusion vs straight-line reference
    {
        RunConfig cfg;
        cfg.image_hw = 64;
        cfg.backbone.patch = 16;
        cfg.backbone.dim = 12;
        cfg.backbone.heads = 2;
        cfg.backbone.depth = 2;
        cfg.backbone.tap_layers = {0, 1, 2};
        cfg.backbone.cls_tap = 1;
        cfg.backbone.native_window = 32;
        cfg.adapter.dim = 12;
        cfg.adapter.heads = 2;
        cfg.adapter.queries = 2;
        cfg.adapter.blocks = 1;
        cfg.adapter.fusion_layers = {0};
        cfg.seed = 81;
        cfg.derive_seeds();
        auto lo = cfg.layout();
        ParameterStoreT<float> store;
        MultiResAdapterT<float> adapter(store, cfg.adapter, cfg.backbone);
        Rng rng(81);
        for (const char* n : {"adapter/mrf0/pw", "adapter/mrf0/fa_pw", "adapter/mrf0/fa_b"}) {
            auto& t = store.at(n);
            auto r = randn<float>(t.shape, rng, 0.4);
            std::copy(r.ptr(), r.ptr() + r.numel(), t.ptr());
        }
        int L = lo.slice_tokens(), D = 12;
        std::vector<TensorT<float>> slices;
        for (int s = 0; s < lo.slices(); ++s) slices.push_back(randn<float>({L, D}, rng));
        auto global = randn<float>({L, D}, rng);
        auto got = adapter.mrf_fuse(slices, global, lo, 0, lo.slice_tokens_h(), lo.slice_tokens_w());

        auto grid_cf = permute(restore_grid(slices, lo), {2, 0, 1});
        auto dconv = pointwise_conv2d(depthwise_conv2d(grid_cf, store.at("adapter/mrf0/dw"), 1, 1),
                                      store.at("adapter/mrf0/pw"));
        auto fa = add(pointwise_conv2d(depthwise_conv2d(grid_cf, store.at("adapter/mrf0/fa_dw"), 1, 1),
                                       store.at("adapter/mrf0/fa_pw")),
                      store.at("adapter/mrf0/fa_b"));
        int h = lo.slice_tokens_h(), w = lo.slice_tokens_w();
        auto a = sigmoid(adaptive_avg_pool2d(fa, h, w));
        auto pooled = adaptive_avg_pool2d(dconv, h, w);
        auto hbar = permute(reshape(global, {h, w, D}), {2, 0, 1});
        for (int ch = 0; ch < D; ++ch)
            for (int i = 0; i < h * w; ++i) {
                double want = a[ch * h * w + i] * pooled[ch * h * w + i] +
                              (1.0 - a[ch * h * w + i]) * hbar[ch * h * w + i];
                double gt = got.feature[static_cast<int64_t>(i) * D + ch];
                worst = std::max(worst, std::fabs(gt - want));
            }
    }

    // Eq. 5: decoded masks are exactly Q_f x H_pix^T
    {
        ParameterStoreT<float> store;
        DecoderConfig dc;
        dc.pyramid_width = 6;
        dc.decoder_width = 6;
        dc.pix_hidden = 6;
        dc.seed = 82;
        MaskDecoderT<float> dec(store, dc, 8);
        Rng rng(82);
        std::vector<FusedFeatureT<float>> fused(3);
        for (auto& f : fused) f.feature = randn<float>({2, 2, 8}, rng);
        auto H = randn<float>({4, 4, 8}, rng);
        auto qf = randn<float>({3, 8}, rng);
        auto pyr = dec.build_pyramid(fused, 4, 4);
        auto pred = dec.decode(H, pyr, qf);
        int hw = pred.height * pred.width;
        for (int n = 0; n < 3; ++n)
            for (int p = 0; p < hw; ++p) {
                double want = 0;
                for (int d = 0; d < 8; ++d)
                    want += qf[n * 8 + d] * pred.pixel_features[static_cast<int64_t>(p) * 8 + d];
                worst = std::max(worst,
                                 std::fabs(pred.mask_logits[static_cast<int64_t>(n) * hw + p] - want));
            }
    }

    // Eq. 7: decoupled masks vs per-head inner-product oracle
    {
        BackboneConfig bb;
        bb.dim = 8;
        bb.heads = 2;
        bb.depth = 2;
        bb.tap_layers = {0, 1, 2};
        bb.cls_tap = 1;
        bb.patch = 16;
        bb.native_window = 32;
        bb.embed_dim = 6;
        bb.seed = 83;
        ParameterStoreT<float> store;
        MaskClassifierT<float> cls(store, {}, bb, 8, 2);
        Rng rng(83);
        auto H = randn<float>({4, 4, 8}, rng);
        auto qf = randn<float>({2, 8}, rng);
        auto dm = cls.decode_attention_masks(H, qf, 2, 2);
        // reference through the same verified MLP helpers, inner products by loop
        auto a_local = Mlp2<float>::forward(store, "cls/mlp_local", reshape(H, {16, 8}));
        auto pooled = adaptive_max_pool2d(permute(H, {2, 0, 1}), 2, 2);
        auto a_global = Mlp2<float>::forward(store, "cls/mlp_global",
                                             reshape(permute(pooled, {1, 2, 0}), {4, 8}));
        for (int h = 0; h < 2; ++h)
            for (int q = 0; q < 2; ++q) {
                for (int t = 0; t < 16; ++t) {
                    double want = 0;
                    for (int d = 0; d < 4; ++d)
                        want += qf[q * 8 + h * 4 + d] * a_local[t * 8 + h * 4 + d];
                    worst = std::max(worst,
                                     std::fabs(dm.local[(static_cast<int64_t>(h) * 2 + q) * 16 + t] - want));
                }
                for (int t = 0; t < 4; ++t) {
                    double want = 0;
                    for (int d = 0; d < 4; ++d)
                        want += qf[q * 8 + h * 4 + d] * a_global[t * 8 + h * 4 + d];
                    worst = std::max(worst,
                                     std::fabs(dm.global[(static_cast<int64_t>(h) * 2 + q) * 4 + t] - want));
                }
            }
    }

    // Eq. 9: composition vs direct loop
    {
        Rng rng(84);
        auto C = randn<float>({3, 4}, rng);
        auto M = randn<float>({3, 2, 3}, rng);
        auto out = compose_segmentation(C, M, false);
        for (int k = 0; k < 4; ++k)
            for (int p = 0; p < 6; ++p) {
                double acc = 0;
                for (int n = 0; n < 3; ++n) {
                    double mx = -1e30;
                    for (int kk = 0; kk < 4; ++kk)
                        mx = std::max(mx, static_cast<double>(C[n * 4 + kk]));
                    double denom = 0;
                    for (int kk = 0; kk < 4; ++kk) denom += std::exp(C[n * 4 + kk] - mx);
                    double prob = std::exp(C[n * 4 + k] - mx) / denom;
                    double mp = 1.0 / (1.0 + std::exp(-static_cast<double>(M[n * 6 + p])));
                    acc += prob * mp;
                }
                worst = std::max(worst, std::fabs(out.semantic_scores[k * 6 + p] - acc));
            }
    }

    c.pass = worst < 1e-6;
    c.detail = "Eq. 2/5/7/9 max abs deviation " + std::to_string(worst);
    return c;
}

// ---------------------------------------------------------------------------
Criterion freeze_contract() {
    Criterion c{"freeze-contract"};
    RunConfig cfg = RunConfig::toy(64, 32, 6);
    cfg.backbone.heads = 2;
    cfg.adapter.heads = 2;
    cfg.backbone.embed_dim = 32;
    cfg.backbone.depth = 4;
    cfg.backbone.tap_layers = {0, 2, 4};
    cfg.backbone.cls_tap = 2;
    cfg.adapter.fusion_layers = {0, 2, 4};
    cfg.adapter.blocks = 2;
    cfg.train.steps = 100;
    cfg.train.n_images = 2;
    cfg.derive_seeds();
    SegModelT<float> model(cfg);
    auto data = make_toy_dataset(cfg.data_seed(), cfg.train.n_images, 64, 4);
    ToyTrainerT<float> trainer(model, data, toy_class_names(4));
    uint64_t before = model.store().frozen_checksum();
    auto res = trainer.train();
    bool stable = before == res.frozen_before && res.frozen_before == res.frozen_after;

    AdamWConfig ocfg;
    ocfg.total_steps = 200;
    AdamWT<float> probe(ocfg);
    // replay: the real optimizer state is internal to train(); assert the
    // contract directly on a fresh optimizer over the same store
    std::map<std::string, TensorT<float>> grads;
    for (const auto& n : model.store().names())
        if (!model.store().is_frozen(n)) grads[n] = zeros_like(model.store().at(n));
    probe.step(model.store(), grads);
    bool no_frozen_state = true;
    for (const auto& n : model.store().names())
        if (model.store().is_frozen(n) && probe.has_state(n)) no_frozen_state = false;

    c.pass = stable && no_frozen_state;
    c.detail = std::string("backbone checksums stable across 100 AdamW steps; ") +
               (no_frozen_state ? "no frozen parameter in optimizer state" : "FROZEN STATE FOUND");
    return c;
}

// ---------------------------------------------------------------------------
Criterion schedule() {
    Criterion c{"schedule"};
    double lr0 = poly_lr(2e-4, 0, 1000, 0.9);
    double lrT = poly_lr(2e-4, 1000, 1000, 0.9);
    double lrH = poly_lr(2e-4, 500, 1000, 0.9);
    double want_half = 2e-4 * std::pow(0.5, 0.9);
    bool mono = true;
    double prev = 1e300;
    for (int t = 0; t <= 1000; t += 7) {
        double lr = poly_lr(2e-4, t, 1000, 0.9);
        mono = mono && lr <= prev;
        prev = lr;
    }
    c.pass = lr0 == 2e-4 && lrT == 0.0 && std::fabs(lrH - want_half) < 1e-12 && mono;
    c.detail = "lr(0)=" + std::to_string(lr0) + " lr(T)=" + std::to_string(lrT) +
               " |lr(T/2)-base*0.5^0.9|=" + std::to_string(std::fabs(lrH - want_half));
    return c;
}

// ---------------------------------------------------------------------------
struct ToyRunResult {
    double miou = 0.0;
    double secs = 0.0;
};

ToyRunResult run_toy(uint64_t seed, int steps, bool fusion) {
    auto t0 = Clock::now();
    RunConfig cfg = RunConfig::toy();
    cfg.seed = seed;
    cfg.derive_seeds();
    cfg.train.steps = steps;
    if (!fusion) cfg.adapter.fusion_mode = FusionMode::kOff;
    SegModelT<float> model(cfg);
    auto data = make_toy_dataset(cfg.data_seed(), cfg.train.n_images, cfg.image_hw,
                                 cfg.train.n_classes);
    ToyTrainerT<float> trainer(model, data, toy_class_names(cfg.train.n_classes));
    auto res = trainer.train();
    return {res.train_miou, seconds_since(t0)};
}

Criterion toy_overfit(int ablation_steps) {
    Criterion c{"toy-overfit"};
    auto main_run = run_toy(RunConfig::toy().seed, 1000, true);
    bool main_ok = main_run.miou >= 0.90 && main_run.secs < 1800.0;

    // ablation: fusion on vs off at an equal reduced budget, four seeds, in
    // parallel worker threads (runs are independent single-thread jobs)
    std::vector<uint64_t> seeds = {1, 2, 3, 4};
    std::vector<ToyRunResult> on(4), off(4);
    {
        std::vector<std::pair<int, bool>> jobs;
        for (int i = 0; i < 4; ++i) {
            jobs.push_back({i, true});
            jobs.push_back({i, false});
        }
        std::atomic<size_t> next{0};
        int workers = std::max(2u, std::thread::hardware_concurrency());
        workers = std::min<int>(workers, static_cast<int>(jobs.size()));
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
                    auto [idx, fused] = jobs[j];
                    auto r = run_toy(seeds[static_cast<size_t>(idx)], ablation_steps, fused);
                    (fused ? on : off)[static_cast<size_t>(idx)] = r;
                }
            });
        for (auto& t : pool) t.join();
    }
    int direction_ok = 0;
    std::string detail;
    for (int i = 0; i < 4; ++i) {
        if (off[static_cast<size_t>(i)].miou < on[static_cast<size_t>(i)].miou) ++direction_ok;
        detail += " s" + std::to_string(seeds[static_cast<size_t>(i)]) + ":" +
                  std::to_string(on[static_cast<size_t>(i)].miou).substr(0, 5) + ">" +
                  std::to_string(off[static_cast<size_t>(i)].miou).substr(0, 5);
    }
    c.pass = main_ok && direction_ok >= 3;
    c.detail = "mIoU " + std::to_string(main_run.miou) + " in " +
               std::to_string(main_run.secs) + "s; fusion direction " +
               std::to_string(direction_ok) + "/4 at " + std::to_string(ablation_steps) +
               " steps:" + detail;
    return c;
}

// ---------------------------------------------------------------------------
Criterion hungarian_brute_force() {
    Criterion c{"hungarian"};
    Rng rng(77);
    int failures = 0;
    for (int trial = 0; trial < 200; ++trial) {
        int cols = rng.uniform_int(1, 6);
        int rows = rng.uniform_int(1, cols);
        std::vector<double> cost(static_cast<size_t>(rows) * cols);
        for (auto& v : cost) v = rng.uniform(-3.0, 3.0);
        auto a = hungarian_match(cost, rows, cols);
        double got = 0;
        for (int i = 0; i < rows; ++i) got += cost[static_cast<size_t>(i) * cols + a[static_cast<size_t>(i)]];
        // brute force
        std::vector<int> perm(static_cast<size_t>(cols));
        for (int i = 0; i < cols; ++i) perm[static_cast<size_t>(i)] = i;
        double best = 1e300;
        do {
            double total = 0;
            for (int i = 0; i < rows; ++i) total += cost[static_cast<size_t>(i) * cols + perm[static_cast<size_t>(i)]];
            best = std::min(best, total);
        } while (std::next_permutation(perm.begin(), perm.end()));
        if (std::fabs(got - best) > 1e-9) ++failures;
    }
    c.pass = failures == 0;
    c.detail = "200 random instances with N,G <= 6, " + std::to_string(failures) + " mismatches";
    return c;
}

// ---------------------------------------------------------------------------
Criterion metrics_exact() {
    Criterion c{"metrics"};
    auto rep = compute_miou({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
    bool miou_ok = rep.per_class[0] == 0.5 && std::fabs(rep.per_class[1] - 2.0 / 3.0) < 1e-15 &&
                   std::fabs(rep.miou - 7.0 / 12.0) < 1e-15;

    Segment gt{0, std::vector<uint8_t>(100, 1)};
    Segment pred{0, std::vector<uint8_t>(100, 0)};
    for (int i = 0; i < 80; ++i) pred.mask[static_cast<size_t>(i)] = 1;
    auto pq = panoptic_quality({pred}, {gt}, 10, 10);
    bool pq_ok = std::fabs(pq.pq - 0.8) < 1e-15 && std::fabs(pq.sq - 0.8) < 1e-15 &&
                 std::fabs(pq.rq - 1.0) < 1e-15;

    // PQ == SQ * RQ on a mixed case (disjoint predictions)
    Segment g1{0, std::vector<uint8_t>(100, 0)};
    for (int i = 0; i < 60; ++i) g1.mask[static_cast<size_t>(i)] = 1;
    Segment p1{0, std::vector<uint8_t>(100, 0)};
    for (int i = 0; i < 45; ++i) p1.mask[static_cast<size_t>(i)] = 1;  // iou 0.75
    Segment g2{1, std::vector<uint8_t>(100, 0)};
    for (int i = 62; i < 100; ++i) g2.mask[static_cast<size_t>(i)] = 1;
    Segment p2{1, std::vector<uint8_t>(100, 0)};
    for (int i = 64; i < 100; ++i) p2.mask[static_cast<size_t>(i)] = 1;  // iou 36/38
    Segment spurious{0, std::vector<uint8_t>(100, 0)};
    spurious.mask[60] = 1;
    auto mixed = panoptic_quality({p1, p2, spurious}, {g1, g2}, 10, 10);
    bool identity_ok = mixed.stats.tp == 2 && mixed.stats.fp == 1 &&
                       std::fabs(mixed.pq - mixed.sq * mixed.rq) < 1e-9;

    c.pass = miou_ok && pq_ok && identity_ok;
    c.detail = std::string("mIoU 7/12 ") + (miou_ok ? "exact" : "WRONG") + "; PQ 0.8/0.8/1.0 " +
               (pq_ok ? "exact" : "WRONG") + "; |PQ - SQ*RQ| < 1e-9 " +
               (identity_ok ? "holds" : "VIOLATED");
    return c;
}

// ---------------------------------------------------------------------------
Criterion templates_criterion() {
    Criterion c{"templates"};
    static const char* kWanted[14] = {
        "a photo of a {}.",
        "This is a photo of a {}",
        "There is a {} in the scene",
        "There is the {} in the scene",
        "a photo of a {} in the scene",
        "a photo of a small {}.",
        "a photo of a medium {}.",
        "a photo of a large {}.",
        "This is a photo of a small {}.",
        "This is a photo of a medium {}.",
        "This is a photo of a large {}.",
        "There is a small {} in the scene.",
        "There is a medium {} in the scene.",
        "There is a large {} in the scene.",
    };
    const auto& got = default_prompt_templates();
    bool list_ok = got.size() == 14;
    for (size_t i = 0; list_ok && i < got.size(); ++i) list_ok = got[i] == kWanted[i];

    // permutation invariance, bitwise, in the double pipeline
    auto perm = got;
    std::rotate(perm.begin(), perm.begin() + 5, perm.end());
    std::swap(perm[0], perm[3]);
    TextEmbedder e1(96, 31337);
    TextEmbedder e2(96, 31337, perm);
    auto a = e1.embed_class("street sign");
    auto b = e2.embed_class("street sign");
    bool inv_ok = a.size() == b.size();
    for (size_t i = 0; inv_ok && i < a.size(); ++i)
        inv_ok = std::memcmp(&a[i], &b[i], sizeof(double)) == 0;

    c.pass = list_ok && inv_ok;
    c.detail = std::string("14 templates ") + (list_ok ? "exact" : "WRONG") +
               "; permutation bit-invariant " + (inv_ok ? "yes" : "NO");
    return c;
}

// ---------------------------------------------------------------------------
Criterion cost_accounting() {
    Criterion c{"cost-accounting"};
    struct Case {
        int n, L, R, dim, heads, mlp_ratio;
    };
    bool closed_ok = true;
    for (auto cs : {Case{20, 16, 64, 128, 4, 4}, Case{100, 400, 1600, 768, 12, 4}}) {
        // keep the probe affordable: one layer at the stated dims
        uint64_t measured = measure_masked_attention_macs(cs.n, cs.L, cs.R, cs.dim, cs.heads,
                                                          cs.mlp_ratio, 5);
        auto closed = masked_attention_layer_macs(cs.n, cs.L + cs.R, cs.dim,
                                                  cs.dim * cs.mlp_ratio);
        closed_ok = closed_ok && measured == closed.total();
    }
    auto cfg = RunConfig::defaults();
    uint64_t p0 = analytic_pipeline_macs(cfg, 0.0, 150).total();
    uint64_t p05 = analytic_pipeline_macs(cfg, 0.5, 150).total();
    bool mono = p0 < p05;
    c.pass = closed_ok && mono;
    c.detail = std::string("closed form == measured on 2 configs: ") + (closed_ok ? "yes" : "NO") +
               "; total MACs p=0 (" + std::to_string(p0) + ") < p=0.5 (" + std::to_string(p05) +
               "): " + (mono ? "yes" : "NO");
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    bool quick = false;  // skip the long training criterion (debug aid)
    int ablation_steps = 500;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--skip-training") == 0) quick = true;
        if (std::strcmp(argv[i], "--ablation-steps") == 0 && i + 1 < argc)
            ablation_steps = std::atoi(argv[++i]);
    }

    std::vector<Criterion> results;
    results.push_back(schedule());
    results.push_back(templates_criterion());
    results.push_back(metrics_exact());
    results.push_back(hungarian_brute_force());
    results.push_back(geometry());
    results.push_back(equation_oracles());
    results.push_back(attention_oracle());
    results.push_back(cost_accounting());
    results.push_back(freeze_contract());
    results.push_back(gradient_suite());
    if (!quick) results.push_back(toy_overfit(ablation_steps));

    bool all = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
        all = all && r.pass;
    }
    std::cout << (all ? "ACCEPTANCE: all criteria passed" : "ACCEPTANCE: FAILURES PRESENT")
              << "\n";
    return all ? 0 : 1;
}
