#pragma once

#include "mrovseg/ops.hpp"

namespace mrovseg {

// All spatial ops take channel-first tensors [C,H,W].

namespace detail {

template <class S>
void expect_chw(const TensorT<S>& x, const char* op) {
    if (x.rank() != 3) throw DimensionError(std::string(op) + ": expected [C,H,W], got " + shape_str(x.shape));
}

}  // namespace detail

// Per-channel spatial convolution, kernel [C,kh,kw], zero padding.
template <class S>
TensorT<S> depthwise_conv2d(const TensorT<S>& x, const TensorT<S>& k, int stride = 1, int pad = 0) {
    detail::expect_chw(x, "depthwise_conv2d");
    if (k.rank() != 3 || k.dim(0) != x.dim(0))
        throw DimensionError("depthwise_conv2d: kernel " + shape_str(k.shape) +
                             " does not match input " + shape_str(x.shape));
    int C = x.dim(0), H = x.dim(1), W = x.dim(2), kh = k.dim(1), kw = k.dim(2);
    if (stride < 1) throw DimensionError("depthwise_conv2d: stride must be >= 1");
    if (kh > H + 2 * pad || kw > W + 2 * pad)
        throw DimensionError("depthwise_conv2d: kernel " + shape_str(k.shape) +
                             " larger than padded input " + shape_str(x.shape));
    int OH = (H + 2 * pad - kh) / stride + 1;
    int OW = (W + 2 * pad - kw) / stride + 1;
    TensorT<S> out({C, OH, OW}, S(0));
    count_macs(static_cast<uint64_t>(C) * OH * OW * kh * kw);
    const S* px = x.ptr();
    const S* pk = k.ptr();
    S* po = out.ptr();
    for (int c = 0; c < C; ++c) {
        const S* xc = px + static_cast<int64_t>(c) * H * W;
        const S* kc = pk + static_cast<int64_t>(c) * kh * kw;
        S* oc = po + static_cast<int64_t>(c) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                S acc = 0;
                for (int dy = 0; dy < kh; ++dy) {
                    int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int dx = 0; dx < kw; ++dx) {
                        int ix = ox * stride + dx - pad;
                        if (ix < 0 || ix >= W) continue;
                        acc += xc[iy * W + ix] * kc[dy * kw + dx];
                    }
                }
                oc[oy * OW + ox] = acc;
            }
        }
    }
    auto* tape = TapeT<S>::active();
    int ix_id = detail::track_id(x), ik_id = detail::track_id(k);
    if (tape && (ix_id >= 0 || ik_id >= 0)) {
        TensorT<S> xv = x, kv = k;
        int id = tape->add_node(
            "depthwise_conv2d",
            [ix_id, ik_id, xv, kv, stride, pad, C, H, W, kh, kw, OH, OW](TapeT<S>& t,
                                                                         const TensorT<S>& g) {
                TensorT<S> dx(xv.shape, S(0));
                TensorT<S> dk(kv.shape, S(0));
                const S* pg = g.ptr();
                const S* px2 = xv.ptr();
                const S* pk2 = kv.ptr();
                S* pdx = dx.ptr();
                S* pdk = dk.ptr();
                for (int c = 0; c < C; ++c) {
                    const S* gc = pg + static_cast<int64_t>(c) * OH * OW;
                    const S* xc = px2 + static_cast<int64_t>(c) * H * W;
                    const S* kc = pk2 + static_cast<int64_t>(c) * kh * kw;
                    S* dxc = pdx + static_cast<int64_t>(c) * H * W;
                    S* dkc = pdk + static_cast<int64_t>(c) * kh * kw;
                    for (int oy = 0; oy < OH; ++oy) {
                        for (int ox = 0; ox < OW; ++ox) {
                            S gv = gc[oy * OW + ox];
                            if (gv == S(0)) continue;
                            for (int dy = 0; dy < kh; ++dy) {
                                int iy = oy * stride + dy - pad;
                                if (iy < 0 || iy >= H) continue;
                                for (int dxi = 0; dxi < kw; ++dxi) {
                                    int ixp = ox * stride + dxi - pad;
                                    if (ixp < 0 || ixp >= W) continue;
                                    dxc[iy * W + ixp] += gv * kc[dy * kw + dxi];
                                    dkc[dy * kw + dxi] += gv * xc[iy * W + ixp];
                                }
                            }
                        }
                    }
                }
                if (ix_id >= 0) t.accumulate(ix_id, dx);
                if (ik_id >= 0) t.accumulate(ik_id, dk);
            });
        tape->bind(out, id);
    }
    return out;
}

// 1x1 channel mixing; kernel [C_out, C_in]. Implemented as a per-pixel matmul,
// so the tape handles the backward pass.
template <class S>
TensorT<S> pointwise_conv2d(const TensorT<S>& x, const TensorT<S>& k) {
    detail::expect_chw(x, "pointwise_conv2d");
    if (k.rank() != 2 || k.dim(1) != x.dim(0))
        throw DimensionError("pointwise_conv2d: kernel " + shape_str(k.shape) +
                             " does not match input channels of " + shape_str(x.shape));
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    auto flat = reshape(x, {C, H * W});
    auto out = matmul(k, flat);  // [C_out, HW]
    return reshape(out, {k.dim(0), H, W});
}

namespace detail {

// [C,HW] -> [HW,C] and back; plain tiled copies.
template <class S>
void transpose_copy(const S* src, S* dst, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace detail

// Transposed convolution, kernel [C_in, C_out, kh, kw], no padding.
// Output spatial size = (in - 1) * stride + kernel. Internally one matmul per
// image ([HW,Ci] x [Ci,Co*kh*kw]) plus a scatter, so the MAC count matches
// Ci*Co*kh*kw*H*W.
template <class S>
TensorT<S> transposed_conv2d(const TensorT<S>& x, const TensorT<S>& k, int stride = 2) {
    detail::expect_chw(x, "transposed_conv2d");
    if (k.rank() != 4 || k.dim(0) != x.dim(0))
        throw DimensionError("transposed_conv2d: kernel " + shape_str(k.shape) +
                             " does not match input " + shape_str(x.shape));
    if (stride < 1) throw DimensionError("transposed_conv2d: stride must be >= 1");
    int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    int Co = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    int OH = (H - 1) * stride + kh;
    int OW = (W - 1) * stride + kw;
    int64_t HW = static_cast<int64_t>(H) * W;
    int64_t KC = static_cast<int64_t>(Co) * kh * kw;

    std::vector<S> xt(static_cast<size_t>(HW) * Ci);
    detail::transpose_copy(x.ptr(), xt.data(), Ci, HW);
    std::vector<S> mm(static_cast<size_t>(HW) * KC, S(0));
    detail::matmul_kernel(xt.data(), k.ptr(), mm.data(), HW, Ci, KC, false, false);

    TensorT<S> out({Co, OH, OW}, S(0));
    S* po = out.ptr();
    for (int y = 0; y < H; ++y)
        for (int xw = 0; xw < W; ++xw) {
            const S* row = mm.data() + (static_cast<int64_t>(y) * W + xw) * KC;
            for (int co = 0; co < Co; ++co)
                for (int dy = 0; dy < kh; ++dy)
                    for (int dx = 0; dx < kw; ++dx)
                        po[(static_cast<int64_t>(co) * OH + y * stride + dy) * OW + xw * stride +
                           dx] += row[(static_cast<int64_t>(co) * kh + dy) * kw + dx];
        }

    auto* tape = TapeT<S>::active();
    int ix_id = detail::track_id(x), ik_id = detail::track_id(k);
    if (tape && (ix_id >= 0 || ik_id >= 0)) {
        TensorT<S> kv = k;
        // keep the transposed input for the weight gradient
        auto xt_shared = std::make_shared<std::vector<S>>(std::move(xt));
        int id = tape->add_node(
            "transposed_conv2d",
            [ix_id, ik_id, kv, xt_shared, stride, Ci, Co, H, W, kh, kw, OH, OW, HW,
             KC](TapeT<S>& t, const TensorT<S>& g) {
                // gather the output gradient into [HW, Co*kh*kw]
                std::vector<S> gm(static_cast<size_t>(HW) * KC);
                const S* pg = g.ptr();
                for (int y = 0; y < H; ++y)
                    for (int xw = 0; xw < W; ++xw) {
                        S* row = gm.data() + (static_cast<int64_t>(y) * W + xw) * KC;
                        for (int co = 0; co < Co; ++co)
                            for (int dy = 0; dy < kh; ++dy)
                                for (int dx = 0; dx < kw; ++dx)
                                    row[(static_cast<int64_t>(co) * kh + dy) * kw + dx] =
                                        pg[(static_cast<int64_t>(co) * OH + y * stride + dy) * OW +
                                           xw * stride + dx];
                    }
                if (ix_id >= 0) {
                    // dxt[HW,Ci] = gm[HW,KC] x k[Ci,KC]^T
                    std::vector<S> dxt(static_cast<size_t>(HW) * Ci, S(0));
                    detail::matmul_kernel(gm.data(), kv.ptr(), dxt.data(), HW, KC, Ci, false, true);
                    TensorT<S> dx({Ci, H, W});
                    detail::transpose_copy(dxt.data(), dx.ptr(), HW, Ci);
                    t.accumulate(ix_id, dx);
                }
                if (ik_id >= 0) {
                    // dk[Ci,KC] = xt[HW,Ci]^T x gm[HW,KC]
                    TensorT<S> dk(kv.shape, S(0));
                    detail::matmul_kernel(xt_shared->data(), gm.data(), dk.ptr(), Ci, HW, KC, true,
                                          false);
                    t.accumulate(ik_id, dk);
                }
            });
        tape->bind(out, id);
    }
    return out;
}

namespace detail {

// Window bounds used by the adaptive pools: output cell i covers
// [floor(i*in/out), ceil((i+1)*in/out)).
inline int adaptive_start(int i, int in, int out) {
    return static_cast<int>((static_cast<int64_t>(i) * in) / out);
}
inline int adaptive_end(int i, int in, int out) {
    return static_cast<int>((static_cast<int64_t>(i + 1) * in + out - 1) / out);
}

template <class S>
TensorT<S> max_pool_impl(const TensorT<S>& x, int OH, int OW,
                         const std::vector<int>& ys, const std::vector<int>& ye,
                         const std::vector<int>& xs, const std::vector<int>& xe, const char* name) {
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    TensorT<S> out({C, OH, OW});
    std::vector<int64_t> argmax(static_cast<size_t>(C) * OH * OW);
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int c = 0; c < C; ++c) {
        const S* xc = px + static_cast<int64_t>(c) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                S best = xc[ys[static_cast<size_t>(oy)] * W + xs[static_cast<size_t>(ox)]];
                int64_t bi = ys[static_cast<size_t>(oy)] * W + xs[static_cast<size_t>(ox)];
                // first occurrence wins ties (row-major scan)
                for (int iy = ys[static_cast<size_t>(oy)]; iy < ye[static_cast<size_t>(oy)]; ++iy)
                    for (int ix2 = xs[static_cast<size_t>(ox)]; ix2 < xe[static_cast<size_t>(ox)]; ++ix2)
                        if (xc[iy * W + ix2] > best) {
                            best = xc[iy * W + ix2];
                            bi = iy * W + ix2;
                        }
                po[(static_cast<int64_t>(c) * OH + oy) * OW + ox] = best;
                argmax[static_cast<size_t>((static_cast<int64_t>(c) * OH + oy) * OW + ox)] =
                    static_cast<int64_t>(c) * H * W + bi;
            }
        }
    }
    auto* tape = TapeT<S>::active();
    int ix_id = track_id(x);
    if (tape && ix_id >= 0) {
        auto xsh = x.shape;
        int id = tape->add_node(name, [ix_id, xsh, argmax](TapeT<S>& t, const TensorT<S>& g) {
            TensorT<S> dx(xsh, S(0));
            const S* pg = g.ptr();
            S* pdx = dx.ptr();
            for (int64_t i = 0; i < g.numel(); ++i) pdx[argmax[static_cast<size_t>(i)]] += pg[i];
            t.accumulate(ix_id, dx);
        });
        tape->bind(out, id);
    }
    return out;
}

}  // namespace detail

template <class S>
TensorT<S> max_pool2d(const TensorT<S>& x, int kh, int kw, int stride_h, int stride_w) {
    detail::expect_chw(x, "max_pool2d");
    int H = x.dim(1), W = x.dim(2);
    if (kh > H || kw > W)
        throw DimensionError("max_pool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " exceeds input " + shape_str(x.shape));
    if (stride_h < 1 || stride_w < 1) throw DimensionError("max_pool2d: stride must be >= 1");
    int OH = (H - kh) / stride_h + 1;
    int OW = (W - kw) / stride_w + 1;
    std::vector<int> ys(static_cast<size_t>(OH)), ye(static_cast<size_t>(OH));
    std::vector<int> xs(static_cast<size_t>(OW)), xe(static_cast<size_t>(OW));
    for (int i = 0; i < OH; ++i) ys[static_cast<size_t>(i)] = i * stride_h, ye[static_cast<size_t>(i)] = i * stride_h + kh;
    for (int i = 0; i < OW; ++i) xs[static_cast<size_t>(i)] = i * stride_w, xe[static_cast<size_t>(i)] = i * stride_w + kw;
    return detail::max_pool_impl(x, OH, OW, ys, ye, xs, xe, "max_pool2d");
}

template <class S>
TensorT<S> adaptive_max_pool2d(const TensorT<S>& x, int oh, int ow) {
    detail::expect_chw(x, "adaptive_max_pool2d");
    if (oh < 1 || ow < 1) throw DimensionError("adaptive_max_pool2d: output size must be >= 1");
    int H = x.dim(1), W = x.dim(2);
    std::vector<int> ys(static_cast<size_t>(oh)), ye(static_cast<size_t>(oh));
    std::vector<int> xs(static_cast<size_t>(ow)), xe(static_cast<size_t>(ow));
    for (int i = 0; i < oh; ++i) {
        ys[static_cast<size_t>(i)] = detail::adaptive_start(i, H, oh);
        ye[static_cast<size_t>(i)] = detail::adaptive_end(i, H, oh);
    }
    for (int i = 0; i < ow; ++i) {
        xs[static_cast<size_t>(i)] = detail::adaptive_start(i, W, ow);
        xe[static_cast<size_t>(i)] = detail::adaptive_end(i, W, ow);
    }
    return detail::max_pool_impl(x, oh, ow, ys, ye, xs, xe, "adaptive_max_pool2d");
}

template <class S>
TensorT<S> adaptive_avg_pool2d(const TensorT<S>& x, int oh, int ow) {
    detail::expect_chw(x, "adaptive_avg_pool2d");
    if (oh < 1 || ow < 1) throw DimensionError("adaptive_avg_pool2d: output size must be >= 1");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    TensorT<S> out({C, oh, ow}, S(0));
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int c = 0; c < C; ++c) {
        const S* xc = px + static_cast<int64_t>(c) * H * W;
        for (int oy = 0; oy < oh; ++oy) {
            int y0 = detail::adaptive_start(oy, H, oh), y1 = detail::adaptive_end(oy, H, oh);
            for (int ox = 0; ox < ow; ++ox) {
                int x0 = detail::adaptive_start(ox, W, ow), x1 = detail::adaptive_end(ox, W, ow);
                S acc = 0;
                for (int iy = y0; iy < y1; ++iy)
                    for (int ix2 = x0; ix2 < x1; ++ix2) acc += xc[iy * W + ix2];
                po[(static_cast<int64_t>(c) * oh + oy) * ow + ox] =
                    acc / static_cast<S>((y1 - y0) * (x1 - x0));
            }
        }
    }
    auto* tape = TapeT<S>::active();
    int ix_id = detail::track_id(x);
    if (tape && ix_id >= 0) {
        auto xsh = x.shape;
        int id = tape->add_node(
            "adaptive_avg_pool2d", [ix_id, xsh, C, H, W, oh, ow](TapeT<S>& t, const TensorT<S>& g) {
                TensorT<S> dx(xsh, S(0));
                const S* pg = g.ptr();
                S* pdx = dx.ptr();
                for (int c = 0; c < C; ++c) {
                    for (int oy = 0; oy < oh; ++oy) {
                        int y0 = detail::adaptive_start(oy, H, oh), y1 = detail::adaptive_end(oy, H, oh);
                        for (int ox = 0; ox < ow; ++ox) {
                            int x0 = detail::adaptive_start(ox, W, ow), x1 = detail::adaptive_end(ox, W, ow);
                            S gv = pg[(static_cast<int64_t>(c) * oh + oy) * ow + ox] /
                                   static_cast<S>((y1 - y0) * (x1 - x0));
                            for (int iy = y0; iy < y1; ++iy)
                                for (int ix2 = x0; ix2 < x1; ++ix2)
                                    pdx[(static_cast<int64_t>(c) * H + iy) * W + ix2] += gv;
                        }
                    }
                }
                t.accumulate(ix_id, dx);
            });
        tape->bind(out, id);
    }
    return out;
}

// Bilinear resize, align-corners=false (half-pixel centers), edge-clamped.
template <class S>
TensorT<S> resize_bilinear(const TensorT<S>& x, int oh, int ow) {
    detail::expect_chw(x, "resize_bilinear");
    if (oh < 1 || ow < 1) throw DimensionError("resize_bilinear: output size must be >= 1");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    struct Lerp {
        int i0, i1;
        S w1;  // weight of i1; i0 gets (1 - w1)
    };
    auto make_axis = [](int in, int out) {
        std::vector<Lerp> v(static_cast<size_t>(out));
        double r = static_cast<double>(in) / static_cast<double>(out);
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * r - 0.5;
            if (src < 0) src = 0;
            if (src > in - 1) src = in - 1;
            int i0 = static_cast<int>(std::floor(src));
            int i1 = std::min(i0 + 1, in - 1);
            v[static_cast<size_t>(o)] = {i0, i1, static_cast<S>(src - i0)};
        }
        return v;
    };
    auto ay = make_axis(H, oh);
    auto ax = make_axis(W, ow);
    TensorT<S> out({C, oh, ow});
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int c = 0; c < C; ++c) {
        const S* xc = px + static_cast<int64_t>(c) * H * W;
        for (int oy = 0; oy < oh; ++oy) {
            const auto& ly = ay[static_cast<size_t>(oy)];
            for (int ox = 0; ox < ow; ++ox) {
                const auto& lx = ax[static_cast<size_t>(ox)];
                S v00 = xc[ly.i0 * W + lx.i0], v01 = xc[ly.i0 * W + lx.i1];
                S v10 = xc[ly.i1 * W + lx.i0], v11 = xc[ly.i1 * W + lx.i1];
                S top = v00 + (v01 - v00) * lx.w1;
                S bot = v10 + (v11 - v10) * lx.w1;
                po[(static_cast<int64_t>(c) * oh + oy) * ow + ox] = top + (bot - top) * ly.w1;
            }
        }
    }
    auto* tape = TapeT<S>::active();
    int ix_id = detail::track_id(x);
    if (tape && ix_id >= 0) {
        auto xsh = x.shape;
        int id = tape->add_node(
            "resize_bilinear", [ix_id, xsh, ay, ax, C, H, W, oh, ow](TapeT<S>& t, const TensorT<S>& g) {
                TensorT<S> dx(xsh, S(0));
                const S* pg = g.ptr();
                S* pdx = dx.ptr();
                for (int c = 0; c < C; ++c) {
                    S* dxc = pdx + static_cast<int64_t>(c) * H * W;
                    for (int oy = 0; oy < oh; ++oy) {
                        const auto& ly = ay[static_cast<size_t>(oy)];
                        for (int ox = 0; ox < ow; ++ox) {
                            const auto& lx = ax[static_cast<size_t>(ox)];
                            S gv = pg[(static_cast<int64_t>(c) * oh + oy) * ow + ox];
                            S wy1 = ly.w1, wx1 = lx.w1;
                            dxc[ly.i0 * W + lx.i0] += gv * (S(1) - wy1) * (S(1) - wx1);
                            dxc[ly.i0 * W + lx.i1] += gv * (S(1) - wy1) * wx1;
                            dxc[ly.i1 * W + lx.i0] += gv * wy1 * (S(1) - wx1);
                            dxc[ly.i1 * W + lx.i1] += gv * wy1 * wx1;
                        }
                    }
                }
                t.accumulate(ix_id, dx);
            });
        tape->bind(out, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss primitives. Targets are constants (never differentiated).
// ---------------------------------------------------------------------------

// Mean of elementwise binary cross entropy from logits; numerically stable.
template <class S>
TensorT<S> bce_with_logits_mean(const TensorT<S>& logits, const TensorT<S>& targets) {
    if (logits.shape != targets.shape)
        throw DimensionError("bce_with_logits: shape mismatch " + shape_str(logits.shape) + " vs " +
                             shape_str(targets.shape));
    int64_t n = logits.numel();
    const S* px = logits.ptr();
    const S* pt = targets.ptr();
    S acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        S xv = px[i], tv = pt[i];
        acc += std::max(xv, S(0)) - xv * tv + std::log1p(std::exp(-std::abs(xv)));
    }
    TensorT<S> out({1}, std::vector<S>{acc / static_cast<S>(n)});
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(logits);
    if (tape && ix >= 0) {
        TensorT<S> xv = logits, tv = targets;
        int id = tape->add_node("bce_with_logits", [ix, xv, tv, n](TapeT<S>& t, const TensorT<S>& g) {
            TensorT<S> dx(xv.shape);
            const S* px2 = xv.ptr();
            const S* pt2 = tv.ptr();
            S gv = g[0] / static_cast<S>(n);
            S* pdx = dx.ptr();
            for (int64_t i = 0; i < n; ++i) {
                S s = px2[i] >= 0 ? S(1) / (S(1) + std::exp(-px2[i]))
                                  : std::exp(px2[i]) / (S(1) + std::exp(px2[i]));
                pdx[i] = gv * (s - pt2[i]);
            }
            t.accumulate(ix, dx);
        });
        tape->bind(out, id);
    }
    return out;
}

// Weighted softmax cross entropy over rows of [N,C]:
//   L = sum_i w_i * (-log_softmax(x_i)[t_i]) / sum_i w_i
template <class S>
TensorT<S> weighted_cross_entropy(const TensorT<S>& logits, const std::vector<int>& targets,
                                  const std::vector<double>& weights) {
    if (logits.rank() != 2) throw DimensionError("weighted_cross_entropy: logits must be [N,C]");
    int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(targets.size()) != N || static_cast<int>(weights.size()) != N)
        throw ContractError("weighted_cross_entropy: targets/weights length mismatch");
    for (int t : targets)
        if (t < 0 || t >= C) throw ContractError("weighted_cross_entropy: target out of range");
    const S* px = logits.ptr();
    double wsum = 0, loss = 0;
    std::vector<S> probs(static_cast<size_t>(N) * C);
    for (int i = 0; i < N; ++i) {
        const S* row = px + static_cast<int64_t>(i) * C;
        S mx = row[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (int j = 0; j < C; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
        double lse = static_cast<double>(mx) + std::log(sum);
        for (int j = 0; j < C; ++j)
            probs[static_cast<size_t>(i) * C + j] =
                static_cast<S>(std::exp(static_cast<double>(row[j]) - lse));
        loss += weights[static_cast<size_t>(i)] * (lse - static_cast<double>(row[targets[static_cast<size_t>(i)]]));
        wsum += weights[static_cast<size_t>(i)];
    }
    if (wsum <= 0) throw ContractError("weighted_cross_entropy: weights sum to zero");
    TensorT<S> out({1}, std::vector<S>{static_cast<S>(loss / wsum)});
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(logits);
    if (tape && ix >= 0) {
        auto xsh = logits.shape;
        int id = tape->add_node(
            "weighted_cross_entropy",
            [ix, xsh, probs, targets, weights, wsum, N, C](TapeT<S>& t, const TensorT<S>& g) {
                TensorT<S> dx(xsh);
                S* pdx = dx.ptr();
                S gv = g[0];
                for (int i = 0; i < N; ++i) {
                    S wi = static_cast<S>(weights[static_cast<size_t>(i)] / wsum);
                    for (int j = 0; j < C; ++j) {
                        S p = probs[static_cast<size_t>(i) * C + j];
                        S onehot = (j == targets[static_cast<size_t>(i)]) ? S(1) : S(0);
                        pdx[static_cast<int64_t>(i) * C + j] = gv * wi * (p - onehot);
                    }
                }
                t.accumulate(ix, dx);
            });
        tape->bind(out, id);
    }
    return out;
}

}  // namespace mrovseg
