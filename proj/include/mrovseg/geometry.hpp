#pragma once

#include <utility>
#include <vector>

#include "mrovseg/conv_ops.hpp"
#include "mrovseg/ops.hpp"

namespace mrovseg {

// Sliding-window decomposition of a high-resolution input. All pixel fields
// are patch-aligned by construction, so every slice origin lands on a token
// boundary.
struct SliceLayout {
    int input_h = 0, input_w = 0;
    double p = 0.5;
    int patch = 16;
    int window_h = 0, window_w = 0;
    int stride_h = 0, stride_w = 0;  // 0 when a single slice covers the axis
    int grid_m = 0, grid_n = 0;      // slice rows x cols
    bool overlapped = false;

    int slices() const { return grid_m * grid_n; }
    int slice_tokens_h() const { return window_h / patch; }
    int slice_tokens_w() const { return window_w / patch; }
    int slice_tokens() const { return slice_tokens_h() * slice_tokens_w(); }
    int grid_tokens_h() const { return input_h / patch; }
    int grid_tokens_w() const { return input_w / patch; }

    // Slice origins in pixels, row-major.
    std::vector<std::pair<int, int>> origins() const;
    // Per-cell contribution counts on the restored token grid.
    std::vector<int> token_coverage() const;
};

// Plans the decomposition for crop ratio p:
//   p <= 0.5 : grid round(1/p) per axis, stride = window (exact partition)
//   0.5<p<1  : grid 2x2, stride = input - window (overlapped)
//   p == 1   : single slice covering the input
// Throws LayoutError (with the nearest valid p in the message) when the window
// is not patch-divisible or cannot tile the input.
SliceLayout plan_layout(int input_h, int input_w, double p, int patch);

// ---------------------------------------------------------------------------
// Image/token operations on top of the layout.
// ---------------------------------------------------------------------------

// Crops of an image [C,H,W] in row-major origin order.
template <class S>
std::vector<TensorT<S>> slice_image(const TensorT<S>& img, const SliceLayout& lo) {
    if (img.rank() != 3 || img.dim(1) != lo.input_h || img.dim(2) != lo.input_w)
        throw DimensionError("slice_image: image " + shape_str(img.shape) +
                             " does not match planned layout");
    std::vector<TensorT<S>> out;
    out.reserve(static_cast<size_t>(lo.slices()));
    for (auto [oy, ox] : lo.origins())
        out.push_back(narrow(narrow(img, 1, oy, lo.window_h), 2, ox, lo.window_w));
    return out;
}

// Pixel extent of real content after the aspect-preserving downscale of
// downsample_pad (the rest is zero padding).
inline std::pair<int, int> downscaled_extent(int H, int W, int target_h, int target_w) {
    if (H == target_h && W == target_w) return {H, W};
    double s = std::min(static_cast<double>(target_h) / H, static_cast<double>(target_w) / W);
    int nh = std::min(target_h, std::max(1, static_cast<int>(std::lround(H * s))));
    int nw = std::min(target_w, std::max(1, static_cast<int>(std::lround(W * s))));
    return {nh, nw};
}

// Aspect-preserving bilinear downscale (longer side fits target), zero-padded
// bottom/right to exactly [C,target_h,target_w].
template <class S>
TensorT<S> downsample_pad(const TensorT<S>& img, int target_h, int target_w) {
    if (img.rank() != 3) throw DimensionError("downsample_pad: expected [C,H,W]");
    int H = img.dim(1), W = img.dim(2);
    if (target_h > H || target_w > W)
        throw ContractError("downsample_pad: target exceeds input size");
    if (H == target_h && W == target_w) return img;
    auto [nh, nw] = downscaled_extent(H, W, target_h, target_w);
    TensorT<S> scaled = resize_bilinear(img, nh, nw);
    if (nw < target_w) {
        TensorT<S> padw({img.dim(0), nh, target_w - nw}, S(0));
        scaled = concat<S>({scaled, padw}, 2);
    }
    if (nh < target_h) {
        TensorT<S> padh({img.dim(0), target_h - nh, target_w}, S(0));
        scaled = concat<S>({scaled, padh}, 1);
    }
    return scaled;
}

// Places per-slice token sets [L,D] back onto the full token grid
// [grid_tokens_h, grid_tokens_w, D]. Non-overlapped layouts are exact block
// placement; overlapped cells hold the uniform average of their contributors.
template <class S>
TensorT<S> restore_grid(const std::vector<TensorT<S>>& slice_tokens, const SliceLayout& lo) {
    if (static_cast<int>(slice_tokens.size()) != lo.slices())
        throw DimensionError("restore_grid: expected " + std::to_string(lo.slices()) +
                             " slices, got " + std::to_string(slice_tokens.size()));
    int lh = lo.slice_tokens_h(), lw = lo.slice_tokens_w();
    int L = lh * lw;
    int D = slice_tokens[0].dim(slice_tokens[0].rank() - 1);
    for (const auto& t : slice_tokens)
        if (t.rank() != 2 || t.dim(0) != L || t.dim(1) != D)
            throw DimensionError("restore_grid: slice tokens " + shape_str(t.shape) +
                                 " do not match layout (expected [" + std::to_string(L) + "," +
                                 std::to_string(D) + "])");
    int TH = lo.grid_tokens_h(), TW = lo.grid_tokens_w();
    auto counts = lo.token_coverage();
    auto origins = lo.origins();
    TensorT<S> out({TH, TW, D}, S(0));
    S* po = out.ptr();
    for (size_t s = 0; s < origins.size(); ++s) {
        int oy = origins[s].first / lo.patch;
        int ox = origins[s].second / lo.patch;
        const S* ps = slice_tokens[s].ptr();
        for (int i = 0; i < lh; ++i)
            for (int j = 0; j < lw; ++j) {
                S* cell = po + (static_cast<int64_t>(oy + i) * TW + (ox + j)) * D;
                const S* src = ps + static_cast<int64_t>(i * lw + j) * D;
                for (int d = 0; d < D; ++d) cell[d] += src[d];
            }
    }
    for (int c = 0; c < TH * TW; ++c) {
        if (counts[static_cast<size_t>(c)] == 1) continue;
        S inv = S(1) / static_cast<S>(counts[static_cast<size_t>(c)]);
        for (int d = 0; d < D; ++d) po[static_cast<int64_t>(c) * D + d] *= inv;
    }
    auto* tape = TapeT<S>::active();
    std::vector<int> ids(slice_tokens.size());
    bool any = false;
    for (size_t i = 0; i < slice_tokens.size(); ++i) {
        ids[i] = detail::track_id(slice_tokens[i]);
        any = any || ids[i] >= 0;
    }
    if (tape && any) {
        SliceLayout lov = lo;
        int id = tape->add_node(
            "restore_grid", [ids, lov, counts, origins, lh, lw, D, TW](TapeT<S>& t, const TensorT<S>& g) {
                const S* pg = g.ptr();
                for (size_t s = 0; s < ids.size(); ++s) {
                    if (ids[s] < 0) continue;
                    int oy = origins[s].first / lov.patch;
                    int ox = origins[s].second / lov.patch;
                    TensorT<S> ds({lh * lw, D});
                    S* pd = ds.ptr();
                    for (int i = 0; i < lh; ++i)
                        for (int j = 0; j < lw; ++j) {
                            int cell = (oy + i) * TW + (ox + j);
                            S inv = S(1) / static_cast<S>(counts[static_cast<size_t>(cell)]);
                            const S* gc = pg + static_cast<int64_t>(cell) * D;
                            S* dst = pd + static_cast<int64_t>(i * lw + j) * D;
                            for (int d = 0; d < D; ++d) dst[d] = gc[d] * inv;
                        }
                    t.accumulate(ids[s], ds);
                }
            });
        tape->bind(out, id);
    }
    return out;
}

}  // namespace mrovseg
