#include "mrovseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mrovseg {

namespace {

// A window is usable when it is patch-aligned and either partitions the input
// exactly (p <= 0.5 regime) or exceeds half the input (2x2 overlapped regime).
bool window_valid(int w, int input, int patch) {
    if (w < patch || w > input || w % patch != 0) return false;
    if (2 * w > input) return true;
    return input % w == 0;
}

double nearest_valid_p(int input, int patch, double p) {
    double best = 1.0;
    double best_dist = 1e9;
    for (int w = patch; w <= input; w += patch) {
        if (!window_valid(w, input, patch)) continue;
        double cand = static_cast<double>(w) / input;
        double dist = std::fabs(cand - p);
        if (dist < best_dist) {
            best_dist = dist;
            best = cand;
        }
    }
    return best;
}

[[noreturn]] void layout_fail(int input_h, int input_w, int patch, double p, const std::string& why) {
    std::ostringstream os;
    os << "cannot plan layout for input " << input_h << "x" << input_w << ", p=" << p
       << ", patch=" << patch << ": " << why << "; nearest valid p="
       << nearest_valid_p(std::min(input_h, input_w), patch, p);
    throw LayoutError(os.str());
}

}  // namespace

SliceLayout plan_layout(int input_h, int input_w, double p, int patch) {
    if (patch < 1) throw LayoutError("patch size must be >= 1");
    if (!(p > 0.0) || p > 1.0)
        throw LayoutError("crop ratio p must be in (0,1], got " + std::to_string(p));
    if (input_h < patch || input_w < patch)
        throw LayoutError("input smaller than one patch");
    if (input_h % patch != 0 || input_w % patch != 0)
        layout_fail(input_h, input_w, patch, p, "input is not patch-divisible");

    SliceLayout lo;
    lo.input_h = input_h;
    lo.input_w = input_w;
    lo.p = p;
    lo.patch = patch;
    lo.window_h = static_cast<int>(std::lround(p * input_h));
    lo.window_w = static_cast<int>(std::lround(p * input_w));
    if (lo.window_h % patch != 0 || lo.window_w % patch != 0)
        layout_fail(input_h, input_w, patch, p, "window " + std::to_string(lo.window_h) + "x" +
                                                    std::to_string(lo.window_w) +
                                                    " is not patch-divisible");

    if (p == 1.0) {
        // degenerate single slice covering the input; the flag keeps the
        // p > 0.5 regime classification (a lone window has nothing to overlap,
        // and restoration is an exact copy either way)
        lo.grid_m = lo.grid_n = 1;
        lo.stride_h = lo.stride_w = 0;
        lo.overlapped = true;
        return lo;
    }
    if (p <= 0.5) {
        int g = static_cast<int>(std::lround(1.0 / p));
        lo.grid_m = lo.grid_n = g;
        lo.stride_h = lo.window_h;
        lo.stride_w = lo.window_w;
        lo.overlapped = false;
        if (g * lo.window_h != input_h || g * lo.window_w != input_w)
            layout_fail(input_h, input_w, patch, p,
                        std::to_string(g) + " windows of " + std::to_string(lo.window_h) + "x" +
                            std::to_string(lo.window_w) + " do not tile the input");
        return lo;
    }
    // 0.5 < p < 1: 2x2 overlapped slicing.
    lo.grid_m = lo.grid_n = 2;
    lo.stride_h = input_h - lo.window_h;
    lo.stride_w = input_w - lo.window_w;
    lo.overlapped = true;
    if (lo.stride_h < 1 || lo.stride_w < 1)
        layout_fail(input_h, input_w, patch, p, "overlapped stride collapsed to zero");
    return lo;
}

std::vector<std::pair<int, int>> SliceLayout::origins() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<size_t>(slices()));
    for (int i = 0; i < grid_m; ++i)
        for (int j = 0; j < grid_n; ++j) out.emplace_back(i * stride_h, j * stride_w);
    return out;
}

std::vector<int> SliceLayout::token_coverage() const {
    int TH = grid_tokens_h(), TW = grid_tokens_w();
    std::vector<int> counts(static_cast<size_t>(TH) * TW, 0);
    int lh = slice_tokens_h(), lw = slice_tokens_w();
    for (auto [oy, ox] : origins()) {
        int ty = oy / patch, tx = ox / patch;
        for (int i = 0; i < lh; ++i)
            for (int j = 0; j < lw; ++j) ++counts[static_cast<size_t>((ty + i) * TW + (tx + j))];
    }
    return counts;
}

}  // namespace mrovseg
