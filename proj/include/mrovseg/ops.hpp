#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mrovseg/tape.hpp"
#include "mrovseg/tensor.hpp"

namespace mrovseg {

// ---------------------------------------------------------------------------
// MAC accounting. Counts multiply-accumulate contractions (matmul/conv) on the
// current thread while enabled; softmax/norm/elementwise ops are not MACs.
// ---------------------------------------------------------------------------
struct MacCounter {
    bool enabled = false;
    uint64_t macs = 0;

    static MacCounter& tls() {
        thread_local MacCounter c;
        return c;
    }
    void reset() { macs = 0; }
};

inline void count_macs(uint64_t n) {
    auto& c = MacCounter::tls();
    if (c.enabled) c.macs += n;
}

class MacScope {
public:
    MacScope() : prev_(MacCounter::tls().enabled) { MacCounter::tls().enabled = true; }
    ~MacScope() { MacCounter::tls().enabled = prev_; }
    MacScope(const MacScope&) = delete;

private:
    bool prev_;
};

// Count of softmax rows that were fully masked (all inputs at or below the
// mask sentinel); such rows come out uniform. Callers may inspect and reset.
inline uint64_t& fully_masked_softmax_rows() {
    thread_local uint64_t n = 0;
    return n;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy-style, right-aligned).
// ---------------------------------------------------------------------------
inline std::vector<int> broadcast_shapes(const std::vector<int>& a, const std::vector<int>& b) {
    size_t r = std::max(a.size(), b.size());
    std::vector<int> out(r);
    for (size_t i = 0; i < r; ++i) {
        int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides for reading a tensor of shape `in` at indices of broadcast shape
// `out`; broadcast dims get stride 0.
inline std::vector<int64_t> broadcast_strides(const std::vector<int>& in, const std::vector<int>& out) {
    auto st = strides_of(in);
    std::vector<int64_t> res(out.size(), 0);
    size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        res[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : st[i];
    return res;
}

// Sums `g` (shape gs) down to `target` shape (right-aligned broadcast inverse).
// Shares the input buffer when no reduction is needed (gradients are
// temporaries on the backward path).
template <class S>
TensorT<S> reduce_to_shape(const TensorT<S>& g, const std::vector<int>& target) {
    if (g.shape == target) return g;
    // row-broadcast fast path: grad of a [D] bias under [.., D]
    if (target.size() == 1 && g.dim(g.rank() - 1) == target[0]) {
        int64_t d = target[0], rows = g.numel() / d;
        TensorT<S> out(target, S(0));
        const S* pg = g.ptr();
        S* po = out.ptr();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) po[j] += pg[r * d + j];
        return out;
    }
    TensorT<S> out(target, S(0));
    auto tst = broadcast_strides(target, g.shape);
    auto gst = strides_of(g.shape);
    int r = g.rank();
    std::vector<int> idx(static_cast<size_t>(r), 0);
    const S* gp = g.ptr();
    S* op = out.ptr();
    for (int64_t i = 0; i < g.numel(); ++i) {
        int64_t ti = 0;
        for (int d = 0; d < r; ++d) ti += idx[static_cast<size_t>(d)] * tst[static_cast<size_t>(d)];
        op[ti] += gp[i];
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[static_cast<size_t>(d)] < g.shape[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    return out;
}

namespace detail {

template <class S>
int track_id(const TensorT<S>& t) {
    return is_tracked(t) ? t.node : -1;
}

template <class S, class F>
TensorT<S> binary_map(const TensorT<S>& a, const TensorT<S>& b, F f) {
    if (a.shape == b.shape) {
        TensorT<S> out(a.shape);
        const S* pa = a.ptr();
        const S* pb = b.ptr();
        S* po = out.ptr();
        for (int64_t i = 0; i < out.numel(); ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    // row-broadcast fast path: [.., D] op [D]
    if (b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0)) {
        TensorT<S> out(a.shape);
        int64_t d = b.dim(0), rows = a.numel() / d;
        const S* pa = a.ptr();
        const S* pb = b.ptr();
        S* po = out.ptr();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) po[r * d + j] = f(pa[r * d + j], pb[j]);
        return out;
    }
    auto shape = broadcast_shapes(a.shape, b.shape);
    TensorT<S> out(shape);
    auto sa = broadcast_strides(a.shape, shape);
    auto sb = broadcast_strides(b.shape, shape);
    int r = static_cast<int>(shape.size());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    for (int64_t i = 0; i < out.numel(); ++i) {
        int64_t ia = 0, ib = 0;
        for (int d = 0; d < r; ++d) {
            ia += idx[static_cast<size_t>(d)] * sa[static_cast<size_t>(d)];
            ib += idx[static_cast<size_t>(d)] * sb[static_cast<size_t>(d)];
        }
        po[i] = f(pa[ia], pb[ib]);
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[static_cast<size_t>(d)] < shape[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting.
// ---------------------------------------------------------------------------
template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = detail::binary_map(a, b, [](S x, S y) { return x + y; });
    auto* tape = TapeT<S>::active();
    int ia = detail::track_id(a), ib = detail::track_id(b);
    if (tape && (ia >= 0 || ib >= 0)) {
        auto ash = a.shape, bsh = b.shape;
        int id = tape->add_node("add", [ia, ib, ash, bsh](TapeT<S>& t, const TensorT<S>& g) {
            if (ia >= 0) t.accumulate(ia, reduce_to_shape(g, ash));
            if (ib >= 0) t.accumulate(ib, reduce_to_shape(g, bsh));
        });
        tape->bind(out, id);
    }
    return out;
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = detail::binary_map(a, b, [](S x, S y) { return x - y; });
    auto* tape = TapeT<S>::active();
    int ia = detail::track_id(a), ib = detail::track_id(b);
    if (tape && (ia >= 0 || ib >= 0)) {
        auto ash = a.shape, bsh = b.shape;
        int id = tape->add_node("sub", [ia, ib, ash, bsh](TapeT<S>& t, const TensorT<S>& g) {
            if (ia >= 0) t.accumulate(ia, reduce_to_shape(g, ash));
            if (ib >= 0) {
                TensorT<S> ng = g.detached_copy();
                for (int64_t i = 0; i < ng.numel(); ++i) ng[i] = -ng[i];
                t.accumulate(ib, reduce_to_shape(ng, bsh));
            }
        });
        tape->bind(out, id);
    }
    return out;
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = detail::binary_map(a, b, [](S x, S y) { return x * y; });
    auto* tape = TapeT<S>::active();
    int ia = detail::track_id(a), ib = detail::track_id(b);
    if (tape && (ia >= 0 || ib >= 0)) {
        TensorT<S> av = a, bv = b;  // shared storage, cheap
        int id = tape->add_node("mul", [ia, ib, av, bv](TapeT<S>& t, const TensorT<S>& g) {
            if (ia >= 0) {
                auto da = detail::binary_map(g, bv, [](S x, S y) { return x * y; });
                t.accumulate(ia, reduce_to_shape(da, av.shape));
            }
            if (ib >= 0) {
                auto db = detail::binary_map(g, av, [](S x, S y) { return x * y; });
                t.accumulate(ib, reduce_to_shape(db, bv.shape));
            }
        });
        tape->bind(out, id);
    }
    return out;
}

template <class S>
TensorT<S> divide(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = detail::binary_map(a, b, [](S x, S y) { return x / y; });
    auto* tape = TapeT<S>::active();
    int ia = detail::track_id(a), ib = detail::track_id(b);
    if (tape && (ia >= 0 || ib >= 0)) {
        TensorT<S> av = a, bv = b;
        int id = tape->add_node("div", [ia, ib, av, bv](TapeT<S>& t, const TensorT<S>& g) {
            if (ia >= 0) {
                auto da = detail::binary_map(g, bv, [](S x, S y) { return x / y; });
                t.accumulate(ia, reduce_to_shape(da, av.shape));
            }
            if (ib >= 0) {
                auto q = detail::binary_map(av, bv, [](S x, S y) { return -x / (y * y); });
                auto db = detail::binary_map(g, q, [](S x, S y) { return x * y; });
                t.accumulate(ib, reduce_to_shape(db, bv.shape));
            }
        });
        tape->bind(out, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------
namespace detail {

// fwd: value; dfun: local derivative as function of (input, output).
template <class S, class FV, class FD>
TensorT<S> unary_op(const char* name, const TensorT<S>& x, FV fv, FD fd) {
    TensorT<S> out(x.shape);
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = fv(px[i]);
    auto* tape = TapeT<S>::active();
    int ix = track_id(x);
    if (tape && ix >= 0) {
        TensorT<S> xv = x, ov = out;
        int id = tape->add_node(name, [ix, xv, ov, fd](TapeT<S>& t, const TensorT<S>& g) {
            TensorT<S> dx(xv.shape);
            const S* pg = g.ptr();
            const S* pxv = xv.ptr();
            const S* pov = ov.ptr();
            S* pdx = dx.ptr();
            for (int64_t i = 0; i < dx.numel(); ++i) pdx[i] = pg[i] * fd(pxv[i], pov[i]);
            t.accumulate(ix, dx);
        });
        tape->bind(out, id);
    }
    return out;
}

}  // namespace detail

template <class S>
TensorT<S> neg(const TensorT<S>& x) {
    return detail::unary_op(
        "neg", x, [](S v) { return -v; }, [](S, S) { return S(-1); });
}

template <class S>
TensorT<S> scale(const TensorT<S>& x, double c) {
    S cs = static_cast<S>(c);
    return detail::unary_op(
        "scale", x, [cs](S v) { return v * cs; }, [cs](S, S) { return cs; });
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& x, double c) {
    S cs = static_cast<S>(c);
    return detail::unary_op(
        "add_scalar", x, [cs](S v) { return v + cs; }, [](S, S) { return S(1); });
}

template <class S>
TensorT<S> exp_op(const TensorT<S>& x) {
    return detail::unary_op(
        "exp", x, [](S v) { return std::exp(v); }, [](S, S o) { return o; });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    return detail::unary_op(
        "sigmoid", x,
        [](S v) {
            if (v >= 0) return S(1) / (S(1) + std::exp(-v));
            S e = std::exp(v);
            return e / (S(1) + e);
        },
        [](S, S o) { return o * (S(1) - o); });
}

// Exact (erf-based) gelu, evaluated in the tensor's own precision.
template <class S>
TensorT<S> gelu(const TensorT<S>& x) {
    constexpr S inv_sqrt2 = static_cast<S>(0.7071067811865475244);
    constexpr S inv_sqrt2pi = static_cast<S>(0.3989422804014326779);
    return detail::unary_op(
        "gelu", x,
        [=](S v) { return static_cast<S>(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); },
        [=](S v, S) {
            S cdf = static_cast<S>(0.5) * (S(1) + std::erf(v * inv_sqrt2));
            S pdf = inv_sqrt2pi * std::exp(static_cast<S>(-0.5) * v * v);
            return cdf + v * pdf;
        });
}

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------
template <class S>
TensorT<S> reshape(const TensorT<S>& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape " + shape_str(x.shape) + " -> " + shape_str(shape) +
                             " changes element count");
    TensorT<S> out;
    out.shape = std::move(shape);
    out.data = x.data;  // shared; ops never mutate inputs
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x);
    if (tape && ix >= 0) {
        auto xsh = x.shape;
        int id = tape->add_node("reshape", [ix, xsh](TapeT<S>& t, const TensorT<S>& g) {
            TensorT<S> dg = g.detached_copy();
            dg.shape = xsh;
            t.accumulate(ix, dg);
        });
        tape->bind(out, id);
    }
    return out;
}

template <class S>
TensorT<S> permute(const TensorT<S>& x, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != x.rank())
        throw DimensionError("permute order rank mismatch");
    std::vector<int> shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) shape[i] = x.shape[static_cast<size_t>(perm[i])];
    TensorT<S> out(shape);
    auto xst = strides_of(x.shape);
    int r = x.rank();
    std::vector<int64_t> ost(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) ost[i] = xst[static_cast<size_t>(perm[i])];
    std::vector<int> idx(static_cast<size_t>(r), 0);
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int64_t i = 0; i < out.numel(); ++i) {
        int64_t xi = 0;
        for (int d = 0; d < r; ++d) xi += idx[static_cast<size_t>(d)] * ost[static_cast<size_t>(d)];
        po[i] = px[xi];
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[static_cast<size_t>(d)] < shape[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x);
    if (tape && ix >= 0) {
        std::vector<int> inv(perm.size());
        for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
        int id = tape->add_node("permute", [ix, inv](TapeT<S>& t, const TensorT<S>& g) {
            t.accumulate(ix, permute(g, inv));
        });
        tape->bind(out, id);
    }
    return out;
}

// Transpose of the last two axes.
template <class S>
TensorT<S> transpose(const TensorT<S>& x) {
    if (x.rank() < 2) throw DimensionError("transpose requires rank >= 2");
    std::vector<int> perm(static_cast<size_t>(x.rank()));
    for (int i = 0; i < x.rank(); ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(x.rank() - 2)], perm[static_cast<size_t>(x.rank() - 1)]);
    return permute(x, perm);
}

template <class S>
TensorT<S> narrow(const TensorT<S>& x, int axis, int start, int len) {
    if (axis < 0 || axis >= x.rank()) throw DimensionError("narrow: bad axis");
    if (start < 0 || len < 1 || start + len > x.dim(axis))
        throw DimensionError("narrow: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for dim " +
                             std::to_string(x.dim(axis)));
    std::vector<int> shape = x.shape;
    shape[static_cast<size_t>(axis)] = len;
    TensorT<S> out(shape);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= x.dim(d);
    for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
    int64_t n = x.dim(axis);
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(px + (o * n + start) * inner, px + (o * n + start + len) * inner,
                  po + o * len * inner);
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x);
    if (tape && ix >= 0) {
        auto xsh = x.shape;
        int id = tape->add_node("narrow",
                                [ix, xsh, axis, start, len, outer, inner, n](TapeT<S>& t, const TensorT<S>& g) {
                                    TensorT<S> dx(xsh, S(0));
                                    const S* pg = g.ptr();
                                    S* pdx = dx.ptr();
                                    for (int64_t o = 0; o < outer; ++o)
                                        std::copy(pg + o * len * inner, pg + (o * len + len) * inner,
                                                  pdx + (o * n + start) * inner);
                                    t.accumulate(ix, dx);
                                });
        tape->bind(out, id);
    }
    return out;
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& xs, int axis) {
    if (xs.empty()) throw ContractError("concat: empty input list");
    int r = xs[0].rank();
    if (axis < 0 || axis >= r) throw DimensionError("concat: bad axis");
    int total = 0;
    for (const auto& x : xs) {
        if (x.rank() != r) throw DimensionError("concat: rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis && x.dim(d) != xs[0].dim(d))
                throw DimensionError("concat: shape mismatch " + shape_str(x.shape) + " vs " +
                                     shape_str(xs[0].shape));
        total += x.dim(axis);
    }
    std::vector<int> shape = xs[0].shape;
    shape[static_cast<size_t>(axis)] = total;
    TensorT<S> out(shape);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= shape[static_cast<size_t>(d)];
    for (int d = axis + 1; d < r; ++d) inner *= shape[static_cast<size_t>(d)];
    S* po = out.ptr();
    int64_t off = 0;
    for (const auto& x : xs) {
        int64_t len = x.dim(axis);
        const S* px = x.ptr();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(px + o * len * inner, px + (o + 1) * len * inner,
                      po + (o * total + off) * inner);
        off += len;
    }
    auto* tape = TapeT<S>::active();
    bool any = false;
    std::vector<int> ids(xs.size());
    std::vector<int> lens(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        ids[i] = detail::track_id(xs[i]);
        lens[i] = xs[i].dim(axis);
        any = any || ids[i] >= 0;
    }
    if (tape && any) {
        int id = tape->add_node("concat",
                                [ids, lens, axis, outer, inner, total](TapeT<S>& t, const TensorT<S>& g) {
                                    int64_t off2 = 0;
                                    for (size_t i = 0; i < ids.size(); ++i) {
                                        int64_t len = lens[i];
                                        if (ids[i] >= 0) {
                                            std::vector<int> sh = g.shape;
                                            sh[static_cast<size_t>(axis)] = static_cast<int>(len);
                                            TensorT<S> gi(sh);
                                            const S* pg = g.ptr();
                                            S* pgi = gi.ptr();
                                            for (int64_t o = 0; o < outer; ++o)
                                                std::copy(pg + (o * total + off2) * inner,
                                                          pg + (o * total + off2 + len) * inner,
                                                          pgi + o * len * inner);
                                            t.accumulate(ids[i], gi);
                                        }
                                        off2 += len;
                                    }
                                });
        tape->bind(out, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------
template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
    S acc = 0;
    const S* px = x.ptr();
    for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
    TensorT<S> out({1}, std::vector<S>{acc});
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x);
    if (tape && ix >= 0) {
        auto xsh = x.shape;
        int id = tape->add_node("sum_all", [ix, xsh](TapeT<S>& t, const TensorT<S>& g) {
            t.accumulate(ix, TensorT<S>(xsh, g[0]));
        });
        tape->bind(out, id);
    }
    return out;
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

template <class S>
TensorT<S> reduce_sum(const TensorT<S>& x, int axis, bool keepdim = false) {
    if (axis < 0 || axis >= x.rank()) throw DimensionError("reduce_sum: bad axis");
    int64_t outer = 1, inner = 1, n = x.dim(axis);
    for (int d = 0; d < axis; ++d) outer *= x.dim(d);
    for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
    std::vector<int> shape;
    for (int d = 0; d < x.rank(); ++d) {
        if (d == axis) {
            if (keepdim) shape.push_back(1);
        } else {
            shape.push_back(x.dim(d));
        }
    }
    if (shape.empty()) shape.push_back(1);
    TensorT<S> out(shape, S(0));
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t in = 0; in < inner; ++in) po[o * inner + in] += px[(o * n + j) * inner + in];
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x);
    if (tape && ix >= 0) {
        auto xsh = x.shape;
        int id = tape->add_node("reduce_sum",
                                [ix, xsh, outer, inner, n](TapeT<S>& t, const TensorT<S>& g) {
                                    TensorT<S> dx(xsh);
                                    const S* pg = g.ptr();
                                    S* pdx = dx.ptr();
                                    for (int64_t o = 0; o < outer; ++o)
                                        for (int64_t j = 0; j < n; ++j)
                                            for (int64_t in = 0; in < inner; ++in)
                                                pdx[(o * n + j) * inner + in] = pg[o * inner + in];
                                    t.accumulate(ix, dx);
                                });
        tape->bind(out, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul: [..,M,K] x [..,K,P] -> [..,M,P], leading dims broadcast.
// ---------------------------------------------------------------------------
namespace detail {

// C[M,P] += A x B with optional transposes; A is [M,K] ([K,M] if ta),
// B is [K,P] ([P,K] if tb).
template <class S>
void matmul_kernel(const S* A, const S* B, S* C, int64_t M, int64_t K, int64_t P, bool ta, bool tb) {
    count_macs(static_cast<uint64_t>(M) * static_cast<uint64_t>(K) * static_cast<uint64_t>(P));
    if (!ta && !tb) {
        for (int64_t m = 0; m < M; ++m) {
            S* c = C + m * P;
            const S* a = A + m * K;
            for (int64_t k = 0; k < K; ++k) {
                S av = a[k];
                if (av == S(0)) continue;
                const S* b = B + k * P;
                for (int64_t p = 0; p < P; ++p) c[p] += av * b[p];
            }
        }
    } else if (!ta && tb) {
        for (int64_t m = 0; m < M; ++m) {
            const S* a = A + m * K;
            S* c = C + m * P;
            for (int64_t p = 0; p < P; ++p) {
                const S* b = B + p * K;
                S acc = 0;
                for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
                c[p] += acc;
            }
        }
    } else if (ta && !tb) {
        for (int64_t k = 0; k < K; ++k) {
            const S* a = A + k * M;
            const S* b = B + k * P;
            for (int64_t m = 0; m < M; ++m) {
                S av = a[m];
                if (av == S(0)) continue;
                S* c = C + m * P;
                for (int64_t p = 0; p < P; ++p) c[p] += av * b[p];
            }
        }
    } else {
        for (int64_t m = 0; m < M; ++m) {
            S* c = C + m * P;
            for (int64_t p = 0; p < P; ++p) {
                const S* b = B + p * K;
                S acc = 0;
                for (int64_t k = 0; k < K; ++k) acc += A[k * M + m] * b[k];
                c[p] += acc;
            }
        }
    }
}

struct BatchedDims {
    std::vector<int> batch;      // broadcast batch shape
    std::vector<int64_t> sa;     // per-batch-dim strides into a/b (0 when broadcast)
    std::vector<int64_t> sb;
    int64_t M, K, P;
};

template <class S>
BatchedDims matmul_dims(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul requires rank >= 2 operands");
    BatchedDims d;
    d.M = a.dim(a.rank() - 2);
    d.K = a.dim(a.rank() - 1);
    int64_t K2 = b.dim(b.rank() - 2);
    d.P = b.dim(b.rank() - 1);
    if (d.K != K2)
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    std::vector<int> abatch(a.shape.begin(), a.shape.end() - 2);
    std::vector<int> bbatch(b.shape.begin(), b.shape.end() - 2);
    if (abatch.empty()) abatch.push_back(1);
    if (bbatch.empty()) bbatch.push_back(1);
    d.batch = broadcast_shapes(abatch, bbatch);
    auto sa_full = broadcast_strides(abatch, d.batch);
    auto sb_full = broadcast_strides(bbatch, d.batch);
    // scale batch strides by the matrix element counts
    d.sa = sa_full;
    d.sb = sb_full;
    for (auto& v : d.sa) v *= d.M * d.K;
    for (auto& v : d.sb) v *= d.K * d.P;
    return d;
}

template <class S>
TensorT<S> matmul_raw(const TensorT<S>& a, const TensorT<S>& b) {
    auto d = matmul_dims(a, b);
    std::vector<int> oshape = d.batch;
    bool ab_rank2 = a.rank() == 2 && b.rank() == 2;
    oshape.push_back(static_cast<int>(d.M));
    oshape.push_back(static_cast<int>(d.P));
    if (ab_rank2) oshape.erase(oshape.begin());  // no batch axis for plain 2-D x 2-D
    TensorT<S> out(oshape, S(0));
    int64_t nbatch = shape_numel(d.batch);
    int br = static_cast<int>(d.batch.size());
    std::vector<int> idx(static_cast<size_t>(br), 0);
    for (int64_t bi = 0; bi < nbatch; ++bi) {
        int64_t oa = 0, ob = 0;
        for (int bd = 0; bd < br; ++bd) {
            oa += idx[static_cast<size_t>(bd)] * d.sa[static_cast<size_t>(bd)];
            ob += idx[static_cast<size_t>(bd)] * d.sb[static_cast<size_t>(bd)];
        }
        matmul_kernel(a.ptr() + oa, b.ptr() + ob, out.ptr() + bi * d.M * d.P, d.M, d.K, d.P, false,
                      false);
        for (int bd = br - 1; bd >= 0; --bd) {
            if (++idx[static_cast<size_t>(bd)] < d.batch[static_cast<size_t>(bd)]) break;
            idx[static_cast<size_t>(bd)] = 0;
        }
    }
    return out;
}

}  // namespace detail

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out = detail::matmul_raw(a, b);
    auto* tape = TapeT<S>::active();
    int ia = detail::track_id(a), ib = detail::track_id(b);
    if (tape && (ia >= 0 || ib >= 0)) {
        TensorT<S> av = a, bv = b;
        int id = tape->add_node("matmul", [ia, ib, av, bv](TapeT<S>& t, const TensorT<S>& g) {
            auto d = detail::matmul_dims(av, bv);
            int64_t nbatch = shape_numel(d.batch);
            int br = static_cast<int>(d.batch.size());
            if (ia >= 0) {
                // dA = G x B^T per batch, then fold broadcast batches back.
                std::vector<int> gshape = d.batch;
                gshape.push_back(static_cast<int>(d.M));
                gshape.push_back(static_cast<int>(d.K));
                TensorT<S> da(gshape, S(0));
                std::vector<int> idx(static_cast<size_t>(br), 0);
                for (int64_t bi = 0; bi < nbatch; ++bi) {
                    int64_t ob = 0;
                    for (int bd = 0; bd < br; ++bd)
                        ob += idx[static_cast<size_t>(bd)] * d.sb[static_cast<size_t>(bd)];
                    detail::matmul_kernel(g.ptr() + bi * d.M * d.P, bv.ptr() + ob,
                                          da.ptr() + bi * d.M * d.K, d.M, d.P, d.K, false, true);
                    for (int bd = br - 1; bd >= 0; --bd) {
                        if (++idx[static_cast<size_t>(bd)] < d.batch[static_cast<size_t>(bd)]) break;
                        idx[static_cast<size_t>(bd)] = 0;
                    }
                }
                t.accumulate(ia, reduce_to_shape(da, av.shape));
            }
            if (ib >= 0) {
                // dB = A^T x G per batch.
                std::vector<int> gshape = d.batch;
                gshape.push_back(static_cast<int>(d.K));
                gshape.push_back(static_cast<int>(d.P));
                TensorT<S> db(gshape, S(0));
                std::vector<int> idx(static_cast<size_t>(br), 0);
                for (int64_t bi = 0; bi < nbatch; ++bi) {
                    int64_t oa = 0;
                    for (int bd = 0; bd < br; ++bd)
                        oa += idx[static_cast<size_t>(bd)] * d.sa[static_cast<size_t>(bd)];
                    detail::matmul_kernel(av.ptr() + oa, g.ptr() + bi * d.M * d.P,
                                          db.ptr() + bi * d.K * d.P, d.K, d.M, d.P, true, false);
                    for (int bd = br - 1; bd >= 0; --bd) {
                        if (++idx[static_cast<size_t>(bd)] < d.batch[static_cast<size_t>(bd)]) break;
                        idx[static_cast<size_t>(bd)] = 0;
                    }
                }
                t.accumulate(ib, reduce_to_shape(db, bv.shape));
            }
        });
        tape->bind(out, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / log_softmax along an axis.
// ---------------------------------------------------------------------------
namespace detail {

struct AxisDims {
    int64_t outer, n, inner;
};

template <class S>
AxisDims axis_dims(const TensorT<S>& x, int axis) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank()) throw DimensionError("bad axis");
    AxisDims d{1, x.dim(axis), 1};
    for (int i = 0; i < axis; ++i) d.outer *= x.dim(i);
    for (int i = axis + 1; i < x.rank(); ++i) d.inner *= x.dim(i);
    return d;
}

}  // namespace detail

template <class S>
TensorT<S> softmax(const TensorT<S>& x, int axis = -1) {
    auto d = detail::axis_dims(x, axis);
    const S* px = x.ptr();
    for (int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(static_cast<double>(px[i])))
            throw NumericError("softmax: non-finite input");
    TensorT<S> out(x.shape);
    S* po = out.ptr();
    for (int64_t o = 0; o < d.outer; ++o) {
        for (int64_t in = 0; in < d.inner; ++in) {
            const S* row = px + o * d.n * d.inner + in;
            S* orow = po + o * d.n * d.inner + in;
            S mx = row[0];
            for (int64_t j = 1; j < d.n; ++j) mx = std::max(mx, row[j * d.inner]);
            if (static_cast<double>(mx) <= kMaskSentinel) ++fully_masked_softmax_rows();
            S sum = 0;
            for (int64_t j = 0; j < d.n; ++j) {
                S e = std::exp(row[j * d.inner] - mx);
                orow[j * d.inner] = e;
                sum += e;
            }
            S inv = S(1) / sum;
            for (int64_t j = 0; j < d.n; ++j) orow[j * d.inner] *= inv;
        }
    }
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x);
    if (tape && ix >= 0) {
        TensorT<S> ov = out;
        int id = tape->add_node("softmax", [ix, ov, d](TapeT<S>& t, const TensorT<S>& g) {
            TensorT<S> dx(ov.shape);
            const S* pg = g.ptr();
            const S* py = ov.ptr();
            S* pdx = dx.ptr();
            for (int64_t o = 0; o < d.outer; ++o) {
                for (int64_t in = 0; in < d.inner; ++in) {
                    int64_t base = o * d.n * d.inner + in;
                    S dot = 0;
                    for (int64_t j = 0; j < d.n; ++j)
                        dot += pg[base + j * d.inner] * py[base + j * d.inner];
                    for (int64_t j = 0; j < d.n; ++j)
                        pdx[base + j * d.inner] =
                            py[base + j * d.inner] * (pg[base + j * d.inner] - dot);
                }
            }
            t.accumulate(ix, dx);
        });
        tape->bind(out, id);
    }
    return out;
}

template <class S>
TensorT<S> log_softmax(const TensorT<S>& x, int axis = -1) {
    auto d = detail::axis_dims(x, axis);
    TensorT<S> out(x.shape);
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int64_t o = 0; o < d.outer; ++o) {
        for (int64_t in = 0; in < d.inner; ++in) {
            const S* row = px + o * d.n * d.inner + in;
            S* orow = po + o * d.n * d.inner + in;
            S mx = row[0];
            for (int64_t j = 1; j < d.n; ++j) mx = std::max(mx, row[j * d.inner]);
            S sum = 0;
            for (int64_t j = 0; j < d.n; ++j) sum += std::exp(row[j * d.inner] - mx);
            S lse = mx + std::log(sum);
            for (int64_t j = 0; j < d.n; ++j) orow[j * d.inner] = row[j * d.inner] - lse;
        }
    }
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x);
    if (tape && ix >= 0) {
        TensorT<S> ov = out;
        int id = tape->add_node("log_softmax", [ix, ov, d](TapeT<S>& t, const TensorT<S>& g) {
            TensorT<S> dx(ov.shape);
            const S* pg = g.ptr();
            const S* py = ov.ptr();
            S* pdx = dx.ptr();
            for (int64_t o = 0; o < d.outer; ++o) {
                for (int64_t in = 0; in < d.inner; ++in) {
                    int64_t base = o * d.n * d.inner + in;
                    S gsum = 0;
                    for (int64_t j = 0; j < d.n; ++j) gsum += pg[base + j * d.inner];
                    for (int64_t j = 0; j < d.n; ++j)
                        pdx[base + j * d.inner] =
                            pg[base + j * d.inner] - std::exp(py[base + j * d.inner]) * gsum;
                }
            }
            t.accumulate(ix, dx);
        });
        tape->bind(out, id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis; gamma/beta shaped [D].
// ---------------------------------------------------------------------------
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      double eps = 1e-5) {
    int64_t dim = x.dim(x.rank() - 1);
    if (gamma.numel() != dim || beta.numel() != dim)
        throw DimensionError("layer_norm: gamma/beta must match last dim " + std::to_string(dim));
    int64_t rows = x.numel() / dim;
    TensorT<S> out(x.shape);
    TensorT<S> xhat(x.shape);
    TensorT<S> rstd({static_cast<int>(rows)});
    const S* px = x.ptr();
    const S* pgm = gamma.ptr();
    const S* pbt = beta.ptr();
    S* po = out.ptr();
    S* ph = xhat.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const S* row = px + r * dim;
        S mean = 0;
        for (int64_t j = 0; j < dim; ++j) mean += row[j];
        mean /= static_cast<S>(dim);
        S var = 0;
        for (int64_t j = 0; j < dim; ++j) {
            S c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<S>(dim);
        S rs = S(1) / std::sqrt(var + static_cast<S>(eps));
        rstd[r] = rs;
        for (int64_t j = 0; j < dim; ++j) {
            S h = (row[j] - mean) * rs;
            ph[r * dim + j] = h;
            po[r * dim + j] = h * pgm[j] + pbt[j];
        }
    }
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x), ig = detail::track_id(gamma), ib = detail::track_id(beta);
    if (tape && (ix >= 0 || ig >= 0 || ib >= 0)) {
        TensorT<S> gm = gamma;
        int id = tape->add_node(
            "layer_norm", [ix, ig, ib, xhat, rstd, gm, rows, dim](TapeT<S>& t, const TensorT<S>& g) {
                const S* pg = g.ptr();
                const S* ph2 = xhat.ptr();
                const S* pgm2 = gm.ptr();
                if (ix >= 0) {
                    TensorT<S> dx(xhat.shape);
                    S* pdx = dx.ptr();
                    for (int64_t r = 0; r < rows; ++r) {
                        S m1 = 0, m2 = 0;
                        for (int64_t j = 0; j < dim; ++j) {
                            S gy = pg[r * dim + j] * pgm2[j];
                            m1 += gy;
                            m2 += gy * ph2[r * dim + j];
                        }
                        m1 /= static_cast<S>(dim);
                        m2 /= static_cast<S>(dim);
                        for (int64_t j = 0; j < dim; ++j) {
                            S gy = pg[r * dim + j] * pgm2[j];
                            pdx[r * dim + j] = (gy - m1 - ph2[r * dim + j] * m2) * rstd[r];
                        }
                    }
                    t.accumulate(ix, dx);
                }
                if (ig >= 0) {
                    TensorT<S> dg({static_cast<int>(dim)}, S(0));
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < dim; ++j) dg[j] += pg[r * dim + j] * ph2[r * dim + j];
                    t.accumulate(ig, dg);
                }
                if (ib >= 0) {
                    TensorT<S> db({static_cast<int>(dim)}, S(0));
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < dim; ++j) db[j] += pg[r * dim + j];
                    t.accumulate(ib, db);
                }
            });
        tape->bind(out, id);
    }
    return out;
}

// L2-normalize along the last axis.
template <class S>
TensorT<S> l2_normalize(const TensorT<S>& x, double eps = 1e-12) {
    int64_t dim = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / dim;
    TensorT<S> out(x.shape);
    TensorT<S> inv_norm({static_cast<int>(rows)});
    const S* px = x.ptr();
    S* po = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        S ss = 0;
        for (int64_t j = 0; j < dim; ++j) ss += px[r * dim + j] * px[r * dim + j];
        S inv = S(1) / std::sqrt(ss + static_cast<S>(eps));
        inv_norm[r] = inv;
        for (int64_t j = 0; j < dim; ++j) po[r * dim + j] = px[r * dim + j] * inv;
    }
    auto* tape = TapeT<S>::active();
    int ix = detail::track_id(x);
    if (tape && ix >= 0) {
        TensorT<S> ov = out;
        int id = tape->add_node("l2_normalize",
                                [ix, ov, inv_norm, rows, dim](TapeT<S>& t, const TensorT<S>& g) {
                                    TensorT<S> dx(ov.shape);
                                    const S* pg = g.ptr();
                                    const S* py = ov.ptr();
                                    S* pdx = dx.ptr();
                                    for (int64_t r = 0; r < rows; ++r) {
                                        S dot = 0;
                                        for (int64_t j = 0; j < dim; ++j)
                                            dot += pg[r * dim + j] * py[r * dim + j];
                                        for (int64_t j = 0; j < dim; ++j)
                                            pdx[r * dim + j] =
                                                (pg[r * dim + j] - py[r * dim + j] * dot) * inv_norm[r];
                                    }
                                    t.accumulate(ix, dx);
                                });
        tape->bind(out, id);
    }
    return out;
}

}  // namespace mrovseg
