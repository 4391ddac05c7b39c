#pragma once

#include <string>

#include "mrovseg/ops.hpp"
#include "mrovseg/params.hpp"

namespace mrovseg {

// Pre-norm ViT block over a parameter-store prefix. Parameter names under
// `prefix`: ln1_g ln1_b wq bq wk bk wv bv wo bo ln2_g ln2_b mlp_w1 mlp_b1
// mlp_w2 mlp_b2. All linear weights are stored [in,out] so forward is
// x @ W + b.
template <class S>
struct VitBlock {
    static void register_params(ParameterStoreT<S>& store, const std::string& prefix, int dim,
                                int mlp_hidden, Rng& rng, bool frozen) {
        auto w = [&](std::vector<int> shape) { return randn<S>(std::move(shape), rng, 0.02); };
        store.add(prefix + "/ln1_g", TensorT<S>({dim}, S(1)), frozen);
        store.add(prefix + "/ln1_b", TensorT<S>({dim}, S(0)), frozen);
        store.add(prefix + "/wq", w({dim, dim}), frozen);
        store.add(prefix + "/bq", TensorT<S>({dim}, S(0)), frozen);
        store.add(prefix + "/wk", w({dim, dim}), frozen);
        store.add(prefix + "/bk", TensorT<S>({dim}, S(0)), frozen);
        store.add(prefix + "/wv", w({dim, dim}), frozen);
        store.add(prefix + "/bv", TensorT<S>({dim}, S(0)), frozen);
        store.add(prefix + "/wo", w({dim, dim}), frozen);
        store.add(prefix + "/bo", TensorT<S>({dim}, S(0)), frozen);
        store.add(prefix + "/ln2_g", TensorT<S>({dim}, S(1)), frozen);
        store.add(prefix + "/ln2_b", TensorT<S>({dim}, S(0)), frozen);
        store.add(prefix + "/mlp_w1", w({dim, mlp_hidden}), frozen);
        store.add(prefix + "/mlp_b1", TensorT<S>({mlp_hidden}, S(0)), frozen);
        store.add(prefix + "/mlp_w2", w({mlp_hidden, dim}), frozen);
        store.add(prefix + "/mlp_b2", TensorT<S>({dim}, S(0)), frozen);
    }

    // Multi-head attention with queries from `q_in` and keys/values from
    // `kv_in` (equal for self-attention). `bias` is an optional additive
    // attention bias [heads, Nq, Nk] applied inside the softmax.
    static TensorT<S> attention(ParameterStoreT<S>& store, const std::string& prefix,
                                const TensorT<S>& q_in, const TensorT<S>& kv_in, int heads,
                                const TensorT<S>* bias = nullptr) {
        int dim = q_in.dim(1);
        if (dim % heads != 0) throw DimensionError("attention: dim not divisible by heads");
        int dh = dim / heads;
        int nq = q_in.dim(0), nk = kv_in.dim(0);
        auto project = [&](const TensorT<S>& x, const char* wn, const char* bn) {
            return add(matmul(x, store.at(prefix + wn)), store.at(prefix + bn));
        };
        auto split_heads = [&](const TensorT<S>& x, int n) {
            return permute(reshape(x, {n, heads, dh}), {1, 0, 2});  // [heads,n,dh]
        };
        auto q = split_heads(project(q_in, "/wq", "/bq"), nq);
        auto k = split_heads(project(kv_in, "/wk", "/bk"), nk);
        auto v = split_heads(project(kv_in, "/wv", "/bv"), nk);
        auto scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (bias) {
            if (bias->shape != std::vector<int>{heads, nq, nk})
                throw DimensionError("attention bias " + shape_str(bias->shape) +
                                     " does not match scores [" + std::to_string(heads) + "," +
                                     std::to_string(nq) + "," + std::to_string(nk) + "]");
            scores = add(scores, *bias);
        }
        auto attn = softmax(scores, -1);
        auto ctx = matmul(attn, v);                               // [heads,nq,dh]
        auto merged = reshape(permute(ctx, {1, 0, 2}), {nq, dim});
        return project(merged, "/wo", "/bo");
    }

    static TensorT<S> mlp(ParameterStoreT<S>& store, const std::string& prefix,
                          const TensorT<S>& x) {
        auto h = gelu(add(matmul(x, store.at(prefix + "/mlp_w1")), store.at(prefix + "/mlp_b1")));
        return add(matmul(h, store.at(prefix + "/mlp_w2")), store.at(prefix + "/mlp_b2"));
    }

    // x = x + attn(ln1(x)); x = x + mlp(ln2(x))
    static TensorT<S> forward(ParameterStoreT<S>& store, const std::string& prefix,
                              const TensorT<S>& x, int heads, const TensorT<S>* bias = nullptr) {
        auto normed = layer_norm(x, store.at(prefix + "/ln1_g"), store.at(prefix + "/ln1_b"));
        auto h = add(x, attention(store, prefix, normed, normed, heads, bias));
        auto normed2 = layer_norm(h, store.at(prefix + "/ln2_g"), store.at(prefix + "/ln2_b"));
        return add(h, mlp(store, prefix, normed2));
    }
};

// Two-layer MLP head (Linear -> gelu -> Linear) over a store prefix with
// names w1 b1 w2 b2.
template <class S>
struct Mlp2 {
    static void register_params(ParameterStoreT<S>& store, const std::string& prefix, int in_dim,
                                int hidden, int out_dim, Rng& rng, bool frozen = false,
                                double w_std = 0.02) {
        store.add(prefix + "/w1", randn<S>({in_dim, hidden}, rng, w_std), frozen);
        store.add(prefix + "/b1", TensorT<S>({hidden}, S(0)), frozen);
        store.add(prefix + "/w2", randn<S>({hidden, out_dim}, rng, w_std), frozen);
        store.add(prefix + "/b2", TensorT<S>({out_dim}, S(0)), frozen);
    }

    static TensorT<S> forward(ParameterStoreT<S>& store, const std::string& prefix,
                              const TensorT<S>& x) {
        auto h = gelu(add(matmul(x, store.at(prefix + "/w1")), store.at(prefix + "/b1")));
        return add(matmul(h, store.at(prefix + "/w2")), store.at(prefix + "/b2"));
    }
};

}  // namespace mrovseg
