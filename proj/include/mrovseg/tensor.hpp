#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "mrovseg/common.hpp"

namespace mrovseg {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

// Dense row-major n-d tensor. Value semantics with shared storage; ops never
// mutate their inputs. `node`/`tape_serial` tie a tensor to the tape that
// recorded it; a node id is only meaningful while that tape is active.
template <class S>
struct TensorT {
    std::vector<int> shape;
    std::shared_ptr<std::vector<S>> data;
    bool requires_grad = false;
    int node = -1;
    uint64_t tape_serial = 0;

    TensorT() = default;

    explicit TensorT(std::vector<int> shape_, S fill = S(0)) : shape(std::move(shape_)) {
        validate_shape();
        data = std::make_shared<std::vector<S>>(static_cast<size_t>(shape_numel(shape)), fill);
    }

    TensorT(std::vector<int> shape_, std::vector<S> values) : shape(std::move(shape_)) {
        validate_shape();
        if (static_cast<int64_t>(values.size()) != shape_numel(shape))
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        data = std::make_shared<std::vector<S>>(std::move(values));
    }

    static TensorT scalar(S v) { return TensorT({1}, std::vector<S>{v}); }

    void validate_shape() const {
        if (shape.empty()) throw DimensionError("tensor rank must be >= 1");
        for (int d : shape)
            if (d < 1) throw DimensionError("tensor dims must be >= 1, got " + shape_str(shape));
    }

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t numel() const { return shape_numel(shape); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    S* ptr() { return data->data(); }
    const S* ptr() const { return data->data(); }
    S& operator[](int64_t i) { return (*data)[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return (*data)[static_cast<size_t>(i)]; }

    S item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape));
        return (*data)[0];
    }

    bool tracked(uint64_t active_serial) const { return node >= 0 && tape_serial == active_serial; }

    // Deep copy with fresh storage and no tape linkage.
    TensorT detached_copy() const {
        TensorT out;
        out.shape = shape;
        out.data = std::make_shared<std::vector<S>>(*data);
        return out;
    }

    TensorT<S> with_requires_grad(bool rg = true) const {
        TensorT out = *this;
        out.requires_grad = rg;
        return out;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class S>
TensorT<S> full(std::vector<int> shape, S v) {
    return TensorT<S>(std::move(shape), v);
}

template <class S>
TensorT<S> zeros_like(const TensorT<S>& t) {
    return TensorT<S>(t.shape, S(0));
}

template <class S>
TensorT<S> ones_like(const TensorT<S>& t) {
    return TensorT<S>(t.shape, S(1));
}

template <class S>
TensorT<S> randn(std::vector<int> shape, Rng& rng, double std_dev = 1.0, double mean = 0.0) {
    TensorT<S> out(std::move(shape));
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<S>(mean + std_dev * rng.next_normal());
    return out;
}

template <class S>
TensorT<S> rand_uniform(std::vector<int> shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    TensorT<S> out(std::move(shape));
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<S>(rng.uniform(lo, hi));
    return out;
}

template <class S, class T>
TensorT<T> cast_tensor(const TensorT<S>& t) {
    TensorT<T> out(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<T>(t[i]);
    return out;
}

// Row-major strides.
inline std::vector<int64_t> strides_of(const std::vector<int>& shape) {
    std::vector<int64_t> st(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= shape[static_cast<size_t>(i)];
    }
    return st;
}

}  // namespace mrovseg
